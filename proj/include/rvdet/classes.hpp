// Object class table: mixture size, mean width for adaptive NMS, display
// height, footprint size ranges for the simulator, and the AP IoU level.
#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace rvdet {

struct ClassSpec {
    std::string name;
    int components = 1;       // K
    double mean_width = 2.0;  // w in the adaptive NMS rule
    double height = 1.7;      // fixed display height
    double min_length = 3.8, max_length = 5.2;
    double min_width = 1.7, max_width = 2.2;
    double ap_iou = 0.7;
};

struct ClassTable {
    // Index 0 is background; its spec fields are unused.
    std::vector<ClassSpec> classes;

    int count() const { return static_cast<int>(classes.size()); }

    const ClassSpec& at(int class_id) const {
        if (class_id < 0 || class_id >= count())
            throw std::invalid_argument("class id out of range");
        return classes[static_cast<std::size_t>(class_id)];
    }

    int class_id_of(const std::string& name) const {
        for (int c = 1; c < count(); ++c)
            if (classes[static_cast<std::size_t>(c)].name == name) return c;
        throw std::invalid_argument("unknown class name: " + name);
    }

    std::vector<int> components_per_class() const {
        std::vector<int> ks;
        for (int c = 1; c < count(); ++c) ks.push_back(classes[static_cast<std::size_t>(c)].components);
        return ks;
    }

    std::vector<double> mean_widths() const {
        std::vector<double> w(classes.size(), 0.0);
        for (int c = 1; c < count(); ++c)
            w[static_cast<std::size_t>(c)] = classes[static_cast<std::size_t>(c)].mean_width;
        return w;
    }
};

// Vehicles get the multimodal head (K=3); pedestrians and bikes are
// unimodal. AP levels: 0.7 for vehicles, 0.5 otherwise.
inline ClassTable default_class_table() {
    ClassTable t;
    t.classes.push_back({"background", 0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0});
    t.classes.push_back({"vehicle", 3, 2.0, 1.7, 3.8, 5.2, 1.7, 2.2, 0.7});
    t.classes.push_back({"bike", 1, 0.8, 1.4, 1.5, 2.0, 0.5, 0.8, 0.5});
    t.classes.push_back({"pedestrian", 1, 0.6, 1.8, 0.5, 0.8, 0.5, 0.8, 0.5});
    return t;
}

}  // namespace rvdet
