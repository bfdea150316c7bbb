// Range-view image formation: maps a LiDAR sweep onto the dense
// (laser row x azimuth column) grid with five channels per cell, and
// back-projects occupied cells to 3D points.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "rvdet/common.hpp"

namespace rvdet {

struct LidarReturn {
    double range = 0.0;        // meters, > 0
    double reflectance = 0.0;  // [0, 1]
    double azimuth = 0.0;      // radians
    std::uint16_t laser_id = 0;
};

using Sweep = std::vector<LidarReturn>;

// Storage precision of the sweep file format is float32; quantizing in
// memory keeps the file-based and in-memory pipelines bit-identical.
inline LidarReturn quantize_to_storage(const LidarReturn& r) {
    LidarReturn q = r;
    q.range = static_cast<float>(r.range);
    q.reflectance = static_cast<float>(r.reflectance);
    q.azimuth = static_cast<float>(r.azimuth);
    return q;
}

inline Sweep quantize_to_storage(const Sweep& sweep) {
    Sweep out;
    out.reserve(sweep.size());
    for (const LidarReturn& r : sweep) out.push_back(quantize_to_storage(r));
    return out;
}

class SensorConfig {
  public:
    int laser_count = 0;
    std::vector<double> elevation; // radians, strictly monotonic, size == laser_count
    double azimuth_resolution = 0.0;
    double fov_min = 0.0;
    double fov_max = 0.0;
    double max_range = 0.0;
    int width = 0;
    int height = 0;

    void validate() const {
        if (laser_count <= 0) throw std::invalid_argument("laser_count must be positive");
        if (height != laser_count) throw std::invalid_argument("image height must equal laser_count");
        if (static_cast<int>(elevation.size()) != laser_count)
            throw std::invalid_argument("elevation table size must equal laser_count");
        const bool inc = elevation.back() > elevation.front();
        for (std::size_t i = 1; i < elevation.size(); ++i) {
            const bool step_inc = elevation[i] > elevation[i - 1];
            if (step_inc != inc || elevation[i] == elevation[i - 1])
                throw std::invalid_argument("elevation table must be strictly monotonic");
        }
        if (azimuth_resolution <= 0.0) throw std::invalid_argument("azimuth_resolution must be positive");
        if (fov_max <= fov_min) throw std::invalid_argument("empty azimuth FOV");
        if (max_range <= 0.0) throw std::invalid_argument("max_range must be positive");
        if (width <= 0) throw std::invalid_argument("image width must be positive");
        const double span_cols = (fov_max - fov_min) / azimuth_resolution;
        if (std::abs(span_cols - width) > 1.0)
            throw std::invalid_argument("FOV span / azimuth_resolution must match image width");
    }

    // Row 0 is the highest-elevation laser. Computed fresh so that a config
    // shared across worker threads stays read-only.
    std::vector<int> row_of_laser() const {
        std::vector<int> order(elevation.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return elevation[static_cast<std::size_t>(a)] > elevation[static_cast<std::size_t>(b)];
        });
        std::vector<int> rows(order.size(), 0);
        for (std::size_t row = 0; row < order.size(); ++row)
            rows[static_cast<std::size_t>(order[row])] = static_cast<int>(row);
        return rows;
    }

    int column_of(double azimuth) const {
        const int c = static_cast<int>(std::floor((azimuth - fov_min) / azimuth_resolution));
        return std::clamp(c, 0, width - 1);
    }

    double column_center(int col) const {
        return fov_min + (static_cast<double>(col) + 0.5) * azimuth_resolution;
    }

    // 90 degree front FOV, 512x64, 70 m: the reference layout. The
    // elevation table mimics the two-block spacing of a 64-laser spinning
    // unit (upper block 1/3 degree, lower block 1/2 degree).
    static SensorConfig reference() {
        SensorConfig cfg;
        cfg.laser_count = 64;
        cfg.height = 64;
        cfg.width = 512;
        cfg.fov_min = -kPi / 4.0;
        cfg.fov_max = kPi / 4.0;
        cfg.azimuth_resolution = (cfg.fov_max - cfg.fov_min) / cfg.width;
        cfg.max_range = 70.0;
        const double deg = kPi / 180.0;
        cfg.elevation.resize(64);
        for (int i = 0; i < 32; ++i)
            cfg.elevation[static_cast<std::size_t>(i)] = (2.0 - i / 3.0) * deg;
        for (int i = 32; i < 64; ++i)
            cfg.elevation[static_cast<std::size_t>(i)] = (-8.83 - 0.5 * (i - 32)) * deg;
        return cfg;
    }

    // Uniform vertical discretization over the same span; the image-spacing
    // ablation baseline.
    static SensorConfig reference_uniform() {
        SensorConfig cfg = reference();
        const double top = cfg.elevation.front();
        const double bottom = cfg.elevation.back();
        for (int i = 0; i < cfg.laser_count; ++i)
            cfg.elevation[static_cast<std::size_t>(i)] =
                top + (bottom - top) * static_cast<double>(i) / (cfg.laser_count - 1);
        return cfg;
    }
};

inline Point3 to_cartesian(const LidarReturn& ret, const SensorConfig& cfg) {
    if (ret.laser_id >= cfg.elevation.size())
        throw std::invalid_argument("laser_id out of range");
    const double el = cfg.elevation[ret.laser_id];
    const double planar = ret.range * std::cos(el);
    return {planar * std::cos(ret.azimuth), planar * std::sin(ret.azimuth),
            ret.range * std::sin(el)};
}

// Dense five-channel image. The occupancy flag is the authoritative
// emptiness signal; empty cells hold r=0, z=0, theta=column center, e=0.
struct RangeImage {
    int width = 0;
    int height = 0;
    std::vector<double> range;
    std::vector<double> height_z;
    std::vector<double> azimuth;
    std::vector<double> intensity;
    std::vector<std::uint8_t> occupancy;
    // Index into the canonically ordered sweep (see RangeImageBuild::order),
    // -1 if empty. Canonical indices keep the image itself a pure function
    // of the return multiset.
    std::vector<std::int32_t> source;

    std::size_t index(int row, int col) const {
        return static_cast<std::size_t>(row) * static_cast<std::size_t>(width) +
               static_cast<std::size_t>(col);
    }
    bool occupied(int row, int col) const { return occupancy[index(row, col)] != 0; }

    std::size_t occupied_count() const {
        std::size_t n = 0;
        for (std::uint8_t o : occupancy) n += o;
        return n;
    }

    bool operator==(const RangeImage&) const = default;
};

struct RangeImageBuild {
    RangeImage image;
    std::size_t dropped = 0;  // returns outside FOV / beyond max_range / bad laser id
    std::vector<std::int32_t> order;  // order[canonical index] = original sweep index
};

// Deterministic formation: the sweep is first brought into a canonical
// order (azimuth, then range, laser, reflectance), which makes the result
// a pure function of the return multiset; within a cell the closest return
// wins, equal ranges resolved by the earlier canonical position.
inline RangeImageBuild build_range_image(const Sweep& sweep, const SensorConfig& cfg) {
    cfg.validate();
    RangeImageBuild out;
    RangeImage& img = out.image;
    img.width = cfg.width;
    img.height = cfg.height;
    const std::size_t cells = static_cast<std::size_t>(cfg.width) * static_cast<std::size_t>(cfg.height);
    img.range.assign(cells, 0.0);
    img.height_z.assign(cells, 0.0);
    img.azimuth.resize(cells);
    img.intensity.assign(cells, 0.0);
    img.occupancy.assign(cells, 0);
    img.source.assign(cells, -1);
    for (int row = 0; row < img.height; ++row)
        for (int col = 0; col < img.width; ++col)
            img.azimuth[img.index(row, col)] = cfg.column_center(col);

    struct Entry {
        double azimuth;
        double range;
        std::uint16_t laser;
        double reflectance;
        std::int32_t idx;
    };
    std::vector<Entry> order;
    order.reserve(sweep.size());
    for (std::size_t i = 0; i < sweep.size(); ++i) {
        const LidarReturn& r = sweep[i];
        order.push_back({wrap_angle(r.azimuth), r.range, r.laser_id, r.reflectance,
                         static_cast<std::int32_t>(i)});
    }
    std::sort(order.begin(), order.end(), [](const Entry& a, const Entry& b) {
        if (a.azimuth != b.azimuth) return a.azimuth < b.azimuth;
        if (a.range != b.range) return a.range < b.range;
        if (a.laser != b.laser) return a.laser < b.laser;
        return a.reflectance < b.reflectance;
    });

    out.order.reserve(order.size());
    for (const Entry& e : order) out.order.push_back(e.idx);

    const std::vector<int> rows = cfg.row_of_laser();
    for (std::size_t k = 0; k < order.size(); ++k) {
        const Entry& e = order[k];
        if (e.laser >= cfg.elevation.size() || e.range <= 0.0 || e.range > cfg.max_range ||
            e.azimuth < cfg.fov_min || e.azimuth > cfg.fov_max) {
            ++out.dropped;
            continue;
        }
        const int row = rows[e.laser];
        const int col = cfg.column_of(e.azimuth);
        const std::size_t at = img.index(row, col);
        if (img.occupancy[at] && img.range[at] <= e.range) continue;
        const double el = cfg.elevation[e.laser];
        img.range[at] = e.range;
        img.height_z[at] = e.range * std::sin(el);
        img.azimuth[at] = e.azimuth;
        img.intensity[at] = e.reflectance;
        img.occupancy[at] = 1;
        img.source[at] = static_cast<std::int32_t>(k);
    }
    return out;
}

struct ImagePoint {
    int row = 0;
    int col = 0;
    Point3 position;
    double azimuth = 0.0;
};

// One entry per occupied cell, row-major.
inline std::vector<ImagePoint> image_points(const RangeImage& img, const SensorConfig& cfg) {
    std::vector<ImagePoint> pts;
    pts.reserve(img.occupied_count());
    const std::vector<int> rows = cfg.row_of_laser();
    std::vector<int> laser_of_row(rows.size());
    for (std::size_t m = 0; m < rows.size(); ++m)
        laser_of_row[static_cast<std::size_t>(rows[m])] = static_cast<int>(m);
    for (int row = 0; row < img.height; ++row) {
        for (int col = 0; col < img.width; ++col) {
            const std::size_t at = img.index(row, col);
            if (!img.occupancy[at]) continue;
            LidarReturn ret;
            ret.range = img.range[at];
            ret.azimuth = img.azimuth[at];
            ret.reflectance = img.intensity[at];
            ret.laser_id = static_cast<std::uint16_t>(laser_of_row[static_cast<std::size_t>(row)]);
            pts.push_back({row, col, to_cartesian(ret, cfg), ret.azimuth});
        }
    }
    return pts;
}

}  // namespace rvdet
