// Synthetic fully-occupied frames with network-like predictions for the
// post-network performance benchmark: every cell carries a return and a
// vehicle-class head whose component-0 boxes form per-object clusters.
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "rvdet/classes.hpp"
#include "rvdet/common.hpp"
#include "rvdet/geometry.hpp"
#include "rvdet/mixture.hpp"
#include "rvdet/pipeline.hpp"
#include "rvdet/range_image.hpp"

namespace rvdet {

struct BenchFrame {
    SensorConfig sensor;
    RangeImage image;
    std::vector<std::vector<double>> raw;  // aligned with image_points
};

inline BenchFrame make_bench_frame(int width_multiplier, const ClassTable& table,
                                   std::uint64_t seed) {
    BenchFrame frame;
    frame.sensor = SensorConfig::reference();
    frame.sensor.width *= width_multiplier;
    frame.sensor.azimuth_resolution =
        (frame.sensor.fov_max - frame.sensor.fov_min) / frame.sensor.width;

    Sweep sweep;
    sweep.reserve(static_cast<std::size_t>(frame.sensor.width) *
                  static_cast<std::size_t>(frame.sensor.laser_count));
    for (int col = 0; col < frame.sensor.width; ++col) {
        const double az = frame.sensor.column_center(col);
        const double range = 22.0 + 9.0 * std::sin(0.05 * col);
        for (int m = 0; m < frame.sensor.laser_count; ++m)
            sweep.push_back({range, 0.5, az, static_cast<std::uint16_t>(m)});
    }
    frame.image = build_range_image(sweep, frame.sensor).image;

    const RawHeadLayout layout(table.count(), table.components_per_class());
    const std::vector<ImagePoint> pts = image_points(frame.image, frame.sensor);
    SeededRng rng(seed);

    // one synthetic object per block of 8 columns
    const int cols_per_object = 8;
    std::vector<OrientedBox> object_box(
        static_cast<std::size_t>((frame.sensor.width + cols_per_object - 1) / cols_per_object));
    for (std::size_t g = 0; g < object_box.size(); ++g) {
        const double az =
            frame.sensor.column_center(static_cast<int>(g) * cols_per_object + cols_per_object / 2);
        const double range = 24.0 + 9.0 * std::sin(0.05 * (static_cast<double>(g) * cols_per_object));
        object_box[g] = {{range * std::cos(az), range * std::sin(az)},
                         wrap_angle(az + 1.2), 4.5, 2.0};
    }

    frame.raw.reserve(pts.size());
    for (const ImagePoint& p : pts) {
        std::vector<double> row(layout.stride, 0.0);
        row[1] = 25.0;  // vehicle logit
        const std::size_t g = static_cast<std::size_t>(p.col / cols_per_object);
        for (std::size_t f = 0; f + 1 < static_cast<std::size_t>(table.count()); ++f) {
            for (int k = 0; k < layout.components[f]; ++k) {
                OrientedBox hyp = object_box[g];
                hyp.center.x += rng.normal(0.0, 0.08) + 11.0 * k;
                hyp.center.y += rng.normal(0.0, 0.08) - 7.0 * k;
                BoxParams bp = encode_box({p.position.x, p.position.y}, p.azimuth, hyp);
                row[layout.box_param(f, k, 0)] = bp.dx;
                row[layout.box_param(f, k, 1)] = bp.dy;
                row[layout.box_param(f, k, 2)] = bp.ox;
                row[layout.box_param(f, k, 3)] = bp.oy;
                row[layout.box_param(f, k, 4)] = bp.length;
                row[layout.box_param(f, k, 5)] = bp.width;
                row[layout.log_scale(f, k)] = std::log(0.15);
                row[layout.weight_logit(f, k)] = k == 0 ? 4.0 : 0.0;
            }
        }
        frame.raw.push_back(std::move(row));
    }
    return frame;
}

}  // namespace rvdet
