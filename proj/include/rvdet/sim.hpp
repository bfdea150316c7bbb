// Synthetic scenes, planar sweep raycasting with occlusion, ground-truth
// target encoding, and oracle prediction providers. Together these let the
// post-network pipeline run and be verified without a trained network.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "rvdet/classes.hpp"
#include "rvdet/common.hpp"
#include "rvdet/geometry.hpp"
#include "rvdet/losses.hpp"
#include "rvdet/mixture.hpp"
#include "rvdet/range_image.hpp"

namespace rvdet {

struct GroundTruthObject {
    int class_id = 1;
    OrientedBox footprint;
    double height = 1.7;
    double reflectance = 0.5;
};

struct Scene {
    std::vector<GroundTruthObject> objects;
    std::uint64_t seed = 0;
};

// The raycast is purely planar; the stored range is the slant range
// r = t / cos(elevation) so that to_cartesian projects the return back
// onto the footprint edge in the x-y plane.
inline Sweep raycast_sweep(const Scene& scene, const SensorConfig& cfg,
                           double range_jitter_std = 0.0) {
    cfg.validate();
    Sweep sweep;
    SeededRng rng(scene.seed);
    std::vector<ConvexPolygon> polys;
    polys.reserve(scene.objects.size());
    for (const GroundTruthObject& obj : scene.objects) polys.push_back(to_polygon(corners(obj.footprint)));

    for (int col = 0; col < cfg.width; ++col) {
        const double az = cfg.column_center(col);
        const Vec2 dir{std::cos(az), std::sin(az)};
        double t_hit = std::numeric_limits<double>::infinity();
        int hit_obj = -1;
        for (std::size_t o = 0; o < polys.size(); ++o) {
            const ConvexPolygon& poly = polys[o];
            for (int e = 0; e < poly.n; ++e) {
                const Vec2 a = poly.pts[e];
                const Vec2 edge = poly.pts[(e + 1) % poly.n] - a;
                const double denom = dir.cross(edge);
                if (std::abs(denom) < 1e-12) continue;
                const double t = a.cross(edge) / denom;
                const double u = a.cross(dir) / denom;
                if (t > 1e-9 && u >= 0.0 && u <= 1.0 && t < t_hit) {
                    t_hit = t;
                    hit_obj = static_cast<int>(o);
                }
            }
        }
        if (hit_obj < 0) continue;
        for (int m = 0; m < cfg.laser_count; ++m) {
            const double el = cfg.elevation[static_cast<std::size_t>(m)];
            double r = t_hit / std::cos(el);
            if (range_jitter_std > 0.0) r += rng.normal(0.0, range_jitter_std);
            if (r <= 0.0 || r > cfg.max_range) continue;
            sweep.push_back({r, scene.objects[static_cast<std::size_t>(hit_obj)].reflectance, az,
                             static_cast<std::uint16_t>(m)});
        }
    }
    return sweep;
}

struct PointTarget {
    int class_label = 0;  // 0 background
    int object_id = -1;
    int points_on_object = 0;  // n_i
    BoxParams box;             // encode_box target, valid for object points
};

struct TargetSet {
    std::vector<ImagePoint> points;    // occupied cells, row-major
    std::vector<PointTarget> targets;  // aligned with points
    std::vector<int> object_points;    // per scene object, its return count
    int object_count = 0;              // objects with at least one point
};

// Label every occupied cell by point-in-footprint and encode its box
// target relative to the cell's stored azimuth. The containment tolerance
// covers the float32 storage quantization of the sweep, which displaces
// back-projected points up to ~6e-6 m off the footprint edge at 70 m.
inline constexpr double kFootprintContainEps = 1e-5;

inline TargetSet encode_targets(const RangeImage& img, const SensorConfig& cfg,
                                const Scene& scene) {
    TargetSet ts;
    ts.points = image_points(img, cfg);
    ts.targets.resize(ts.points.size());
    ts.object_points.assign(scene.objects.size(), 0);

    std::vector<ConvexPolygon> polys;
    polys.reserve(scene.objects.size());
    for (const GroundTruthObject& obj : scene.objects) polys.push_back(to_polygon(corners(obj.footprint)));

    for (std::size_t i = 0; i < ts.points.size(); ++i) {
        const Vec2 p{ts.points[i].position.x, ts.points[i].position.y};
        PointTarget& tgt = ts.targets[i];
        for (std::size_t o = 0; o < polys.size(); ++o) {
            if (!polygon_contains(polys[o], p, kFootprintContainEps)) continue;
            tgt.class_label = scene.objects[o].class_id;
            tgt.object_id = static_cast<int>(o);
            tgt.box = encode_box(p, ts.points[i].azimuth, scene.objects[o].footprint);
            ++ts.object_points[o];
            break;
        }
    }
    for (PointTarget& tgt : ts.targets)
        if (tgt.object_id >= 0)
            tgt.points_on_object = ts.object_points[static_cast<std::size_t>(tgt.object_id)];
    for (int n : ts.object_points) ts.object_count += n > 0 ? 1 : 0;
    return ts;
}

inline LossTargets to_loss_targets(const TargetSet& ts, const Scene& scene) {
    LossTargets lt;
    const std::size_t n = ts.targets.size();
    lt.class_label.resize(n);
    lt.gt_corners.resize(n);
    lt.object_id.resize(n);
    lt.object_point_count.assign(n, 1);
    lt.object_count = ts.object_count;
    for (std::size_t i = 0; i < n; ++i) {
        lt.class_label[i] = ts.targets[i].class_label;
        lt.object_id[i] = ts.targets[i].object_id;
        if (ts.targets[i].object_id >= 0) {
            lt.gt_corners[i] =
                corners(scene.objects[static_cast<std::size_t>(ts.targets[i].object_id)].footprint);
            lt.object_point_count[i] = ts.targets[i].points_on_object;
        }
    }
    return lt;
}

enum class SigmaPolicy { Truthful, Misreported };

struct NoiseSpec {
    double center_std = 0.0;  // meters
    double yaw_std = 0.0;     // radians
    double dim_std = 0.0;     // meters
    SigmaPolicy sigma_policy = SigmaPolicy::Truthful;
    double sigma_scale = 1.0;  // multiplier in Misreported mode
    double sigma_floor = 1e-3;

    double reported_sigma() const {
        const double truthful = std::max(center_std, sigma_floor);
        return sigma_policy == SigmaPolicy::Misreported ? truthful * sigma_scale : truthful;
    }
};

// A logit margin large enough that softmax saturates to exactly 1.0 in
// double precision.
inline constexpr double kOracleLogitMargin = 50.0;

// Raw head vectors standing in for a trained network: object points emit
// their class and a component-0 box perturbed per NoiseSpec; components
// 2..K are deterministic far-offset decoys with negligible weight.
// Values are float32-quantized so prediction files round-trip exactly.
inline std::vector<std::vector<double>> oracle_predictions(const TargetSet& ts,
                                                           const Scene& scene,
                                                           const NoiseSpec& noise,
                                                           const ClassTable& table,
                                                           std::uint64_t seed) {
    const RawHeadLayout layout(table.count(), table.components_per_class());
    SeededRng rng(seed);

    std::vector<std::vector<double>> rows(ts.points.size());
    auto q = [](double v) { return static_cast<double>(static_cast<float>(v)); };
    for (std::size_t i = 0; i < ts.points.size(); ++i) {
        std::vector<double>& raw = rows[i];
        raw.assign(layout.stride, 0.0);
        const PointTarget& tgt = ts.targets[i];
        const int label = tgt.class_label;
        raw[static_cast<std::size_t>(label)] = kOracleLogitMargin;

        for (int c = 1; c < layout.class_count; ++c) {
            const std::size_t f = static_cast<std::size_t>(c - 1);
            const int k_count = layout.components[f];
            for (int k = 0; k < k_count; ++k) {
                BoxParams p{0.0, 0.0, 1.0, 0.0, 1.0, 1.0};
                double log_scale = 0.0;
                if (label == c) {
                    const GroundTruthObject& obj =
                        scene.objects[static_cast<std::size_t>(tgt.object_id)];
                    const Vec2 pt{ts.points[i].position.x, ts.points[i].position.y};
                    OrientedBox hyp = obj.footprint;
                    if (k == 0) {
                        hyp.center.x += rng.normal(0.0, 1.0) * noise.center_std;
                        hyp.center.y += rng.normal(0.0, 1.0) * noise.center_std;
                        hyp.yaw = wrap_angle(hyp.yaw + rng.normal(0.0, 1.0) * noise.yaw_std);
                        hyp.length = std::max(0.2, hyp.length + rng.normal(0.0, 1.0) * noise.dim_std);
                        hyp.width = std::max(0.2, hyp.width + rng.normal(0.0, 1.0) * noise.dim_std);
                        log_scale = std::log(noise.reported_sigma());
                    } else {
                        // decoy hypothesis: deterministic far offset. The 0.5 m
                        // scale keeps decoy pairs below the adaptive-NMS t=1
                        // regime so duplicates still deduplicate without fusion.
                        hyp.center += rotate({9.0 + 4.0 * k, 0.0}, 0.9 * static_cast<double>(k));
                        hyp.yaw = wrap_angle(hyp.yaw + 0.7 * static_cast<double>(k));
                        log_scale = std::log(0.5);
                    }
                    p = encode_box(pt, ts.points[i].azimuth, hyp);
                }
                raw[layout.box_param(f, k, 0)] = q(p.dx);
                raw[layout.box_param(f, k, 1)] = q(p.dy);
                raw[layout.box_param(f, k, 2)] = q(p.ox);
                raw[layout.box_param(f, k, 3)] = q(p.oy);
                raw[layout.box_param(f, k, 4)] = q(p.length);
                raw[layout.box_param(f, k, 5)] = q(p.width);
                raw[layout.log_scale(f, k)] = q(log_scale);
                raw[layout.weight_logit(f, k)] = (label == c && k == 0) ? kOracleLogitMargin : 0.0;
            }
        }
    }
    return rows;
}

// ---- scene generators ----

inline GroundTruthObject make_object(const ClassTable& table, int class_id, Vec2 center,
                                     double yaw, double length, double width) {
    GroundTruthObject obj;
    obj.class_id = class_id;
    obj.footprint = {center, wrap_angle(yaw), length, width};
    obj.height = table.at(class_id).height;
    return obj;
}

// Random non-overlapping scene with every object visible (>= min_returns
// raycast returns). Deterministic per seed.
inline Scene random_scene(std::uint64_t seed, int min_objects, int max_objects,
                          const ClassTable& table, const SensorConfig& cfg,
                          int min_returns = 5) {
    if (min_objects < 0 || max_objects < min_objects)
        throw std::invalid_argument("random_scene: bad object count range");
    const double az_margin = 6.0 * kPi / 180.0;
    for (std::uint64_t attempt = 0;; ++attempt) {
        if (attempt > 200) throw std::runtime_error("random_scene: could not place objects");
        SeededRng rng(seed + attempt * 0x9e3779b97f4a7c15ull);
        Scene scene;
        scene.seed = seed;
        const int want = min_objects +
                         static_cast<int>(rng.bounded(static_cast<std::uint64_t>(
                             max_objects - min_objects + 1)));
        bool ok = true;
        for (int n = 0; n < want && ok; ++n) {
            bool placed = false;
            for (int trial = 0; trial < 64 && !placed; ++trial) {
                const int class_id = 1 + static_cast<int>(rng.bounded(
                                             static_cast<std::uint64_t>(table.count() - 1)));
                const ClassSpec& spec = table.at(class_id);
                const double length = rng.uniform(spec.min_length, spec.max_length);
                const double width = rng.uniform(spec.min_width, spec.max_width);
                const double az = rng.uniform(cfg.fov_min + az_margin, cfg.fov_max - az_margin);
                const double range = rng.uniform(8.0, 55.0);
                const Vec2 center{range * std::cos(az), range * std::sin(az)};
                const double yaw = rng.uniform(-kPi, kPi);
                bool clear = true;
                for (const GroundTruthObject& other : scene.objects) {
                    // half-diagonals plus a 2 m gap: zero footprint overlap
                    // and well-separated cluster streams
                    const double min_sep = 2.0 + 0.5 * std::hypot(length, width) +
                                           0.5 * std::hypot(other.footprint.length,
                                                            other.footprint.width);
                    if ((other.footprint.center - center).norm() < min_sep) {
                        clear = false;
                        break;
                    }
                }
                if (!clear) continue;
                scene.objects.push_back(make_object(table, class_id, center, yaw, length, width));
                placed = true;
            }
            ok = placed;
        }
        if (!ok) continue;
        // visibility check: every object keeps enough returns under occlusion
        const Sweep sweep = raycast_sweep(scene, cfg);
        const TargetSet ts = encode_targets(build_range_image(sweep, cfg).image, cfg, scene);
        bool visible = true;
        for (int n : ts.object_points) visible &= n >= min_returns;
        if (visible) return scene;
    }
}

// The worst-case adaptive NMS geometry: two vehicles side by side with a
// small lateral gap.
inline Scene side_by_side_scene(const ClassTable& table, double range = 20.0, double gap = 0.2) {
    Scene scene;
    const double width = 2.0;
    scene.objects.push_back(make_object(table, 1, {range, +(width + gap) * 0.5}, 0.0, 4.5, width));
    scene.objects.push_back(make_object(table, 1, {range, -(width + gap) * 0.5}, 0.0, 4.5, width));
    return scene;
}

// A single small object near max range: few returns, multimodality stress.
inline Scene far_sparse_scene(const ClassTable& table) {
    Scene scene;
    const int ped = table.class_id_of("pedestrian");
    scene.objects.push_back(make_object(table, ped, {65.0, 2.0}, 0.4, 0.6, 0.6));
    return scene;
}

// A line of vehicles along one bearing; later ones partially occluded but
// still peeking out of the leader's shadow.
inline Scene occlusion_corridor_scene(const ClassTable& table) {
    Scene scene;
    scene.objects.push_back(make_object(table, 1, {15.0, 0.0}, 0.0, 4.5, 2.0));
    scene.objects.push_back(make_object(table, 1, {30.0, 2.5}, 0.05, 4.5, 2.0));
    scene.objects.push_back(make_object(table, 1, {45.0, -4.0}, -0.05, 4.5, 2.0));
    return scene;
}

}  // namespace rvdet
