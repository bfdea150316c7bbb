// Gradient verification driver: builds random loss instances that stay
// clear of the objective's non-differentiable points (|.| kinks, argmin
// ties, bin-assignment boundaries) and compares the analytic gradient of
// the total loss against central finite differences.
#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "rvdet/common.hpp"
#include "rvdet/losses.hpp"

namespace rvdet {

struct LosscheckInstance {
    std::vector<double> params;
    std::vector<PointGeometry> geometry;
    LossTargets targets;
};

namespace detail {

// Distance of a coordinate to the nearest bin boundary.
inline double boundary_margin(double v, double delta) {
    const double f = v / delta - std::floor(v / delta);
    return std::min(f, 1.0 - f) * delta;
}

}  // namespace detail

// One random instance: two well-separated objects plus background points.
// Object group centers sit in bin interiors, per-point parameter noise is
// small enough that decoded centers stay there. Returns nullopt when a
// kink guard trips (caller counts and redraws).
inline std::optional<LosscheckInstance> make_losscheck_instance(SeededRng& rng,
                                                                const LossConfig& cfg) {
    const RawHeadLayout layout(cfg.class_count, cfg.components);
    const double delta = cfg.mean_shift.delta_x;
    LosscheckInstance inst;

    struct Object {
        int class_id;
        OrientedBox box;
        std::vector<std::size_t> points;
    };
    std::vector<Object> objects(2);
    for (int g = 0; g < 2; ++g) {
        Object& obj = objects[static_cast<std::size_t>(g)];
        obj.class_id = 1 + static_cast<int>(rng.bounded(
                               static_cast<std::uint64_t>(cfg.class_count - 1)));
        Vec2 c{12.0 + 20.0 * g + rng.uniform(-2.0, 2.0), -6.0 + 12.0 * g + rng.uniform(-2.0, 2.0)};
        // snap the center into the interior of its bin
        c.x = std::floor(c.x / delta) * delta + delta * rng.uniform(0.3, 0.7);
        c.y = std::floor(c.y / delta) * delta + delta * rng.uniform(0.3, 0.7);
        obj.box = {c, rng.uniform(-kPi, kPi), rng.uniform(1.5, 4.0), rng.uniform(1.0, 2.5)};
    }

    const int points_per_object = 3;
    for (int g = 0; g < 2; ++g) {
        for (int p = 0; p < points_per_object; ++p) {
            const Vec2 pos = objects[static_cast<std::size_t>(g)].box.center +
                             rotate({rng.uniform(3.0, 6.0), 0.0}, rng.uniform(-kPi, kPi));
            objects[static_cast<std::size_t>(g)].points.push_back(inst.geometry.size());
            inst.geometry.push_back({pos, std::atan2(pos.y, pos.x)});
            inst.targets.class_label.push_back(objects[static_cast<std::size_t>(g)].class_id);
            inst.targets.gt_corners.push_back(corners(objects[static_cast<std::size_t>(g)].box));
            inst.targets.object_id.push_back(g);
            inst.targets.object_point_count.push_back(points_per_object);
        }
    }
    inst.geometry.push_back({{rng.uniform(-5, 5), rng.uniform(-5, 5)}, rng.uniform(-kPi, kPi)});
    inst.targets.class_label.push_back(0);
    inst.targets.gt_corners.emplace_back();
    inst.targets.object_id.push_back(-1);
    inst.targets.object_point_count.push_back(1);
    inst.targets.object_count = 2;

    const std::size_t point_count = inst.geometry.size();
    inst.params.assign(layout.stride * point_count, 0.0);
    for (std::size_t i = 0; i < point_count; ++i) {
        double* row = inst.params.data() + i * layout.stride;
        for (int c = 0; c < cfg.class_count; ++c)
            row[c] = rng.normal(0.0, 1.2) + (c == inst.targets.class_label[i] ? 1.5 : 0.0);
        for (std::size_t f = 0; f < cfg.components.size(); ++f) {
            const int k_count = cfg.components[f];
            // the true-class slot gets targets + noise, others mild noise
            const bool is_target = inst.targets.class_label[i] == static_cast<int>(f) + 1;
            BoxParams base{0.0, 0.0, 1.0, 0.0, 2.0, 1.5};
            if (is_target) {
                const Object& obj = objects[static_cast<std::size_t>(inst.targets.object_id[i])];
                base = encode_box(inst.geometry[i].position, inst.geometry[i].azimuth, obj.box);
            }
            for (int k = 0; k < k_count; ++k) {
                auto clamp_noise = [&](double s, double lim) {
                    return std::clamp(rng.normal(0.0, s), -lim, lim);
                };
                row[layout.box_param(f, k, 0)] = base.dx + clamp_noise(0.02, 0.045);
                row[layout.box_param(f, k, 1)] = base.dy + clamp_noise(0.02, 0.045);
                const double rel = std::atan2(base.oy, base.ox) + 0.25 * k + rng.normal(0.0, 0.05);
                const double mag = rng.uniform(0.8, 1.2);
                row[layout.box_param(f, k, 2)] = mag * std::cos(rel);
                row[layout.box_param(f, k, 3)] = mag * std::sin(rel);
                row[layout.box_param(f, k, 4)] =
                    std::max(0.6, base.length + 0.4 * k + rng.normal(0.0, 0.08));
                row[layout.box_param(f, k, 5)] =
                    std::max(0.6, base.width + 0.3 * k + rng.normal(0.0, 0.08));
                row[layout.log_scale(f, k)] = rng.uniform(-1.5, 0.5);
                row[layout.weight_logit(f, k)] = rng.normal(0.0, 1.0);
            }
        }
    }

    // ---- kink guards ----
    for (std::size_t f = 0; f < cfg.components.size(); ++f) {
        const int class_id = static_cast<int>(f) + 1;
        std::vector<std::size_t> pts;
        for (std::size_t i = 0; i < point_count; ++i)
            if (inst.targets.class_label[i] == class_id) pts.push_back(i);
        if (pts.empty()) continue;
        const int k_count = cfg.components[f];
        std::vector<std::vector<FusedBox>> fused_per_k(static_cast<std::size_t>(k_count));
        std::vector<std::vector<int>> cluster_of(static_cast<std::size_t>(k_count));
        for (int k = 0; k < k_count; ++k) {
            std::vector<Vec2> centers;
            std::vector<BoxDistribution> dists;
            for (std::size_t i : pts) {
                const double* row = inst.params.data() + i * layout.stride;
                BoxParams p{row[layout.box_param(f, k, 0)], row[layout.box_param(f, k, 1)],
                            row[layout.box_param(f, k, 2)], row[layout.box_param(f, k, 3)],
                            row[layout.box_param(f, k, 4)], row[layout.box_param(f, k, 5)]};
                const OrientedBox box =
                    decode_box(inst.geometry[i].position, inst.geometry[i].azimuth, p);
                // decoded center must sit well inside its bin
                if (detail::boundary_margin(box.center.x, delta) < 0.01 ||
                    detail::boundary_margin(box.center.y, cfg.mean_shift.delta_y) < 0.01)
                    return std::nullopt;
                centers.push_back(box.center);
                dists.push_back({corners(box), std::exp(row[layout.log_scale(f, k)]), 1.0});
            }
            const ClusterAssignment assign = cfg.fusion
                                                 ? cluster(centers, dists, cfg.mean_shift)
                                                 : ClusterAssignment{};
            if (cfg.fusion) {
                for (const Cluster& cl : assign.clusters)
                    fused_per_k[static_cast<std::size_t>(k)].push_back(cl.fused);
                cluster_of[static_cast<std::size_t>(k)] = assign.point_cluster;
            } else {
                for (std::size_t m = 0; m < pts.size(); ++m) {
                    fused_per_k[static_cast<std::size_t>(k)].push_back(
                        {dists[m].corners, dists[m].sigma, 1});
                    cluster_of[static_cast<std::size_t>(k)].push_back(static_cast<int>(m));
                }
            }
        }
        for (std::size_t m = 0; m < pts.size(); ++m) {
            const std::size_t i = pts[m];
            double best = 1e300, second = 1e300;
            int best_k = -1;
            for (int k = 0; k < k_count; ++k) {
                const FusedBox& fb =
                    fused_per_k[static_cast<std::size_t>(k)]
                               [static_cast<std::size_t>(cluster_of[static_cast<std::size_t>(k)][m])];
                const double d = fb.corners.distance(inst.targets.gt_corners[i]);
                if (d < best) {
                    second = best;
                    best = d;
                    best_k = k;
                } else {
                    second = std::min(second, d);
                }
            }
            if (k_count > 1 && second - best < 1e-3) return std::nullopt;
            const FusedBox& sel =
                fused_per_k[static_cast<std::size_t>(best_k)][static_cast<std::size_t>(
                    cluster_of[static_cast<std::size_t>(best_k)][m])];
            for (int n = 0; n < 8; ++n)
                if (std::abs(sel.corners.flat(n) - inst.targets.gt_corners[i].flat(n)) < 1e-3)
                    return std::nullopt;
        }
    }
    return inst;
}

struct LosscheckReport {
    int trials = 0;
    int accepted = 0;
    int excluded_kinks = 0;
    double max_rel_error = 0.0;
    std::vector<double> per_trial_error;
};

inline LosscheckReport run_losscheck(std::uint64_t seed, int trials, double h, LossConfig cfg) {
    LosscheckReport report;
    report.trials = trials;
    SeededRng rng(seed);
    while (report.accepted < trials) {
        const auto inst = make_losscheck_instance(rng, cfg);
        if (!inst) {
            ++report.excluded_kinks;
            if (report.excluded_kinks > 100 * trials + 1000)
                throw std::runtime_error("losscheck: excessive kink rejections");
            continue;
        }
        std::vector<double> analytic;
        pipeline_loss(inst->params, inst->geometry, inst->targets, cfg, &analytic);
        const auto f = [&](std::span<const double> x) {
            return pipeline_loss(x, inst->geometry, inst->targets, cfg).total;
        };
        const GradientCheckResult res = gradient_check(f, inst->params, analytic, h);
        report.per_trial_error.push_back(res.max_rel_error);
        report.max_rel_error = std::max(report.max_rel_error, res.max_rel_error);
        ++report.accepted;
    }
    return report;
}

}  // namespace rvdet
