// Training objective: focal classification loss over all image points,
// hindsight component selection, Laplacian corner regression through the
// fused cluster distribution, and mixture-weight cross entropy. Gradients
// are hand-derived reverse-mode accumulation over this fixed graph; the
// |.| subgradient at a kink is taken as 0.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "rvdet/common.hpp"
#include "rvdet/geometry.hpp"
#include "rvdet/mean_shift.hpp"
#include "rvdet/mixture.hpp"

namespace rvdet {

struct LossConfig {
    double lambda = 0.25;  // mixture-loss weight
    double gamma = 2.0;    // focal focusing parameter
    int class_count = 2;   // C, including background
    std::vector<int> components;  // K per foreground class
    bool fusion = true;    // cluster-and-fuse inside the loss graph
    bool log_scale_inside_sum = true;  // log(sigma) once per corner coordinate vs once per box
    double prob_clamp = 1e-12;
    MeanShiftParams mean_shift;

    std::size_t stride() const { return raw_head_length(class_count, components); }
};

struct PointGeometry {
    Vec2 position;      // LiDAR point in the x-y plane
    double azimuth = 0.0;
};

// Per-point supervision aligned to the same occupied cells as the
// prediction rows. class_label 0 is background.
struct LossTargets {
    std::vector<int> class_label;
    std::vector<CornerVector> gt_corners;   // valid where class_label > 0
    std::vector<int> object_id;             // -1 for background
    std::vector<int> object_point_count;    // n_i, per point
    int object_count = 0;                   // N, objects with at least one point
};

struct LossBreakdown {
    double classification = 0.0;
    double regression = 0.0;
    double total = 0.0;
    std::vector<double> point_prob_loss;
    std::vector<double> point_box_loss;   // 0 for background points
    std::vector<double> point_mix_loss;   // 0 for background points
    std::vector<int> selected_component;  // -1 for background points
    std::size_t point_count = 0;
    int object_count = 0;
};

inline double focal_loss(std::span<const double> probs, int label, double gamma,
                         double prob_clamp = 1e-12) {
    if (label < 0 || label >= static_cast<int>(probs.size()))
        throw std::invalid_argument("focal_loss: label out of range");
    const double p = std::max(probs[static_cast<std::size_t>(label)], prob_clamp);
    if (p >= 1.0) return 0.0;
    return -std::pow(1.0 - p, gamma) * std::log(p);
}

// Hindsight pick: the component whose fused corner mean is closest to the
// ground truth; ties resolved to the lowest index.
inline int select_component(std::span<const CornerVector> means, const CornerVector& gt) {
    if (means.empty()) throw std::invalid_argument("select_component: no components");
    int best = 0;
    double best_d = means[0].distance(gt);
    for (std::size_t k = 1; k < means.size(); ++k) {
        const double d = means[k].distance(gt);
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(k);
        }
    }
    return best;
}

// Laplacian corner negative log likelihood, up to constants.
inline double box_loss(const CornerVector& mean, double sigma, const CornerVector& gt,
                       bool log_scale_inside_sum = true) {
    if (!(sigma > 0.0)) throw std::invalid_argument("box_loss: sigma must be positive");
    double abs_err = 0.0;
    for (int n = 0; n < 8; ++n) abs_err += std::abs(mean.flat(n) - gt.flat(n));
    const double log_terms = log_scale_inside_sum ? 8.0 : 1.0;
    return abs_err / sigma + log_terms * std::log(sigma);
}

struct ObjectPointLoss {
    double box = 0.0;
    double mix = 0.0;
    int points_on_object = 1;  // n_i
};

inline double regression_loss(std::span<const ObjectPointLoss> object_points, int object_count,
                              double lambda) {
    if (object_points.empty()) return 0.0;
    if (object_count < 1)
        throw std::invalid_argument("regression_loss: object count must be >= 1");
    KahanSum sum;
    for (const ObjectPointLoss& p : object_points) {
        if (p.points_on_object < 1)
            throw std::invalid_argument("regression_loss: n_i must be >= 1");
        sum.add((p.box + lambda * p.mix) / static_cast<double>(p.points_on_object));
    }
    return sum.value() / static_cast<double>(object_count);
}

namespace detail {

inline double sign_or_zero(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// d(focal)/dp at the clamped probability.
inline double focal_loss_dp(double p, double gamma) {
    if (p >= 1.0) return 0.0;
    const double q = 1.0 - p;
    const double t1 = gamma == 0.0 ? 0.0 : gamma * std::pow(q, gamma - 1.0) * std::log(p);
    return t1 - std::pow(q, gamma) / p;
}

// Corner derivatives of the decode+corners chain, used by the backward
// pass. Signs follow the corner order (+l+w, +l-w, -l-w, -l+w)/2.
inline constexpr double kCornerSignL[4] = {1.0, 1.0, -1.0, -1.0};
inline constexpr double kCornerSignW[4] = {1.0, -1.0, -1.0, 1.0};

}  // namespace detail

// End-to-end image loss over a flat parameter vector holding one raw head
// vector per occupied cell (layout as decode_head). When `gradient` is
// non-null it receives dL_total/dparams, same length as params.
inline LossBreakdown pipeline_loss(std::span<const double> params,
                                   const std::vector<PointGeometry>& geometry,
                                   const LossTargets& targets, const LossConfig& cfg,
                                   std::vector<double>* gradient = nullptr) {
    const RawHeadLayout layout(cfg.class_count, cfg.components);
    const std::size_t point_count = geometry.size();
    if (params.size() != layout.stride * point_count)
        throw std::invalid_argument("pipeline_loss: parameter vector length mismatch");
    if (targets.class_label.size() != point_count || targets.gt_corners.size() != point_count ||
        targets.object_id.size() != point_count ||
        targets.object_point_count.size() != point_count)
        throw std::invalid_argument("pipeline_loss: targets misaligned with points");

    if (gradient) gradient->assign(params.size(), 0.0);
    LossBreakdown out;
    out.point_count = point_count;
    out.object_count = targets.object_count;
    out.point_prob_loss.assign(point_count, 0.0);
    out.point_box_loss.assign(point_count, 0.0);
    out.point_mix_loss.assign(point_count, 0.0);
    out.selected_component.assign(point_count, -1);
    if (point_count == 0) return out;

    const std::size_t fg_classes = cfg.components.size();
    auto param_at = [&](std::size_t i, std::size_t off) { return params[i * layout.stride + off]; };

    // ---- classification over every point ----
    std::vector<double> probs(static_cast<std::size_t>(cfg.class_count));
    KahanSum cls_sum;
    for (std::size_t i = 0; i < point_count; ++i) {
        for (int c = 0; c < cfg.class_count; ++c)
            probs[static_cast<std::size_t>(c)] = param_at(i, static_cast<std::size_t>(c));
        detail::softmax_inplace(probs);
        const int label = targets.class_label[i];
        if (label < 0 || label >= cfg.class_count)
            throw std::invalid_argument("pipeline_loss: class label out of range");
        const double loss = focal_loss(probs, label, cfg.gamma, cfg.prob_clamp);
        out.point_prob_loss[i] = loss;
        cls_sum.add(loss);
        if (gradient && probs[static_cast<std::size_t>(label)] > cfg.prob_clamp) {
            const double p = probs[static_cast<std::size_t>(label)];
            const double g_p =
                detail::focal_loss_dp(p, cfg.gamma) / static_cast<double>(point_count);
            for (int c = 0; c < cfg.class_count; ++c) {
                const double dp_dz =
                    p * ((c == label ? 1.0 : 0.0) - probs[static_cast<std::size_t>(c)]);
                (*gradient)[i * layout.stride + static_cast<std::size_t>(c)] += g_p * dp_dz;
            }
        }
    }
    out.classification = cls_sum.value() / static_cast<double>(point_count);

    // ---- regression over object points ----
    std::vector<std::vector<std::size_t>> points_of_class(fg_classes);
    for (std::size_t i = 0; i < point_count; ++i)
        if (targets.class_label[i] > 0)
            points_of_class[static_cast<std::size_t>(targets.class_label[i] - 1)].push_back(i);

    bool any_object = false;
    for (const auto& v : points_of_class) any_object |= !v.empty();
    if (any_object && targets.object_count < 1)
        throw std::invalid_argument("pipeline_loss: object points present but N == 0");

    // Decoded per-member state for one (class, component) stream.
    struct Stream {
        std::vector<CornerVector> corners;  // aligned with points_of_class[f]
        std::vector<double> sigma;
        ClusterAssignment assign;
    };

    KahanSum reg_sum;
    for (std::size_t f = 0; f < fg_classes; ++f) {
        const auto& pts = points_of_class[f];
        if (pts.empty()) continue;
        const int k_count = cfg.components[f];
        std::vector<Stream> streams(static_cast<std::size_t>(k_count));

        for (int k = 0; k < k_count; ++k) {
            Stream& st = streams[static_cast<std::size_t>(k)];
            st.corners.reserve(pts.size());
            st.sigma.reserve(pts.size());
            std::vector<Vec2> centers;
            std::vector<BoxDistribution> dists;
            centers.reserve(pts.size());
            dists.reserve(pts.size());
            for (std::size_t m = 0; m < pts.size(); ++m) {
                const std::size_t i = pts[m];
                BoxParams p;
                p.dx = param_at(i, layout.box_param(f, k, 0));
                p.dy = param_at(i, layout.box_param(f, k, 1));
                p.ox = param_at(i, layout.box_param(f, k, 2));
                p.oy = param_at(i, layout.box_param(f, k, 3));
                p.length = param_at(i, layout.box_param(f, k, 4));
                p.width = param_at(i, layout.box_param(f, k, 5));
                const OrientedBox box = decode_box(geometry[i].position, geometry[i].azimuth, p);
                const CornerVector cv = corners(box);
                const double sigma = detail::safe_scale_exp(param_at(i, layout.log_scale(f, k)));
                st.corners.push_back(cv);
                st.sigma.push_back(sigma);
                centers.push_back(box.center);
                dists.push_back({cv, sigma, 1.0});
            }
            if (cfg.fusion) {
                st.assign = cluster(centers, dists, cfg.mean_shift);
            } else {
                st.assign.point_cluster.resize(pts.size());
                st.assign.clusters.resize(pts.size());
                for (std::size_t m = 0; m < pts.size(); ++m) {
                    st.assign.point_cluster[m] = static_cast<int>(m);
                    Cluster& c = st.assign.clusters[m];
                    c.fused.corners = st.corners[m];
                    c.fused.sigma = st.sigma[m];
                    c.fused.member_count = 1;
                    c.members = {static_cast<int>(m)};
                }
            }
        }

        // Gradient buckets per (component, cluster).
        struct ClusterGrad {
            std::array<double, 8> corners{};
            double sigma = 0.0;
        };
        std::vector<std::vector<ClusterGrad>> bucket(static_cast<std::size_t>(k_count));
        if (gradient)
            for (int k = 0; k < k_count; ++k)
                bucket[static_cast<std::size_t>(k)].resize(
                    streams[static_cast<std::size_t>(k)].assign.clusters.size());

        std::vector<CornerVector> candidate_means(static_cast<std::size_t>(k_count));
        std::vector<double> logits(static_cast<std::size_t>(k_count));
        for (std::size_t m = 0; m < pts.size(); ++m) {
            const std::size_t i = pts[m];
            const int n_i = targets.object_point_count[i];
            if (n_i < 1) throw std::invalid_argument("pipeline_loss: n_i must be >= 1");
            for (int k = 0; k < k_count; ++k) {
                const Stream& st = streams[static_cast<std::size_t>(k)];
                candidate_means[static_cast<std::size_t>(k)] =
                    st.assign.clusters[static_cast<std::size_t>(st.assign.point_cluster[m])]
                        .fused.corners;
            }
            const int k_star = select_component(candidate_means, targets.gt_corners[i]);
            out.selected_component[i] = k_star;
            const Stream& st = streams[static_cast<std::size_t>(k_star)];
            const int cid = st.assign.point_cluster[m];
            const FusedBox& fused = st.assign.clusters[static_cast<std::size_t>(cid)].fused;
            const double l_box = box_loss(fused.corners, fused.sigma, targets.gt_corners[i],
                                          cfg.log_scale_inside_sum);

            for (int k = 0; k < k_count; ++k)
                logits[static_cast<std::size_t>(k)] = param_at(i, layout.weight_logit(f, k));
            detail::softmax_inplace(logits);
            const double alpha = std::max(logits[static_cast<std::size_t>(k_star)], cfg.prob_clamp);
            const double l_mix = -std::log(alpha);

            out.point_box_loss[i] = l_box;
            out.point_mix_loss[i] = l_mix;
            const double inv_nn =
                1.0 / (static_cast<double>(targets.object_count) * static_cast<double>(n_i));
            reg_sum.add((l_box + cfg.lambda * l_mix) * inv_nn);

            if (gradient) {
                // mixture CE through the softmax; constant (zero grad) when
                // the selected weight sits below the clamp
                if (logits[static_cast<std::size_t>(k_star)] > cfg.prob_clamp) {
                    for (int k = 0; k < k_count; ++k) {
                        const double d =
                            logits[static_cast<std::size_t>(k)] - (k == k_star ? 1.0 : 0.0);
                        (*gradient)[i * layout.stride + layout.weight_logit(f, k)] +=
                            cfg.lambda * inv_nn * d;
                    }
                }
                // box NLL into the fused quantities
                ClusterGrad& cg = bucket[static_cast<std::size_t>(k_star)][static_cast<std::size_t>(cid)];
                double abs_err = 0.0;
                for (int n = 0; n < 8; ++n) {
                    const double e = fused.corners.flat(n) - targets.gt_corners[i].flat(n);
                    abs_err += std::abs(e);
                    cg.corners[static_cast<std::size_t>(n)] +=
                        inv_nn * detail::sign_or_zero(e) / fused.sigma;
                }
                const double log_terms = cfg.log_scale_inside_sum ? 8.0 : 1.0;
                cg.sigma += inv_nn * (-abs_err / (fused.sigma * fused.sigma) + log_terms / fused.sigma);
            }
        }

        if (!gradient) continue;

        // Fusion backward, then decode/corners backward per member.
        for (int k = 0; k < k_count; ++k) {
            const Stream& st = streams[static_cast<std::size_t>(k)];
            for (std::size_t cid = 0; cid < st.assign.clusters.size(); ++cid) {
                const ClusterGrad& cg = bucket[static_cast<std::size_t>(k)][cid];
                bool used = cg.sigma != 0.0;
                for (double v : cg.corners) used |= v != 0.0;
                if (!used) continue;
                const Cluster& cl = st.assign.clusters[cid];
                double precision_total = 0.0;
                for (int m : cl.members) {
                    const double s = st.sigma[static_cast<std::size_t>(m)];
                    precision_total += 1.0 / (s * s);
                }
                const double g_w_common =
                    cg.sigma * (-0.5 / (precision_total * std::sqrt(precision_total)));
                for (int m : cl.members) {
                    const std::size_t i = pts[static_cast<std::size_t>(m)];
                    const double sigma_m = st.sigma[static_cast<std::size_t>(m)];
                    const double w_m = 1.0 / (sigma_m * sigma_m);
                    // corner means
                    std::array<Vec2, 4> g_corner{};
                    double g_w = g_w_common;
                    for (int n = 0; n < 8; ++n) {
                        const double g = cg.corners[static_cast<std::size_t>(n)];
                        const double member_val =
                            st.corners[static_cast<std::size_t>(m)].flat(n);
                        const double fused_val = cl.fused.corners.flat(n);
                        g_w += g * (member_val - fused_val) / precision_total;
                        const double gb = g * (w_m / precision_total);
                        if (n & 1)
                            g_corner[static_cast<std::size_t>(n >> 1)].y += gb;
                        else
                            g_corner[static_cast<std::size_t>(n >> 1)].x += gb;
                    }
                    // scale: s -> sigma -> w
                    (*gradient)[i * layout.stride + layout.log_scale(f, k)] += -2.0 * w_m * g_w;

                    // decode + corners backward for this member's box params
                    const double theta = geometry[i].azimuth;
                    const double ox = param_at(i, layout.box_param(f, k, 2));
                    const double oy = param_at(i, layout.box_param(f, k, 3));
                    const double length = param_at(i, layout.box_param(f, k, 4));
                    const double width = param_at(i, layout.box_param(f, k, 5));
                    const double phi = theta + std::atan2(oy, ox);
                    const double c = std::cos(phi), s = std::sin(phi);

                    const Vec2 g_center = g_corner[0] + g_corner[1] + g_corner[2] + g_corner[3];
                    const Vec2 g_d = rotate_back(g_center, theta);
                    double g_phi = 0.0, g_len = 0.0, g_wid = 0.0;
                    for (int q = 0; q < 4; ++q) {
                        const double ux = detail::kCornerSignL[q] * length;
                        const double uy = detail::kCornerSignW[q] * width;
                        const Vec2 dphi{0.5 * (-s * ux - c * uy), 0.5 * (c * ux - s * uy)};
                        g_phi += g_corner[static_cast<std::size_t>(q)].dot(dphi);
                        g_len += detail::kCornerSignL[q] * 0.5 *
                                 g_corner[static_cast<std::size_t>(q)].dot({c, s});
                        g_wid += detail::kCornerSignW[q] * 0.5 *
                                 g_corner[static_cast<std::size_t>(q)].dot({-s, c});
                    }
                    const double omega_sq = ox * ox + oy * oy;
                    (*gradient)[i * layout.stride + layout.box_param(f, k, 0)] += g_d.x;
                    (*gradient)[i * layout.stride + layout.box_param(f, k, 1)] += g_d.y;
                    if (omega_sq > 0.0) {
                        (*gradient)[i * layout.stride + layout.box_param(f, k, 2)] +=
                            g_phi * (-oy / omega_sq);
                        (*gradient)[i * layout.stride + layout.box_param(f, k, 3)] +=
                            g_phi * (ox / omega_sq);
                    }
                    (*gradient)[i * layout.stride + layout.box_param(f, k, 4)] += g_len;
                    (*gradient)[i * layout.stride + layout.box_param(f, k, 5)] += g_wid;
                }
            }
        }
    }

    out.regression = any_object ? reg_sum.value() : 0.0;
    out.total = out.classification + out.regression;
    return out;
}

struct GradientCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
};

// Central finite differences against a provided analytic gradient.
// Relative error uses max(|fd|, |analytic|, floor) as the denominator; the
// floor absorbs the pure cancellation noise (~eps*|f|/h) that an exactly
// zero gradient coordinate would otherwise read as infinite relative error.
inline GradientCheckResult gradient_check(
    const std::function<double(std::span<const double>)>& f, std::span<const double> x,
    std::span<const double> analytic, double h, double denominator_floor = 1e-4) {
    if (!(h > 0.0)) throw std::invalid_argument("gradient_check: h must be positive");
    if (x.size() != analytic.size())
        throw std::invalid_argument("gradient_check: gradient length mismatch");
    std::vector<double> probe(x.begin(), x.end());
    GradientCheckResult result;
    for (std::size_t i = 0; i < probe.size(); ++i) {
        const double saved = probe[i];
        probe[i] = saved + h;
        const double fp = f(probe);
        probe[i] = saved - h;
        const double fm = f(probe);
        probe[i] = saved;
        const double fd = (fp - fm) / (2.0 * h);
        const double rel = std::abs(fd - analytic[i]) /
                           std::max({std::abs(fd), std::abs(analytic[i]), denominator_floor});
        if (rel > result.max_rel_error) {
            result.max_rel_error = rel;
            result.worst_index = i;
        }
    }
    return result;
}

}  // namespace rvdet
