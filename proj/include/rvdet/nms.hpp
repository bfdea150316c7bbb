// Adaptive non-maximum suppression over fused box distributions. The
// tolerated IoU for a pair follows from the worst-case side-by-side
// geometry and the predicted scales; Hard removes the less likely box,
// Soft inflates its scale until the tolerance matches the observed IoU.
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include "rvdet/geometry.hpp"
#include "rvdet/mixture.hpp"

namespace rvdet {

struct Detection {
    int class_id = 0;
    CornerVector corners;
    double sigma = 1.0;   // fused scale, meters
    double alpha = 1.0;   // mixture weight of the winning component
    double score = 0.0;   // alpha / (2 sigma)
    OrientedBox box;      // rectangle fit of corners, for export/bucketing

    void refresh() {
        score = likelihood_score(alpha, sigma);
        box = box_from_corners(corners);
    }
};

enum class NmsMode { Hard, Soft };

struct NmsConfig {
    NmsMode mode = NmsMode::Hard;
    // Mean footprint width per class id; ~2 m for vehicles.
    std::vector<double> mean_width;
    // Fixed-threshold baseline; when set it replaces the adaptive rule.
    std::optional<double> fixed_iou_threshold;

    double width_for(int class_id) const {
        if (class_id < 0 || class_id >= static_cast<int>(mean_width.size()) ||
            !(mean_width[static_cast<std::size_t>(class_id)] > 0.0))
            throw std::invalid_argument("nms: no mean width for class");
        return mean_width[static_cast<std::size_t>(class_id)];
    }
};

// Eq.-driven tolerated IoU for two overlapping boxes with scales sigma1,
// sigma2 and class mean width w.
inline double adaptive_threshold(double sigma1, double sigma2, double mean_width) {
    if (sigma1 < 0.0 || sigma2 < 0.0 || !(mean_width > 0.0))
        throw std::invalid_argument("adaptive_threshold: bad arguments");
    const double s = sigma1 + sigma2;
    if (s >= mean_width) return 1.0;
    return s / (2.0 * mean_width - s);
}

namespace detail {

// Inverting the adaptive rule at observed IoU o gives the scale sum the
// pair would need for o to be exactly tolerated.
inline double scale_sum_for_iou(double observed_iou, double mean_width) {
    return 2.0 * mean_width * observed_iou / (1.0 + observed_iou);
}

// Cheap reject: corner quads cannot intersect when the centroid distance
// exceeds the sum of circumradii.
inline bool quads_may_overlap(const Detection& a, const Detection& b) {
    const Vec2 ca = a.corners.centroid();
    const Vec2 cb = b.corners.centroid();
    double ra = 0.0, rb = 0.0;
    for (int i = 0; i < 4; ++i) {
        ra = std::max(ra, (a.corners.corner[static_cast<std::size_t>(i)] - ca).squared_norm());
        rb = std::max(rb, (b.corners.corner[static_cast<std::size_t>(i)] - cb).squared_norm());
    }
    const double reach = std::sqrt(ra) + std::sqrt(rb);
    return (ca - cb).squared_norm() <= reach * reach;
}

}  // namespace detail

// Suppress within one class, detections pre-sorted by score descending.
inline void run_nms_single_class(std::vector<Detection>& dets, const NmsConfig& cfg) {
    if (dets.empty()) return;
    const double w = cfg.width_for(dets.front().class_id);
    if (cfg.mode == NmsMode::Hard) {
        std::vector<bool> suppressed(dets.size(), false);
        for (std::size_t i = 0; i < dets.size(); ++i) {
            if (suppressed[i]) continue;
            for (std::size_t j = i + 1; j < dets.size(); ++j) {
                if (suppressed[j]) continue;
                if (!detail::quads_may_overlap(dets[i], dets[j])) continue;
                const double iou = quad_iou(dets[i].corners, dets[j].corners);
                const double t = cfg.fixed_iou_threshold
                                     ? *cfg.fixed_iou_threshold
                                     : adaptive_threshold(dets[i].sigma, dets[j].sigma, w);
                if (iou > t) suppressed[j] = true;
            }
        }
        std::vector<Detection> kept;
        kept.reserve(dets.size());
        for (std::size_t i = 0; i < dets.size(); ++i)
            if (!suppressed[i]) kept.push_back(dets[i]);
        dets = std::move(kept);
    } else {
        // Single pass in the initial score order; inflations are applied
        // immediately but no re-sorting happens until the end.
        for (std::size_t i = 0; i < dets.size(); ++i) {
            for (std::size_t j = i + 1; j < dets.size(); ++j) {
                if (!detail::quads_may_overlap(dets[i], dets[j])) continue;
                const double iou = quad_iou(dets[i].corners, dets[j].corners);
                const double t = cfg.fixed_iou_threshold
                                     ? *cfg.fixed_iou_threshold
                                     : adaptive_threshold(dets[i].sigma, dets[j].sigma, w);
                if (iou > t) {
                    const double target = detail::scale_sum_for_iou(iou, w) - dets[i].sigma;
                    dets[j].sigma = std::max(dets[j].sigma, target);
                    dets[j].score = likelihood_score(dets[j].alpha, dets[j].sigma);
                }
            }
        }
    }
}

// Per-class adaptive NMS over one frame. Output sorted by score
// descending (ties by input order), classes interleaved as scored.
inline std::vector<Detection> run_nms(std::vector<Detection> dets, const NmsConfig& cfg) {
    std::vector<std::size_t> idx(dets.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (dets[a].class_id != dets[b].class_id) return dets[a].class_id < dets[b].class_id;
        return dets[a].score > dets[b].score;
    });

    std::vector<Detection> out;
    out.reserve(dets.size());
    std::size_t lo = 0;
    while (lo < idx.size()) {
        std::size_t hi = lo;
        while (hi < idx.size() && dets[idx[hi]].class_id == dets[idx[lo]].class_id) ++hi;
        std::vector<Detection> group;
        group.reserve(hi - lo);
        for (std::size_t k = lo; k < hi; ++k) group.push_back(dets[idx[k]]);
        run_nms_single_class(group, cfg);
        out.insert(out.end(), group.begin(), group.end());
        lo = hi;
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    return out;
}

}  // namespace rvdet
