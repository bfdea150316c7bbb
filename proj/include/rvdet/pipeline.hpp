// Post-network detection pipeline: decode per-point heads, threshold class
// probabilities, cluster per (class, component) stream, fuse, score, and
// suppress. Stage wall-clock timings are reported alongside.
#pragma once

#include <chrono>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "rvdet/classes.hpp"
#include "rvdet/geometry.hpp"
#include "rvdet/mean_shift.hpp"
#include "rvdet/mixture.hpp"
#include "rvdet/nms.hpp"
#include "rvdet/range_image.hpp"

namespace rvdet {

struct PipelineParams {
    ClassTable classes = default_class_table();
    MeanShiftParams mean_shift;  // 0.5 m bins, 3 iterations
    std::optional<double> class_threshold;  // default 1/C
    NmsMode nms_mode = NmsMode::Hard;
    std::optional<double> fixed_iou_threshold;
    bool fusion = true;  // mean-shift clustering on/off (ablation switch)

    double threshold() const {
        return class_threshold.value_or(1.0 / static_cast<double>(classes.count()));
    }
    NmsConfig nms_config() const {
        NmsConfig cfg;
        cfg.mode = nms_mode;
        cfg.fixed_iou_threshold = fixed_iou_threshold;
        cfg.mean_width = classes.mean_widths();
        return cfg;
    }
};

struct StageTimings {
    double decode_ms = 0.0;
    double cluster_ms = 0.0;
    double nms_ms = 0.0;
    double total_ms = 0.0;
};

struct DetectionResult {
    std::vector<Detection> detections;
    StageTimings timings;
    std::size_t point_count = 0;
    std::size_t candidate_count = 0;  // detections entering NMS
};

namespace detail {

inline double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
}

}  // namespace detail

// Runs the pipeline on pre-decoded predictions aligned with `points`
// (the image_points enumeration of the frame).
inline DetectionResult detect_points(const std::vector<ImagePoint>& points,
                                     const std::vector<PerPointPrediction>& predictions,
                                     const PipelineParams& params) {
    if (points.size() != predictions.size())
        throw std::invalid_argument("detect_points: predictions misaligned with image points");
    DetectionResult result;
    result.point_count = points.size();
    const auto t_start = std::chrono::steady_clock::now();

    const double threshold = params.threshold();
    std::vector<Detection> candidates;

    const auto t_cluster = std::chrono::steady_clock::now();
    for (int c = 1; c < params.classes.count(); ++c) {
        const std::size_t f = static_cast<std::size_t>(c - 1);
        std::vector<std::size_t> cand;
        for (std::size_t i = 0; i < points.size(); ++i)
            if (predictions[i].class_probs[static_cast<std::size_t>(c)] > threshold)
                cand.push_back(i);
        if (cand.empty()) continue;
        const int k_count = params.classes.at(c).components;
        for (int k = 0; k < k_count; ++k) {
            std::vector<Vec2> centers;
            std::vector<BoxDistribution> dists;
            centers.reserve(cand.size());
            dists.reserve(cand.size());
            for (std::size_t i : cand) {
                const MixtureComponent& comp =
                    predictions[i].mixtures[f].components[static_cast<std::size_t>(k)];
                const OrientedBox box = decode_box({points[i].position.x, points[i].position.y},
                                                   points[i].azimuth, comp.box);
                centers.push_back(box.center);
                dists.push_back({corners(box), comp.scale(), comp.weight});
            }
            if (params.fusion) {
                const ClusterAssignment assign = cluster(centers, dists, params.mean_shift);
                for (const Cluster& cl : assign.clusters) {
                    Detection det;
                    det.class_id = c;
                    det.corners = cl.fused.corners;
                    det.sigma = cl.fused.sigma;
                    det.alpha = 0.0;
                    for (int m : cl.members)
                        det.alpha = std::max(det.alpha, dists[static_cast<std::size_t>(m)].alpha);
                    det.refresh();
                    candidates.push_back(det);
                }
            } else {
                for (std::size_t m = 0; m < cand.size(); ++m) {
                    Detection det;
                    det.class_id = c;
                    det.corners = dists[m].corners;
                    det.sigma = dists[m].sigma;
                    det.alpha = dists[m].alpha;
                    det.refresh();
                    candidates.push_back(det);
                }
            }
        }
    }
    result.timings.cluster_ms = detail::ms_since(t_cluster);
    result.candidate_count = candidates.size();

    const auto t_nms = std::chrono::steady_clock::now();
    result.detections = run_nms(std::move(candidates), params.nms_config());
    result.timings.nms_ms = detail::ms_since(t_nms);
    result.timings.total_ms = detail::ms_since(t_start);
    return result;
}

// Full frame: enumerate occupied cells, decode raw head vectors, detect.
inline DetectionResult detect_frame(const RangeImage& img, const SensorConfig& cfg,
                                    const std::vector<std::vector<double>>& raw_predictions,
                                    const PipelineParams& params) {
    const auto t_decode = std::chrono::steady_clock::now();
    const std::vector<ImagePoint> points = image_points(img, cfg);
    if (points.size() != raw_predictions.size())
        throw std::invalid_argument("detect_frame: one raw prediction per occupied cell required");
    const std::vector<int> ks = params.classes.components_per_class();
    std::vector<PerPointPrediction> decoded;
    decoded.reserve(points.size());
    for (const std::vector<double>& raw : raw_predictions)
        decoded.push_back(decode_head(raw, params.classes.count(), ks));
    const double decode_ms = detail::ms_since(t_decode);

    DetectionResult result = detect_points(points, decoded, params);
    result.timings.decode_ms = decode_ms;
    result.timings.total_ms += decode_ms;
    return result;
}

}  // namespace rvdet
