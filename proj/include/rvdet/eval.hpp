// BEV evaluation: greedy score-ordered matching, interpolated average
// precision with range buckets, and the expected-vs-observed CDF
// calibration analysis of the predicted Laplacians.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rvdet/classes.hpp"
#include "rvdet/geometry.hpp"
#include "rvdet/mixture.hpp"
#include "rvdet/nms.hpp"

namespace rvdet {

struct MatchResult {
    std::vector<bool> det_true_positive;
    std::vector<int> det_matched_gt;  // -1 when unmatched
    std::vector<bool> gt_matched;
};

// Greedy per-frame, per-class matching: detections in descending score,
// each taking the unmatched ground truth with the highest rotated IoU at
// or above the threshold. Deterministic under detection reordering (stable
// sort by score, ties by index).
inline MatchResult match_detections(const std::vector<Detection>& dets,
                                    const std::vector<OrientedBox>& gts, double iou_threshold) {
    MatchResult res;
    res.det_true_positive.assign(dets.size(), false);
    res.det_matched_gt.assign(dets.size(), -1);
    res.gt_matched.assign(gts.size(), false);

    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });

    std::vector<CornerVector> gt_corners;
    gt_corners.reserve(gts.size());
    for (const OrientedBox& g : gts) gt_corners.push_back(corners(g));

    for (std::size_t oi : order) {
        double best_iou = 0.0;
        int best_gt = -1;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (res.gt_matched[g]) continue;
            const double iou = quad_iou(dets[oi].corners, gt_corners[g]);
            if (iou > best_iou) {
                best_iou = iou;
                best_gt = static_cast<int>(g);
            }
        }
        if (best_gt >= 0 && best_iou >= iou_threshold) {
            res.det_true_positive[oi] = true;
            res.det_matched_gt[oi] = best_gt;
            res.gt_matched[static_cast<std::size_t>(best_gt)] = true;
        }
    }
    return res;
}

struct ScoredDetection {
    double score = 0.0;
    bool true_positive = false;
};

// Interpolated AP over the pooled dataset. Absent when there is no ground
// truth to recall.
inline std::optional<double> average_precision(std::vector<ScoredDetection> pooled,
                                               std::size_t ground_truth_count,
                                               int interpolation_points = 41) {
    if (ground_truth_count == 0) return std::nullopt;
    if (interpolation_points < 2) throw std::invalid_argument("average_precision: need >= 2 points");
    std::stable_sort(pooled.begin(), pooled.end(),
                     [](const ScoredDetection& a, const ScoredDetection& b) {
                         return a.score > b.score;
                     });
    std::vector<double> recall, precision;
    recall.reserve(pooled.size());
    precision.reserve(pooled.size());
    std::size_t tp = 0, fp = 0;
    for (const ScoredDetection& d : pooled) {
        if (d.true_positive) ++tp; else ++fp;
        recall.push_back(static_cast<double>(tp) / static_cast<double>(ground_truth_count));
        precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    }
    double ap = 0.0;
    for (int s = 0; s < interpolation_points; ++s) {
        const double q = static_cast<double>(s) / static_cast<double>(interpolation_points - 1);
        double best = 0.0;
        for (std::size_t i = 0; i < recall.size(); ++i)
            if (recall[i] >= q) best = std::max(best, precision[i]);
        ap += best;
    }
    return ap / static_cast<double>(interpolation_points);
}

struct RangeBucket {
    double min_range = 0.0;  // exclusive
    double max_range = 0.0;  // inclusive

    bool contains(double r) const { return r > min_range && r <= max_range; }
    std::string label() const {
        return std::to_string(static_cast<int>(min_range)) + "-" +
               std::to_string(static_cast<int>(max_range)) + "m";
    }
};

inline std::vector<RangeBucket> default_range_buckets() {
    return {{0.0, 30.0}, {30.0, 50.0}, {50.0, 70.0}};
}

// One frame of same-class detections and ground truths, already matched.
struct MatchedFrame {
    std::vector<Detection> dets;
    std::vector<OrientedBox> gts;
    MatchResult match;
};

struct BucketTally {
    std::size_t ground_truths = 0;
    std::size_t true_positives = 0;
    std::size_t false_positives = 0;
};

// TP/FP/GT counts per range bucket, same assignment rule as the bucketed AP.
inline std::vector<BucketTally> bucket_tallies(const std::vector<MatchedFrame>& frames,
                                               std::span<const RangeBucket> buckets) {
    std::vector<BucketTally> tallies(buckets.size());
    for (std::size_t b = 0; b < buckets.size(); ++b) {
        for (const MatchedFrame& fr : frames) {
            for (const OrientedBox& g : fr.gts)
                if (buckets[b].contains(g.center.norm())) ++tallies[b].ground_truths;
            for (std::size_t d = 0; d < fr.dets.size(); ++d) {
                const int g = fr.match.det_matched_gt[d];
                const double r = g >= 0 ? fr.gts[static_cast<std::size_t>(g)].center.norm()
                                        : fr.dets[d].corners.centroid().norm();
                if (!buckets[b].contains(r)) continue;
                if (fr.match.det_true_positive[d])
                    ++tallies[b].true_positives;
                else
                    ++tallies[b].false_positives;
            }
        }
    }
    return tallies;
}

// AP restricted to a range bucket: ground truths bucketed by center range,
// detections by their matched ground truth (or their own center otherwise).
inline std::optional<double> range_bucketed_ap(const std::vector<MatchedFrame>& frames,
                                               const RangeBucket& bucket,
                                               int interpolation_points = 41) {
    std::vector<ScoredDetection> pooled;
    std::size_t gt_count = 0;
    for (const MatchedFrame& fr : frames) {
        for (const OrientedBox& g : fr.gts)
            if (bucket.contains(g.center.norm())) ++gt_count;
        for (std::size_t d = 0; d < fr.dets.size(); ++d) {
            const int g = fr.match.det_matched_gt[d];
            const double r = g >= 0 ? fr.gts[static_cast<std::size_t>(g)].center.norm()
                                    : fr.dets[d].corners.centroid().norm();
            if (bucket.contains(r))
                pooled.push_back({fr.dets[d].score, fr.match.det_true_positive[d]});
        }
    }
    return average_precision(std::move(pooled), gt_count, interpolation_points);
}

// ---- calibration ----

struct CalibrationPair {
    CornerVector predicted;
    double sigma = 1.0;
    CornerVector ground_truth;
};

struct CalibrationCurve {
    std::vector<double> expected;  // quantiles q
    std::vector<double> observed;  // fraction of pooled CDF values <= q
};

inline std::vector<double> default_quantile_grid() {
    std::vector<double> q(101);
    for (std::size_t i = 0; i < q.size(); ++i) q[i] = static_cast<double>(i) / 100.0;
    return q;
}

// Pools the per-coordinate Laplace CDF values of every matched pair and
// reads the empirical CDF at each quantile.
inline CalibrationCurve calibration_curve(std::span<const CalibrationPair> pairs,
                                          std::span<const double> quantiles) {
    std::vector<double> u;
    u.reserve(pairs.size() * 8);
    for (const CalibrationPair& p : pairs)
        for (int n = 0; n < 8; ++n)
            u.push_back(laplace_cdf(p.ground_truth.flat(n), p.predicted.flat(n), p.sigma));
    std::sort(u.begin(), u.end());
    CalibrationCurve curve;
    curve.expected.assign(quantiles.begin(), quantiles.end());
    curve.observed.reserve(quantiles.size());
    for (double q : quantiles) {
        const auto it = std::upper_bound(u.begin(), u.end(), q);
        curve.observed.push_back(u.empty() ? 0.0
                                           : static_cast<double>(it - u.begin()) /
                                                 static_cast<double>(u.size()));
    }
    return curve;
}

inline double max_calibration_deviation(const CalibrationCurve& curve) {
    double dev = 0.0;
    for (std::size_t i = 0; i < curve.expected.size(); ++i)
        dev = std::max(dev, std::abs(curve.observed[i] - curve.expected[i]));
    return dev;
}

// Kolmogorov-Smirnov distance of a sample against Uniform(0,1).
inline double ks_statistic_uniform(std::vector<double> u) {
    std::sort(u.begin(), u.end());
    const double n = static_cast<double>(u.size());
    double ks = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double hi = static_cast<double>(i + 1) / n - u[i];
        const double lo = u[i] - static_cast<double>(i) / n;
        ks = std::max({ks, hi, lo});
    }
    return ks;
}

// ---- dataset-level driver ----

struct LabeledBox {
    int class_id = 0;
    OrientedBox box;
};

struct EvalFrame {
    std::vector<Detection> detections;
    std::vector<LabeledBox> ground_truth;
};

struct MetricsReport {
    std::vector<std::pair<std::string, double>> values;
    // named curves as (x, y) pairs
    std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>> curves;

    std::optional<double> value_of(const std::string& key) const {
        for (const auto& [k, v] : values)
            if (k == key) return v;
        return std::nullopt;
    }
};

// Full evaluation at each class's AP IoU: overall AP, per-bucket AP, and
// the pooled calibration curve over matched pairs.
inline MetricsReport evaluate_dataset(const std::vector<EvalFrame>& frames,
                                      const ClassTable& table,
                                      const std::vector<RangeBucket>& buckets =
                                          default_range_buckets(),
                                      int interpolation_points = 41) {
    MetricsReport report;
    std::vector<CalibrationPair> pairs;
    for (int c = 1; c < table.count(); ++c) {
        const ClassSpec& spec = table.at(c);
        std::vector<MatchedFrame> matched;
        matched.reserve(frames.size());
        std::vector<ScoredDetection> pooled;
        std::size_t gt_count = 0;
        for (const EvalFrame& fr : frames) {
            MatchedFrame mf;
            for (const Detection& d : fr.detections)
                if (d.class_id == c) mf.dets.push_back(d);
            for (const LabeledBox& g : fr.ground_truth)
                if (g.class_id == c) mf.gts.push_back(g.box);
            mf.match = match_detections(mf.dets, mf.gts, spec.ap_iou);
            gt_count += mf.gts.size();
            for (std::size_t d = 0; d < mf.dets.size(); ++d) {
                pooled.push_back({mf.dets[d].score, mf.match.det_true_positive[d]});
                if (mf.match.det_matched_gt[d] >= 0)
                    pairs.push_back({mf.dets[d].corners, mf.dets[d].sigma,
                                     corners(mf.gts[static_cast<std::size_t>(
                                         mf.match.det_matched_gt[d])])});
            }
            matched.push_back(std::move(mf));
        }
        const std::string prefix = spec.name + ".ap@" + std::to_string(spec.ap_iou).substr(0, 4);
        if (const auto ap = average_precision(pooled, gt_count, interpolation_points))
            report.values.emplace_back(prefix, *ap);
        for (const RangeBucket& b : buckets)
            if (const auto ap = range_bucketed_ap(matched, b, interpolation_points))
                report.values.emplace_back(prefix + "." + b.label(), *ap);
        report.values.emplace_back(spec.name + ".ground_truth_count",
                                   static_cast<double>(gt_count));
        if (gt_count > 0 && !pooled.empty()) {
            std::stable_sort(pooled.begin(), pooled.end(),
                             [](const ScoredDetection& a, const ScoredDetection& b) {
                                 return a.score > b.score;
                             });
            std::vector<std::pair<double, double>> pr;
            std::size_t tp = 0, fp = 0;
            for (const ScoredDetection& d : pooled) {
                if (d.true_positive) ++tp; else ++fp;
                pr.emplace_back(static_cast<double>(tp) / static_cast<double>(gt_count),
                                static_cast<double>(tp) / static_cast<double>(tp + fp));
            }
            report.curves.emplace_back(spec.name + ".pr", std::move(pr));
        }
    }
    if (!pairs.empty()) {
        const auto grid = default_quantile_grid();
        const CalibrationCurve curve = calibration_curve(pairs, grid);
        report.values.emplace_back("calibration.max_abs_deviation",
                                   max_calibration_deviation(curve));
        report.values.emplace_back("calibration.pair_count", static_cast<double>(pairs.size()));
        std::vector<std::pair<double, double>> xy;
        for (std::size_t i = 0; i < curve.expected.size(); ++i)
            xy.emplace_back(curve.expected[i], curve.observed[i]);
        report.curves.emplace_back("calibration", std::move(xy));
    }
    return report;
}

}  // namespace rvdet
