// Acceptance suite: one check per acceptance criterion, each printed as a
// single pass/fail line with the measured quantity and its bound. The
// performance budget (criterion 10) reports a warning instead of failing.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "rvdet/bench.hpp"
#include "rvdet/eval.hpp"
#include "rvdet/losscheck.hpp"
#include "rvdet/mean_shift.hpp"
#include "rvdet/pipeline.hpp"
#include "rvdet/sim.hpp"

using namespace rvdet;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& what) {
    std::printf("[%s] criterion %2d: %s\n", pass ? "PASS" : "FAIL", criterion, what.c_str());
    if (!pass) ++g_failures;
}

void report_warn(int criterion, bool ok, const std::string& what) {
    std::printf("[%s] criterion %2d: %s\n", ok ? "PASS" : "WARN", criterion, what.c_str());
}

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, pattern, a, b, c);
    return buf;
}

struct ScenePipeline {
    Scene scene;
    RangeImage image;
    TargetSet targets;
};

ScenePipeline simulate_scene(std::uint64_t seed, const SensorConfig& cfg,
                             const ClassTable& table) {
    ScenePipeline sp;
    sp.scene = random_scene(seed, 1, 8, table, cfg);
    const Sweep sweep = quantize_to_storage(raycast_sweep(sp.scene, cfg));
    sp.image = build_range_image(sweep, cfg).image;
    sp.targets = encode_targets(sp.image, cfg, sp.scene);
    return sp;
}

// ---- criterion 1: noiseless end-to-end ----
void criterion_noiseless() {
    const SensorConfig cfg = SensorConfig::reference();
    PipelineParams params;
    ClassTable ap70 = params.classes;  // criterion is stated at IoU 0.7 for all classes
    for (ClassSpec& spec : ap70.classes) spec.ap_iou = 0.7;

    const auto t0 = std::chrono::steady_clock::now();
    std::vector<EvalFrame> frames;
    double max_corner_error = 0.0;
    for (int s = 0; s < 100; ++s) {
        const ScenePipeline sp = simulate_scene(1000 + s, cfg, params.classes);
        const auto raw =
            oracle_predictions(sp.targets, sp.scene, NoiseSpec{}, params.classes, 1000 + s);
        const DetectionResult result = detect_frame(sp.image, cfg, raw, params);
        EvalFrame frame;
        frame.detections = result.detections;
        for (const GroundTruthObject& obj : sp.scene.objects) {
            frame.ground_truth.push_back({obj.class_id, obj.footprint});
            const CornerVector gt = corners(obj.footprint);
            double best = 1e300;
            for (const Detection& d : result.detections) {
                if (d.class_id != obj.class_id) continue;
                double err = 0.0;
                for (int n = 0; n < 8; ++n)
                    err = std::max(err, std::abs(d.corners.flat(n) - gt.flat(n)));
                best = std::min(best, err);
            }
            max_corner_error = std::max(max_corner_error, best);
        }
        frames.push_back(std::move(frame));
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const MetricsReport metrics = evaluate_dataset(frames, ap70);
    bool ap_exact = true;
    for (int c = 1; c < ap70.count(); ++c) {
        const auto ap = metrics.value_of(ap70.at(c).name + ".ap@0.70");
        if (ap.has_value() && *ap != 1.0) ap_exact = false;
    }
    const bool pass = ap_exact && max_corner_error < 1e-5 && seconds < 10.0;
    report(1, pass,
           std::string("noiseless 100 scenes: AP@0.7 ") +
               (ap_exact ? "= 1.000 exactly" : "!= 1.000") +
               fmt(", max corner error %.3g m (< 1e-5), runtime %.2f s (< 10)",
                   max_corner_error, seconds));
}

// ---- criterion 2: clustering benefit under center noise ----
void criterion_clustering_benefit() {
    const SensorConfig cfg = SensorConfig::reference();
    PipelineParams params;
    NoiseSpec noise;
    noise.center_std = 0.1;

    double sq_on = 0.0, sq_off = 0.0;
    long n_on = 0, n_off = 0;
    for (int s = 0; s < 100; ++s) {
        const ScenePipeline sp = simulate_scene(2000 + s, cfg, params.classes);
        const auto raw =
            oracle_predictions(sp.targets, sp.scene, noise, params.classes, 2000 + s);
        for (bool fusion : {true, false}) {
            PipelineParams p = params;
            p.fusion = fusion;
            const DetectionResult result = detect_frame(sp.image, cfg, raw, p);
            for (const GroundTruthObject& obj : sp.scene.objects) {
                const CornerVector gt = corners(obj.footprint);
                const Detection* best = nullptr;
                double best_dist = 1e300;
                for (const Detection& d : result.detections) {
                    if (d.class_id != obj.class_id) continue;
                    const double dist = d.corners.distance(gt);
                    if (dist < best_dist) {
                        best_dist = dist;
                        best = &d;
                    }
                }
                if (!best) continue;
                for (int c = 0; c < 8; ++c) {
                    const double e = best->corners.flat(c) - gt.flat(c);
                    if (fusion) {
                        sq_on += e * e;
                        ++n_on;
                    } else {
                        sq_off += e * e;
                        ++n_off;
                    }
                }
            }
        }
    }
    const double rmse_on = std::sqrt(sq_on / n_on);
    const double rmse_off = std::sqrt(sq_off / n_off);
    const bool pass = rmse_on <= 0.8 * rmse_off && n_on > 0 && n_off > 0;
    report(2, pass,
           fmt("clustering benefit: corner RMSE %.4f m with clustering vs %.4f m without "
               "(ratio %.3f <= 0.8)",
               rmse_on, rmse_off, rmse_on / rmse_off));
}

// ---- criterion 3: fusion against brute force ----
void criterion_fusion_oracle() {
    SeededRng rng(303);
    double worst = 0.0;
    for (int trial = 0; trial < 10000; ++trial) {
        const int n = 1 + static_cast<int>(rng.bounded(10));
        std::vector<BoxDistribution> members;
        for (int j = 0; j < n; ++j) {
            BoxDistribution d;
            for (int c = 0; c < 8; ++c) d.corners.set_flat(c, rng.uniform(-40, 40));
            d.sigma = rng.uniform(0.05, 3.0);
            members.push_back(d);
        }
        const FusedBox fused = fuse(members);
        double precision = 0.0;
        for (const auto& m : members) precision += 1.0 / (m.sigma * m.sigma);
        const double sigma_bf = 1.0 / std::sqrt(precision);
        worst = std::max(worst, std::abs(fused.sigma - sigma_bf) / sigma_bf);
        for (int c = 0; c < 8; ++c) {
            double num = 0.0;
            for (const auto& m : members) num += m.corners.flat(c) / (m.sigma * m.sigma);
            const double bf = num / precision;
            const double denom = std::max(1.0, std::abs(bf));
            worst = std::max(worst, std::abs(fused.corners.flat(c) - bf) / denom);
        }
    }
    report(3, worst < 1e-12,
           fmt("fusion vs brute force on 10^4 member sets: max relative deviation %.3g (< 1e-12)",
               worst));
}

// ---- criterion 4: adaptive NMS behavior ----
void criterion_adaptive_nms() {
    const double t = adaptive_threshold(0.2, 0.2, 2.0);
    const bool hand_ok = std::abs(t - 0.1111111111111111) < 1e-4;
    const bool branch_ok = adaptive_threshold(1.2, 0.9, 2.0) == 1.0;

    auto make_det = [](Vec2 center, double sigma, double alpha) {
        Detection d;
        d.class_id = 1;
        d.corners = corners({center, 0.0, 4.5, 2.0});
        d.sigma = sigma;
        d.alpha = alpha;
        d.refresh();
        return d;
    };
    // the worst-case side-by-side geometry: both boxes lean 0.35 m inward
    const std::vector<Detection> pair{make_det({20.0, +0.75}, 0.3, 0.9),
                                      make_det({20.0, -0.75}, 0.3, 0.8)};
    NmsConfig cfg;
    cfg.mode = NmsMode::Hard;
    cfg.mean_width = {0.0, 2.0};
    const std::size_t kept_adaptive = run_nms(pair, cfg).size();
    cfg.fixed_iou_threshold = 0.1;
    const std::size_t kept_fixed = run_nms(pair, cfg).size();

    const bool pass = hand_ok && branch_ok && kept_adaptive == 2 && kept_fixed == 1;
    report(4, pass,
           fmt("adaptive NMS: t(0.2,0.2,2)=%.6f (0.1111+-1e-4), saturated branch t=1, "
               "side-by-side keeps %.0f adaptive / %.0f fixed-0.1 (want 2 / 1)",
               t, static_cast<double>(kept_adaptive), static_cast<double>(kept_fixed)));
}

// ---- criterion 5: gradient verification ----
void criterion_gradients() {
    LossConfig cfg;
    cfg.class_count = 4;
    cfg.components = {3, 1, 1};
    cfg.fusion = true;
    const LosscheckReport rep = run_losscheck(505, 100, 1e-5, cfg);
    report(5, rep.accepted == 100 && rep.max_rel_error < 1e-4,
           fmt("end-to-end gradients on 100 non-kink configs: max relative error %.3g "
               "(< 1e-4), %g kink rejections",
               rep.max_rel_error, static_cast<double>(rep.excluded_kinks)));
}

// ---- criterion 6: calibration methodology ----
void criterion_calibration() {
    SeededRng rng(606);
    std::vector<CalibrationPair> truthful, misreported;
    for (int i = 0; i < 12500; ++i) {  // 12500 pairs x 8 coords = 1e5 samples
        CalibrationPair t, m;
        const double sigma = rng.uniform(0.05, 0.5);
        t.sigma = sigma;
        m.sigma = 3.0 * sigma;
        for (int n = 0; n < 8; ++n) {
            const double mu = rng.uniform(-20, 20);
            t.predicted.set_flat(n, mu);
            m.predicted.set_flat(n, mu);
            const double sample = mu + rng.laplace(sigma);
            t.ground_truth.set_flat(n, sample);
            m.ground_truth.set_flat(n, sample);
        }
        truthful.push_back(t);
        misreported.push_back(m);
    }
    const auto grid = default_quantile_grid();
    const CalibrationCurve good = calibration_curve(truthful, grid);
    const CalibrationCurve wide = calibration_curve(misreported, grid);
    const double dev_good = max_calibration_deviation(good);
    const double dev_wide = max_calibration_deviation(wide);
    // over-uncertain direction: observed below the diagonal left of the
    // median, above it to the right
    bool direction = true;
    for (std::size_t i = 0; i < wide.expected.size(); ++i) {
        if (wide.expected[i] < 0.45) direction &= wide.observed[i] <= wide.expected[i] + 1e-9;
        if (wide.expected[i] > 0.55) direction &= wide.observed[i] >= wide.expected[i] - 1e-9;
    }
    report(6, dev_good < 0.01 && dev_wide > 0.05 && direction,
           fmt("calibration on 1e5 pooled samples: truthful max deviation %.4f (< 0.01), "
               "3x misreported %.3f (> 0.05, over-uncertain direction)",
               dev_good, dev_wide));
}

// ---- criterion 7: approximate vs exact mean shift ----
std::vector<std::vector<int>> canonical_partition(const std::vector<int>& label) {
    std::vector<std::vector<int>> groups;
    for (std::size_t i = 0; i < label.size(); ++i) {
        const std::size_t id = static_cast<std::size_t>(label[i]);
        if (groups.size() <= id) groups.resize(id + 1);
        groups[id].push_back(static_cast<int>(i));
    }
    std::vector<std::vector<int>> out;
    for (auto& g : groups)
        if (!g.empty()) out.push_back(std::move(g));
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<int> exact_mean_shift_partition(const std::vector<Vec2>& pts, double dx, double dy) {
    const double inv_bw = 1.0 / (dx * dx + dy * dy);
    std::vector<Vec2> modes(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        Vec2 m = pts[i];
        for (int it = 0; it < 500; ++it) {
            Vec2 num{};
            double den = 0.0;
            for (const Vec2& p : pts) {
                const double k = std::exp(-(m - p).squared_norm() * inv_bw);
                num += p * k;
                den += k;
            }
            const Vec2 next = num * (1.0 / den);
            const bool done = (next - m).norm() < 1e-12;
            m = next;
            if (done) break;
        }
        modes[i] = m;
    }
    std::vector<int> label(pts.size(), -1);
    int next = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        if (label[i] >= 0) continue;
        label[i] = next;
        for (std::size_t j = i + 1; j < pts.size(); ++j)
            if (label[j] < 0 && (modes[i] - modes[j]).norm() < std::hypot(dx, dy))
                label[j] = next;
        ++next;
    }
    return label;
}

void criterion_mean_shift_oracle() {
    SeededRng rng(707);
    const MeanShiftParams params;  // 0.5 m bins, 3 iterations
    int matching = 0;
    bool conserved = true;
    for (int instance = 0; instance < 50; ++instance) {
        std::vector<Vec2> centers;
        const int groups = 2 + static_cast<int>(rng.bounded(3));
        std::vector<Vec2> anchors;
        while (static_cast<int>(anchors.size()) < groups) {
            const Vec2 a{rng.uniform(-30, 30), rng.uniform(-30, 30)};
            bool clear = true;
            for (const Vec2& b : anchors) clear &= (a - b).norm() >= 5.0;  // 10 * delta
            if (clear) anchors.push_back(a);
        }
        for (const Vec2& a : anchors) {
            const int members =
                2 + static_cast<int>(rng.bounded(static_cast<std::uint64_t>(30 / groups - 2)));
            for (int m = 0; m < members && centers.size() < 30; ++m)
                centers.push_back({a.x + rng.normal(0.0, 0.1), a.y + rng.normal(0.0, 0.1)});
        }
        // member conservation through every iteration
        BinGrid grid = init_bins(centers, params.delta_x, params.delta_y);
        for (int it = 0; it < params.iterations; ++it) {
            update_means(grid);
            conserved &= grid.member_count() == centers.size();
            merge_step(grid);
            conserved &= grid.member_count() == centers.size();
        }
        std::vector<BoxDistribution> dists(centers.size());
        for (std::size_t i = 0; i < centers.size(); ++i) {
            dists[i].corners.set_flat(0, centers[i].x);
            dists[i].corners.set_flat(1, centers[i].y);
            dists[i].sigma = 0.3;
        }
        const ClusterAssignment approx = cluster(centers, dists, params);
        const auto expect =
            canonical_partition(exact_mean_shift_partition(centers, params.delta_x, params.delta_y));
        if (canonical_partition(approx.point_cluster) == expect) ++matching;
    }
    report(7, matching == 50 && conserved,
           fmt("binned mean shift vs exact kernel mean shift: %g/50 identical partitions, ",
               static_cast<double>(matching)) +
               (conserved ? "member conservation held on every iteration"
                          : "member conservation VIOLATED"));
}

// ---- criterion 8: rotated IoU vs Monte Carlo ----
double stratified_mc_iou(const OrientedBox& a, const OrientedBox& b, SeededRng& rng) {
    const ConvexPolygon pa = to_polygon(corners(a));
    const ConvexPolygon pb = to_polygon(corners(b));
    auto bounds = [](const ConvexPolygon& p, double& x0, double& x1, double& y0, double& y1) {
        x0 = y0 = 1e300;
        x1 = y1 = -1e300;
        for (int i = 0; i < p.n; ++i) {
            x0 = std::min(x0, p.pts[i].x);
            x1 = std::max(x1, p.pts[i].x);
            y0 = std::min(y0, p.pts[i].y);
            y1 = std::max(y1, p.pts[i].y);
        }
    };
    double ax0, ax1, ay0, ay1, bx0, bx1, by0, by1;
    bounds(pa, ax0, ax1, ay0, ay1);
    bounds(pb, bx0, bx1, by0, by1);
    const double x0 = std::max(ax0, bx0), x1 = std::min(ax1, bx1);
    const double y0 = std::max(ay0, by0), y1 = std::min(ay1, by1);
    if (x0 >= x1 || y0 >= y1) return 0.0;
    const int grid = 1000;  // 10^6 jittered-stratified samples
    const double cw = (x1 - x0) / grid, ch = (y1 - y0) / grid;
    long hits = 0;
    for (int gy = 0; gy < grid; ++gy)
        for (int gx = 0; gx < grid; ++gx) {
            const Vec2 p{x0 + (gx + rng.uniform()) * cw, y0 + (gy + rng.uniform()) * ch};
            if (polygon_contains(pa, p, 0.0) && polygon_contains(pb, p, 0.0)) ++hits;
        }
    const double inter = static_cast<double>(hits) * cw * ch;
    return inter / (a.area() + b.area() - inter);
}

void criterion_rotated_iou() {
    SeededRng rng(808);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        OrientedBox a{{rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)}, rng.uniform(-kPi, kPi),
                      rng.uniform(1.0, 3.0), rng.uniform(1.0, 3.0)};
        OrientedBox b{{rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)}, rng.uniform(-kPi, kPi),
                      rng.uniform(1.0, 3.0), rng.uniform(1.0, 3.0)};
        worst = std::max(worst, std::abs(rotated_iou(a, b) - stratified_mc_iou(a, b, rng)));
    }
    const OrientedBox same{{3, -2}, 0.7, 4.0, 2.0};
    const OrientedBox far_away{{300, 0}, 0.0, 4.0, 2.0};
    const bool exact = rotated_iou(same, same) == 1.0 && rotated_iou(same, far_away) == 0.0;
    report(8, worst < 2e-3 && exact,
           fmt("rotated IoU vs 10^6-sample MC oracle on 200 pairs: max |error| %.2g (< 2e-3), "
               "identical = 1.0 and disjoint = 0.0 exactly",
               worst));
}

// ---- criterion 9: range image formation ----
void criterion_range_image() {
    const SensorConfig cfg = SensorConfig::reference();
    SeededRng rng(909);
    bool identical = true;
    for (int s = 0; s < 10; ++s) {
        Sweep sweep;
        const int n = 500 + static_cast<int>(rng.bounded(500));
        for (int i = 0; i < n; ++i)
            sweep.push_back({rng.uniform(1.0, 69.0), rng.uniform(0.0, 1.0),
                             rng.uniform(cfg.fov_min, cfg.fov_max),
                             static_cast<std::uint16_t>(rng.bounded(64))});
        // constructed collisions: same cell, distinct ranges
        const double az = cfg.column_center(100 + s);
        sweep.push_back({30.0, 0.1, az, 5});
        sweep.push_back({10.0 + s, 0.9, az, 5});
        sweep.push_back({50.0, 0.2, az, 5});
        const RangeImage reference = build_range_image(sweep, cfg).image;
        const int row = cfg.row_of_laser()[5];
        identical &= reference.range[reference.index(row, 100 + s)] <= 10.0 + s;
        for (int shuffle = 0; shuffle < 10; ++shuffle) {
            Sweep copy = sweep;
            SeededRng srng(5000 + s * 10 + shuffle);
            for (std::size_t i = copy.size(); i > 1; --i)
                std::swap(copy[i - 1], copy[srng.bounded(i)]);
            identical &= build_range_image(copy, cfg).image == reference;
        }
    }
    report(9, identical,
           "range image formation: bit-identical over 10 shuffles of 10 sweeps, closest "
           "return wins constructed collisions");
}

// ---- criterion 10: performance budget (non-blocking) ----
void criterion_performance() {
    PipelineParams params;
    const BenchFrame frame = make_bench_frame(1, params.classes, 10);
    std::vector<double> totals;
    StageTimings last{};
    for (int r = 0; r < 5; ++r) {
        const DetectionResult result = detect_frame(frame.image, frame.sensor, frame.raw, params);
        totals.push_back(result.timings.total_ms);
        last = result.timings;
    }
    std::sort(totals.begin(), totals.end());
    const double median = totals[totals.size() / 2];
    report_warn(10, median < 50.0,
                fmt("post-network pipeline on a fully occupied 512x64 frame: median %.1f ms "
                    "(budget 50 ms; decode %.1f ms, cluster %.1f ms",
                    median, last.decode_ms, last.cluster_ms) +
                    fmt(", nms %.1f ms), single-threaded", last.nms_ms));
}

}  // namespace

int main() {
    std::printf("acceptance suite\n----------------\n");
    criterion_noiseless();
    criterion_clustering_benefit();
    criterion_fusion_oracle();
    criterion_adaptive_nms();
    criterion_gradients();
    criterion_calibration();
    criterion_mean_shift_oracle();
    criterion_rotated_iou();
    criterion_range_image();
    criterion_performance();
    std::printf("----------------\n%s\n", g_failures == 0 ? "all criteria passed"
                                                          : "CRITERIA FAILED");
    return g_failures == 0 ? 0 : 1;
}
