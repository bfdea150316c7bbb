// Command-line front end: simulate / detect / eval / losscheck / bench.
// Exit codes: 0 success, 1 validation failure, 2 usage or I/O error.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "rvdet/bench.hpp"
#include "rvdet/eval.hpp"
#include "rvdet/io.hpp"
#include "rvdet/losscheck.hpp"
#include "rvdet/pipeline.hpp"
#include "rvdet/sim.hpp"

namespace fs = std::filesystem;
using namespace rvdet;

namespace {

struct CommonOptions {
    std::string config_path;
    std::string sensor_path;
};

struct LoadedConfig {
    PipelineFileConfig file;
    SensorConfig sensor = SensorConfig::reference();
};

LoadedConfig load_config(const CommonOptions& common) {
    LoadedConfig cfg;
    if (!common.config_path.empty()) cfg.file = load_pipeline_config(common.config_path);
    if (!common.sensor_path.empty())
        cfg.sensor = load_sensor_config(common.sensor_path);  // flag beats config file
    else if (cfg.file.sensor_path)
        cfg.sensor = load_sensor_config(*cfg.file.sensor_path);
    return cfg;
}

// ---- simulate ----

struct SimulateArgs {
    CommonOptions common;
    std::string scene_path;
    std::string generator = "random";
    int objects_min = 1;
    int objects_max = 8;
    std::uint64_t seed = 0;
    bool seed_set = false;
    double jitter = 0.0;
    std::string out_dir;
};

int cmd_simulate(const SimulateArgs& args) {
    const LoadedConfig cfg = load_config(args.common);
    const ClassTable& table = cfg.file.params.classes;

    Scene scene;
    if (!args.scene_path.empty()) {
        scene = load_scene(args.scene_path, table);
    } else if (args.generator == "random") {
        if (!args.seed_set) {
            std::cerr << "simulate: --seed is required for the random generator\n";
            return 2;
        }
        scene = random_scene(args.seed, args.objects_min, args.objects_max, table, cfg.sensor);
    } else if (args.generator == "side-by-side") {
        scene = side_by_side_scene(table);
    } else if (args.generator == "far-sparse") {
        scene = far_sparse_scene(table);
    } else if (args.generator == "corridor") {
        scene = occlusion_corridor_scene(table);
    } else {
        std::cerr << "simulate: unknown generator '" << args.generator << "'\n";
        return 2;
    }
    if (args.seed_set) scene.seed = args.seed;

    const fs::path out(args.out_dir);
    fs::create_directories(out);
    const Sweep sweep = quantize_to_storage(raycast_sweep(scene, cfg.sensor, args.jitter));
    const RangeImageBuild build = build_range_image(sweep, cfg.sensor);
    const TargetSet targets = encode_targets(build.image, cfg.sensor, scene);

    write_sweep(out / "sweep.rvsw", sweep);
    write_targets(out / "targets.rvtg", targets);
    save_scene(out / "scene.json", scene, table);
    save_sensor_config(out / "sensor.json", cfg.sensor);

    std::cout << "scene objects:    " << scene.objects.size() << "\n"
              << "sweep returns:    " << sweep.size() << "\n"
              << "occupied cells:   " << build.image.occupied_count() << "\n"
              << "dropped returns:  " << build.dropped << "\n"
              << "visible objects:  " << targets.object_count << "\n";
    return 0;
}

// ---- detect ----

struct DetectArgs {
    CommonOptions common;
    std::string sweep_path;
    std::string predictions = "oracle";
    std::string scene_path;
    double noise_center = 0.0;
    double noise_yaw = 0.0;
    double noise_dim = 0.0;
    double sigma_scale = 1.0;
    std::uint64_t seed = 0;
    bool fusion_off = false;
    std::string nms_mode;
    std::optional<double> fixed_iou;
    std::optional<double> threshold;
    std::optional<int> iterations;
    std::string out_path;
    int jobs = 0;
    bool timing = false;
};

PipelineParams detect_params(const DetectArgs& args, const LoadedConfig& cfg) {
    PipelineParams params = cfg.file.params;
    if (args.fusion_off) params.fusion = false;
    if (!args.nms_mode.empty()) {
        if (args.nms_mode == "hard") params.nms_mode = NmsMode::Hard;
        else if (args.nms_mode == "soft") params.nms_mode = NmsMode::Soft;
        else throw io_error("detect: --nms-mode must be hard or soft");
    }
    if (args.fixed_iou) params.fixed_iou_threshold = *args.fixed_iou;
    if (args.threshold) params.class_threshold = *args.threshold;
    if (args.iterations) params.mean_shift.iterations = *args.iterations;
    return params;
}

NoiseSpec detect_noise(const DetectArgs& args) {
    NoiseSpec noise;
    noise.center_std = args.noise_center;
    noise.yaw_std = args.noise_yaw;
    noise.dim_std = args.noise_dim;
    if (args.sigma_scale != 1.0) {
        noise.sigma_policy = SigmaPolicy::Misreported;
        noise.sigma_scale = args.sigma_scale;
    }
    return noise;
}

DetectionResult detect_one(const fs::path& sweep_path, const fs::path& scene_or_pred,
                           bool oracle_mode, const DetectArgs& args, const LoadedConfig& cfg,
                           const PipelineParams& params, std::uint64_t seed) {
    const Sweep sweep = sweep_path.extension() == ".bin"
                            ? read_xyz_pointcloud(sweep_path, cfg.sensor)
                            : read_sweep(sweep_path);
    const RangeImage img = build_range_image(sweep, cfg.sensor).image;
    std::vector<std::vector<double>> raw;
    if (oracle_mode) {
        const Scene scene = load_scene(scene_or_pred, params.classes);
        const TargetSet targets = encode_targets(img, cfg.sensor, scene);
        raw = oracle_predictions(targets, scene, detect_noise(args), params.classes, seed);
    } else {
        raw = align_predictions(read_predictions(scene_or_pred), img, cfg.sensor);
    }
    return detect_frame(img, cfg.sensor, raw, params);
}

int cmd_detect(const DetectArgs& args) {
    const LoadedConfig cfg = load_config(args.common);
    const PipelineParams params = detect_params(args, cfg);
    const bool oracle_mode = args.predictions == "oracle";
    std::vector<std::string> class_names;
    for (const ClassSpec& spec : params.classes.classes) class_names.push_back(spec.name);

    const fs::path sweep_path(args.sweep_path);
    if (!fs::is_directory(sweep_path)) {
        const fs::path aux = oracle_mode ? fs::path(args.scene_path) : fs::path(args.predictions);
        if (oracle_mode && args.scene_path.empty()) {
            std::cerr << "detect: oracle predictions need --scene\n";
            return 2;
        }
        const DetectionResult result =
            detect_one(sweep_path, aux, oracle_mode, args, cfg, params, args.seed);
        write_detections(args.out_path, {0, class_names, result.detections});
        std::cout << "points:     " << result.point_count << "\n"
                  << "candidates: " << result.candidate_count << "\n"
                  << "detections: " << result.detections.size() << "\n";
        if (args.timing)
            std::cout << "decode_ms:  " << result.timings.decode_ms << "\n"
                      << "cluster_ms: " << result.timings.cluster_ms << "\n"
                      << "nms_ms:     " << result.timings.nms_ms << "\n"
                      << "total_ms:   " << result.timings.total_ms << "\n";
        return 0;
    }

    // batch mode: directory of sweeps, paired with scenes/predictions by
    // sorted stem order; deterministic ordered output
    std::vector<fs::path> sweeps;
    for (const auto& e : fs::directory_iterator(sweep_path))
        if (e.path().extension() == ".rvsw") sweeps.push_back(e.path());
    std::sort(sweeps.begin(), sweeps.end());
    const fs::path aux_dir = oracle_mode ? fs::path(args.scene_path) : fs::path(args.predictions);
    std::vector<fs::path> aux;
    for (const auto& e : fs::directory_iterator(aux_dir))
        if (e.path().extension() == (oracle_mode ? ".json" : ".rvpr")) aux.push_back(e.path());
    std::sort(aux.begin(), aux.end());
    if (aux.size() != sweeps.size()) throw io_error("detect: sweep/aux file count mismatch");

    const fs::path out_dir(args.out_path);
    fs::create_directories(out_dir);
    std::vector<DetectionResult> results(sweeps.size());
    const int jobs = args.jobs > 0 ? args.jobs
                                   : static_cast<int>(std::thread::hardware_concurrency());
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < std::max(1, jobs); ++t)
        pool.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < sweeps.size(); i = next.fetch_add(1))
                results[i] = detect_one(sweeps[i], aux[i], oracle_mode, args, cfg, params,
                                        args.seed + i);
        });
    for (auto& th : pool) th.join();

    for (std::size_t i = 0; i < sweeps.size(); ++i) {
        const fs::path out_file = out_dir / (sweeps[i].stem().string() + ".rvdt");
        write_detections(out_file, {i, class_names, results[i].detections});
    }
    std::cout << "frames:     " << sweeps.size() << "\n";
    return 0;
}

// ---- eval ----

struct EvalArgs {
    CommonOptions common;
    std::string detections_path;
    std::string truth_path;
    std::string out_path = "metrics.txt";
    std::string plot_dir;
    int interpolation_points = 41;
};

int cmd_eval(const EvalArgs& args) {
    const LoadedConfig cfg = load_config(args.common);
    const ClassTable& table = cfg.file.params.classes;

    std::vector<fs::path> det_files, truth_files;
    if (fs::is_directory(args.detections_path)) {
        for (const auto& e : fs::directory_iterator(args.detections_path))
            if (e.path().extension() == ".rvdt") det_files.push_back(e.path());
        std::sort(det_files.begin(), det_files.end());
        for (const auto& e : fs::directory_iterator(args.truth_path))
            if (e.path().extension() == ".json") truth_files.push_back(e.path());
        std::sort(truth_files.begin(), truth_files.end());
        if (det_files.size() != truth_files.size())
            throw io_error("eval: detections/truth file count mismatch");
    } else {
        det_files = {args.detections_path};
        truth_files = {args.truth_path};
    }

    std::vector<EvalFrame> frames;
    frames.reserve(det_files.size());
    for (std::size_t i = 0; i < det_files.size(); ++i) {
        EvalFrame frame;
        frame.detections = read_detections(det_files[i]).detections;
        const Scene scene = load_scene(truth_files[i], table);
        for (const GroundTruthObject& obj : scene.objects)
            frame.ground_truth.push_back({obj.class_id, obj.footprint});
        frames.push_back(std::move(frame));
    }

    const MetricsReport report =
        evaluate_dataset(frames, table, default_range_buckets(), args.interpolation_points);
    write_metrics_report(args.out_path, report);
    for (const auto& [key, value] : report.values) std::cout << key << " " << value << "\n";
    if (!args.plot_dir.empty()) write_plot_data(args.plot_dir, "", report);
    return 0;
}

// ---- losscheck ----

struct LosscheckArgs {
    CommonOptions common;
    std::uint64_t seed = 1;
    int trials = 100;
    double h = 1e-5;
    double tolerance = 1e-4;
    bool fusion_off = false;
    std::string out_path;
};

int cmd_losscheck(const LosscheckArgs& args) {
    const LoadedConfig cfg = load_config(args.common);
    LossConfig loss_cfg;
    loss_cfg.class_count = cfg.file.params.classes.count();
    loss_cfg.components = cfg.file.params.classes.components_per_class();
    loss_cfg.mean_shift = cfg.file.params.mean_shift;
    loss_cfg.fusion = !args.fusion_off;

    // central differences are exact on quadratics up to rounding; a cheap
    // self-test of the checker itself
    SeededRng self_rng(args.seed);
    std::vector<double> qx(8), qa(8), qb(8), qg(8);
    for (std::size_t i = 0; i < qx.size(); ++i) {
        qx[i] = self_rng.uniform(-2, 2);
        qa[i] = self_rng.uniform(0.5, 2.0);
        qb[i] = self_rng.uniform(-1, 1);
        qg[i] = 2.0 * qa[i] * qx[i] + qb[i];
    }
    // any h is exact on a quadratic; a large step suppresses rounding noise
    const double self_err =
        gradient_check(
            [&](std::span<const double> v) {
                double s = 0.0;
                for (std::size_t i = 0; i < v.size(); ++i) s += qa[i] * v[i] * v[i] + qb[i] * v[i];
                return s;
            },
            qx, qg, 1e-3)
            .max_rel_error;
    std::cout << "quadratic self-test: " << self_err << "\n";
    if (self_err >= 1e-9) {
        std::cout << "FAIL: finite-difference checker self-test\n";
        return 1;
    }

    const LosscheckReport report = run_losscheck(args.seed, args.trials, args.h, loss_cfg);
    std::cout << "trials:          " << report.accepted << "\n"
              << "excluded kinks:  " << report.excluded_kinks << "\n"
              << "max rel error:   " << report.max_rel_error << "\n"
              << "tolerance:       " << args.tolerance << "\n";
    if (!args.out_path.empty()) {
        std::ofstream os(args.out_path);
        os.precision(12);
        os << "trials " << report.accepted << "\n"
           << "excluded_kinks " << report.excluded_kinks << "\n"
           << "max_rel_error " << report.max_rel_error << "\n";
        for (std::size_t i = 0; i < report.per_trial_error.size(); ++i)
            os << "trial_" << i << " " << report.per_trial_error[i] << "\n";
    }
    if (report.max_rel_error >= args.tolerance) {
        std::cout << "FAIL: gradient mismatch above tolerance\n";
        return 1;
    }
    std::cout << "PASS\n";
    return 0;
}

// ---- bench ----

struct BenchArgs {
    CommonOptions common;
    std::vector<int> sizes = {1, 2, 4};
    int repeats = 5;
    double budget_ms = 50.0;
    std::uint64_t seed = 5;
};

int cmd_bench(const BenchArgs& args) {
    const LoadedConfig cfg = load_config(args.common);
    PipelineParams params = cfg.file.params;

    std::cout << "size points decode_ms cluster_ms nms_ms total_ms\n";
    std::vector<double> medians;
    std::vector<std::size_t> point_counts;
    double base_total = 0.0;
    for (int size : args.sizes) {
        const BenchFrame frame = make_bench_frame(size, params.classes, args.seed);
        std::vector<double> totals;
        StageTimings last{};
        std::size_t points = 0;
        detect_frame(frame.image, frame.sensor, frame.raw, params);  // warmup
        for (int r = 0; r < args.repeats; ++r) {
            const DetectionResult result =
                detect_frame(frame.image, frame.sensor, frame.raw, params);
            totals.push_back(result.timings.total_ms);
            last = result.timings;
            points = result.point_count;
        }
        std::sort(totals.begin(), totals.end());
        const double median = totals[totals.size() / 2];
        medians.push_back(median);
        point_counts.push_back(points);
        if (size == args.sizes.front()) base_total = median;
        std::cout << size << " " << points << " " << last.decode_ms << " " << last.cluster_ms
                  << " " << last.nms_ms << " " << median << "\n";
        const double spread = totals.back() - totals.front();
        if (median > 0.0 && spread / median > 0.2)
            std::cout << "note: run-to-run spread " << spread << " ms exceeds 20% of median\n";
    }
    if (args.sizes.size() >= 2 && medians.size() == args.sizes.size()) {
        const double point_ratio = static_cast<double>(point_counts.back()) /
                                   static_cast<double>(point_counts.front());
        const double time_ratio = medians.back() / std::max(1e-9, base_total);
        std::cout << "scaling: points x" << point_ratio << " -> time x" << time_ratio
                  << (time_ratio < point_ratio * point_ratio ? " (sub-quadratic)\n"
                                                             : " (WARNING: super-quadratic)\n");
    }
    {
        // sparse map vs dense tile mean-shift backends on the base frame
        const BenchFrame frame = make_bench_frame(args.sizes.front(), params.classes, args.seed);
        for (const MeanShiftBackend backend :
             {MeanShiftBackend::Sparse, MeanShiftBackend::Dense}) {
            PipelineParams p = params;
            p.mean_shift.backend = backend;
            double best = 1e300;
            for (int r = 0; r < args.repeats; ++r)
                best = std::min(
                    best, detect_frame(frame.image, frame.sensor, frame.raw, p).timings.cluster_ms);
            std::cout << "cluster stage, "
                      << (backend == MeanShiftBackend::Sparse ? "sparse-map" : "dense-tile")
                      << " backend: " << best << " ms\n";
        }
    }
    if (base_total >= args.budget_ms)
        std::cout << "WARNING: base frame exceeded the " << args.budget_ms << " ms budget ("
                  << base_total << " ms)\n";
    else
        std::cout << "budget: base frame " << base_total << " ms < " << args.budget_ms
                  << " ms\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"range-view LiDAR detection pipeline"};
    app.require_subcommand(1);

    SimulateArgs sim_args;
    auto* sim = app.add_subcommand("simulate", "generate a scene, sweep, and targets");
    sim->add_option("--config", sim_args.common.config_path, "pipeline config JSON");
    sim->add_option("--sensor", sim_args.common.sensor_path, "sensor config JSON");
    sim->add_option("--scene", sim_args.scene_path, "existing scene JSON to simulate");
    sim->add_option("--generator", sim_args.generator,
                    "random | side-by-side | far-sparse | corridor");
    sim->add_option("--objects-min", sim_args.objects_min);
    sim->add_option("--objects-max", sim_args.objects_max);
    auto* seed_opt = sim->add_option("--seed", sim_args.seed, "scene seed");
    sim->add_option("--jitter", sim_args.jitter, "range jitter stddev (m)");
    sim->add_option("--out", sim_args.out_dir, "output directory")->required();
    sim->callback([&] { sim_args.seed_set = seed_opt->count() > 0; });

    DetectArgs det_args;
    auto* det = app.add_subcommand("detect", "run the detection pipeline on a sweep");
    det->add_option("--config", det_args.common.config_path);
    det->add_option("--sensor", det_args.common.sensor_path);
    det->add_option("--sweep", det_args.sweep_path, "sweep file or directory")->required();
    det->add_option("--predictions", det_args.predictions,
                    "'oracle' or a prediction file/directory");
    det->add_option("--scene", det_args.scene_path, "scene JSON (oracle mode)");
    det->add_option("--noise-center", det_args.noise_center);
    det->add_option("--noise-yaw", det_args.noise_yaw);
    det->add_option("--noise-dim", det_args.noise_dim);
    det->add_option("--sigma-scale", det_args.sigma_scale,
                    "reported-sigma multiplier (1 = truthful)");
    det->add_option("--seed", det_args.seed, "oracle noise seed");
    det->add_flag("--fusion-off", det_args.fusion_off, "skip mean-shift clustering");
    det->add_option("--nms-mode", det_args.nms_mode, "hard | soft");
    double fixed_iou_val = 0.0;
    auto* fixed_iou_opt = det->add_option("--fixed-iou", fixed_iou_val, "fixed NMS IoU baseline");
    double threshold_val = 0.0;
    auto* threshold_opt = det->add_option("--threshold", threshold_val, "class prob threshold");
    int iterations_val = 0;
    auto* iters_opt = det->add_option("--iterations", iterations_val, "mean-shift iterations");
    det->add_option("--out", det_args.out_path, "detections file or directory")->required();
    det->add_option("--jobs", det_args.jobs, "worker threads for batch mode");
    det->add_flag("--timing", det_args.timing, "print per-stage wall clock");
    det->callback([&] {
        if (fixed_iou_opt->count()) det_args.fixed_iou = fixed_iou_val;
        if (threshold_opt->count()) det_args.threshold = threshold_val;
        if (iters_opt->count()) det_args.iterations = iterations_val;
    });

    EvalArgs eval_args;
    auto* ev = app.add_subcommand("eval", "score detections against ground truth");
    ev->add_option("--config", eval_args.common.config_path);
    ev->add_option("--detections", eval_args.detections_path)->required();
    ev->add_option("--truth", eval_args.truth_path, "scene JSON file or directory")->required();
    ev->add_option("--out", eval_args.out_path, "metrics report path");
    ev->add_option("--emit-plot-data", eval_args.plot_dir, "directory for curve files");
    ev->add_option("--interpolation-points", eval_args.interpolation_points,
                   "AP interpolation points (41 or 11)");

    LosscheckArgs loss_args;
    auto* lc = app.add_subcommand("losscheck", "verify analytic gradients of the training loss");
    lc->add_option("--config", loss_args.common.config_path);
    lc->add_option("--seed", loss_args.seed);
    lc->add_option("--trials", loss_args.trials);
    lc->add_option("--step", loss_args.h, "finite-difference step");
    lc->add_option("--tolerance", loss_args.tolerance);
    lc->add_flag("--fusion-off", loss_args.fusion_off);
    lc->add_option("--out", loss_args.out_path, "gradient report path");

    BenchArgs bench_args;
    auto* be = app.add_subcommand("bench", "time the post-network pipeline");
    be->add_option("--config", bench_args.common.config_path);
    be->add_option("--sizes", bench_args.sizes, "width multipliers");
    be->add_option("--repeats", bench_args.repeats);
    be->add_option("--budget-ms", bench_args.budget_ms);
    be->add_option("--seed", bench_args.seed);

    try {
        app.parse(argc, argv);
        if (sim->parsed()) return cmd_simulate(sim_args);
        if (det->parsed()) return cmd_detect(det_args);
        if (ev->parsed()) return cmd_eval(eval_args);
        if (lc->parsed()) return cmd_losscheck(loss_args);
        if (be->parsed()) return cmd_bench(bench_args);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
