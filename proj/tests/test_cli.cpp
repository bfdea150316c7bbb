#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "rvdet/io.hpp"

using namespace rvdet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("rvdet_cli_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

int run_cli(const std::string& args) {
    const std::string cmd = std::string(RVDET_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::vector<char> slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::vector<char>(std::istreambuf_iterator<char>(is), {});
}

std::map<std::string, double> read_metrics(const fs::path& p) {
    std::map<std::string, double> out;
    std::ifstream is(p);
    std::string key;
    double value;
    while (is >> key >> value) out[key] = value;
    return out;
}

}  // namespace

TEST_CASE("simulate produces deterministic artifacts", "[cli]") {
    const TempDir tmp;
    const std::string out_a = (tmp.path / "a").string();
    const std::string out_b = (tmp.path / "b").string();
    REQUIRE(run_cli("simulate --seed 7 --objects-min 2 --objects-max 4 --out " + out_a) == 0);
    REQUIRE(run_cli("simulate --seed 7 --objects-min 2 --objects-max 4 --out " + out_b) == 0);
    for (const char* name : {"sweep.rvsw", "targets.rvtg", "scene.json", "sensor.json"}) {
        CAPTURE(name);
        REQUIRE(fs::exists(tmp.path / "a" / name));
        CHECK(slurp(tmp.path / "a" / name) == slurp(tmp.path / "b" / name));
    }

    SECTION("the side-by-side generator writes a two-object scene") {
        const std::string out = (tmp.path / "fig").string();
        REQUIRE(run_cli("simulate --generator side-by-side --out " + out) == 0);
        const Scene scene = load_scene(tmp.path / "fig" / "scene.json", default_class_table());
        CHECK(scene.objects.size() == 2);
    }
    SECTION("an empty scene file produces an empty sweep") {
        const fs::path empty_scene = tmp.path / "empty.json";
        std::ofstream(empty_scene) << R"({"seed": 0, "objects": []})";
        const std::string out = (tmp.path / "empty").string();
        REQUIRE(run_cli("simulate --scene " + empty_scene.string() + " --out " + out) == 0);
        CHECK(read_sweep(tmp.path / "empty" / "sweep.rvsw").empty());
    }
    SECTION("a missing scene file exits with code 2") {
        CHECK(run_cli("simulate --scene /nonexistent.json --out " + out_a) == 2);
    }
    SECTION("the random generator without a seed exits with code 2") {
        CHECK(run_cli("simulate --out " + out_a) == 2);
    }
}

TEST_CASE("detect and eval close the loop on a noiseless scene", "[cli]") {
    const TempDir tmp;
    const std::string sim_out = (tmp.path / "sim").string();
    REQUIRE(run_cli("simulate --seed 21 --objects-min 2 --objects-max 5 --out " + sim_out) == 0);
    const fs::path sweep = tmp.path / "sim" / "sweep.rvsw";
    const fs::path scene = tmp.path / "sim" / "scene.json";
    const fs::path dets = tmp.path / "detections.rvdt";
    REQUIRE(run_cli("detect --sweep " + sweep.string() + " --scene " + scene.string() +
                    " --out " + dets.string() + " --timing") == 0);
    REQUIRE(fs::exists(dets));

    const fs::path metrics = tmp.path / "metrics.txt";
    const fs::path plots = tmp.path / "plots";
    REQUIRE(run_cli("eval --detections " + dets.string() + " --truth " + scene.string() +
                    " --out " + metrics.string() + " --emit-plot-data " + plots.string()) == 0);
    const auto values = read_metrics(metrics);
    REQUIRE(values.count("vehicle.ap@0.70") + values.count("pedestrian.ap@0.50") +
                values.count("bike.ap@0.50") >
            0);
    for (const auto& [key, value] : values)
        if (key.find(".ap@") != std::string::npos) CHECK(value == 1.0);
    CHECK(fs::exists(plots));

    SECTION("empty detections give AP 0") {
        DetectionFile empty;
        empty.class_names = {"background", "vehicle", "bike", "pedestrian"};
        const fs::path none = tmp.path / "none.rvdt";
        write_detections(none, empty);
        const fs::path m2 = tmp.path / "m2.txt";
        REQUIRE(run_cli("eval --detections " + none.string() + " --truth " + scene.string() +
                        " --out " + m2.string()) == 0);
        for (const auto& [key, value] : read_metrics(m2))
            if (key.find(".ap@") != std::string::npos) CHECK(value == 0.0);
    }
    SECTION("malformed prediction file exits with code 2") {
        const fs::path junk = tmp.path / "junk.rvpr";
        std::ofstream(junk) << "not a prediction file";
        CHECK(run_cli("detect --sweep " + sweep.string() + " --predictions " + junk.string() +
                      " --out " + dets.string()) == 2);
    }
}

TEST_CASE("prediction-file mode reproduces oracle mode exactly", "[cli]") {
    const TempDir tmp;
    const std::string sim_out = (tmp.path / "sim").string();
    REQUIRE(run_cli("simulate --seed 33 --objects-min 1 --objects-max 3 --out " + sim_out) == 0);
    const fs::path sweep_path = tmp.path / "sim" / "sweep.rvsw";
    const fs::path scene_path = tmp.path / "sim" / "scene.json";

    // write the oracle's raw rows to a prediction file via the library
    const ClassTable table = default_class_table();
    const SensorConfig cfg = SensorConfig::reference();
    const Sweep sweep = read_sweep(sweep_path);
    const RangeImage img = build_range_image(sweep, cfg).image;
    const Scene scene = load_scene(scene_path, table);
    const TargetSet ts = encode_targets(img, cfg, scene);
    const auto raw = oracle_predictions(ts, scene, NoiseSpec{}, table, 0);
    PredictionFile pf;
    pf.class_count = table.count();
    pf.components = table.components_per_class();
    for (std::size_t i = 0; i < raw.size(); ++i)
        pf.records.push_back({static_cast<std::uint16_t>(ts.points[i].row),
                              static_cast<std::uint16_t>(ts.points[i].col), raw[i]});
    const fs::path pred_path = tmp.path / "oracle.rvpr";
    write_predictions(pred_path, pf);

    const fs::path via_oracle = tmp.path / "via_oracle.rvdt";
    const fs::path via_file = tmp.path / "via_file.rvdt";
    REQUIRE(run_cli("detect --sweep " + sweep_path.string() + " --scene " + scene_path.string() +
                    " --seed 0 --out " + via_oracle.string()) == 0);
    REQUIRE(run_cli("detect --sweep " + sweep_path.string() + " --predictions " +
                    pred_path.string() + " --out " + via_file.string()) == 0);
    CHECK(slurp(via_oracle) == slurp(via_file));
}

TEST_CASE("batch detect pairs sweeps with scenes deterministically", "[cli]") {
    const TempDir tmp;
    const fs::path sweeps = tmp.path / "sweeps";
    const fs::path scenes = tmp.path / "scenes";
    fs::create_directories(sweeps);
    fs::create_directories(scenes);
    const ClassTable table = default_class_table();
    const SensorConfig cfg = SensorConfig::reference();
    for (int f = 0; f < 3; ++f) {
        const Scene scene = random_scene(100 + static_cast<std::uint64_t>(f), 1, 3, table, cfg);
        const char stem = static_cast<char>('a' + f);
        write_sweep(sweeps / (std::string(1, stem) + ".rvsw"),
                    quantize_to_storage(raycast_sweep(scene, cfg)));
        save_scene(scenes / (std::string(1, stem) + ".json"), scene, table);
    }
    const fs::path out = tmp.path / "out";
    REQUIRE(run_cli("detect --sweep " + sweeps.string() + " --scene " + scenes.string() +
                    " --out " + out.string() + " --jobs 2") == 0);
    for (const char* stem : {"a", "b", "c"}) CHECK(fs::exists(out / (std::string(stem) + ".rvdt")));

    const fs::path metrics = tmp.path / "metrics.txt";
    REQUIRE(run_cli("eval --detections " + out.string() + " --truth " + scenes.string() +
                    " --out " + metrics.string()) == 0);
    for (const auto& [key, value] : read_metrics(metrics))
        if (key.find(".ap@") != std::string::npos) CHECK(value == 1.0);
}

TEST_CASE("losscheck passes and reports", "[cli]") {
    const TempDir tmp;
    const fs::path out = tmp.path / "gradients.txt";
    REQUIRE(run_cli("losscheck --seed 3 --trials 5 --out " + out.string()) == 0);
    const auto values = read_metrics(out);
    REQUIRE(values.count("max_rel_error") == 1);
    CHECK(values.at("max_rel_error") < 1e-4);
    CHECK(values.at("trials") == 5.0);
    SECTION("an impossible tolerance exits with code 1") {
        CHECK(run_cli("losscheck --seed 3 --trials 2 --tolerance 0") == 1);
    }
}

TEST_CASE("bench runs and prints a table", "[cli]") {
    CHECK(run_cli("bench --sizes 1 --repeats 2") == 0);
}

TEST_CASE("usage errors exit with code 2", "[cli]") {
    CHECK(run_cli("") == 2);
    CHECK(run_cli("frobnicate") == 2);
    CHECK(run_cli("detect --out x.rvdt") == 2);  // missing required --sweep
}
