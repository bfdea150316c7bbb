// File formats and config I/O. Binary formats are little-endian with
// float32 records; configs, scenes and reports are human-readable.
//
//   .rvsw  sweep: header (magic, version, count), then columnar arrays
//          r[count] e[count] theta[count] (f32) and laser_id[count] (u16)
//   .rvpr  predictions: header (magic, version, C, K per foreground class,
//          record count, raw length), records (row u16, col u16, raw f32[])
//   .rvdt  detections: header (magic, version, frame id, class table,
//          record count), records (class u32, 8 corner f32, sigma, alpha,
//          score f32)
//   .rvtg  targets: header (magic, version, object count with points,
//          record count), records (row u16, col u16, label i32, object i32,
//          n_i i32, 6 box-param f32)
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rvdet/classes.hpp"
#include "rvdet/eval.hpp"
#include "rvdet/mean_shift.hpp"
#include "rvdet/nms.hpp"
#include "rvdet/pipeline.hpp"
#include "rvdet/range_image.hpp"
#include "rvdet/sim.hpp"

namespace rvdet {

struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void put_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void put_u16(std::ostream& os, std::uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                                static_cast<unsigned char>(v >> 8)};
    put_bytes(os, b, 2);
}
inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    put_bytes(os, b, 4);
}
inline void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    put_bytes(os, b, 8);
}
inline void put_i32(std::ostream& os, std::int32_t v) { put_u32(os, std::bit_cast<std::uint32_t>(v)); }
inline void put_f32(std::ostream& os, float v) { put_u32(os, std::bit_cast<std::uint32_t>(v)); }

inline void get_bytes(std::istream& is, void* p, std::size_t n, const char* what) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n)
        throw io_error(std::string("truncated file while reading ") + what);
}
inline std::uint16_t get_u16(std::istream& is, const char* what) {
    unsigned char b[2];
    get_bytes(is, b, 2, what);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}
inline std::uint32_t get_u32(std::istream& is, const char* what) {
    unsigned char b[4];
    get_bytes(is, b, 4, what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}
inline std::uint64_t get_u64(std::istream& is, const char* what) {
    unsigned char b[8];
    get_bytes(is, b, 8, what);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}
inline std::int32_t get_i32(std::istream& is, const char* what) {
    return std::bit_cast<std::int32_t>(get_u32(is, what));
}
inline float get_f32(std::istream& is, const char* what) {
    return std::bit_cast<float>(get_u32(is, what));
}

inline std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("cannot open for writing: " + path.string());
    return os;
}
inline std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open for reading: " + path.string());
    return is;
}

inline void expect_magic(std::istream& is, std::uint32_t magic, const char* what) {
    if (get_u32(is, what) != magic) throw io_error(std::string("bad magic for ") + what);
}

inline constexpr std::uint32_t fourcc(char a, char b, char c, char d) {
    return static_cast<std::uint32_t>(static_cast<unsigned char>(a)) |
           (static_cast<std::uint32_t>(static_cast<unsigned char>(b)) << 8) |
           (static_cast<std::uint32_t>(static_cast<unsigned char>(c)) << 16) |
           (static_cast<std::uint32_t>(static_cast<unsigned char>(d)) << 24);
}

inline constexpr std::uint32_t kSweepMagic = fourcc('R', 'V', 'S', 'W');
inline constexpr std::uint32_t kPredMagic = fourcc('R', 'V', 'P', 'R');
inline constexpr std::uint32_t kDetMagic = fourcc('R', 'V', 'D', 'T');
inline constexpr std::uint32_t kTargetMagic = fourcc('R', 'V', 'T', 'G');
inline constexpr std::uint32_t kFormatVersion = 1;

}  // namespace detail

// ---- sweep ----

inline void write_sweep(const std::filesystem::path& path, const Sweep& sweep) {
    auto os = detail::open_out(path);
    detail::put_u32(os, detail::kSweepMagic);
    detail::put_u32(os, detail::kFormatVersion);
    detail::put_u64(os, sweep.size());
    for (const LidarReturn& r : sweep) detail::put_f32(os, static_cast<float>(r.range));
    for (const LidarReturn& r : sweep) detail::put_f32(os, static_cast<float>(r.reflectance));
    for (const LidarReturn& r : sweep) detail::put_f32(os, static_cast<float>(r.azimuth));
    for (const LidarReturn& r : sweep) detail::put_u16(os, r.laser_id);
    if (!os) throw io_error("write failed: " + path.string());
}

inline Sweep read_sweep(const std::filesystem::path& path) {
    auto is = detail::open_in(path);
    detail::expect_magic(is, detail::kSweepMagic, "sweep");
    if (detail::get_u32(is, "sweep version") != detail::kFormatVersion)
        throw io_error("unsupported sweep version");
    const std::uint64_t n = detail::get_u64(is, "sweep count");
    Sweep sweep(n);
    for (auto& r : sweep) r.range = detail::get_f32(is, "range");
    for (auto& r : sweep) r.reflectance = detail::get_f32(is, "reflectance");
    for (auto& r : sweep) r.azimuth = detail::get_f32(is, "azimuth");
    for (auto& r : sweep) r.laser_id = detail::get_u16(is, "laser id");
    return sweep;
}

// Reader for the common public-benchmark point-cloud dump: packed records
// of float32 x, y, z, intensity. Returns are assigned to the laser whose
// elevation is nearest.
inline Sweep read_xyz_pointcloud(const std::filesystem::path& path, const SensorConfig& cfg) {
    auto is = detail::open_in(path);
    is.seekg(0, std::ios::end);
    const std::streamoff bytes = is.tellg();
    is.seekg(0);
    if (bytes % 16 != 0) throw io_error("xyz point cloud size is not a multiple of 16 bytes");
    Sweep sweep;
    sweep.reserve(static_cast<std::size_t>(bytes / 16));
    const std::size_t n = static_cast<std::size_t>(bytes / 16);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = detail::get_f32(is, "x");
        const double y = detail::get_f32(is, "y");
        const double z = detail::get_f32(is, "z");
        const double e = detail::get_f32(is, "intensity");
        const double r = std::sqrt(x * x + y * y + z * z);
        if (!(r > 0.0)) continue;
        const double el = std::asin(z / r);
        std::size_t best = 0;
        double best_d = std::abs(cfg.elevation[0] - el);
        for (std::size_t m = 1; m < cfg.elevation.size(); ++m) {
            const double d = std::abs(cfg.elevation[m] - el);
            if (d < best_d) {
                best_d = d;
                best = m;
            }
        }
        sweep.push_back({r, e, std::atan2(y, x), static_cast<std::uint16_t>(best)});
    }
    return sweep;
}

// ---- predictions ----

struct PredictionRecord {
    std::uint16_t row = 0;
    std::uint16_t col = 0;
    std::vector<double> raw;  // stored as f32
};

struct PredictionFile {
    int class_count = 0;
    std::vector<int> components;  // per foreground class
    std::vector<PredictionRecord> records;
};

inline void write_predictions(const std::filesystem::path& path, const PredictionFile& pf) {
    const std::size_t raw_len = raw_head_length(pf.class_count, pf.components);
    auto os = detail::open_out(path);
    detail::put_u32(os, detail::kPredMagic);
    detail::put_u32(os, detail::kFormatVersion);
    detail::put_u32(os, static_cast<std::uint32_t>(pf.class_count));
    for (int k : pf.components) detail::put_u32(os, static_cast<std::uint32_t>(k));
    detail::put_u64(os, pf.records.size());
    detail::put_u32(os, static_cast<std::uint32_t>(raw_len));
    for (const PredictionRecord& rec : pf.records) {
        if (rec.raw.size() != raw_len) throw io_error("prediction record length mismatch");
        detail::put_u16(os, rec.row);
        detail::put_u16(os, rec.col);
        for (double v : rec.raw) detail::put_f32(os, static_cast<float>(v));
    }
    if (!os) throw io_error("write failed: " + path.string());
}

inline PredictionFile read_predictions(const std::filesystem::path& path) {
    auto is = detail::open_in(path);
    detail::expect_magic(is, detail::kPredMagic, "predictions");
    if (detail::get_u32(is, "prediction version") != detail::kFormatVersion)
        throw io_error("unsupported prediction version");
    PredictionFile pf;
    pf.class_count = static_cast<int>(detail::get_u32(is, "class count"));
    if (pf.class_count < 2) throw io_error("prediction file needs at least one foreground class");
    for (int c = 1; c < pf.class_count; ++c)
        pf.components.push_back(static_cast<int>(detail::get_u32(is, "component count")));
    const std::uint64_t n = detail::get_u64(is, "record count");
    const std::uint32_t raw_len = detail::get_u32(is, "raw length");
    if (raw_len != raw_head_length(pf.class_count, pf.components))
        throw io_error("prediction raw length inconsistent with header");
    pf.records.resize(n);
    for (auto& rec : pf.records) {
        rec.row = detail::get_u16(is, "row");
        rec.col = detail::get_u16(is, "col");
        rec.raw.resize(raw_len);
        for (auto& v : rec.raw) v = detail::get_f32(is, "raw value");
    }
    return pf;
}

// Orders file records to match the image_points enumeration of the frame;
// every occupied cell must be covered exactly once.
inline std::vector<std::vector<double>> align_predictions(const PredictionFile& pf,
                                                          const RangeImage& img,
                                                          const SensorConfig& cfg) {
    std::map<std::pair<int, int>, const PredictionRecord*> by_cell;
    for (const PredictionRecord& rec : pf.records) {
        if (!by_cell.emplace(std::make_pair(static_cast<int>(rec.row), static_cast<int>(rec.col)),
                             &rec)
                 .second)
            throw io_error("duplicate prediction record for one cell");
    }
    const std::vector<ImagePoint> pts = image_points(img, cfg);
    std::vector<std::vector<double>> rows;
    rows.reserve(pts.size());
    for (const ImagePoint& p : pts) {
        const auto it = by_cell.find({p.row, p.col});
        if (it == by_cell.end()) throw io_error("prediction file misses an occupied cell");
        rows.push_back(it->second->raw);
    }
    if (by_cell.size() != pts.size())
        throw io_error("prediction file has records for unoccupied cells");
    return rows;
}

// ---- detections ----

struct DetectionFile {
    std::uint64_t frame_id = 0;
    std::vector<std::string> class_names;  // index 0 = background
    std::vector<Detection> detections;
};

inline void write_detections(const std::filesystem::path& path, const DetectionFile& df) {
    auto os = detail::open_out(path);
    detail::put_u32(os, detail::kDetMagic);
    detail::put_u32(os, detail::kFormatVersion);
    detail::put_u64(os, df.frame_id);
    detail::put_u32(os, static_cast<std::uint32_t>(df.class_names.size()));
    for (const std::string& name : df.class_names) {
        detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
        detail::put_bytes(os, name.data(), name.size());
    }
    detail::put_u64(os, df.detections.size());
    for (const Detection& d : df.detections) {
        detail::put_u32(os, static_cast<std::uint32_t>(d.class_id));
        for (int n = 0; n < 8; ++n) detail::put_f32(os, static_cast<float>(d.corners.flat(n)));
        detail::put_f32(os, static_cast<float>(d.sigma));
        detail::put_f32(os, static_cast<float>(d.alpha));
        detail::put_f32(os, static_cast<float>(d.score));
    }
    if (!os) throw io_error("write failed: " + path.string());
}

inline DetectionFile read_detections(const std::filesystem::path& path) {
    auto is = detail::open_in(path);
    detail::expect_magic(is, detail::kDetMagic, "detections");
    if (detail::get_u32(is, "detection version") != detail::kFormatVersion)
        throw io_error("unsupported detection version");
    DetectionFile df;
    df.frame_id = detail::get_u64(is, "frame id");
    const std::uint32_t classes = detail::get_u32(is, "class count");
    df.class_names.resize(classes);
    for (auto& name : df.class_names) {
        const std::uint32_t len = detail::get_u32(is, "class name length");
        name.resize(len);
        if (len > 0) detail::get_bytes(is, name.data(), len, "class name");
    }
    const std::uint64_t n = detail::get_u64(is, "detection count");
    df.detections.resize(n);
    for (auto& d : df.detections) {
        d.class_id = static_cast<int>(detail::get_u32(is, "class id"));
        for (int c = 0; c < 8; ++c) d.corners.set_flat(c, detail::get_f32(is, "corner"));
        d.sigma = detail::get_f32(is, "sigma");
        d.alpha = detail::get_f32(is, "alpha");
        d.score = detail::get_f32(is, "score");
        d.box = box_from_corners(d.corners);
    }
    return df;
}

// ---- targets ----

inline void write_targets(const std::filesystem::path& path, const TargetSet& ts) {
    auto os = detail::open_out(path);
    detail::put_u32(os, detail::kTargetMagic);
    detail::put_u32(os, detail::kFormatVersion);
    detail::put_u32(os, static_cast<std::uint32_t>(ts.object_count));
    detail::put_u64(os, ts.targets.size());
    for (std::size_t i = 0; i < ts.targets.size(); ++i) {
        const PointTarget& t = ts.targets[i];
        detail::put_u16(os, static_cast<std::uint16_t>(ts.points[i].row));
        detail::put_u16(os, static_cast<std::uint16_t>(ts.points[i].col));
        detail::put_i32(os, t.class_label);
        detail::put_i32(os, t.object_id);
        detail::put_i32(os, t.points_on_object);
        detail::put_f32(os, static_cast<float>(t.box.dx));
        detail::put_f32(os, static_cast<float>(t.box.dy));
        detail::put_f32(os, static_cast<float>(t.box.ox));
        detail::put_f32(os, static_cast<float>(t.box.oy));
        detail::put_f32(os, static_cast<float>(t.box.length));
        detail::put_f32(os, static_cast<float>(t.box.width));
    }
    if (!os) throw io_error("write failed: " + path.string());
}

struct TargetRecord {
    int row = 0;
    int col = 0;
    PointTarget target;
};

struct TargetFile {
    int object_count = 0;
    std::vector<TargetRecord> records;
};

inline TargetFile read_targets(const std::filesystem::path& path) {
    auto is = detail::open_in(path);
    detail::expect_magic(is, detail::kTargetMagic, "targets");
    if (detail::get_u32(is, "target version") != detail::kFormatVersion)
        throw io_error("unsupported target version");
    TargetFile tf;
    tf.object_count = static_cast<int>(detail::get_u32(is, "object count"));
    const std::uint64_t n = detail::get_u64(is, "target count");
    tf.records.resize(n);
    for (auto& rec : tf.records) {
        rec.row = detail::get_u16(is, "row");
        rec.col = detail::get_u16(is, "col");
        rec.target.class_label = detail::get_i32(is, "label");
        rec.target.object_id = detail::get_i32(is, "object id");
        rec.target.points_on_object = detail::get_i32(is, "n_i");
        rec.target.box.dx = detail::get_f32(is, "dx");
        rec.target.box.dy = detail::get_f32(is, "dy");
        rec.target.box.ox = detail::get_f32(is, "ox");
        rec.target.box.oy = detail::get_f32(is, "oy");
        rec.target.box.length = detail::get_f32(is, "length");
        rec.target.box.width = detail::get_f32(is, "width");
    }
    return tf;
}

// ---- JSON configs ----

inline constexpr double kDegToRad = kPi / 180.0;

inline SensorConfig load_sensor_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw io_error("cannot open sensor config: " + path.string());
    nlohmann::json j = nlohmann::json::parse(is);
    SensorConfig cfg;
    cfg.laser_count = j.at("laser_count").get<int>();
    for (const auto& e : j.at("elevation_deg")) cfg.elevation.push_back(e.get<double>() * kDegToRad);
    cfg.azimuth_resolution = j.at("azimuth_resolution_deg").get<double>() * kDegToRad;
    cfg.fov_min = j.at("fov_min_deg").get<double>() * kDegToRad;
    cfg.fov_max = j.at("fov_max_deg").get<double>() * kDegToRad;
    cfg.max_range = j.at("max_range_m").get<double>();
    cfg.width = j.at("width").get<int>();
    cfg.height = j.at("height").get<int>();
    cfg.validate();
    return cfg;
}

inline void save_sensor_config(const std::filesystem::path& path, const SensorConfig& cfg) {
    nlohmann::json j;
    j["laser_count"] = cfg.laser_count;
    nlohmann::json elev = nlohmann::json::array();
    for (double e : cfg.elevation) elev.push_back(e / kDegToRad);
    j["elevation_deg"] = std::move(elev);
    j["azimuth_resolution_deg"] = cfg.azimuth_resolution / kDegToRad;
    j["fov_min_deg"] = cfg.fov_min / kDegToRad;
    j["fov_max_deg"] = cfg.fov_max / kDegToRad;
    j["max_range_m"] = cfg.max_range;
    j["width"] = cfg.width;
    j["height"] = cfg.height;
    std::ofstream os(path);
    if (!os) throw io_error("cannot write sensor config: " + path.string());
    os << j.dump(2) << "\n";
}

inline Scene load_scene(const std::filesystem::path& path, const ClassTable& table) {
    std::ifstream is(path);
    if (!is) throw io_error("cannot open scene: " + path.string());
    nlohmann::json j = nlohmann::json::parse(is);
    Scene scene;
    scene.seed = j.value("seed", std::uint64_t{0});
    for (const auto& o : j.at("objects")) {
        GroundTruthObject obj;
        obj.class_id = table.class_id_of(o.at("class").get<std::string>());
        obj.footprint.center = {o.at("x").get<double>(), o.at("y").get<double>()};
        obj.footprint.yaw = wrap_angle(o.at("yaw").get<double>());
        obj.footprint.length = o.at("length").get<double>();
        obj.footprint.width = o.at("width").get<double>();
        obj.height = o.value("height", table.at(obj.class_id).height);
        obj.reflectance = o.value("reflectance", 0.5);
        scene.objects.push_back(obj);
    }
    return scene;
}

inline void save_scene(const std::filesystem::path& path, const Scene& scene,
                       const ClassTable& table) {
    nlohmann::json j;
    j["seed"] = scene.seed;
    nlohmann::json objs = nlohmann::json::array();
    for (const GroundTruthObject& o : scene.objects) {
        nlohmann::json e;
        e["class"] = table.at(o.class_id).name;
        e["x"] = o.footprint.center.x;
        e["y"] = o.footprint.center.y;
        e["yaw"] = o.footprint.yaw;
        e["length"] = o.footprint.length;
        e["width"] = o.footprint.width;
        e["height"] = o.height;
        e["reflectance"] = o.reflectance;
        objs.push_back(std::move(e));
    }
    j["objects"] = std::move(objs);
    std::ofstream os(path);
    if (!os) throw io_error("cannot write scene: " + path.string());
    os << j.dump(2) << "\n";
}

inline ClassTable load_class_table(const nlohmann::json& j) {
    ClassTable t;
    t.classes.push_back({"background", 0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0});
    for (const auto& c : j) {
        ClassSpec spec;
        spec.name = c.at("name").get<std::string>();
        spec.components = c.value("components", 1);
        spec.mean_width = c.value("mean_width", 2.0);
        spec.height = c.value("height", 1.7);
        spec.min_length = c.value("min_length", 3.8);
        spec.max_length = c.value("max_length", 5.2);
        spec.min_width = c.value("min_width", 1.7);
        spec.max_width = c.value("max_width", 2.2);
        spec.ap_iou = c.value("ap_iou", 0.7);
        t.classes.push_back(std::move(spec));
    }
    return t;
}

struct PipelineFileConfig {
    PipelineParams params;
    std::optional<std::filesystem::path> sensor_path;
    std::uint64_t seed = 0;
};

inline PipelineFileConfig load_pipeline_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw io_error("cannot open pipeline config: " + path.string());
    nlohmann::json j = nlohmann::json::parse(is);
    PipelineFileConfig cfg;
    if (j.contains("sensor") && !j.at("sensor").is_null())
        cfg.sensor_path = j.at("sensor").get<std::string>();
    if (j.contains("classes")) cfg.params.classes = load_class_table(j.at("classes"));
    if (j.contains("mean_shift")) {
        const auto& m = j.at("mean_shift");
        cfg.params.mean_shift.delta_x = m.value("delta_x", 0.5);
        cfg.params.mean_shift.delta_y = m.value("delta_y", 0.5);
        cfg.params.mean_shift.iterations = m.value("iterations", 3);
    }
    if (j.contains("class_threshold") && !j.at("class_threshold").is_null())
        cfg.params.class_threshold = j.at("class_threshold").get<double>();
    if (j.contains("nms")) {
        const auto& n = j.at("nms");
        const std::string mode = n.value("mode", "hard");
        if (mode == "hard") cfg.params.nms_mode = NmsMode::Hard;
        else if (mode == "soft") cfg.params.nms_mode = NmsMode::Soft;
        else throw io_error("nms mode must be 'hard' or 'soft'");
        if (n.contains("fixed_iou_threshold") && !n.at("fixed_iou_threshold").is_null())
            cfg.params.fixed_iou_threshold = n.at("fixed_iou_threshold").get<double>();
    }
    if (j.contains("fusion")) cfg.params.fusion = j.at("fusion").get<bool>();
    cfg.seed = j.value("seed", std::uint64_t{0});
    return cfg;
}

// ---- metrics report ----

inline void write_metrics_report(const std::filesystem::path& path, const MetricsReport& report) {
    std::ofstream os(path);
    if (!os) throw io_error("cannot write metrics report: " + path.string());
    os.precision(9);
    for (const auto& [key, value] : report.values) os << key << " " << value << "\n";
}

inline void write_plot_data(const std::filesystem::path& dir, const std::string& prefix,
                            const MetricsReport& report) {
    std::filesystem::create_directories(dir);
    for (const auto& [name, xy] : report.curves) {
        std::string fname = prefix + name;
        for (char& ch : fname)
            if (ch == '.' || ch == '@' || ch == '/') ch = '_';
        std::ofstream os(dir / (fname + ".txt"));
        if (!os) throw io_error("cannot write plot data");
        os.precision(9);
        for (const auto& [x, y] : xy) os << x << " " << y << "\n";
    }
}

}  // namespace rvdet
