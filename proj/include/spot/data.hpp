#pragma once

// Data model: annotations, per-snippet training targets, feature files and
// the deterministic synthetic dataset generator.

#include "spot/common.hpp"

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <string>

namespace spot::data {

using nlohmann::json;

struct ActionSegment {
    double start = 0.0;  // seconds
    double end = 0.0;    // seconds
    int label = 1;       // class index in [1..K]

    void validate(const std::string& video_id) const {
        if (!(start >= 0.0 && start < end))
            throw ValidationError("video '" + video_id +
                                  "': segment must satisfy 0 <= start < end");
        if (label < 1) throw ValidationError("video '" + video_id +
                                             "': label index must be >= 1");
    }
};

struct VideoRecord {
    std::string id;
    double duration = 0.0;  // seconds
    std::vector<ActionSegment> segments;
    std::string feature_path;

    void validate() const {
        for (const auto& s : segments) {
            s.validate(id);
            if (s.end > duration + 1e-9)
                throw ValidationError("video '" + id +
                                      "': segment end exceeds duration");
        }
    }
};

struct DatasetSplit {
    std::vector<VideoRecord> labeled;
    std::vector<VideoRecord> unlabeled;  // segments hidden from training
    std::vector<VideoRecord> test;
};

struct SnippetFeatureSequence {
    Mat values;  // (2d, T_raw)
    int d = 0;
    int raw_length() const { return static_cast<int>(values.cols()); }
};

struct TrainTargets {
    std::vector<int> class_label;  // per snippet, in [1..K+1]
    Mat gt_mask;                   // (T, T), column t = mask for anchor t
    std::vector<int> fg_indices;
    std::vector<int> bg_indices;
};

// ---- annotation ingestion -------------------------------------------------
//
// ActivityNet-style schema:
//   { "<video_id>": { "duration_second": 10.0,
//                     "annotations": [ {"segment": [s, e], "label": "name"} ],
//                     "feature_path": "..." (optional) } }

struct AnnotationSet {
    std::vector<VideoRecord> records;
    std::map<std::string, int> label_index;  // name -> dense index in [1..K]
    int num_classes() const { return static_cast<int>(label_index.size()); }
};

inline AnnotationSet load_annotations(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("annotation file not found: " + path);
    json root;
    try {
        root = json::parse(f);
    } catch (const json::parse_error& e) {
        throw ValidationError("malformed annotation JSON in " + path + ": " +
                              e.what());
    }
    // First pass: collect label names so indices are stable (sorted order).
    std::set<std::string> names;
    for (const auto& [vid, entry] : root.items())
        for (const auto& ann : entry.value("annotations", json::array()))
            names.insert(ann.at("label").get<std::string>());
    AnnotationSet out;
    int next = 1;
    for (const auto& name : names) out.label_index[name] = next++;

    for (const auto& [vid, entry] : root.items()) {
        VideoRecord rec;
        rec.id = vid;
        rec.duration = entry.at("duration_second").get<double>();
        rec.feature_path = entry.value("feature_path", std::string{});
        for (const auto& ann : entry.value("annotations", json::array())) {
            ActionSegment seg;
            seg.start = ann.at("segment").at(0).get<double>();
            seg.end = ann.at("segment").at(1).get<double>();
            seg.label = out.label_index.at(ann.at("label").get<std::string>());
            seg.validate(vid);
            rec.segments.push_back(seg);
        }
        rec.validate();
        out.records.push_back(std::move(rec));
    }
    std::sort(out.records.begin(), out.records.end(),
              [](const VideoRecord& a, const VideoRecord& b) { return a.id < b.id; });
    return out;
}

// ---- temporal resampling --------------------------------------------------

/// Sample `target_len` equidistant snippets by linear interpolation over the
/// raw snippet axis.
inline Mat resample_features(const SnippetFeatureSequence& f, int target_len) {
    if (target_len < 2) throw ConfigError("resample target length must be >= 2");
    const Mat& v = f.values;
    const int t_raw = f.raw_length();
    if (t_raw < 1) throw ValidationError("empty feature sequence");
    Mat out(v.rows(), target_len);
    if (t_raw == 1) {
        out = v.col(0).replicate(1, target_len);
        return out;
    }
    for (int i = 0; i < target_len; ++i) {
        double pos = static_cast<double>(i) * (t_raw - 1) / (target_len - 1);
        int lo = static_cast<int>(std::floor(pos));
        int hi = std::min(lo + 1, t_raw - 1);
        double w = pos - lo;
        out.col(i) = (1.0 - w) * v.col(lo) + w * v.col(hi);
    }
    return out;
}

// ---- training targets -----------------------------------------------------

/// Snippet t covers the time point (t + 0.5) / T * duration.
inline double snippet_center(int t, int T, double duration) {
    return (t + 0.5) / static_cast<double>(T) * duration;
}

/// Convert a snippet run [a, b] (inclusive) to a time interval in seconds.
inline std::pair<double, double> snippet_run_to_seconds(int a, int b, int T,
                                                        double duration) {
    return {static_cast<double>(a) / T * duration,
            static_cast<double>(b + 1) / T * duration};
}

inline TrainTargets make_targets(const VideoRecord& rec, int T, int K) {
    TrainTargets out;
    out.class_label.assign(T, K + 1);
    out.gt_mask = Mat::Zero(T, T);

    // Earliest-start segment wins when several cover one snippet.
    std::vector<int> seg_order(rec.segments.size());
    for (size_t i = 0; i < seg_order.size(); ++i) seg_order[i] = static_cast<int>(i);
    std::stable_sort(seg_order.begin(), seg_order.end(), [&](int a, int b) {
        return rec.segments[a].start < rec.segments[b].start;
    });

    std::vector<int> covering(T, -1);  // segment index per snippet
    for (int t = 0; t < T; ++t) {
        double c = snippet_center(t, T, rec.duration);
        for (int si : seg_order) {
            const auto& s = rec.segments[si];
            if (c >= s.start && c < s.end) {
                covering[t] = si;
                out.class_label[t] = s.label;
                break;
            }
        }
    }
    // Per-segment snippet spans.
    std::map<int, std::pair<int, int>> span;  // seg index -> [first, last]
    for (int t = 0; t < T; ++t) {
        if (covering[t] < 0) continue;
        auto it = span.find(covering[t]);
        if (it == span.end()) span[covering[t]] = {t, t};
        else it->second.second = t;
    }
    for (int t = 0; t < T; ++t) {
        if (covering[t] < 0) { out.bg_indices.push_back(t); continue; }
        out.fg_indices.push_back(t);
        auto [a, b] = span.at(covering[t]);
        for (int i = a; i <= b; ++i)
            if (covering[i] == covering[t]) out.gt_mask(i, t) = 1.0;
    }
    return out;
}

// ---- feature file I/O -----------------------------------------------------
//
// Raw little-endian float32, row-major (2d, T_raw), with a sidecar JSON
// header "<path>.json": {"dims": [rows, cols], "dtype": "float32"}.

inline void write_features(const std::string& path,
                           const SnippetFeatureSequence& f) {
    std::ofstream bin(path, std::ios::binary);
    if (!bin) throw ValidationError("cannot write feature file: " + path);
    const Mat& v = f.values;
    for (Eigen::Index r = 0; r < v.rows(); ++r)
        for (Eigen::Index c = 0; c < v.cols(); ++c) {
            float x = static_cast<float>(v(r, c));
            bin.write(reinterpret_cast<const char*>(&x), sizeof(float));
        }
    json header = {{"dims", {v.rows(), v.cols()}}, {"dtype", "float32"}};
    std::ofstream hdr(path + ".json");
    hdr << header.dump(2) << "\n";
}

inline SnippetFeatureSequence read_features(const std::string& path) {
    std::ifstream hdr(path + ".json");
    if (!hdr) throw ValidationError("feature header not found: " + path + ".json");
    json header = json::parse(hdr);
    if (header.at("dtype").get<std::string>() != "float32")
        throw ValidationError("unsupported feature dtype in " + path);
    const Eigen::Index rows = header.at("dims").at(0).get<Eigen::Index>();
    const Eigen::Index cols = header.at("dims").at(1).get<Eigen::Index>();
    if (rows % 2 != 0)
        throw ValidationError("feature row count must be even (2d): " + path);
    std::ifstream bin(path, std::ios::binary);
    if (!bin) throw ValidationError("feature file not found: " + path);
    SnippetFeatureSequence f;
    f.d = static_cast<int>(rows / 2);
    f.values.resize(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) {
            float x;
            bin.read(reinterpret_cast<char*>(&x), sizeof(float));
            if (!bin) throw ValidationError("truncated feature file: " + path);
            f.values(r, c) = x;
        }
    return f;
}

// ---- synthetic dataset ----------------------------------------------------

struct SyntheticConfig {
    int num_videos = 200;       // training pool (labeled + unlabeled)
    int num_test_videos = 50;
    int num_classes = 5;        // K
    int t_raw = 120;            // raw snippet count per video
    int d = 16;                 // feature half-dimension (rows = 2d)
    int grid = 40;              // segment boundaries snap to this snippet grid
    double duration = 60.0;     // seconds per video
    int min_instances = 1;
    int max_instances = 3;
    double noise = 0.5;         // feature noise stddev
    // Real snippet features drift over the video; mix in deterministic
    // sinusoids of this amplitude so temporal position is recoverable from
    // content alone (the encoder adds no positional encoding).
    double time_encoding_amp = 1.0;
    double label_fraction = 0.1;
    std::string out_dir = "data";
};

struct GeneratedDataset {
    DatasetSplit split;
    std::map<std::string, int> label_index;
    std::string annotation_path;
    std::string manifest_path;
};

namespace detail {

inline VideoRecord plant_video(const SyntheticConfig& cfg, Rng& rng,
                               const std::string& id,
                               const std::vector<Vec>& prototypes,
                               const Vec& background, Mat* features_out) {
    VideoRecord rec;
    rec.id = id;
    rec.duration = cfg.duration;

    const int G = cfg.grid;
    const int n_inst = uniform_int(rng, cfg.min_instances, cfg.max_instances);
    // Plant non-overlapping segments on the snippet grid, each 3..8 grid
    // cells long, separated by at least one background cell.
    std::vector<int> covering(G, -1);
    for (int j = 0; j < n_inst; ++j) {
        for (int attempt = 0; attempt < 20; ++attempt) {
            int len = uniform_int(rng, 3, 8);
            if (len >= G - 1) len = G / 3;
            int a = uniform_int(rng, 0, G - len);
            bool free = true;
            for (int g = std::max(0, a - 1); g < std::min(G, a + len + 1); ++g)
                if (covering[g] >= 0) { free = false; break; }
            if (!free) continue;
            ActionSegment seg;
            seg.label = uniform_int(rng, 1, cfg.num_classes);
            seg.start = static_cast<double>(a) / G * cfg.duration;
            seg.end = static_cast<double>(a + len) / G * cfg.duration;
            rec.segments.push_back(seg);
            for (int g = a; g < a + len; ++g) covering[g] = seg.label;
            break;
        }
    }
    std::sort(rec.segments.begin(), rec.segments.end(),
              [](const ActionSegment& x, const ActionSegment& y) {
                  return x.start < y.start;
              });

    // Raw features: prototype of the covering class (or background) + noise.
    Mat f(2 * cfg.d, cfg.t_raw);
    for (int t = 0; t < cfg.t_raw; ++t) {
        double time = (t + 0.5) / cfg.t_raw * cfg.duration;
        int g = std::min(G - 1, static_cast<int>(time / cfg.duration * G));
        const Vec& proto = covering[g] >= 0 ? prototypes[covering[g] - 1] : background;
        for (int r = 0; r < 2 * cfg.d; ++r)
            f(r, t) = proto(r) + gaussian(rng, 0.0, cfg.noise);
        // temporal drift: wavelengths span 8 raw snippets to two video lengths
        // so the slow components survive downsampling
        if (cfg.time_encoding_amp != 0.0) {
            const int rows = 2 * cfg.d;
            for (int r = 0; r < rows; ++r) {
                double frac = rows > 2 ? static_cast<double>(r / 2) / (rows / 2 - 1) : 0.0;
                double wavelength = 8.0 * std::pow(cfg.t_raw / 4.0, frac);
                double angle = 2.0 * std::numbers::pi * t / wavelength;
                f(r, t) += cfg.time_encoding_amp *
                           (r % 2 == 0 ? std::sin(angle) : std::cos(angle));
            }
        }
    }
    *features_out = std::move(f);
    return rec;
}

}  // namespace detail

/// Deterministic synthetic dataset: per-class prototype features plus noise,
/// annotations consistent with the planted segments, labeled/unlabeled split
/// honoring `label_fraction`. Writes features, an annotation JSON and a split
/// manifest under cfg.out_dir.
inline GeneratedDataset generate_synthetic(const SyntheticConfig& cfg,
                                           std::uint64_t seed) {
    if (!(cfg.label_fraction > 0.0 && cfg.label_fraction <= 1.0))
        throw ConfigError("label fraction must be in (0, 1]");
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    fs::create_directories(fs::path(cfg.out_dir) / "features");

    Rng rng(seed);
    std::vector<Vec> prototypes(cfg.num_classes);
    for (auto& p : prototypes) {
        p.resize(2 * cfg.d);
        for (int r = 0; r < 2 * cfg.d; ++r) p(r) = gaussian(rng, 0.0, 1.0);
    }
    Vec background(2 * cfg.d);
    for (int r = 0; r < 2 * cfg.d; ++r) background(r) = gaussian(rng, 0.0, 1.0);

    GeneratedDataset out;
    json ann = json::object();
    auto emit = [&](const std::string& id) {
        Mat feats;
        VideoRecord rec = detail::plant_video(cfg, rng, id, prototypes,
                                              background, &feats);
        std::string fpath =
            (fs::path(cfg.out_dir) / "features" / (id + ".f32")).string();
        SnippetFeatureSequence seq{std::move(feats), cfg.d};
        write_features(fpath, seq);
        rec.feature_path = fpath;
        json anns = json::array();
        for (const auto& s : rec.segments)
            anns.push_back({{"segment", {s.start, s.end}},
                            {"label", "class_" + std::to_string(s.label)}});
        ann[id] = {{"duration_second", rec.duration},
                   {"annotations", anns},
                   {"feature_path", fpath}};
        return rec;
    };

    std::vector<VideoRecord> train_pool;
    char idbuf[32];
    for (int i = 0; i < cfg.num_videos; ++i) {
        std::snprintf(idbuf, sizeof(idbuf), "train_%04d", i);
        train_pool.push_back(emit(idbuf));
    }
    for (int i = 0; i < cfg.num_test_videos; ++i) {
        std::snprintf(idbuf, sizeof(idbuf), "test_%04d", i);
        out.split.test.push_back(emit(idbuf));
    }

    const int n_labeled = std::max(
        1, static_cast<int>(std::lround(cfg.label_fraction * cfg.num_videos)));
    std::vector<int> order = random_permutation(rng, cfg.num_videos);
    for (int i = 0; i < cfg.num_videos; ++i) {
        if (i < n_labeled) out.split.labeled.push_back(train_pool[order[i]]);
        else {
            VideoRecord hidden = train_pool[order[i]];
            hidden.segments.clear();  // annotations withheld
            out.split.unlabeled.push_back(hidden);
        }
    }
    auto by_id = [](const VideoRecord& a, const VideoRecord& b) { return a.id < b.id; };
    std::sort(out.split.labeled.begin(), out.split.labeled.end(), by_id);
    std::sort(out.split.unlabeled.begin(), out.split.unlabeled.end(), by_id);

    for (int k = 1; k <= cfg.num_classes; ++k)
        out.label_index["class_" + std::to_string(k)] = k;

    out.annotation_path = (fs::path(cfg.out_dir) / "annotations.json").string();
    {
        std::ofstream f(out.annotation_path);
        f << ann.dump(2) << "\n";
    }
    json manifest;
    auto ids = [](const std::vector<VideoRecord>& v) {
        std::vector<std::string> r;
        for (const auto& x : v) r.push_back(x.id);
        return r;
    };
    manifest["labeled"] = ids(out.split.labeled);
    manifest["unlabeled"] = ids(out.split.unlabeled);
    manifest["test"] = ids(out.split.test);
    manifest["seed"] = seed;
    manifest["fraction"] = cfg.label_fraction;
    out.manifest_path = (fs::path(cfg.out_dir) / "split.json").string();
    {
        std::ofstream f(out.manifest_path);
        f << manifest.dump(2) << "\n";
    }
    return out;
}

/// Rebuild a DatasetSplit from an annotation file plus a split manifest.
inline DatasetSplit load_split(const std::string& annotation_path,
                               const std::string& manifest_path) {
    AnnotationSet anns = load_annotations(annotation_path);
    std::map<std::string, VideoRecord> by_id;
    for (auto& r : anns.records) by_id[r.id] = r;
    std::ifstream f(manifest_path);
    if (!f) throw ValidationError("split manifest not found: " + manifest_path);
    json manifest = json::parse(f);
    DatasetSplit out;
    for (const auto& id : manifest.at("labeled"))
        out.labeled.push_back(by_id.at(id.get<std::string>()));
    for (const auto& id : manifest.at("unlabeled")) {
        VideoRecord rec = by_id.at(id.get<std::string>());
        rec.segments.clear();
        out.unlabeled.push_back(rec);
    }
    for (const auto& id : manifest.at("test"))
        out.test.push_back(by_id.at(id.get<std::string>()));
    return out;
}

}  // namespace spot::data
