#include "spot/data.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

using namespace spot;
using namespace spot::data;
namespace fs = std::filesystem;

namespace {

std::string write_temp_json(const std::string& name, const std::string& body) {
    fs::path p = fs::temp_directory_path() / name;
    std::ofstream f(p);
    f << body;
    return p.string();
}

}  // namespace

TEST_CASE("load_annotations ingests a single-entry file") {
    auto path = write_temp_json("ann_single.json", R"({
      "v1": {"duration_second": 10.0,
             "annotations": [{"segment": [2.0, 5.0], "label": "jump"}]}
    })");
    auto set = load_annotations(path);
    REQUIRE(set.records.size() == 1);
    REQUIRE(set.records[0].segments.size() == 1);
    CHECK(set.records[0].segments[0].label == 1);
    CHECK(set.records[0].segments[0].start == 2.0);
    CHECK(set.num_classes() == 1);
}

TEST_CASE("load_annotations rejects empty intervals, naming the video") {
    auto path = write_temp_json("ann_empty_interval.json", R"({
      "v1": {"duration_second": 10.0,
             "annotations": [{"segment": [5.0, 5.0], "label": "jump"}]}
    })");
    try {
        load_annotations(path);
        FAIL("expected a validation error");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("v1") != std::string::npos);
    }
}

TEST_CASE("load_annotations rejects malformed JSON") {
    auto path = write_temp_json("ann_bad.json", "{ not json");
    CHECK_THROWS_AS(load_annotations(path), ValidationError);
}

TEST_CASE("shared labels map to the same dense index across videos") {
    auto path = write_temp_json("ann_shared.json", R"({
      "v1": {"duration_second": 10.0,
             "annotations": [{"segment": [1.0, 2.0], "label": "jump"}]},
      "v2": {"duration_second": 8.0,
             "annotations": [{"segment": [3.0, 4.0], "label": "jump"},
                              {"segment": [5.0, 6.0], "label": "run"}]}
    })");
    auto set = load_annotations(path);
    CHECK(set.num_classes() == 2);
    CHECK(set.records[0].segments[0].label == set.records[1].segments[0].label);
}

TEST_CASE("resample_features identity and interpolation") {
    SnippetFeatureSequence f;
    f.d = 1;  // nominal; single-row fixtures below
    f.values = Mat(1, 2);
    f.values << 0.0, 2.0;
    SECTION("linear midpoint") {
        Mat out = resample_features(f, 3);
        CHECK(out(0, 0) == Catch::Approx(0.0));
        CHECK(out(0, 1) == Catch::Approx(1.0));
        CHECK(out(0, 2) == Catch::Approx(2.0));
    }
    SECTION("identity when lengths match") {
        Mat out = resample_features(f, 2);
        CHECK(out == f.values);
    }
    SECTION("seven points down to four") {
        SnippetFeatureSequence g;
        g.values = Mat(1, 7);
        g.values << 0, 1, 2, 3, 4, 5, 6;
        Mat out = resample_features(g, 4);
        // interpolation rule evaluated at raw positions 0, 2, 4, 6
        CHECK(out(0, 0) == Catch::Approx(0.0));
        CHECK(out(0, 1) == Catch::Approx(2.0));
        CHECK(out(0, 2) == Catch::Approx(4.0));
        CHECK(out(0, 3) == Catch::Approx(6.0));
    }
    SECTION("target below 2 is a configuration error") {
        CHECK_THROWS_AS(resample_features(f, 1), ConfigError);
    }
    SECTION("constant sequences stay constant") {
        SnippetFeatureSequence g;
        g.values = Mat::Constant(3, 5, 1.25);
        Mat out = resample_features(g, 9);
        CHECK((out.array() - 1.25).abs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("make_targets maps segments to snippet labels and masks") {
    VideoRecord rec;
    rec.id = "v";
    rec.duration = 10.0;
    rec.segments = {{2.0, 5.0, 1}};
    auto t = make_targets(rec, 10, 2);
    // snippet centers 0.5, 1.5, ..., 9.5; centers 2.5, 3.5, 4.5 fall in [2, 5)
    for (int i = 0; i < 10; ++i) {
        bool fg = i >= 2 && i <= 4;
        CHECK(t.class_label[i] == (fg ? 1 : 3));
    }
    CHECK(t.fg_indices == std::vector<int>{2, 3, 4});
    for (int anchor : {2, 3, 4})
        for (int i = 0; i < 10; ++i)
            CHECK(t.gt_mask(i, anchor) == ((i >= 2 && i <= 4) ? 1.0 : 0.0));
    for (int anchor : {0, 1, 5, 9}) CHECK(t.gt_mask.col(anchor).sum() == 0.0);
}

TEST_CASE("make_targets background-only and full-coverage videos") {
    VideoRecord rec;
    rec.id = "v";
    rec.duration = 4.0;
    SECTION("no segments") {
        auto t = make_targets(rec, 8, 3);
        for (int i = 0; i < 8; ++i) CHECK(t.class_label[i] == 4);
        CHECK(t.gt_mask.sum() == 0.0);
        CHECK(t.fg_indices.empty());
    }
    SECTION("segment covering the whole video") {
        rec.segments = {{0.0, 4.0, 2}};
        auto t = make_targets(rec, 8, 3);
        CHECK(t.bg_indices.empty());
        CHECK(t.gt_mask.sum() == 64.0);
    }
}

TEST_CASE("overlapping segments resolve by earliest start") {
    VideoRecord rec;
    rec.id = "v";
    rec.duration = 10.0;
    rec.segments = {{4.0, 8.0, 2}, {2.0, 6.0, 1}};
    auto t = make_targets(rec, 10, 2);
    CHECK(t.class_label[4] == 1);  // center 4.5 covered by both, earliest wins
    CHECK(t.class_label[6] == 2);
}

TEST_CASE("fg/bg partition is consistent with class labels") {
    VideoRecord rec;
    rec.id = "v";
    rec.duration = 12.0;
    rec.segments = {{1.0, 3.0, 2}, {7.0, 9.5, 1}};
    auto t = make_targets(rec, 16, 3);
    std::set<int> fg(t.fg_indices.begin(), t.fg_indices.end());
    std::set<int> bg(t.bg_indices.begin(), t.bg_indices.end());
    CHECK(fg.size() + bg.size() == 16);
    for (int i = 0; i < 16; ++i) {
        bool is_fg = t.class_label[i] <= 3;
        CHECK(fg.count(i) == (is_fg ? 1u : 0u));
        if (is_fg) CHECK(t.gt_mask(i, i) == 1.0);
    }
}

TEST_CASE("feature file round trip") {
    Rng rng(3);
    SnippetFeatureSequence f;
    f.d = 2;
    f.values = Mat(4, 6);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 6; ++j) f.values(i, j) = gaussian(rng, 0.0, 1.0);
    fs::path p = fs::temp_directory_path() / "feat_roundtrip.f32";
    write_features(p.string(), f);
    auto g = read_features(p.string());
    CHECK(g.d == 2);
    CHECK((g.values - f.values).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("synthetic generation is deterministic and honors the split") {
    SyntheticConfig cfg;
    cfg.num_videos = 30;
    cfg.num_test_videos = 6;
    cfg.t_raw = 24;
    cfg.grid = 12;
    cfg.d = 3;
    cfg.label_fraction = 0.1;
    cfg.out_dir = (fs::temp_directory_path() / "spot_synth_a").string();
    auto a = generate_synthetic(cfg, 42);
    CHECK(a.split.labeled.size() == 3);
    CHECK(a.split.unlabeled.size() == 27);
    CHECK(a.split.test.size() == 6);
    for (const auto& r : a.split.unlabeled) CHECK(r.segments.empty());

    cfg.out_dir = (fs::temp_directory_path() / "spot_synth_b").string();
    auto b = generate_synthetic(cfg, 42);
    // byte-identical features and annotations across runs with the same seed
    for (size_t i = 0; i < a.split.test.size(); ++i) {
        auto fa = read_features(a.split.test[i].feature_path);
        auto fb = read_features(b.split.test[i].feature_path);
        CHECK(fa.values == fb.values);
    }
    // annotations identical apart from the embedded feature paths
    std::ifstream fa(a.annotation_path), fb(b.annotation_path);
    auto ja = nlohmann::json::parse(fa), jb = nlohmann::json::parse(fb);
    for (auto* j : {&ja, &jb})
        for (auto& [id, entry] : j->items()) entry.erase("feature_path");
    CHECK(ja == jb);
}

TEST_CASE("zero noise makes foreground snippets equal their class prototype") {
    SyntheticConfig cfg;
    cfg.num_videos = 4;
    cfg.num_test_videos = 0;
    cfg.t_raw = 24;
    cfg.grid = 12;
    cfg.d = 3;
    cfg.noise = 0.0;
    cfg.time_encoding_amp = 0.0;
    cfg.label_fraction = 1.0;
    cfg.out_dir = (fs::temp_directory_path() / "spot_synth_zero").string();
    auto ds = generate_synthetic(cfg, 7);
    // All snippets of one class share an identical feature column.
    std::map<int, Vec> proto;
    for (const auto& rec : ds.split.labeled) {
        auto f = read_features(rec.feature_path);
        auto t = make_targets(rec, cfg.t_raw, cfg.num_classes);
        for (int i = 0; i < cfg.t_raw; ++i) {
            if (t.class_label[i] > cfg.num_classes) continue;
            auto [it, fresh] = proto.emplace(t.class_label[i], f.values.col(i));
            if (!fresh)
                CHECK((it->second - f.values.col(i)).cwiseAbs().maxCoeff() < 1e-6);
        }
    }
}

TEST_CASE("invalid label fraction is rejected") {
    SyntheticConfig cfg;
    cfg.label_fraction = 0.0;
    CHECK_THROWS_AS(generate_synthetic(cfg, 1), ConfigError);
    cfg.label_fraction = 1.5;
    CHECK_THROWS_AS(generate_synthetic(cfg, 1), ConfigError);
}

TEST_CASE("gt_mask columns decode back to the planted snippet spans") {
    VideoRecord rec;
    rec.id = "v";
    rec.duration = 20.0;
    rec.segments = {{2.0, 7.0, 1}, {11.0, 16.0, 2}};
    const int T = 20;
    auto t = make_targets(rec, T, 2);
    for (int anchor : t.fg_indices) {
        // threshold the column at 0.5 and read off the single run
        int a = -1, b = -1;
        for (int i = 0; i < T; ++i)
            if (t.gt_mask(i, anchor) >= 0.5) {
                if (a < 0) a = i;
                b = i;
            }
        auto [s, e] = snippet_run_to_seconds(a, b, T, rec.duration);
        bool matches_first = s == 2.0 && e == 7.0;
        bool matches_second = s == 11.0 && e == 16.0;
        CHECK((matches_first || matches_second));
    }
}

TEST_CASE("split manifest round trip") {
    SyntheticConfig cfg;
    cfg.num_videos = 10;
    cfg.num_test_videos = 2;
    cfg.t_raw = 24;
    cfg.grid = 12;
    cfg.d = 2;
    cfg.label_fraction = 0.2;
    cfg.out_dir = (fs::temp_directory_path() / "spot_synth_manifest").string();
    auto ds = generate_synthetic(cfg, 5);
    auto reloaded = load_split(ds.annotation_path, ds.manifest_path);
    REQUIRE(reloaded.labeled.size() == ds.split.labeled.size());
    CHECK(reloaded.labeled[0].id == ds.split.labeled[0].id);
    CHECK(reloaded.unlabeled.size() == ds.split.unlabeled.size());
    for (const auto& r : reloaded.unlabeled) CHECK(r.segments.empty());
    CHECK(reloaded.test.size() == 2);
    CHECK_FALSE(reloaded.test[0].segments.empty());
}
