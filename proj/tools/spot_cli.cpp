// Command-line driver: synthetic data generation, the two training stages,
// inference, evaluation and the error-propagation experiment.

#include "spot/config.hpp"
#include "spot/train.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

using namespace spot;
namespace fs = std::filesystem;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string preset = "toy";
    std::uint64_t seed = 0;
    bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "config JSON path");
    cmd->add_option("--preset", args.preset, "preset: large, small or toy")
        ->check(CLI::IsMember({"large", "small", "toy"}));
    cmd->add_option("--seed", args.seed, "rng seed")
        ->each([&](const std::string&) { args.seed_set = true; });
}

RunConfig resolve_config(const CommonArgs& args) {
    RunConfig cfg = args.config_path.empty() ? preset_config(args.preset)
                                             : load_config(args.config_path);
    if (args.seed_set) cfg.seed = args.seed;
    cfg.validate();
    return cfg;
}

/// Every run directory gets the fully resolved config so the run can be
/// reproduced from that file plus the seed.
void echo_config(const RunConfig& cfg, const std::string& run_dir) {
    fs::create_directories(run_dir);
    std::ofstream f(fs::path(run_dir) / "config.json");
    f << to_json(cfg).dump(2) << "\n";
}

data::DatasetSplit load_dataset(const std::string& data_dir) {
    return data::load_split((fs::path(data_dir) / "annotations.json").string(),
                            (fs::path(data_dir) / "split.json").string());
}

void require_file(const std::string& path, const std::string& what) {
    if (!fs::exists(path))
        throw ConfigError(what + " not found: " + path);
}

std::map<int, std::string> label_names(const std::string& data_dir) {
    auto anns = data::load_annotations(
        (fs::path(data_dir) / "annotations.json").string());
    std::map<int, std::string> names;
    for (const auto& [name, idx] : anns.label_index) names[idx] = name;
    return names;
}

void write_metrics(const std::vector<train::EpochMetrics>& metrics,
                   const std::string& run_dir) {
    std::ofstream f(fs::path(run_dir) / "metrics.jsonl");
    for (const auto& m : metrics) {
        nlohmann::json j = {{"epoch", m.epoch}, {"L_c", m.l_c}, {"L_m", m.l_m},
                            {"L_ref", m.l_ref}, {"L_rec", m.l_rec},
                            {"val_mAP", m.val_map}};
        f << j.dump() << "\n";
    }
}

void write_detections(const eval::InstanceMap& det,
                      const std::map<int, std::string>& names,
                      const std::string& path) {
    nlohmann::json out = nlohmann::json::object();
    for (const auto& [vid, list] : det) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& inst : list)
            arr.push_back({{"segment", {inst.start, inst.end}},
                           {"label", names.count(inst.label)
                                         ? names.at(inst.label)
                                         : "class_" + std::to_string(inst.label)},
                           {"score", inst.score}});
        out[vid] = arr;
    }
    std::ofstream f(path);
    f << out.dump(2) << "\n";
}

eval::InstanceMap read_detections(const std::string& path,
                                  const std::map<std::string, int>& label_index) {
    std::ifstream f(path);
    if (!f) throw ConfigError("detections file not found: " + path);
    nlohmann::json root = nlohmann::json::parse(f);
    eval::InstanceMap out;
    for (const auto& [vid, arr] : root.items())
        for (const auto& d : arr) {
            decode::ActionInstance inst;
            inst.start = d.at("segment").at(0).get<double>();
            inst.end = d.at("segment").at(1).get<double>();
            inst.score = d.at("score").get<double>();
            auto name = d.at("label").get<std::string>();
            auto it = label_index.find(name);
            if (it == label_index.end())
                throw ValidationError("unknown label in detections: " + name);
            inst.label = it->second;
            out[vid].push_back(inst);
        }
    return out;
}

/// Re-partition the training pool at a different labeled fraction,
/// deterministically from the seed.
void apply_labels_fraction(data::DatasetSplit& split, double fraction,
                           std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw ConfigError("labels fraction must be in (0, 1]");
    std::vector<data::VideoRecord> pool = split.labeled;
    for (const auto& r : split.unlabeled) pool.push_back(r);
    std::sort(pool.begin(), pool.end(),
              [](const auto& a, const auto& b) { return a.id < b.id; });
    // unlabeled records in the manifest carry no segments; the annotation file
    // does, so recover them for the ones promoted to labeled
    const int n = static_cast<int>(pool.size());
    const int n_labeled = std::max(1, static_cast<int>(std::lround(fraction * n)));
    Rng rng(seed);
    auto order = random_permutation(rng, n);
    split.labeled.clear();
    split.unlabeled.clear();
    for (int i = 0; i < n; ++i) {
        auto rec = pool[order[i]];
        if (i < n_labeled) {
            if (rec.segments.empty())
                throw ConfigError(
                    "cannot raise the labeled fraction: annotations for video '" +
                    rec.id + "' were withheld in this split");
            split.labeled.push_back(rec);
        } else {
            rec.segments.clear();
            split.unlabeled.push_back(rec);
        }
    }
}

int run(int argc, char** argv) {
    CLI::App app{"temporal action detection on snippet features"};
    app.require_subcommand(1);

    CommonArgs gen_args, pre_args, fine_args, infer_args, eval_args, prop_args;
    std::string data_dir, run_dir, checkpoint, detections_path;
    double labels_fraction = 0.0;
    bool from_scratch = false;

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
    add_common(gen, gen_args);
    gen->add_option("--out", data_dir, "output directory (default from config)");

    auto* pre = app.add_subcommand("pretrain", "stage-I self-supervised training");
    add_common(pre, pre_args);
    pre->add_option("--data", data_dir, "dataset directory")->required();
    pre->add_option("--run-dir", run_dir, "run output directory")->required();

    auto* fine = app.add_subcommand("finetune", "stage-II semi-supervised training");
    add_common(fine, fine_args);
    fine->add_option("--data", data_dir, "dataset directory")->required();
    fine->add_option("--run-dir", run_dir, "run output directory")->required();
    fine->add_option("--checkpoint", checkpoint, "stage-I checkpoint to start from");
    fine->add_flag("--from-scratch", from_scratch,
                   "skip loading a stage-I checkpoint");
    fine->add_option("--labels-fraction", labels_fraction,
                     "re-partition the training pool at this labeled fraction");

    auto* inf = app.add_subcommand("infer", "decode detections for the test split");
    add_common(inf, infer_args);
    inf->add_option("--data", data_dir, "dataset directory")->required();
    inf->add_option("--run-dir", run_dir, "run output directory")->required();
    inf->add_option("--checkpoint", checkpoint, "model checkpoint")->required();

    auto* ev = app.add_subcommand("eval", "score detections against ground truth");
    add_common(ev, eval_args);
    ev->add_option("--data", data_dir, "dataset directory")->required();
    ev->add_option("--detections", detections_path, "detections JSON")->required();

    auto* prop = app.add_subcommand("error-prop",
                                    "localization error propagation experiment");
    add_common(prop, prop_args);
    prop->add_option("--data", data_dir, "dataset directory")->required();
    prop->add_option("--checkpoint", checkpoint, "model checkpoint")->required();

    CLI11_PARSE(app, argc, argv);

    if (gen->parsed()) {
        RunConfig cfg = resolve_config(gen_args);
        if (!data_dir.empty()) cfg.synth.out_dir = data_dir;
        auto ds = data::generate_synthetic(cfg.synth, cfg.seed);
        echo_config(cfg, cfg.synth.out_dir);
        std::cout << "wrote " << ds.split.labeled.size() << " labeled, "
                  << ds.split.unlabeled.size() << " unlabeled, "
                  << ds.split.test.size() << " test videos under "
                  << cfg.synth.out_dir << "\n";
        return 0;
    }

    if (pre->parsed()) {
        RunConfig cfg = resolve_config(pre_args);
        auto split = load_dataset(data_dir);
        echo_config(cfg, run_dir);
        // features only; annotations never reach this stage
        std::vector<Mat> features;
        for (const auto* group : {&split.labeled, &split.unlabeled})
            for (const auto& rec : *group)
                features.push_back(data::resample_features(
                    data::read_features(rec.feature_path), cfg.seq_len));
        SpotModel model(cfg.model_config(), cfg.seed);
        auto result = train::run_pretrain(model, features, cfg, cfg.seed);
        std::ofstream f(fs::path(run_dir) / "metrics.jsonl");
        for (size_t e = 0; e < result.epoch_loss.size(); ++e)
            f << nlohmann::json{{"epoch", e}, {"L_pre", result.epoch_loss[e]}}
              << "\n";
        std::string out = (fs::path(run_dir) / "checkpoint.bin").string();
        nn::save_checkpoint(out, model.params);
        std::cout << "pretrained " << result.epoch_loss.size()
                  << " epochs; final L_pre = " << result.epoch_loss.back()
                  << "; checkpoint: " << out << "\n";
        return 0;
    }

    if (fine->parsed()) {
        RunConfig cfg = resolve_config(fine_args);
        auto split = load_dataset(data_dir);
        if (labels_fraction > 0.0)
            apply_labels_fraction(split, labels_fraction, cfg.seed);
        echo_config(cfg, run_dir);
        SpotModel model(cfg.model_config(), cfg.seed);
        if (!from_scratch) {
            if (checkpoint.empty())
                throw ConfigError(
                    "finetune needs --checkpoint (or pass --from-scratch)");
            require_file(checkpoint, "checkpoint");
            // the classification head starts fresh; stage I never trained it
            nn::load_checkpoint(model.params, checkpoint, {"heads.class"});
        }
        auto labeled = train::load_samples(split.labeled, cfg.seq_len, cfg.num_classes);
        auto unlabeled = train::load_samples(split.unlabeled, cfg.seq_len, cfg.num_classes);
        auto test = train::load_samples(split.test, cfg.seq_len, cfg.num_classes);
        auto result = train::run_finetune(model, labeled, unlabeled, test, cfg,
                                          cfg.seed);
        write_metrics(result.metrics, run_dir);
        std::string out = (fs::path(run_dir) / "checkpoint.bin").string();
        nn::save_checkpoint(out, model.params);
        std::cout << "finetuned " << result.metrics.size()
                  << " epochs; final val mAP = " << result.final_val_map
                  << "; checkpoint: " << out << "\n";
        return 0;
    }

    if (inf->parsed()) {
        RunConfig cfg = resolve_config(infer_args);
        auto split = load_dataset(data_dir);
        echo_config(cfg, run_dir);
        require_file(checkpoint, "checkpoint");
        SpotModel model(cfg.model_config(), cfg.seed);
        nn::load_checkpoint(model.params, checkpoint);
        auto test = train::load_samples(split.test, cfg.seq_len, cfg.num_classes);
        auto det = train::infer(model, test, cfg);
        std::string out = (fs::path(run_dir) / "detections.json").string();
        write_detections(det, label_names(data_dir), out);
        std::cout << "wrote detections for " << det.size() << " videos to "
                  << out << "\n";
        return 0;
    }

    if (ev->parsed()) {
        RunConfig cfg = resolve_config(eval_args);
        auto split = load_dataset(data_dir);
        auto anns = data::load_annotations(
            (fs::path(data_dir) / "annotations.json").string());
        auto det = read_detections(detections_path, anns.label_index);
        auto rep = eval::map_report(det, eval::ground_truth_instances(split.test),
                                    cfg.eval);
        for (const auto& w : rep.warnings) std::cerr << "warning: " << w << "\n";
        std::cout << rep.table();
        return 0;
    }

    if (prop->parsed()) {
        RunConfig cfg = resolve_config(prop_args);
        auto split = load_dataset(data_dir);
        require_file(checkpoint, "checkpoint");
        SpotModel model(cfg.model_config(), cfg.seed);
        nn::load_checkpoint(model.params, checkpoint);
        auto test = train::load_samples(split.test, cfg.seq_len, cfg.num_classes);
        auto table = train::error_propagation_experiment(model, test, cfg);
        std::printf("design      gt-mask mAP  pred-mask mAP  relative drop\n");
        std::printf("parallel    %11.4f  %13.4f  %13.1f%%\n",
                    table.parallel.map_gt_masks, table.parallel.map_pred_masks,
                    100.0 * table.parallel.relative_drop());
        std::printf("sequential  %11.4f  %13.4f  %13.1f%%\n",
                    table.sequential.map_gt_masks,
                    table.sequential.map_pred_masks,
                    100.0 * table.sequential.relative_drop());
        return 0;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
