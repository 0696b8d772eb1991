#pragma once

// Run configuration: every constant used by the pipeline, with the two
// benchmark-style presets plus a CPU-friendly toy preset, JSON round-trip
// and strict unknown-key rejection.

#include "spot/data.hpp"
#include "spot/decode.hpp"
#include "spot/eval.hpp"
#include "spot/model.hpp"
#include "spot/pretrain.hpp"
#include "spot/refine.hpp"
#include "spot/semisup.hpp"

#include <json.hpp>

namespace spot {

using nlohmann::json;

struct RunConfig {
    std::string preset = "toy";
    int seq_len = 40;        // T
    int num_classes = 5;     // K
    int feature_half_dim = 16;  // d (input rows = 2d)

    // encoder
    int embed_dim = 32;
    int heads = 4;
    int layers = 3;
    int ff_hidden = 64;
    int proj_m_dim = 32;
    int proj_p_dim = 32;
    double dropout = 0.1;

    // refinement
    refine::RefineConfig refine;

    // sharpening / pseudo labels
    semisup::SharpenConfig sharpen;
    double tail_fraction = 0.3;

    // losses
    semisup::MaskLossConfig mask_loss;
    pretrain::PretextLossWeights pretext_weights;
    double pretext_min_frac = 0.2, pretext_max_frac = 0.8;
    bool use_refine = true, use_recon = true;

    // optimization
    int pretrain_epochs = 12;
    int finetune_epochs = 15;
    int warmup_epochs = 3;
    double lr = 1e-4;
    double weight_decay = 1e-3;

    // inference / evaluation
    decode::DecodeConfig decode;
    eval::EvalConfig eval;

    std::uint64_t seed = 1;
    data::SyntheticConfig synth;

    ModelConfig model_config() const {
        ModelConfig mc;
        mc.encoder = EncoderConfig{2 * feature_half_dim, embed_dim, heads,
                                   layers, ff_hidden, proj_m_dim, proj_p_dim,
                                   dropout};
        mc.num_classes = num_classes;
        mc.seq_len = seq_len;
        return mc;
    }

    void validate() const {
        model_config().encoder.validate();
        refine.validate();
        sharpen.validate();
        decode.validate();
        eval.validate();
        if (seq_len < 2) throw ConfigError("seq_len must be >= 2");
    }
};

inline RunConfig preset_config(const std::string& name) {
    RunConfig c;
    c.preset = name;
    if (name == "large") {
        c.seq_len = 100;
        c.embed_dim = 256;
        c.ff_hidden = 512;
        c.proj_m_dim = 256;
        c.proj_p_dim = 256;
        c.lr = 1e-4;
        c.weight_decay = 1e-3;
        c.decode.softnms_threshold = 0.6;
        c.eval.tiou_grid = {0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95};
    } else if (name == "small") {
        c.seq_len = 256;
        c.embed_dim = 256;
        c.ff_hidden = 512;
        c.proj_m_dim = 256;
        c.proj_p_dim = 256;
        c.lr = 1e-5;
        c.weight_decay = 1e-5;
        c.decode.softnms_threshold = 0.4;
        c.eval.tiou_grid = {0.3, 0.4, 0.5, 0.6, 0.7};
    } else if (name == "toy") {
        c.seq_len = 40;
        c.embed_dim = 32;
        c.layers = 2;
        c.ff_hidden = 64;
        c.proj_m_dim = 32;
        c.proj_p_dim = 32;
        c.refine.erosion_kernel = 5;
        c.refine.top_k = 10;
        c.lr = 2e-3;
        c.weight_decay = 1e-4;
        c.pretrain_epochs = 12;
        c.finetune_epochs = 15;
        c.decode.softnms_threshold = 0.4;
        c.decode.top_snippets = 40;
        c.eval.tiou_grid = {0.3, 0.4, 0.5, 0.6, 0.7};
    } else {
        throw ConfigError("unknown preset: " + name);
    }
    return c;
}

// ---- JSON round trip ------------------------------------------------------

inline json to_json(const RunConfig& c) {
    json j;
    j["preset"] = c.preset;
    j["seq_len"] = c.seq_len;
    j["num_classes"] = c.num_classes;
    j["feature_half_dim"] = c.feature_half_dim;
    j["embed_dim"] = c.embed_dim;
    j["heads"] = c.heads;
    j["layers"] = c.layers;
    j["ff_hidden"] = c.ff_hidden;
    j["proj_m_dim"] = c.proj_m_dim;
    j["proj_p_dim"] = c.proj_p_dim;
    j["dropout"] = c.dropout;
    j["refine"] = {{"theta_m", c.refine.theta_m},
                   {"theta_c", c.refine.theta_c},
                   {"erosion_kernel", c.refine.erosion_kernel},
                   {"top_k", c.refine.top_k},
                   {"temperature", c.refine.temperature},
                   {"margin", c.refine.margin},
                   {"mode", c.refine.mode == refine::RefineMode::infonce
                                ? "infonce" : "margin-triplet"},
                   {"flip_regions", c.refine.flip_regions},
                   {"soft_beta", c.refine.soft_beta}};
    j["sharpen"] = {{"tau", c.sharpen.tau},
                    {"tau_m", c.sharpen.tau_m},
                    {"theta_c", c.sharpen.theta_c},
                    {"theta_m", c.sharpen.theta_m}};
    j["tail_fraction"] = c.tail_fraction;
    j["mask_loss"] = {{"lambda_d", c.mask_loss.lambda_d},
                      {"standard_dice", c.mask_loss.standard_dice}};
    j["pretext"] = {{"lambda_1", c.pretext_weights.lambda_1},
                    {"lambda_2", c.pretext_weights.lambda_2},
                    {"min_frac", c.pretext_min_frac},
                    {"max_frac", c.pretext_max_frac}};
    j["use_refine"] = c.use_refine;
    j["use_recon"] = c.use_recon;
    j["pretrain_epochs"] = c.pretrain_epochs;
    j["finetune_epochs"] = c.finetune_epochs;
    j["warmup_epochs"] = c.warmup_epochs;
    j["lr"] = c.lr;
    j["weight_decay"] = c.weight_decay;
    j["decode"] = {{"theta_c", c.decode.theta_c},
                   {"mask_thresholds", c.decode.mask_thresholds},
                   {"top_snippets", c.decode.top_snippets},
                   {"softnms_threshold", c.decode.softnms_threshold},
                   {"softnms_sigma", c.decode.softnms_sigma},
                   {"max_outputs", c.decode.max_outputs}};
    j["eval"] = {{"tiou_grid", c.eval.tiou_grid}};
    j["seed"] = c.seed;
    j["synth"] = {{"num_videos", c.synth.num_videos},
                  {"num_test_videos", c.synth.num_test_videos},
                  {"num_classes", c.synth.num_classes},
                  {"t_raw", c.synth.t_raw},
                  {"d", c.synth.d},
                  {"grid", c.synth.grid},
                  {"duration", c.synth.duration},
                  {"min_instances", c.synth.min_instances},
                  {"max_instances", c.synth.max_instances},
                  {"noise", c.synth.noise},
                  {"time_encoding_amp", c.synth.time_encoding_amp},
                  {"label_fraction", c.synth.label_fraction},
                  {"out_dir", c.synth.out_dir}};
    return j;
}

namespace detail {
inline void reject_unknown(const json& j, const std::vector<std::string>& keys,
                           const std::string& scope) {
    for (const auto& [k, v] : j.items()) {
        if (std::find(keys.begin(), keys.end(), k) == keys.end())
            throw ConfigError("unknown config key '" + scope + k + "'");
    }
}
template <typename T>
void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}
}  // namespace detail

/// Parse a config JSON on top of its preset's defaults. Unknown keys are
/// rejected so typos fail loudly.
inline RunConfig config_from_json(const json& j) {
    detail::reject_unknown(
        j,
        {"preset", "seq_len", "num_classes", "feature_half_dim", "embed_dim",
         "heads", "layers", "ff_hidden", "proj_m_dim", "proj_p_dim", "dropout",
         "refine", "sharpen", "tail_fraction", "mask_loss", "pretext",
         "use_refine", "use_recon", "pretrain_epochs", "finetune_epochs",
         "warmup_epochs", "lr", "weight_decay", "decode", "eval", "seed",
         "synth"},
        "");
    RunConfig c = preset_config(j.value("preset", std::string("toy")));
    detail::get_if(j, "seq_len", c.seq_len);
    detail::get_if(j, "num_classes", c.num_classes);
    detail::get_if(j, "feature_half_dim", c.feature_half_dim);
    detail::get_if(j, "embed_dim", c.embed_dim);
    detail::get_if(j, "heads", c.heads);
    detail::get_if(j, "layers", c.layers);
    detail::get_if(j, "ff_hidden", c.ff_hidden);
    detail::get_if(j, "proj_m_dim", c.proj_m_dim);
    detail::get_if(j, "proj_p_dim", c.proj_p_dim);
    detail::get_if(j, "dropout", c.dropout);
    if (j.contains("refine")) {
        const auto& r = j.at("refine");
        detail::reject_unknown(r,
                               {"theta_m", "theta_c", "erosion_kernel", "top_k",
                                "temperature", "margin", "mode", "flip_regions",
                                "soft_beta"},
                               "refine.");
        detail::get_if(r, "theta_m", c.refine.theta_m);
        detail::get_if(r, "theta_c", c.refine.theta_c);
        detail::get_if(r, "erosion_kernel", c.refine.erosion_kernel);
        detail::get_if(r, "top_k", c.refine.top_k);
        detail::get_if(r, "temperature", c.refine.temperature);
        detail::get_if(r, "margin", c.refine.margin);
        detail::get_if(r, "flip_regions", c.refine.flip_regions);
        detail::get_if(r, "soft_beta", c.refine.soft_beta);
        if (r.contains("mode")) {
            std::string m = r.at("mode").get<std::string>();
            if (m == "infonce") c.refine.mode = refine::RefineMode::infonce;
            else if (m == "margin-triplet")
                c.refine.mode = refine::RefineMode::margin_triplet;
            else throw ConfigError("unknown refine mode: " + m);
        }
    }
    if (j.contains("sharpen")) {
        const auto& s = j.at("sharpen");
        detail::reject_unknown(s, {"tau", "tau_m", "theta_c", "theta_m"},
                               "sharpen.");
        detail::get_if(s, "tau", c.sharpen.tau);
        detail::get_if(s, "tau_m", c.sharpen.tau_m);
        detail::get_if(s, "theta_c", c.sharpen.theta_c);
        detail::get_if(s, "theta_m", c.sharpen.theta_m);
    }
    detail::get_if(j, "tail_fraction", c.tail_fraction);
    if (j.contains("mask_loss")) {
        const auto& m = j.at("mask_loss");
        detail::reject_unknown(m, {"lambda_d", "standard_dice"}, "mask_loss.");
        detail::get_if(m, "lambda_d", c.mask_loss.lambda_d);
        detail::get_if(m, "standard_dice", c.mask_loss.standard_dice);
    }
    if (j.contains("pretext")) {
        const auto& p = j.at("pretext");
        detail::reject_unknown(p, {"lambda_1", "lambda_2", "min_frac", "max_frac"},
                               "pretext.");
        detail::get_if(p, "lambda_1", c.pretext_weights.lambda_1);
        detail::get_if(p, "lambda_2", c.pretext_weights.lambda_2);
        detail::get_if(p, "min_frac", c.pretext_min_frac);
        detail::get_if(p, "max_frac", c.pretext_max_frac);
    }
    detail::get_if(j, "use_refine", c.use_refine);
    detail::get_if(j, "use_recon", c.use_recon);
    detail::get_if(j, "pretrain_epochs", c.pretrain_epochs);
    detail::get_if(j, "finetune_epochs", c.finetune_epochs);
    detail::get_if(j, "warmup_epochs", c.warmup_epochs);
    detail::get_if(j, "lr", c.lr);
    detail::get_if(j, "weight_decay", c.weight_decay);
    if (j.contains("decode")) {
        const auto& d = j.at("decode");
        detail::reject_unknown(d,
                               {"theta_c", "mask_thresholds", "top_snippets",
                                "softnms_threshold", "softnms_sigma",
                                "max_outputs"},
                               "decode.");
        detail::get_if(d, "theta_c", c.decode.theta_c);
        detail::get_if(d, "mask_thresholds", c.decode.mask_thresholds);
        detail::get_if(d, "top_snippets", c.decode.top_snippets);
        detail::get_if(d, "softnms_threshold", c.decode.softnms_threshold);
        detail::get_if(d, "softnms_sigma", c.decode.softnms_sigma);
        detail::get_if(d, "max_outputs", c.decode.max_outputs);
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        detail::reject_unknown(e, {"tiou_grid"}, "eval.");
        detail::get_if(e, "tiou_grid", c.eval.tiou_grid);
    }
    detail::get_if(j, "seed", c.seed);
    if (j.contains("synth")) {
        const auto& s = j.at("synth");
        detail::reject_unknown(s,
                               {"num_videos", "num_test_videos", "num_classes",
                                "t_raw", "d", "grid", "duration",
                                "min_instances", "max_instances", "noise",
                                "time_encoding_amp", "label_fraction", "out_dir"},
                               "synth.");
        detail::get_if(s, "num_videos", c.synth.num_videos);
        detail::get_if(s, "num_test_videos", c.synth.num_test_videos);
        detail::get_if(s, "num_classes", c.synth.num_classes);
        detail::get_if(s, "t_raw", c.synth.t_raw);
        detail::get_if(s, "d", c.synth.d);
        detail::get_if(s, "grid", c.synth.grid);
        detail::get_if(s, "duration", c.synth.duration);
        detail::get_if(s, "min_instances", c.synth.min_instances);
        detail::get_if(s, "max_instances", c.synth.max_instances);
        detail::get_if(s, "noise", c.synth.noise);
        detail::get_if(s, "time_encoding_amp", c.synth.time_encoding_amp);
        detail::get_if(s, "label_fraction", c.synth.label_fraction);
        detail::get_if(s, "out_dir", c.synth.out_dir);
    }
    c.validate();
    return c;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config file not found: " + path);
    json j;
    try {
        j = json::parse(f);
    } catch (const json::parse_error& e) {
        throw ConfigError("malformed config JSON: " + std::string(e.what()));
    }
    return config_from_json(j);
}

}  // namespace spot
