#pragma once

#include "spot/data.hpp"
#include "spot/model.hpp"

namespace spot::train {

inline ag::Var Var_zero() { return ag::Var::constant(Mat::Zero(1, 1)); }

inline double cosine_lr(double base, int epoch, int total_epochs) {
    if (total_epochs <= 1) return base;
    double t = static_cast<double>(epoch) / (total_epochs - 1);
    return base * 0.5 * (1.0 + std::cos(t * M_PI)) + base * 1e-2;
}

/// A video ready for training: features resampled to the model length plus
/// per-snippet targets (empty-segment records yield all-background targets).
struct VideoSample {
    data::VideoRecord rec;
    Mat features;  // (2d, T)
    data::TrainTargets targets;
};

inline VideoSample make_sample(const data::VideoRecord& rec, int seq_len, int K) {
    VideoSample s;
    s.rec = rec;
    auto raw = data::read_features(rec.feature_path);
    s.features = data::resample_features(raw, seq_len);
    s.targets = data::make_targets(rec, seq_len, K);
    return s;
}

inline std::vector<VideoSample> load_samples(
    const std::vector<data::VideoRecord>& recs, int seq_len, int K) {
    std::vector<VideoSample> out;
    out.reserve(recs.size());
    for (const auto& r : recs) out.push_back(make_sample(r, seq_len, K));
    return out;
}

}  // namespace spot::train
