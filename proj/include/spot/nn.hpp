#pragma once

// Layers and optimizer built on the autograd Vars. Every layer registers its
// parameters in a ParamStore under a dotted name so checkpoints can address
// them individually.

#include "spot/autograd.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <string>

namespace spot::nn {

using ag::Var;

struct ParamStore {
    std::map<std::string, Var> params;  // ordered for deterministic iteration

    Var add(const std::string& name, Mat init) {
        Var v = Var::param(std::move(init));
        auto [it, inserted] = params.emplace(name, v);
        if (!inserted) throw ConfigError("duplicate parameter name: " + name);
        return v;
    }
    void zero_grad() {
        for (auto& [k, v] : params) v.zero_grad();
    }
};

/// Forward-pass context: training mode toggles dropout.
struct Context {
    bool train = false;
    Rng* rng = nullptr;
    double dropout = 0.0;
};

inline Mat xavier(Rng& rng, Eigen::Index rows, Eigen::Index cols,
                  Eigen::Index fan_in, Eigen::Index fan_out) {
    double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = uniform(rng, -a, a);
    return m;
}

inline Var dropout(const Var& x, const Context& ctx) {
    if (!ctx.train || ctx.dropout <= 0.0) return x;
    Mat mask(x.rows(), x.cols());
    const double keep = 1.0 - ctx.dropout;
    for (Eigen::Index i = 0; i < mask.rows(); ++i)
        for (Eigen::Index j = 0; j < mask.cols(); ++j)
            mask(i, j) = (uniform(*ctx.rng, 0.0, 1.0) < keep) ? 1.0 / keep : 0.0;
    return ag::mul(x, Var::constant(std::move(mask)));
}

/// 1-D convolution over the time axis; kernel_width 1 is a per-snippet linear map.
struct Conv1d {
    int in_ch = 0, out_ch = 0, kernel_width = 1;
    Var w, b;

    Conv1d() = default;
    Conv1d(ParamStore& ps, const std::string& name, int in_channels,
           int out_channels, int kw, Rng& rng)
        : in_ch(in_channels), out_ch(out_channels), kernel_width(kw) {
        if (kw % 2 == 0) throw ConfigError("conv kernel width must be odd");
        w = ps.add(name + ".w",
                   xavier(rng, out_ch, static_cast<Eigen::Index>(in_ch) * kw,
                          static_cast<Eigen::Index>(in_ch) * kw, out_ch));
        b = ps.add(name + ".b", Mat::Zero(out_ch, 1));
    }
    Var forward(const Var& x) const { return ag::conv1d(x, w, b, kernel_width); }
};

struct LayerNorm {
    Var gain, bias;
    LayerNorm() = default;
    LayerNorm(ParamStore& ps, const std::string& name, int dim) {
        gain = ps.add(name + ".gain", Mat::Ones(dim, 1));
        bias = ps.add(name + ".bias", Mat::Zero(dim, 1));
    }
    Var forward(const Var& x) const { return ag::layer_norm_cols(x, gain, bias); }
};

/// Multi-head self-attention over columns-as-tokens, no positional encoding.
struct MultiHeadAttention {
    int dim = 0, heads = 1;
    Conv1d wq, wk, wv, wo;

    MultiHeadAttention() = default;
    MultiHeadAttention(ParamStore& ps, const std::string& name, int d, int h,
                       Rng& rng)
        : dim(d), heads(h),
          wq(ps, name + ".wq", d, d, 1, rng),
          wk(ps, name + ".wk", d, d, 1, rng),
          wv(ps, name + ".wv", d, d, 1, rng),
          wo(ps, name + ".wo", d, d, 1, rng) {
        if (d % h != 0) throw ConfigError("attention dim not divisible by heads");
    }

    Var forward(const Var& x, const Context& ctx) const {
        const int dh = dim / heads;
        Var q = wq.forward(x), k = wk.forward(x), v = wv.forward(x);
        std::vector<Var> outs;
        outs.reserve(heads);
        for (int h = 0; h < heads; ++h) {
            Var qh = ag::slice_rows(q, h * dh, dh);
            Var kh = ag::slice_rows(k, h * dh, dh);
            Var vh = ag::slice_rows(v, h * dh, dh);
            // scores(s, t) = k_s . q_t / sqrt(dh)
            Var scores = ag::scale(ag::matmul(ag::transpose(kh), qh),
                                   1.0 / std::sqrt(static_cast<double>(dh)));
            Var attn = ag::softmax_cols(scores);
            attn = dropout(attn, ctx);
            outs.push_back(ag::matmul(vh, attn));
        }
        return wo.forward(ag::concat_rows(outs));
    }
};

struct FeedForward {
    Conv1d fc1, fc2;
    FeedForward() = default;
    FeedForward(ParamStore& ps, const std::string& name, int dim, int hidden,
                Rng& rng)
        : fc1(ps, name + ".fc1", dim, hidden, 1, rng),
          fc2(ps, name + ".fc2", hidden, dim, 1, rng) {}
    Var forward(const Var& x, const Context& ctx) const {
        return fc2.forward(dropout(ag::gelu(fc1.forward(x)), ctx));
    }
};

/// Pre-norm transformer block.
struct TransformerBlock {
    LayerNorm ln1, ln2;
    MultiHeadAttention attn;
    FeedForward ffn;

    TransformerBlock() = default;
    TransformerBlock(ParamStore& ps, const std::string& name, int dim, int heads,
                     int ff_hidden, Rng& rng)
        : ln1(ps, name + ".ln1", dim),
          ln2(ps, name + ".ln2", dim),
          attn(ps, name + ".attn", dim, heads, rng),
          ffn(ps, name + ".ffn", dim, ff_hidden, rng) {}

    Var forward(const Var& x, const Context& ctx) const {
        Var h = ag::add(x, dropout(attn.forward(ln1.forward(x), ctx), ctx));
        return ag::add(h, dropout(ffn.forward(ln2.forward(h), ctx), ctx));
    }
};

// ---- optimizer ------------------------------------------------------------

struct Adam {
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double weight_decay = 0.0;
    long step_count = 0;
    std::map<std::string, std::pair<Mat, Mat>> state;  // name -> (m, v)

    void step(ParamStore& ps) {
        ++step_count;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
        for (auto& [name, var] : ps.params) {
            if (var.grad().size() == 0) continue;
            Mat g = var.grad();
            if (weight_decay > 0.0) g += weight_decay * var.value();
            auto& [m, v] = state[name];
            if (m.size() == 0) {
                m = Mat::Zero(g.rows(), g.cols());
                v = Mat::Zero(g.rows(), g.cols());
            }
            m = beta1 * m + (1.0 - beta1) * g;
            v = beta2 * v + (1.0 - beta2) * g.cwiseProduct(g);
            Mat mhat = m / bc1;
            Mat vhat = v / bc2;
            var.value_mut() -=
                lr * mhat.cwiseQuotient((vhat.cwiseSqrt().array() + eps).matrix());
        }
    }
};

// ---- checkpoint I/O -------------------------------------------------------
//
// Single binary archive: magic "SPOTCKPT", uint32 version, uint32 count,
// then per entry: uint32 name_len, name bytes, int64 rows, int64 cols,
// rows*cols float32 values in column-major order. Little-endian throughout.

inline void save_checkpoint(const std::string& path, const ParamStore& ps) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot open checkpoint for writing: " + path);
    f.write("SPOTCKPT", 8);
    std::uint32_t version = 1, count = static_cast<std::uint32_t>(ps.params.size());
    f.write(reinterpret_cast<const char*>(&version), 4);
    f.write(reinterpret_cast<const char*>(&count), 4);
    for (const auto& [name, var] : ps.params) {
        std::uint32_t len = static_cast<std::uint32_t>(name.size());
        f.write(reinterpret_cast<const char*>(&len), 4);
        f.write(name.data(), len);
        std::int64_t rows = var.rows(), cols = var.cols();
        f.write(reinterpret_cast<const char*>(&rows), 8);
        f.write(reinterpret_cast<const char*>(&cols), 8);
        Eigen::MatrixXf m32 = var.value().cast<float>();
        f.write(reinterpret_cast<const char*>(m32.data()),
                static_cast<std::streamsize>(sizeof(float)) * m32.size());
    }
}

inline std::map<std::string, Mat> read_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot open checkpoint: " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, "SPOTCKPT", 8) != 0)
        throw ValidationError("bad checkpoint magic in " + path);
    std::uint32_t version = 0, count = 0;
    f.read(reinterpret_cast<char*>(&version), 4);
    f.read(reinterpret_cast<char*>(&count), 4);
    if (version != 1) throw ValidationError("unsupported checkpoint version");
    std::map<std::string, Mat> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t len = 0;
        f.read(reinterpret_cast<char*>(&len), 4);
        std::string name(len, '\0');
        f.read(name.data(), len);
        std::int64_t rows = 0, cols = 0;
        f.read(reinterpret_cast<char*>(&rows), 8);
        f.read(reinterpret_cast<char*>(&cols), 8);
        Eigen::MatrixXf m32(rows, cols);
        f.read(reinterpret_cast<char*>(m32.data()),
               static_cast<std::streamsize>(sizeof(float)) * rows * cols);
        if (!f) throw ValidationError("truncated checkpoint: " + path);
        out[name] = m32.cast<double>();
    }
    return out;
}

/// Load values into matching parameters; names in `skip_prefixes` are left at
/// their current (fresh) initialization.
inline void load_checkpoint(ParamStore& ps, const std::string& path,
                            const std::vector<std::string>& skip_prefixes = {}) {
    auto values = read_checkpoint(path);
    for (auto& [name, var] : ps.params) {
        bool skipped = false;
        for (const auto& pre : skip_prefixes)
            if (name.rfind(pre, 0) == 0) { skipped = true; break; }
        if (skipped) continue;
        auto it = values.find(name);
        if (it == values.end()) continue;  // e.g. stage-specific heads
        if (it->second.rows() != var.rows() || it->second.cols() != var.cols())
            throw ValidationError("checkpoint shape mismatch for " + name);
        var.value_mut() = it->second;
    }
}

}  // namespace spot::nn
