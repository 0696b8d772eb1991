#pragma once

// Snippet embedding: multi-head self-attention over the feature sequence,
// deliberately without positional encoding so the embedding is permutation
// equivariant over the time axis, plus the two 1-D conv projections used by
// boundary refinement.

#include "spot/nn.hpp"

namespace spot {

struct EncoderConfig {
    int input_dim = 64;  // 2d
    int embed_dim = 32;  // C
    int heads = 4;
    int layers = 3;
    int ff_hidden = 64;
    int proj_m_dim = 32;  // C_m, kernel 3
    int proj_p_dim = 32;  // C_p, kernel 1
    double dropout = 0.1;

    void validate() const {
        if (embed_dim < 1 || heads < 1 || layers < 1 || proj_m_dim < 1 ||
            proj_p_dim < 1)
            throw ConfigError("encoder dims must be >= 1");
        if (embed_dim % heads != 0)
            throw ConfigError("embed_dim must be divisible by heads");
    }
};

struct SnippetEncoder {
    EncoderConfig cfg;
    nn::Conv1d input_proj;
    std::vector<nn::TransformerBlock> blocks;
    nn::Conv1d proj_m, proj_p;

    SnippetEncoder() = default;
    SnippetEncoder(nn::ParamStore& ps, const EncoderConfig& c, Rng& rng)
        : cfg(c),
          input_proj(ps, "encoder.input", c.input_dim, c.embed_dim, 1, rng),
          proj_m(ps, "encoder.proj_m", c.embed_dim, c.proj_m_dim, 3, rng),
          proj_p(ps, "encoder.proj_p", c.embed_dim, c.proj_p_dim, 1, rng) {
        cfg.validate();
        for (int l = 0; l < c.layers; ++l)
            blocks.emplace_back(ps, "encoder.block" + std::to_string(l),
                                c.embed_dim, c.heads, c.ff_hidden, rng);
    }

    /// F (2d, T) -> E (C, T).
    ag::Var embed(const ag::Var& features, const nn::Context& ctx) const {
        if (!all_finite(features.value()))
            throw NumericError("non-finite values in encoder input");
        ag::Var h = input_proj.forward(features);
        for (const auto& b : blocks) h = b.forward(h, ctx);
        return h;
    }

    /// E -> (E_m, E_p).
    std::pair<ag::Var, ag::Var> project(const ag::Var& embedding) const {
        return {proj_m.forward(embedding), proj_p.forward(embedding)};
    }
};

}  // namespace spot
