#pragma once

// DeiT-style Vision Transformer forward pass with staged patch pruning.
//
// Each block is pre-norm: x += MHSA(LN(x)); x += MLP(LN(x)). At a pruning
// block the class token's attention from that block's MHSA scores the
// candidate tokens; after the attention residual the low-scoring candidates
// are dropped (optionally folded into one fusion token appended at the end),
// and the block's MLP runs on the reduced sequence.

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vitprune/config.hpp"
#include "vitprune/image.hpp"
#include "vitprune/pruning.hpp"
#include "vitprune/tensor.hpp"

namespace vitprune {

/// Source of a non-class token: a patch grid cell, or the fusion token.
struct PatchOrigin {
    static constexpr std::size_t kFusion = static_cast<std::size_t>(-1);
    std::size_t row = kFusion;
    std::size_t col = kFusion;

    static PatchOrigin fusion() { return {}; }
    bool is_fusion() const { return row == kFusion; }

    friend bool operator==(const PatchOrigin&, const PatchOrigin&) = default;
};

/// Row 0 is the class token. origins[i] describes token i + 1.
struct TokenSequence {
    Matrix tokens;
    std::vector<PatchOrigin> origins;
    bool has_fusion = false;

    std::size_t size() const { return tokens.rows; }
    std::size_t candidates() const { return tokens.rows - 1; }
};

struct BlockWeights {
    std::vector<float> ln1_gamma, ln1_beta;
    Matrix w_q, w_k, w_v; // D x D'
    std::vector<float> b_q, b_k, b_v;
    Matrix w_o; // D' x D
    std::vector<float> b_o;
    std::vector<float> ln2_gamma, ln2_beta;
    Matrix w_fc1; // D x hidden
    std::vector<float> b_fc1;
    Matrix w_fc2; // hidden x D
    std::vector<float> b_fc2;

    static BlockWeights zeros(const ModelConfig& cfg) {
        const std::size_t d = cfg.embed_dim, dq = cfg.qkv_dim, hidden = cfg.mlp_hidden();
        BlockWeights w;
        w.ln1_gamma.assign(d, 1.0f);
        w.ln1_beta.assign(d, 0.0f);
        w.w_q = w.w_k = w.w_v = Matrix(d, dq);
        w.b_q.assign(dq, 0.0f);
        w.b_k.assign(dq, 0.0f);
        w.b_v.assign(dq, 0.0f);
        w.w_o = Matrix(dq, d);
        w.b_o.assign(d, 0.0f);
        w.ln2_gamma.assign(d, 1.0f);
        w.ln2_beta.assign(d, 0.0f);
        w.w_fc1 = Matrix(d, hidden);
        w.b_fc1.assign(hidden, 0.0f);
        w.w_fc2 = Matrix(hidden, d);
        w.b_fc2.assign(d, 0.0f);
        return w;
    }
};

struct ModelWeights {
    Matrix patch_proj; // (patch_size^2 * 3) x D, rows ordered (channel, y, x)
    std::vector<float> patch_bias;
    std::vector<float> cls_token;
    Matrix pos_embed; // (1 + num_patches) x D
    std::vector<BlockWeights> blocks;
    std::vector<float> norm_gamma, norm_beta;
    Matrix head; // D x num_classes
    std::vector<float> head_bias;
    Normalization normalization;

    /// Correctly shaped weights: unit layernorm scales, everything else zero.
    static ModelWeights zeros(const ModelConfig& cfg) {
        const std::size_t d = cfg.embed_dim;
        ModelWeights w;
        w.patch_proj = Matrix(cfg.patch_dim(), d);
        w.patch_bias.assign(d, 0.0f);
        w.cls_token.assign(d, 0.0f);
        w.pos_embed = Matrix(1 + cfg.num_patches(), d);
        w.blocks.assign(cfg.depth, BlockWeights::zeros(cfg));
        w.norm_gamma.assign(d, 1.0f);
        w.norm_beta.assign(d, 0.0f);
        w.head = Matrix(d, cfg.num_classes);
        w.head_bias.assign(cfg.num_classes, 0.0f);
        return w;
    }
};

/// Visits every tensor as (name, shape, storage). Block names are 1-indexed.
template <typename Weights, typename Visitor>
void for_each_tensor(Weights& w, Visitor&& visit) {
    auto mat = [&](const std::string& name, auto& m) { visit(name, std::vector<std::size_t>{m.rows, m.cols}, m.data); };
    auto vec = [&](const std::string& name, auto& v) { visit(name, std::vector<std::size_t>{v.size()}, v); };
    mat("patch_embed.weight", w.patch_proj);
    vec("patch_embed.bias", w.patch_bias);
    vec("cls_token", w.cls_token);
    mat("pos_embed", w.pos_embed);
    for (std::size_t i = 0; i < w.blocks.size(); ++i) {
        auto& b = w.blocks[i];
        const std::string p = "block" + std::to_string(i + 1) + ".";
        vec(p + "ln1.gamma", b.ln1_gamma);
        vec(p + "ln1.beta", b.ln1_beta);
        mat(p + "W_Q", b.w_q);
        vec(p + "b_Q", b.b_q);
        mat(p + "W_K", b.w_k);
        vec(p + "b_K", b.b_k);
        mat(p + "W_V", b.w_v);
        vec(p + "b_V", b.b_v);
        mat(p + "W_O", b.w_o);
        vec(p + "b_O", b.b_o);
        vec(p + "ln2.gamma", b.ln2_gamma);
        vec(p + "ln2.beta", b.ln2_beta);
        mat(p + "mlp.fc1.weight", b.w_fc1);
        vec(p + "mlp.fc1.bias", b.b_fc1);
        mat(p + "mlp.fc2.weight", b.w_fc2);
        vec(p + "mlp.fc2.bias", b.b_fc2);
    }
    vec("norm.gamma", w.norm_gamma);
    vec("norm.beta", w.norm_beta);
    mat("head.weight", w.head);
    vec("head.bias", w.head_bias);
}

/// Throws ShapeError naming the first tensor whose shape disagrees with cfg.
inline void check_weights(const ModelWeights& w, const ModelConfig& cfg) {
    if (w.blocks.size() != cfg.depth) {
        throw ShapeError("weights have " + std::to_string(w.blocks.size()) + " blocks, config depth is " +
                         std::to_string(cfg.depth));
    }
    const ModelWeights expected = ModelWeights::zeros(cfg);
    std::vector<std::pair<std::string, std::vector<std::size_t>>> want;
    for_each_tensor(expected, [&](const std::string& name, std::vector<std::size_t> shape, const auto&) {
        want.emplace_back(name, std::move(shape));
    });
    std::size_t i = 0;
    for_each_tensor(w, [&](const std::string& name, const std::vector<std::size_t>& shape, const auto& data) {
        const auto& [want_name, want_shape] = want[i++];
        std::size_t count = 1;
        for (auto s : shape) count *= s;
        if (shape != want_shape || data.size() != count) throw ShapeError("tensor " + name + " has wrong shape");
        (void)want_name;
    });
}

/// Patch embedding with class token and position embeddings.
inline TokenSequence embed_patches(const ImageRGB& image, const ModelConfig& cfg, const ModelWeights& w,
                                   OpCounter* counter = nullptr) {
    if (image.width != cfg.image_size || image.height != cfg.image_size) {
        throw ShapeError("embed_patches: image is " + std::to_string(image.width) + "x" +
                         std::to_string(image.height) + ", model expects " + std::to_string(cfg.image_size));
    }
    const std::size_t side = cfg.grid_side();
    const std::size_t n = side * side;
    const std::size_t p = cfg.patch_size;
    if (w.pos_embed.rows != n + 1) {
        throw ShapeError("embed_patches: pos_embed has " + std::to_string(w.pos_embed.rows) + " rows, grid needs " +
                         std::to_string(n + 1));
    }

    Matrix patches(n, cfg.patch_dim());
    TokenSequence seq;
    seq.origins.reserve(n);
    for (std::size_t gy = 0; gy < side; ++gy) {
        for (std::size_t gx = 0; gx < side; ++gx) {
            auto dst = patches.row(gy * side + gx);
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t ky = 0; ky < p; ++ky)
                    for (std::size_t kx = 0; kx < p; ++kx)
                        dst[(c * p + ky) * p + kx] =
                            w.normalization.apply(image.at(gx * cfg.stride + kx, gy * cfg.stride + ky, c), c);
            seq.origins.push_back({gy, gx});
        }
    }
    Matrix projected = matmul(patches, w.patch_proj, counter);
    add_row_bias(projected, w.patch_bias);

    seq.tokens = Matrix(n + 1, cfg.embed_dim);
    std::copy(w.cls_token.begin(), w.cls_token.end(), seq.tokens.row(0).begin());
    std::copy(projected.data.begin(), projected.data.end(), seq.tokens.row(1).begin());
    add_inplace(seq.tokens, w.pos_embed);
    return seq;
}

struct MhsaResult {
    Matrix output;
    ClassAttention class_attention;
    Matrix class_rows; // H x n full softmax rows of the class token, class column included
};

/// Multi-head self-attention over all rows of `x` (already layer-normalized).
inline MhsaResult mhsa_forward(const Matrix& x, const BlockWeights& w, const ModelConfig& cfg,
                               OpCounter* counter = nullptr) {
    if (x.rows == 0) throw ShapeError("mhsa_forward: empty sequence");
    if (x.cols != cfg.embed_dim) throw ShapeError("mhsa_forward: input width " + std::to_string(x.cols));
    const std::size_t n = x.rows;
    const std::size_t heads = cfg.heads;
    const std::size_t hd = cfg.head_dim();
    const float scale = 1.0f / std::sqrt(float(hd));

    Matrix q = matmul(x, w.w_q, counter);
    add_row_bias(q, w.b_q);
    Matrix k = matmul(x, w.w_k, counter);
    add_row_bias(k, w.b_k);
    Matrix v = matmul(x, w.w_v, counter);
    add_row_bias(v, w.b_v);

    Matrix concat(n, cfg.qkv_dim);
    Matrix class_rows(heads, n);
    for (std::size_t h = 0; h < heads; ++h) {
        Matrix logits = matmul_transposed(slice_cols(q, h * hd, hd), slice_cols(k, h * hd, hd), counter);
        scale_inplace(logits, scale);
        Matrix attn = softmax_rows(std::move(logits));
        std::copy_n(attn.row(0).begin(), n, class_rows.row(h).begin());
        write_cols(concat, h * hd, matmul(attn, slice_cols(v, h * hd, hd), counter));
    }

    Matrix out = matmul(concat, w.w_o, counter);
    add_row_bias(out, w.b_o);

    Matrix candidates(heads, n - 1);
    for (std::size_t h = 0; h < heads; ++h)
        std::copy_n(class_rows.row(h).begin() + 1, n - 1, candidates.row(h).begin());
    std::vector<std::size_t> idx(n - 1);
    for (std::size_t j = 0; j < idx.size(); ++j) idx[j] = j + 1;
    return {std::move(out), ClassAttention{std::move(candidates), std::move(idx)}, std::move(class_rows)};
}

/// x + MHSA(LN(x)).
inline MhsaResult attention_residual(const Matrix& x, const BlockWeights& w, const ModelConfig& cfg,
                                     OpCounter* counter = nullptr) {
    MhsaResult r = mhsa_forward(layernorm(x, w.ln1_gamma, w.ln1_beta, cfg.layernorm_eps), w, cfg, counter);
    add_inplace(r.output, x);
    return r;
}

/// x + MLP(LN(x)).
inline Matrix mlp_residual(const Matrix& x, const BlockWeights& w, const ModelConfig& cfg,
                           OpCounter* counter = nullptr) {
    Matrix hidden = matmul(layernorm(x, w.ln2_gamma, w.ln2_beta, cfg.layernorm_eps), w.w_fc1, counter);
    add_row_bias(hidden, w.b_fc1);
    Matrix out = matmul(gelu(std::move(hidden)), w.w_fc2, counter);
    add_row_bias(out, w.b_fc2);
    add_inplace(out, x);
    return out;
}

/// Plain (non-pruning) transformer block.
inline TokenSequence block_forward(TokenSequence seq, const BlockWeights& w, const ModelConfig& cfg,
                                   OpCounter* counter = nullptr) {
    seq.tokens = mlp_residual(attention_residual(seq.tokens, w, cfg, counter).output, w, cfg, counter);
    return seq;
}

/// Keeps the class token and the decision's kept rows in order, then appends
/// the fusion token when fusion is enabled and something was pruned.
inline TokenSequence apply_decision(const TokenSequence& seq, PruneDecision& decision, const ModelConfig& cfg) {
    TokenSequence out;
    const std::size_t width = seq.tokens.cols;
    std::optional<std::vector<float>> fused;
    if (cfg.fusion && !decision.pruned.empty()) {
        Matrix pruned_rows(decision.pruned.size(), width);
        std::vector<double> pruned_scores;
        pruned_scores.reserve(decision.pruned.size());
        std::size_t col = 0;
        for (std::size_t i = 0; i < decision.pruned.size(); ++i) {
            const std::size_t token = decision.pruned[i];
            auto src = seq.tokens.row(token);
            std::copy(src.begin(), src.end(), pruned_rows.row(i).begin());
            while (decision.scores.candidate_indices[col] != token) ++col;
            pruned_scores.push_back(decision.scores.scores[col]);
        }
        fused = fuse(pruned_rows, pruned_scores, cfg.temperature);
    }

    const std::size_t rows = 1 + decision.kept.size() + (fused ? 1 : 0);
    out.tokens = Matrix(rows, width);
    auto cls = seq.tokens.row(0);
    std::copy(cls.begin(), cls.end(), out.tokens.row(0).begin());
    out.origins.reserve(rows - 1);
    for (std::size_t i = 0; i < decision.kept.size(); ++i) {
        const std::size_t token = decision.kept[i];
        if (token == 0 || token >= seq.size()) throw std::logic_error("apply_decision: invalid kept token index");
        auto src = seq.tokens.row(token);
        std::copy(src.begin(), src.end(), out.tokens.row(i + 1).begin());
        out.origins.push_back(seq.origins[token - 1]);
    }
    if (fused) {
        std::copy(fused->begin(), fused->end(), out.tokens.row(rows - 1).begin());
        out.origins.push_back(PatchOrigin::fusion());
        decision.fusion_token_built = true;
    }
    out.has_fusion = fused.has_value() ||
                     std::any_of(out.origins.begin(), out.origins.end(), [](const PatchOrigin& o) { return o.is_fusion(); });
    return out;
}

/// One pruning stage as it happened during a forward pass.
struct StageRecord {
    std::size_t block = 0;               // 1-indexed
    std::vector<PatchOrigin> candidates; // origins of tokens 1..n at decision time
    PruneDecision decision;
    std::vector<PatchOrigin> retained;   // origins of the surviving tokens, fusion included

    std::size_t kept_count() const { return decision.kept.size(); }
};

struct ForwardResult {
    std::vector<float> logits;
    std::vector<StageRecord> stages;
};

/// Prunes `seq` in place using the attention of the block that just ran.
inline StageRecord prune_stage(TokenSequence& seq, const ClassAttention& attn, const ModelConfig& cfg,
                               std::size_t block) {
    if (seq.candidates() == 0) {
        throw std::runtime_error("block " + std::to_string(block) + ": no patch tokens left to prune");
    }
    StageRecord record;
    record.block = block;
    record.candidates = seq.origins;
    const double rate = cfg.pruning_active() ? cfg.keep_rate : 1.0;
    record.decision = select_topk(compute_indicator(cfg.indicator, attn), rate);
    seq = apply_decision(seq, record.decision, cfg);
    record.retained = seq.origins;
    return record;
}

inline std::vector<float> classify_head(const Matrix& tokens, const ModelWeights& w, const ModelConfig& cfg,
                                        OpCounter* counter = nullptr) {
    Matrix cls(1, tokens.cols);
    std::copy_n(tokens.row(0).begin(), tokens.cols, cls.row(0).begin());
    Matrix logits = matmul(layernorm(cls, w.norm_gamma, w.norm_beta, cfg.layernorm_eps), w.head, counter);
    add_row_bias(logits, w.head_bias);
    return std::move(logits.data);
}

/// Full forward pass. With indicator none every stage keeps all candidates.
inline ForwardResult forward(const ImageRGB& image, const ModelWeights& w, const ModelConfig& cfg,
                             OpCounter* counter = nullptr) {
    cfg.validate();
    if (w.blocks.size() != cfg.depth) throw ShapeError("forward: weights/config depth mismatch");
    TokenSequence seq = embed_patches(image, cfg, w, counter);
    ForwardResult result;
    for (std::size_t b = 0; b < cfg.depth; ++b) {
        const auto& bw = w.blocks[b];
        const std::size_t block = b + 1;
        if (!cfg.is_prune_block(block)) {
            seq = block_forward(std::move(seq), bw, cfg, counter);
            continue;
        }
        MhsaResult att = attention_residual(seq.tokens, bw, cfg, counter);
        seq.tokens = std::move(att.output);
        result.stages.push_back(prune_stage(seq, att.class_attention, cfg, block));
        seq.tokens = mlp_residual(seq.tokens, bw, cfg, counter);
    }
    result.logits = classify_head(seq.tokens, w, cfg, counter);
    return result;
}

inline std::size_t argmax(std::span<const float> values) {
    if (values.empty()) throw std::invalid_argument("argmax of empty vector");
    return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

} // namespace vitprune
