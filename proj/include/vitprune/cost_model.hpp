#pragma once

// Analytic multiply-accumulate count for a forward pass. One MAC counts as one
// FLOP. Only matrix products are counted; softmax, layernorm, GELU, bias adds
// and the fusion weighted sum are excluded. This is exactly what OpCounter
// records during an instrumented forward pass.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "vitprune/config.hpp"

namespace vitprune {

struct BlockCost {
    std::size_t block = 0;          // 1-indexed
    std::size_t tokens_in = 0;      // tokens seen by attention
    std::size_t tokens_out = 0;     // tokens seen by the MLP (after pruning)
    std::uint64_t macs = 0;
};

struct FlopsReport {
    std::vector<BlockCost> per_block;
    std::uint64_t embed_macs = 0;
    std::uint64_t head_macs = 0;
    std::uint64_t total_macs = 0;
    double total_gflops = 0.0;
    ModelConfig config;
};

/// Attention part of a block on n tokens: QKV and output projections plus the
/// two n^2 attention products.
inline std::uint64_t attention_macs(std::uint64_t n, const ModelConfig& cfg) {
    const std::uint64_t d = cfg.embed_dim, dq = cfg.qkv_dim;
    return 3 * n * d * dq + 2 * n * n * dq + n * dq * d;
}

inline std::uint64_t mlp_macs(std::uint64_t n, const ModelConfig& cfg) {
    return 2 * n * cfg.embed_dim * cfg.mlp_hidden();
}

inline std::uint64_t block_macs(std::uint64_t tokens, const ModelConfig& cfg) {
    return attention_macs(tokens, cfg) + mlp_macs(tokens, cfg);
}

/// Token count entering each block and leaving each pruning stage.
struct TokenSchedule {
    std::vector<std::size_t> attention_tokens; // per block
    std::vector<std::size_t> mlp_tokens;       // per block
    std::vector<std::size_t> stage_kept;       // kept candidates per pruning stage
};

inline TokenSchedule token_schedule(const ModelConfig& cfg) {
    TokenSchedule s;
    std::size_t candidates = cfg.num_patches();
    for (std::size_t block = 1; block <= cfg.depth; ++block) {
        s.attention_tokens.push_back(1 + candidates);
        if (cfg.is_prune_block(block)) {
            const std::size_t kept = cfg.pruning_active() ? keep_count(cfg.keep_rate, candidates) : candidates;
            const bool fused = cfg.fusion && kept < candidates;
            s.stage_kept.push_back(kept);
            candidates = kept + (fused ? 1 : 0);
        }
        s.mlp_tokens.push_back(1 + candidates);
    }
    return s;
}

inline FlopsReport model_gflops(const ModelConfig& cfg) {
    cfg.validate();
    FlopsReport r;
    r.config = cfg;
    r.embed_macs = std::uint64_t(cfg.num_patches()) * cfg.patch_dim() * cfg.embed_dim;
    r.head_macs = std::uint64_t(cfg.embed_dim) * cfg.num_classes;
    std::uint64_t total = r.embed_macs + r.head_macs;
    const TokenSchedule s = token_schedule(cfg);
    for (std::size_t b = 0; b < cfg.depth; ++b) {
        BlockCost c{b + 1, s.attention_tokens[b], s.mlp_tokens[b], 0};
        c.macs = attention_macs(c.tokens_in, cfg) + mlp_macs(c.tokens_out, cfg);
        total += c.macs;
        r.per_block.push_back(c);
    }
    r.total_macs = total;
    r.total_gflops = double(total) / 1e9;
    return r;
}

} // namespace vitprune
