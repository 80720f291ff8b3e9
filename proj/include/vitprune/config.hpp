#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace vitprune {

class ConfigError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

enum class IndicatorKind { none, mean, variance, medad };

inline std::string_view to_string(IndicatorKind kind) {
    switch (kind) {
    case IndicatorKind::none: return "none";
    case IndicatorKind::mean: return "mean";
    case IndicatorKind::variance: return "variance";
    case IndicatorKind::medad: return "medad";
    }
    return "none";
}

inline std::optional<IndicatorKind> parse_indicator(std::string_view name) {
    if (name == "none") return IndicatorKind::none;
    if (name == "mean") return IndicatorKind::mean;
    if (name == "variance") return IndicatorKind::variance;
    if (name == "medad") return IndicatorKind::medad;
    return std::nullopt;
}

/// Architecture plus pruning parameters. The defaults describe DeiT-S at 224x224
/// with attention-variance pruning at blocks 4, 7 and 10 (1-indexed).
struct ModelConfig {
    std::size_t image_size = 224;
    std::size_t patch_size = 16;
    std::size_t stride = 16;
    std::size_t embed_dim = 384;
    std::size_t qkv_dim = 384;
    std::size_t heads = 6;
    std::size_t depth = 12;
    double mlp_ratio = 4.0;
    std::size_t num_classes = 1000;
    float layernorm_eps = 1e-6f;

    std::vector<std::size_t> prune_blocks{4, 7, 10};
    double keep_rate = 0.7;
    IndicatorKind indicator = IndicatorKind::variance;
    bool fusion = false;
    double temperature = 0.25;

    std::size_t grid_side() const { return (image_size - patch_size) / stride + 1; }
    std::size_t num_patches() const { return grid_side() * grid_side(); }
    std::size_t head_dim() const { return qkv_dim / heads; }
    std::size_t mlp_hidden() const { return static_cast<std::size_t>(std::lround(mlp_ratio * double(embed_dim))); }
    std::size_t patch_dim() const { return patch_size * patch_size * 3; }

    bool pruning_active() const { return indicator != IndicatorKind::none; }

    bool is_prune_block(std::size_t block_1based) const {
        for (auto b : prune_blocks)
            if (b == block_1based) return true;
        return false;
    }

    /// Overlapping patch embedding: stride is three quarters of the patch size.
    void set_overlap(bool on) { stride = on ? patch_size * 3 / 4 : patch_size; }
    bool overlap() const { return stride < patch_size; }

    void validate() const {
        auto fail = [](const std::string& msg) { throw ConfigError("invalid config: " + msg); };
        if (image_size == 0 || patch_size == 0 || stride == 0) fail("image_size, patch_size and stride must be positive");
        if (patch_size > image_size) fail("patch_size exceeds image_size");
        if (stride > patch_size) fail("stride exceeds patch_size");
        if (embed_dim == 0 || qkv_dim == 0 || heads == 0) fail("embed_dim, qkv_dim and heads must be positive");
        if (embed_dim % heads != 0) fail("embed_dim not divisible by heads");
        if (qkv_dim % heads != 0) fail("qkv_dim not divisible by heads");
        if (depth == 0) fail("depth must be positive");
        if (!(mlp_ratio > 0.0) || mlp_hidden() == 0) fail("mlp_ratio must be positive");
        if (num_classes == 0) fail("num_classes must be positive");
        if (!(layernorm_eps >= 0.0f)) fail("layernorm_eps must be non-negative");
        for (std::size_t i = 0; i < prune_blocks.size(); ++i) {
            if (prune_blocks[i] < 1 || prune_blocks[i] > depth) {
                fail("prune block " + std::to_string(prune_blocks[i]) + " outside [1, " + std::to_string(depth) + "]");
            }
            if (i > 0 && prune_blocks[i] <= prune_blocks[i - 1]) fail("prune blocks must be strictly increasing");
        }
        if (!(keep_rate > 0.0 && keep_rate <= 1.0)) fail("keep_rate must lie in (0, 1]");
        if (!(temperature > 0.0 && temperature <= 1.0)) fail("temperature must lie in (0, 1]");
    }
};

/// Number of candidates retained at a pruning stage: max(1, floor(r*N + 0.5)).
inline std::size_t keep_count(double keep_rate, std::size_t candidates) {
    const auto k = static_cast<std::size_t>(std::floor(keep_rate * double(candidates) + 0.5));
    return std::max<std::size_t>(1, std::min(k, candidates));
}

} // namespace vitprune
