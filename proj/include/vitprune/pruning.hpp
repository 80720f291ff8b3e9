#pragma once

// Patch importance indicators computed from the class token's per-head
// attention, top-k partitioning of the candidates, and the fusion token that
// summarizes the pruned patches.
//
// Indicators (per candidate column j, over heads h = 1..H):
//   mean      (1/H) sum_h a[h][j]
//   variance  (1/H) sum_h (a[h][j] - mean_j)^2
//   medad     median_h | a[h][j] - median_h a[h][j] |
// Medians of an even number of values use the midpoint of the two central
// order statistics.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vitprune/config.hpp"
#include "vitprune/tensor.hpp"

namespace vitprune {

/// Class-token attention restricted to the candidate (non-class) tokens.
/// Row h holds head h; column j refers to token candidate_indices[j].
struct ClassAttention {
    Matrix per_head;
    std::vector<std::size_t> candidate_indices;

    std::size_t heads() const { return per_head.rows; }
    std::size_t candidates() const { return per_head.cols; }
};

/// Candidate columns are tokens 0..N-1 when no explicit indices are given.
inline ClassAttention make_class_attention(Matrix per_head, std::vector<std::size_t> candidate_indices = {}) {
    if (candidate_indices.empty()) {
        candidate_indices.resize(per_head.cols);
        std::iota(candidate_indices.begin(), candidate_indices.end(), std::size_t{0});
    }
    if (candidate_indices.size() != per_head.cols) {
        throw ShapeError("ClassAttention: " + std::to_string(candidate_indices.size()) + " indices for " +
                         std::to_string(per_head.cols) + " columns");
    }
    return ClassAttention{std::move(per_head), std::move(candidate_indices)};
}

struct IndicatorScores {
    std::vector<double> scores;
    IndicatorKind kind = IndicatorKind::none;
    std::vector<std::size_t> candidate_indices;

    std::size_t size() const { return scores.size(); }
};

inline IndicatorScores make_scores(std::vector<double> scores, IndicatorKind kind = IndicatorKind::none) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return IndicatorScores{std::move(scores), kind, std::move(idx)};
}

struct PruneDecision {
    std::vector<std::size_t> kept;   // ascending token indices
    std::vector<std::size_t> pruned; // ascending token indices
    IndicatorScores scores;
    bool fusion_token_built = false;
};

namespace detail {

inline void require_nonempty(const ClassAttention& attn, const char* op) {
    if (attn.heads() == 0 || attn.candidates() == 0) {
        throw std::invalid_argument(std::string(op) + ": empty attention (" + shape_str(attn.per_head) + ")");
    }
}

/// Median of `values`; reorders the buffer.
inline double median_inplace(std::span<double> values) {
    const std::size_t n = values.size();
    const std::size_t mid = n / 2;
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
    const double upper = values[mid];
    if (n % 2 == 1) return upper;
    const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lower + upper);
}

template <typename PerColumn>
IndicatorScores column_scores(const ClassAttention& attn, IndicatorKind kind, PerColumn per_column) {
    const std::size_t heads = attn.heads();
    IndicatorScores out{std::vector<double>(attn.candidates()), kind, attn.candidate_indices};
    std::vector<double> column(heads);
    for (std::size_t j = 0; j < attn.candidates(); ++j) {
        for (std::size_t h = 0; h < heads; ++h) column[h] = attn.per_head(h, j);
        out.scores[j] = per_column(std::span<double>(column));
    }
    return out;
}

} // namespace detail

inline IndicatorScores mean_score(const ClassAttention& attn) {
    detail::require_nonempty(attn, "mean_score");
    return detail::column_scores(attn, IndicatorKind::mean, [](std::span<double> col) {
        return std::accumulate(col.begin(), col.end(), 0.0) / double(col.size());
    });
}

/// Population variance across heads.
inline IndicatorScores variance_score(const ClassAttention& attn) {
    detail::require_nonempty(attn, "variance_score");
    return detail::column_scores(attn, IndicatorKind::variance, [](std::span<double> col) {
        const double n = double(col.size());
        const double mean = std::accumulate(col.begin(), col.end(), 0.0) / n;
        double ss = 0.0;
        for (double v : col) ss += (v - mean) * (v - mean);
        return ss / n;
    });
}

/// Median absolute deviation across heads.
inline IndicatorScores medad_score(const ClassAttention& attn) {
    detail::require_nonempty(attn, "medad_score");
    return detail::column_scores(attn, IndicatorKind::medad, [](std::span<double> col) {
        const double center = detail::median_inplace(col);
        for (auto& v : col) v = std::abs(v - center);
        return detail::median_inplace(col);
    });
}

inline IndicatorScores compute_indicator(IndicatorKind kind, const ClassAttention& attn) {
    switch (kind) {
    case IndicatorKind::mean: return mean_score(attn);
    case IndicatorKind::variance: return variance_score(attn);
    case IndicatorKind::medad: return medad_score(attn);
    case IndicatorKind::none: break;
    }
    detail::require_nonempty(attn, "compute_indicator");
    IndicatorScores out{std::vector<double>(attn.candidates(), 0.0), IndicatorKind::none, attn.candidate_indices};
    return out;
}

/// Keeps the k = max(1, floor(r*N + 0.5)) highest-scoring candidates. Equal
/// scores are resolved in favor of the lower candidate position.
inline PruneDecision select_topk(const IndicatorScores& scores, double keep_rate) {
    const std::size_t n = scores.size();
    if (n == 0) throw std::invalid_argument("select_topk: no candidates");
    if (!(keep_rate > 0.0 && keep_rate <= 1.0)) {
        throw std::invalid_argument("select_topk: keep_rate " + std::to_string(keep_rate) + " outside (0, 1]");
    }
    if (scores.candidate_indices.size() != n) {
        throw ShapeError("select_topk: candidate index count does not match score count");
    }
    const std::size_t k = keep_count(keep_rate, n);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) {
                          if (scores.scores[a] != scores.scores[b]) return scores.scores[a] > scores.scores[b];
                          return a < b;
                      });

    std::vector<bool> keep(n, false);
    for (std::size_t i = 0; i < k; ++i) keep[order[i]] = true;

    PruneDecision decision;
    decision.scores = scores;
    decision.kept.reserve(k);
    decision.pruned.reserve(n - k);
    for (std::size_t j = 0; j < n; ++j) {
        (keep[j] ? decision.kept : decision.pruned).push_back(scores.candidate_indices[j]);
    }
    return decision;
}

/// Softmax of scores / temperature; the convex weights used by fuse().
inline std::vector<double> fusion_weights(std::span<const double> scores, double temperature) {
    if (!(temperature > 0.0)) {
        throw std::invalid_argument("fusion temperature must be positive, got " + std::to_string(temperature));
    }
    std::vector<double> w(scores.size());
    if (scores.empty()) return w;
    const double peak = *std::max_element(scores.begin(), scores.end());
    double sum = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        w[i] = std::exp((scores[i] - peak) / temperature);
        sum += w[i];
    }
    for (auto& v : w) v /= sum;
    return w;
}

/// Temperature-weighted combination of the pruned token rows. Returns nullopt
/// when nothing was pruned.
inline std::optional<std::vector<float>> fuse(const Matrix& pruned_tokens, std::span<const double> pruned_scores,
                                              double temperature) {
    if (pruned_tokens.rows != pruned_scores.size()) {
        throw ShapeError("fuse: " + std::to_string(pruned_scores.size()) + " scores for " +
                         std::to_string(pruned_tokens.rows) + " tokens");
    }
    const auto weights = fusion_weights(pruned_scores, temperature);
    if (pruned_tokens.rows == 0) return std::nullopt;

    std::vector<double> acc(pruned_tokens.cols, 0.0);
    for (std::size_t i = 0; i < pruned_tokens.rows; ++i) {
        auto row = pruned_tokens.row(i);
        for (std::size_t c = 0; c < acc.size(); ++c) acc[c] += weights[i] * double(row[c]);
    }
    return std::vector<float>(acc.begin(), acc.end());
}

} // namespace vitprune
