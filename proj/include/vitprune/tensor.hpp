#pragma once

// Dense row-major float matrices and the handful of kernels the ViT forward
// pass needs. Every matmul can optionally report its multiply-accumulate
// count to an OpCounter, which is how the analytic cost model is checked.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vitprune {

class ShapeError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, float fill = 0.0f) : rows(r), cols(c), data(r * c, fill) {}
    Matrix(std::size_t r, std::size_t c, std::vector<float> values) : rows(r), cols(c), data(std::move(values)) {
        if (data.size() != rows * cols) {
            throw ShapeError("Matrix: " + std::to_string(data.size()) + " values for shape " +
                             std::to_string(rows) + "x" + std::to_string(cols));
        }
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0f;
        return m;
    }

    static Matrix row_vector(std::span<const float> values) {
        return Matrix(1, values.size(), std::vector<float>(values.begin(), values.end()));
    }

    float& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    float operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<float> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const float> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }

    bool all_finite() const {
        return std::all_of(data.begin(), data.end(), [](float v) { return std::isfinite(v); });
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;
};

inline std::string shape_str(const Matrix& m) {
    return std::to_string(m.rows) + "x" + std::to_string(m.cols);
}

// Counts matmul multiply-accumulates. One counter belongs to one forward pass.
struct OpCounter {
    std::uint64_t macs = 0;
    bool enabled = true;

    void add(std::uint64_t n) {
        if (enabled) macs += n;
    }
};

inline void count_macs(OpCounter* counter, std::uint64_t n) {
    if (counter != nullptr) counter->add(n);
}

/// a (m x k) times b (k x n).
inline Matrix matmul(const Matrix& a, const Matrix& b, OpCounter* counter = nullptr) {
    if (a.cols != b.rows) {
        throw ShapeError("matmul: " + shape_str(a) + " x " + shape_str(b));
    }
    Matrix out(a.rows, b.cols);
    const std::size_t n = b.cols;
    for (std::size_t i = 0; i < a.rows; ++i) {
        float* dst = out.data.data() + i * n;
        const float* arow = a.data.data() + i * a.cols;
        for (std::size_t k = 0; k < a.cols; ++k) {
            const float s = arow[k];
            const float* brow = b.data.data() + k * n;
            for (std::size_t j = 0; j < n; ++j) dst[j] += s * brow[j];
        }
    }
    count_macs(counter, static_cast<std::uint64_t>(a.rows) * a.cols * b.cols);
    return out;
}

/// a (m x k) times transpose(b) where b is (n x k). Used for query-key logits.
inline Matrix matmul_transposed(const Matrix& a, const Matrix& b, OpCounter* counter = nullptr) {
    if (a.cols != b.cols) {
        throw ShapeError("matmul_transposed: " + shape_str(a) + " x " + shape_str(b) + "^T");
    }
    Matrix out(a.rows, b.rows);
    const std::size_t k_dim = a.cols;
    for (std::size_t i = 0; i < a.rows; ++i) {
        const float* arow = a.data.data() + i * k_dim;
        for (std::size_t j = 0; j < b.rows; ++j) {
            const float* brow = b.data.data() + j * k_dim;
            float acc = 0.0f;
            for (std::size_t k = 0; k < k_dim; ++k) acc += arow[k] * brow[k];
            out(i, j) = acc;
        }
    }
    count_macs(counter, static_cast<std::uint64_t>(a.rows) * a.cols * b.rows);
    return out;
}

/// Adds `bias` to every row in place.
inline void add_row_bias(Matrix& m, std::span<const float> bias) {
    if (bias.size() != m.cols) {
        throw ShapeError("add_row_bias: bias length " + std::to_string(bias.size()) + " for " + shape_str(m));
    }
    for (std::size_t r = 0; r < m.rows; ++r) {
        auto row = m.row(r);
        for (std::size_t c = 0; c < m.cols; ++c) row[c] += bias[c];
    }
}

inline void add_inplace(Matrix& dst, const Matrix& src) {
    if (dst.rows != src.rows || dst.cols != src.cols) {
        throw ShapeError("add_inplace: " + shape_str(dst) + " + " + shape_str(src));
    }
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

inline void scale_inplace(Matrix& m, float s) {
    for (auto& v : m.data) v *= s;
}

/// Columns [first, first + count) as a new matrix.
inline Matrix slice_cols(const Matrix& m, std::size_t first, std::size_t count) {
    if (first + count > m.cols) {
        throw ShapeError("slice_cols: [" + std::to_string(first) + ", " + std::to_string(first + count) +
                         ") out of " + shape_str(m));
    }
    Matrix out(m.rows, count);
    for (std::size_t r = 0; r < m.rows; ++r) {
        std::copy_n(m.data.begin() + static_cast<std::ptrdiff_t>(r * m.cols + first), count,
                    out.data.begin() + static_cast<std::ptrdiff_t>(r * count));
    }
    return out;
}

inline void write_cols(Matrix& dst, std::size_t first, const Matrix& src) {
    if (src.rows != dst.rows || first + src.cols > dst.cols) {
        throw ShapeError("write_cols: " + shape_str(src) + " into " + shape_str(dst));
    }
    for (std::size_t r = 0; r < src.rows; ++r) {
        std::copy_n(src.data.begin() + static_cast<std::ptrdiff_t>(r * src.cols), src.cols,
                    dst.data.begin() + static_cast<std::ptrdiff_t>(r * dst.cols + first));
    }
}

inline void softmax_inplace(std::span<float> row) {
    if (row.empty()) return;
    const float peak = *std::max_element(row.begin(), row.end());
    float sum = 0.0f;
    for (auto& v : row) {
        v = std::exp(v - peak);
        sum += v;
    }
    const float inv = 1.0f / sum;
    for (auto& v : row) v *= inv;
}

inline Matrix softmax_rows(Matrix m) {
    for (std::size_t r = 0; r < m.rows; ++r) softmax_inplace(m.row(r));
    return m;
}

inline constexpr float kDefaultLayerNormEps = 1e-6f;

inline Matrix layernorm(const Matrix& m, std::span<const float> gamma, std::span<const float> beta,
                        float eps = kDefaultLayerNormEps) {
    if (gamma.size() != m.cols || beta.size() != m.cols) {
        throw ShapeError("layernorm: gamma/beta lengths " + std::to_string(gamma.size()) + "/" +
                         std::to_string(beta.size()) + " for " + shape_str(m));
    }
    Matrix out(m.rows, m.cols);
    const auto n = static_cast<float>(m.cols);
    for (std::size_t r = 0; r < m.rows; ++r) {
        auto in = m.row(r);
        auto dst = out.row(r);
        float mean = 0.0f;
        for (float v : in) mean += v;
        mean /= n;
        float var = 0.0f;
        for (float v : in) var += (v - mean) * (v - mean);
        var /= n;
        const float denom = std::sqrt(var + eps);
        // eps = 0 on a constant row: the normalized value is defined as 0
        const float inv = denom > 0.0f ? 1.0f / denom : 0.0f;
        for (std::size_t c = 0; c < m.cols; ++c) dst[c] = (in[c] - mean) * inv * gamma[c] + beta[c];
    }
    return out;
}

inline float gelu(float x) {
    constexpr float kSqrt2OverPi = 0.7978845608028654f;
    constexpr float kCoeff = 0.044715f;
    return 0.5f * x * (1.0f + std::tanh(kSqrt2OverPi * (x + kCoeff * x * x * x)));
}

inline Matrix gelu(Matrix m) {
    for (auto& v : m.data) v = gelu(v);
    return m;
}

} // namespace vitprune
