#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "vitprune/tensor.hpp"

using namespace vitprune;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937& rng, float lo = -1.0f, float hi = 1.0f) {
    std::uniform_real_distribution<float> d(lo, hi);
    Matrix m(r, c);
    for (auto& v : m.data) v = d(rng);
    return m;
}

// Triple-loop oracle accumulated in double.
Matrix naive_matmul(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < b.cols; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) acc += double(a(i, k)) * double(b(k, j));
            out(i, j) = float(acc);
        }
    return out;
}

} // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
    std::mt19937 rng(1);
    const Matrix m = random_matrix(3, 3, rng);
    EXPECT_EQ(matmul(Matrix::identity(3), m), m);
}

TEST(Matmul, HandComputedProduct) {
    const Matrix a(2, 2, {1, 2, 3, 4});
    const Matrix b(2, 1, {0, 1});
    const Matrix c = matmul(a, b);
    ASSERT_EQ(c.rows, 2u);
    ASSERT_EQ(c.cols, 1u);
    EXPECT_FLOAT_EQ(c(0, 0), 2.0f);
    EXPECT_FLOAT_EQ(c(1, 0), 4.0f);
}

TEST(Matmul, RejectsMismatchedShapes) {
    EXPECT_THROW(matmul(Matrix(2, 3), Matrix(4, 5)), ShapeError);
    EXPECT_THROW(matmul_transposed(Matrix(2, 3), Matrix(4, 5)), ShapeError);
}

TEST(Matmul, AgreesWithNaiveOracle) {
    std::mt19937 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix a = random_matrix(16, 16, rng);
        const Matrix b = random_matrix(16, 16, rng);
        const Matrix got = matmul(a, b);
        const Matrix want = naive_matmul(a, b);
        for (std::size_t i = 0; i < got.size(); ++i) {
            EXPECT_NEAR(got.data[i], want.data[i], 1e-5 * std::max(1.0f, std::abs(want.data[i])));
        }
    }
}

TEST(Matmul, TransposedVariantMatchesExplicitTranspose) {
    std::mt19937 rng(3);
    const Matrix a = random_matrix(5, 7, rng);
    const Matrix b = random_matrix(4, 7, rng);
    Matrix bt(7, 4);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 7; ++j) bt(j, i) = b(i, j);
    const Matrix got = matmul_transposed(a, b);
    const Matrix want = naive_matmul(a, bt);
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got.data[i], want.data[i], 1e-5);
}

TEST(OpCounter, CountsExactMacs) {
    OpCounter counter;
    matmul(Matrix(3, 5), Matrix(5, 7), &counter);
    EXPECT_EQ(counter.macs, 3u * 5u * 7u);
    matmul_transposed(Matrix(4, 6), Matrix(9, 6), &counter);
    EXPECT_EQ(counter.macs, 105u + 4u * 6u * 9u);
    counter.enabled = false;
    matmul(Matrix(3, 5), Matrix(5, 7), &counter);
    EXPECT_EQ(counter.macs, 105u + 216u);
}

TEST(Softmax, UniformRow) {
    const Matrix s = softmax_rows(Matrix(1, 4, 0.0f));
    for (float v : s.data) EXPECT_FLOAT_EQ(v, 0.25f);
}

TEST(Softmax, ShiftInvariant) {
    const Matrix a = softmax_rows(Matrix(1, 3, {0.0f, 0.5f, -1.25f}));
    const Matrix b = softmax_rows(Matrix(1, 3, {7.0f, 7.5f, 5.75f}));
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(a.data[i], b.data[i], 1e-6);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
    const Matrix s = softmax_rows(Matrix(1, 2, {1000.0f, 0.0f}));
    EXPECT_NEAR(s(0, 0), 1.0f, 1e-6);
    EXPECT_NEAR(s(0, 1), 0.0f, 1e-6);
    EXPECT_TRUE(s.all_finite());
}

TEST(Softmax, RandomRowsSumToOne) {
    std::mt19937 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const Matrix s = softmax_rows(random_matrix(8, 33, rng, -30.0f, 30.0f));
        for (std::size_t r = 0; r < s.rows; ++r) {
            double sum = 0.0;
            for (float v : s.row(r)) {
                EXPECT_GE(v, 0.0f);
                sum += v;
            }
            EXPECT_NEAR(sum, 1.0, 1e-5);
        }
    }
}

TEST(LayerNorm, ConstantRowMapsToZero) {
    const std::vector<float> gamma(4, 1.0f), beta(4, 0.0f);
    const Matrix out = layernorm(Matrix(1, 4, 3.5f), gamma, beta);
    for (float v : out.data) EXPECT_FLOAT_EQ(v, 0.0f);
}

TEST(LayerNorm, HandComputedTwoElementRow) {
    const std::vector<float> gamma(2, 1.0f), beta(2, 0.0f);
    const Matrix out = layernorm(Matrix(1, 2, {1.0f, 3.0f}), gamma, beta, 0.0f);
    EXPECT_FLOAT_EQ(out(0, 0), -1.0f);
    EXPECT_FLOAT_EQ(out(0, 1), 1.0f);
}

TEST(LayerNorm, ZeroGammaYieldsBeta) {
    std::mt19937 rng(5);
    const std::vector<float> gamma(6, 0.0f), beta{0.1f, -2.0f, 3.0f, 0.0f, 5.5f, -0.25f};
    const Matrix out = layernorm(random_matrix(3, 6, rng), gamma, beta);
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 6; ++c) EXPECT_FLOAT_EQ(out(r, c), beta[c]);
}

TEST(LayerNorm, RejectsLengthMismatch) {
    const std::vector<float> gamma(3, 1.0f), beta(4, 0.0f);
    EXPECT_THROW(layernorm(Matrix(1, 4), gamma, beta), ShapeError);
}

TEST(Gelu, ZeroAndAsymptotes) {
    EXPECT_EQ(gelu(0.0f), 0.0f);
    EXPECT_NEAR(gelu(10.0f), 10.0f, 1e-4);
    EXPECT_NEAR(gelu(-10.0f), 0.0f, 1e-4);
}

TEST(Gelu, MonotoneOnGrid) {
    // tanh-approximate GELU has its minimum near -0.75; monotone above it
    float prev = gelu(-0.7f);
    for (float x = -0.69f; x < 8.0f; x += 0.01f) {
        const float y = gelu(x);
        EXPECT_GE(y, prev);
        prev = y;
    }
}
