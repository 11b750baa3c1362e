#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace espec {

// Dense row-major float32 matrix. All kernels accumulate in float with a
// fixed summation order, so results are bit-stable across runs and across
// worker schedules.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<float> data;

    Matrix() = default;
    Matrix(int r, int c);
    Matrix(int r, int c, std::vector<float> values);

    float& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    float at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

    std::span<float> row(int r) {
        return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
    }
    std::span<const float> row(int r) const {
        return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
    }

    bool same_shape(const Matrix& other) const {
        return rows == other.rows && cols == other.cols;
    }
};

// Discrete distribution over the vocabulary; entries are >= 0 and sum to 1
// within 1e-4.
struct ProbVector {
    int vocab_size = 0;
    std::vector<float> probs;

    ProbVector() = default;
    explicit ProbVector(int vocab) : vocab_size(vocab), probs(static_cast<std::size_t>(vocab), 0.0f) {}

    float operator[](int token) const { return probs[static_cast<std::size_t>(token)]; }
    float& operator[](int token) { return probs[static_cast<std::size_t>(token)]; }

    // Throws CheckError when the invariants are violated.
    void validate() const;
};

Matrix matmul(const Matrix& a, const Matrix& b);

// a * b^T without materializing the transpose; summation order matches
// matmul(a, transpose(b)) exactly.
Matrix matmul_nt(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& a);

// Softmax with temperature over one logit row. temperature == 0 is the
// greedy limit: a one-hot at the argmax, ties broken toward the lowest
// index.
ProbVector softmax_temp(std::span<const float> logits, float temperature);

// h / sqrt(mean(h^2) + eps) * gain, applied per row. gain is 1 x cols.
Matrix rms_norm(const Matrix& h, const Matrix& gain, float eps);

// Cosine similarity of two equal-length vectors; accumulates in double and
// clamps to [-1, 1]. Throws DomainError when both inputs are zero.
double cosine_sim(std::span<const float> a, std::span<const float> b);

// Rotary position encoding applied in place per head segment of head_dim
// columns; pairs (2i, 2i+1) are rotated by position * 10000^(-2i/head_dim).
// positions.size() must equal qk.rows. Position 0 is the identity.
Matrix apply_rope(Matrix qk, std::span<const int> positions, int head_dim);

int argmax(std::span<const float> values);

bool all_finite(std::span<const float> values);

}  // namespace espec
