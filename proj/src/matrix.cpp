#include "espec/matrix.hpp"

#include <cmath>
#include <string>

#include "espec/errors.hpp"

namespace espec {

Matrix::Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0f) {
    if (r < 0 || c < 0) {
        throw ShapeError("matrix dimensions must be non-negative");
    }
}

Matrix::Matrix(int r, int c, std::vector<float> values) : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != static_cast<std::size_t>(r) * c) {
        throw ShapeError("matrix data length does not match rows*cols");
    }
}

void ProbVector::validate() const {
    if (static_cast<int>(probs.size()) != vocab_size) {
        throw CheckError("prob vector length mismatch");
    }
    double sum = 0.0;
    for (float p : probs) {
        if (!(p >= 0.0f)) {
            throw CheckError("prob vector has a negative or NaN entry");
        }
        sum += p;
    }
    if (sum < 1.0 - 1e-4 || sum > 1.0 + 1e-4) {
        throw CheckError("prob vector sums to " + std::to_string(sum));
    }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) {
        throw ShapeError("matmul shape mismatch: " + std::to_string(a.rows) + "x" +
                         std::to_string(a.cols) + " * " + std::to_string(b.rows) + "x" +
                         std::to_string(b.cols));
    }
    Matrix out(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        const float* arow = a.data.data() + static_cast<std::size_t>(i) * a.cols;
        float* orow = out.data.data() + static_cast<std::size_t>(i) * b.cols;
        for (int k = 0; k < a.cols; ++k) {
            const float aik = arow[k];
            const float* brow = b.data.data() + static_cast<std::size_t>(k) * b.cols;
            for (int j = 0; j < b.cols; ++j) {
                orow[j] += aik * brow[j];
            }
        }
    }
    return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols) {
        throw ShapeError("matmul_nt inner dimension mismatch");
    }
    Matrix out(a.rows, b.rows);
    for (int i = 0; i < a.rows; ++i) {
        const float* arow = a.data.data() + static_cast<std::size_t>(i) * a.cols;
        for (int j = 0; j < b.rows; ++j) {
            const float* brow = b.data.data() + static_cast<std::size_t>(j) * b.cols;
            float acc = 0.0f;
            for (int k = 0; k < a.cols; ++k) {
                acc += arow[k] * brow[k];
            }
            out.at(i, j) = acc;
        }
    }
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols, a.rows);
    for (int i = 0; i < a.rows; ++i) {
        for (int j = 0; j < a.cols; ++j) {
            out.at(j, i) = a.at(i, j);
        }
    }
    return out;
}

ProbVector softmax_temp(std::span<const float> logits, float temperature) {
    if (logits.empty()) {
        throw ShapeError("softmax over an empty row");
    }
    if (!all_finite(logits)) {
        throw DomainError("softmax input contains a non-finite logit");
    }
    if (temperature < 0.0f) {
        throw ConfigError("temperature must be >= 0");
    }

    ProbVector out(static_cast<int>(logits.size()));
    if (temperature == 0.0f) {
        out[argmax(logits)] = 1.0f;
        return out;
    }

    float max_logit = logits[0];
    for (float v : logits) max_logit = std::max(max_logit, v);

    float sum = 0.0f;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const float e = std::exp((logits[i] - max_logit) / temperature);
        out.probs[i] = e;
        sum += e;
    }
    for (float& p : out.probs) p /= sum;
    return out;
}

Matrix rms_norm(const Matrix& h, const Matrix& gain, float eps) {
    if (gain.rows != 1 || gain.cols != h.cols) {
        throw ShapeError("rms_norm gain must be 1 x cols");
    }
    if (eps <= 0.0f) {
        throw ConfigError("rms_norm eps must be positive");
    }
    Matrix out(h.rows, h.cols);
    for (int i = 0; i < h.rows; ++i) {
        const auto row = h.row(i);
        float mean_sq = 0.0f;
        for (float v : row) mean_sq += v * v;
        mean_sq /= static_cast<float>(h.cols);
        const float scale = 1.0f / std::sqrt(mean_sq + eps);
        for (int j = 0; j < h.cols; ++j) {
            out.at(i, j) = row[j] * scale * gain.at(0, j);
        }
    }
    return out;
}

double cosine_sim(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size() || a.empty()) {
        throw ShapeError("cosine_sim requires equal non-empty widths");
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (na == 0.0 && nb == 0.0) {
        throw DomainError("cosine similarity of two zero vectors is undefined");
    }
    if (na == 0.0 || nb == 0.0) {
        return 0.0;
    }
    const double cos = dot / std::sqrt(na * nb);
    return std::min(1.0, std::max(-1.0, cos));
}

Matrix apply_rope(Matrix qk, std::span<const int> positions, int head_dim) {
    if (head_dim <= 0 || head_dim % 2 != 0) {
        throw ConfigError("rope head_dim must be positive and even");
    }
    if (qk.cols % head_dim != 0) {
        throw ShapeError("rope: cols must be a multiple of head_dim");
    }
    if (static_cast<int>(positions.size()) != qk.rows) {
        throw ShapeError("rope: one position per row required");
    }

    const int n_heads = qk.cols / head_dim;
    const int n_pairs = head_dim / 2;
    std::vector<double> inv_freq(static_cast<std::size_t>(n_pairs));
    for (int p = 0; p < n_pairs; ++p) {
        inv_freq[p] = std::pow(10000.0, -2.0 * p / head_dim);
    }

    for (int r = 0; r < qk.rows; ++r) {
        const double pos = positions[r];
        auto row = qk.row(r);
        for (int h = 0; h < n_heads; ++h) {
            float* seg = row.data() + static_cast<std::size_t>(h) * head_dim;
            for (int p = 0; p < n_pairs; ++p) {
                const double theta = pos * inv_freq[p];
                const float c = static_cast<float>(std::cos(theta));
                const float s = static_cast<float>(std::sin(theta));
                const float x0 = seg[2 * p];
                const float x1 = seg[2 * p + 1];
                seg[2 * p] = x0 * c - x1 * s;
                seg[2 * p + 1] = x0 * s + x1 * c;
            }
        }
    }
    return qk;
}

int argmax(std::span<const float> values) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(values.size()); ++i) {
        if (values[i] > values[best]) best = i;
    }
    return best;
}

bool all_finite(std::span<const float> values) {
    for (float v : values) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

}  // namespace espec
