#include "espec/model.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "espec/errors.hpp"
#include "espec/rng.hpp"

namespace espec {

void ModelConfig::validate() const {
    if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
    if (n_layers < 2) throw ConfigError("n_layers must be >= 2");
    if (n_heads < 1 || d_head < 2 || d_head % 2 != 0) {
        throw ConfigError("need n_heads >= 1 and an even d_head >= 2");
    }
    if (d_model != n_heads * d_head) {
        throw ConfigError("d_model must equal n_heads * d_head");
    }
    if (d_mlp < 1) throw ConfigError("d_mlp must be >= 1");
    if (max_positions < 2) throw ConfigError("max_positions must be >= 2");
    if (!(norm_eps > 0.0f)) throw ConfigError("norm_eps must be positive");
}

namespace {

void fill_normal(Matrix& m, Xoshiro256ss& rng, float std_dev) {
    for (float& v : m.data) v = rng.normal_float() * std_dev;
}

void fill_ones(Matrix& m) {
    for (float& v : m.data) v = 1.0f;
}

}  // namespace

Model init_model(const ModelConfig& config) {
    config.validate();

    Model model;
    model.config = config;
    auto& w = model.weights;

    Xoshiro256ss rng(config.seed);
    const float proj_std = 1.0f / std::sqrt(static_cast<float>(config.d_model));
    // Residual-writing projections are damped by sqrt(2*n_layers) so the
    // stream grows like a trained model's instead of blowing up.
    const float resid_scale = 1.0f / std::sqrt(2.0f * static_cast<float>(config.n_layers));
    const float down_std = resid_scale / std::sqrt(static_cast<float>(config.d_mlp));
    // Embeddings are deliberately warm: with a tied head this puts the logit
    // scale near 3, giving concentrated output distributions instead of a
    // flat one over the byte vocabulary.
    const float embed_std = 3.0f / std::sqrt(static_cast<float>(config.d_model));

    w.embedding = Matrix(config.vocab_size, config.d_model);
    fill_normal(w.embedding, rng, embed_std);
    w.final_norm_gain = Matrix(1, config.d_model);
    fill_ones(w.final_norm_gain);

    w.layers.resize(static_cast<std::size_t>(config.n_layers));
    for (auto& layer : w.layers) {
        layer.wq = Matrix(config.d_model, config.d_model);
        layer.wk = Matrix(config.d_model, config.d_model);
        layer.wv = Matrix(config.d_model, config.d_model);
        layer.wo = Matrix(config.d_model, config.d_model);
        layer.w_gate = Matrix(config.d_model, config.d_mlp);
        layer.w_up = Matrix(config.d_model, config.d_mlp);
        layer.w_down = Matrix(config.d_mlp, config.d_model);
        layer.attn_norm_gain = Matrix(1, config.d_model);
        layer.mlp_norm_gain = Matrix(1, config.d_model);

        fill_normal(layer.wq, rng, proj_std);
        fill_normal(layer.wk, rng, proj_std);
        fill_normal(layer.wv, rng, proj_std);
        fill_normal(layer.wo, rng, proj_std * resid_scale);
        fill_normal(layer.w_gate, rng, proj_std);
        fill_normal(layer.w_up, rng, proj_std);
        fill_normal(layer.w_down, rng, down_std);
        fill_ones(layer.attn_norm_gain);
        fill_ones(layer.mlp_norm_gain);
    }
    return model;
}

Model make_truncated_draft(const Model& base, int keep_layers) {
    if (keep_layers < 2 || keep_layers >= base.config.n_layers) {
        throw ConfigError("keep_layers must satisfy 2 <= keep_layers < base layers, got " +
                          std::to_string(keep_layers));
    }
    Model draft;
    draft.config = base.config;
    draft.config.n_layers = keep_layers;
    draft.weights.embedding = base.weights.embedding;
    draft.weights.final_norm_gain = base.weights.final_norm_gain;
    draft.weights.layers.assign(base.weights.layers.begin(),
                                base.weights.layers.begin() + keep_layers);
    return draft;
}

Matrix embed(const Model& model, std::span<const Token> tokens) {
    Matrix out(static_cast<int>(tokens.size()), model.config.d_model);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] < 0 || tokens[i] >= model.config.vocab_size) {
            throw ConfigError("token " + std::to_string(tokens[i]) + " outside vocabulary");
        }
        const auto src = model.weights.embedding.row(tokens[i]);
        auto dst = out.row(static_cast<int>(i));
        for (int j = 0; j < model.config.d_model; ++j) dst[j] = src[j];
    }
    return out;
}

Matrix attention_forward(const Model& model, int layer, const Matrix& h_norm, KvCache& cache,
                         const ForwardBatch& batch, AttnCapture* capture) {
    const auto& cfg = model.config;
    const auto& lw = model.weights.layers[static_cast<std::size_t>(layer)];
    const int n_new = h_norm.rows;
    if (static_cast<int>(batch.flat_rows.size()) != n_new ||
        static_cast<int>(batch.positions.size()) != n_new) {
        throw ShapeError("forward batch row count mismatch");
    }
    for (int pos : batch.positions) {
        if (pos >= cfg.max_positions) {
            throw ConfigError("position " + std::to_string(pos) + " exceeds max_positions " +
                              std::to_string(cfg.max_positions));
        }
    }

    Matrix q = apply_rope(matmul(h_norm, lw.wq), batch.positions, cfg.d_head);
    Matrix k = apply_rope(matmul(h_norm, lw.wk), batch.positions, cfg.d_head);
    Matrix v = matmul(h_norm, lw.wv);

    if (batch.calibrate_writes) {
        cache.calibrate_overwrite(layer, batch.flat_rows, k, v);
    } else {
        cache.write_rows(layer, batch.flat_rows, k, v);
    }

    const TreeMask& mask = *batch.mask;
    const int total = cache.total_rows();
    const float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(cfg.d_head));

    Matrix mixed(n_new, cfg.d_model);
    std::vector<float> scores(static_cast<std::size_t>(total));
    for (int i = 0; i < n_new; ++i) {
        const int query_row = batch.flat_rows[i];
        for (int head = 0; head < cfg.n_heads; ++head) {
            const int off = head * cfg.d_head;
            const float* qvec = q.row(i).data() + off;

            float max_score = -std::numeric_limits<float>::infinity();
            for (int j = 0; j < total; ++j) {
                if (!mask.allowed(query_row, j)) {
                    scores[static_cast<std::size_t>(j)] =
                        -std::numeric_limits<float>::infinity();
                    continue;
                }
                const float* kvec = cache.key_row(layer, j).data() + off;
                float dot = 0.0f;
                for (int c = 0; c < cfg.d_head; ++c) dot += qvec[c] * kvec[c];
                const float score = dot * inv_sqrt_d;
                scores[static_cast<std::size_t>(j)] = score;
                max_score = std::max(max_score, score);
            }

            float denom = 0.0f;
            for (int j = 0; j < total; ++j) {
                float& s = scores[static_cast<std::size_t>(j)];
                if (std::isinf(s) && s < 0.0f) {
                    s = 0.0f;
                } else {
                    s = std::exp(s - max_score);
                    denom += s;
                }
            }

            float* out_seg = mixed.row(i).data() + off;
            for (int j = 0; j < total; ++j) {
                const float weight = scores[static_cast<std::size_t>(j)];
                if (weight == 0.0f) continue;
                const float* vvec = cache.value_row(layer, j).data() + off;
                const float wn = weight / denom;
                for (int c = 0; c < cfg.d_head; ++c) out_seg[c] += wn * vvec[c];
            }
        }
    }

    if (capture != nullptr) {
        capture->q = q;
        capture->k = k;
        capture->v = v;
    }
    return matmul(mixed, lw.wo);
}

Matrix mlp_forward(const Model& model, int layer, const Matrix& h_norm) {
    const auto& lw = model.weights.layers[static_cast<std::size_t>(layer)];
    if (h_norm.cols != model.config.d_model) {
        throw ShapeError("mlp input width must be d_model");
    }
    Matrix gate = matmul(h_norm, lw.w_gate);
    Matrix up = matmul(h_norm, lw.w_up);
    for (std::size_t i = 0; i < gate.data.size(); ++i) {
        const float x = gate.data[i];
        const float silu = x / (1.0f + std::exp(-x));
        gate.data[i] = silu * up.data[i];
    }
    return matmul(gate, lw.w_down);
}

Matrix lm_logits(const Model& model, const Matrix& h_final) {
    const Matrix normed = rms_norm(h_final, model.weights.final_norm_gain, model.config.norm_eps);
    return matmul_nt(normed, model.weights.embedding);
}

}  // namespace espec
