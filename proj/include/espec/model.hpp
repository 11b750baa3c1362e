#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "espec/kv_cache.hpp"
#include "espec/matrix.hpp"

namespace espec {

using Token = int;

// 256 raw bytes + BOS + EOS.
inline constexpr int kDefaultVocab = 258;
inline constexpr Token kBosToken = 256;
inline constexpr Token kEosToken = 257;

struct ModelConfig {
    int vocab_size = kDefaultVocab;
    int d_model = 64;
    int n_layers = 4;
    int n_heads = 4;
    int d_head = 16;
    int d_mlp = 128;
    int max_positions = 512;
    float norm_eps = 1e-5f;
    std::uint64_t seed = 0;

    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

struct LayerWeights {
    Matrix wq, wk, wv, wo;          // d_model x d_model
    Matrix w_gate, w_up;            // d_model x d_mlp
    Matrix w_down;                  // d_mlp x d_model
    Matrix attn_norm_gain;          // 1 x d_model
    Matrix mlp_norm_gain;           // 1 x d_model
};

struct WeightStore {
    Matrix embedding;               // vocab x d_model; doubles as the LM head
    Matrix final_norm_gain;         // 1 x d_model
    std::vector<LayerWeights> layers;
};

struct Model {
    ModelConfig config;
    WeightStore weights;
};

// One batch of new tokens entering a forward pass. Rows must already be
// staged in the cache; positions are the rotary positions per row.
struct ForwardBatch {
    std::vector<int> flat_rows;
    std::vector<int> positions;
    const TreeMask* mask = nullptr;
    // Route key/value writes through calibrate_overwrite so refilled rows
    // lose their fuzzy flag.
    bool calibrate_writes = false;
};

// Optional capture of the per-layer attention internals, used by the
// similarity probe.
struct AttnCapture {
    Matrix q, k, v;
};

// Deterministic weights from config.seed: one xoshiro256** stream fills the
// tensors in manifest order, so equal configs give bit-identical stores.
Model init_model(const ModelConfig& config);

// Drafter sharing the base model's embedding, final norm and first
// keep_layers blocks. Requires 2 <= keep_layers < base layer count.
Model make_truncated_draft(const Model& base, int keep_layers);

Matrix embed(const Model& model, std::span<const Token> tokens);

// Attention block body for one layer: projects the pre-normed input rows,
// applies rope, appends this layer's K/V to the cache rows named in the
// batch, and returns the attention output rows (before the residual add).
Matrix attention_forward(const Model& model, int layer, const Matrix& h_norm, KvCache& cache,
                         const ForwardBatch& batch, AttnCapture* capture = nullptr);

// Gated MLP on pre-normed rows: w_down * (silu(x w_gate) ⊙ (x w_up)).
Matrix mlp_forward(const Model& model, int layer, const Matrix& h_norm);

// Final norm + tied-embedding projection; one logit row per hidden row.
Matrix lm_logits(const Model& model, const Matrix& h_final);

}  // namespace espec
