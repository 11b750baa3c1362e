#pragma once

#include <span>
#include <string>
#include <vector>

#include "espec/kv_cache.hpp"
#include "espec/layer_plan.hpp"
#include "espec/matrix.hpp"
#include "espec/model.hpp"
#include "espec/rng.hpp"
#include "espec/worker_pool.hpp"

namespace espec {

// Per-pass accounting used by the stage/forward-count checks.
struct ForwardCounters {
    long sequential_forwards = 0;
    long fuzzy_forwards = 0;
    long base_forwards = 0;
};

// Captured intermediate state of one layer, used by structural tests and
// the similarity probe. h_mid == h_in + attn_out and h_out == h_mid + MLP
// output by construction.
struct LayerProbe {
    Matrix h_in;
    Matrix attn_out;
    Matrix h_mid;
    Matrix h_out;
    AttnCapture attn;
};

struct ForwardProbe {
    std::vector<LayerProbe> layers;
};

struct FuzzyOptions {
    WorkerPool* pool = nullptr;
    ForwardProbe* probe = nullptr;
    // Submits group attention tasks in reverse layer order; results must be
    // unchanged. Exists for the schedule-independence tests.
    bool reverse_group_order = false;
};

// Reference layer-sequential forward: per layer, attention on the normed
// input, residual add, then the gated MLP on the normed intermediate.
// Returns the final hidden rows and appends each layer's K/V to the cache.
Matrix forward_sequential(const Model& model, const Matrix& h_input, KvCache& cache,
                          const ForwardBatch& batch, ForwardProbe* probe = nullptr);

// Layer-parallel forward: within each plan group every attention layer
// consumes the group's entry hidden state (so the group can fan out across
// workers), then the residual/MLP chain runs sequentially. Singleton groups
// match forward_sequential bit for bit.
Matrix forward_fuzzy(const Model& model, const LayerPlan& plan, const Matrix& h_input,
                     KvCache& cache, const ForwardBatch& batch, const FuzzyOptions& options = {});

struct DraftNode {
    Token token = 0;
    int parent = -1;        // node index; -1 means child of the committed context
    int depth = 1;          // 1-based tree level
    int prob_index = -1;    // index into DraftTree::dists (the p' it was drawn from)
    int cache_row = -1;     // drafter-cache flat row; -1 when the level was never forwarded
    int first_child = -1;
    int n_children = 0;
};

// Token tree drafted in one iteration. Nodes are stored level by level;
// siblings are contiguous and ordered the way they were selected, which is
// also the order verification must test them in.
struct DraftTree {
    std::vector<DraftNode> nodes;
    std::vector<ProbVector> dists;
    std::vector<int> widths;
    int root_children = 0;  // nodes[0..root_children) are the level-1 candidates

    int node_count() const { return static_cast<int>(nodes.size()); }
    std::span<const DraftNode> children_of(int node_index) const;
};

// Candidate selection from one logit row. Temperature 0 takes the top-k
// logits (lowest token id wins ties); temperature > 0 samples k tokens
// without replacement from the tempered softmax, in sampling order.
std::vector<Token> select_children(std::span<const float> logits, int k, float temperature,
                                   Xoshiro256ss& rng);

// Expands a draft tree below the committed context. root_logits is the
// drafter's output at the context tail and seeds level 1; levels 1..n-1 are
// then forwarded in one token-parallel batch each (fuzzy under the plan, or
// layer-sequential when fuzzy_passes is false), so the final level's tokens
// are selected but never forwarded. Staged rows are fuzzy-flagged exactly
// when the pass producing them was fuzzy.
DraftTree draft_tree(const Model& drafter, const LayerPlan& plan, KvCache& cache,
                     std::span<const float> root_logits, std::span<const int> widths,
                     float temperature, Xoshiro256ss& rng, ForwardCounters& counters,
                     bool fuzzy_passes = true, WorkerPool* pool = nullptr);

struct SimilarityAcc {
    double sum = 0.0;
    long count = 0;
    void add(double value) {
        sum += value;
        ++count;
    }
    // No parallelized layer means no approximation at all.
    double mean() const { return count > 0 ? sum / count : 1.0; }
};

// Mean cosine similarity between precise and layer-parallel values, per
// probed quantity, over every parallelized layer and token.
struct SimilarityStats {
    SimilarityAcc h, q, k, v, attn_out;
};

// Runs one token-parallel pass over `tokens` twice, fuzzy under `plan` and
// layer-sequential, each on its own fresh cache, and accumulates cosine
// similarities at the parallelized layers.
void accumulate_similarity(const Model& drafter, const LayerPlan& plan,
                           std::span<const Token> tokens, SimilarityStats& stats,
                           WorkerPool* pool = nullptr);

// Table row per layer-parallel size over a fixed corpus of sequences.
struct SimilarityRow {
    int lp_size = 1;
    double h = 1.0, q = 1.0, k = 1.0, v = 1.0, attn_out = 1.0;
};

std::vector<SimilarityRow> probe_similarity(const Model& drafter, std::span<const int> lp_sizes,
                                            std::span<const std::vector<Token>> corpus,
                                            WorkerPool* pool = nullptr);

std::string similarity_csv(std::span<const SimilarityRow> rows);

}  // namespace espec
