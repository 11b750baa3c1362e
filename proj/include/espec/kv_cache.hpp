#pragma once

#include <span>
#include <vector>

#include "espec/matrix.hpp"

namespace espec {

// Parent sentinel for staged rows that descend directly from the committed
// context tail.
inline constexpr int kCommittedTail = -1;

// 2-D attention mask over all stored rows (committed + staged), in flat row
// order. allowed(q, k) is true iff k is q itself, an ancestor of q, or any
// committed row; the committed region is plain causal.
struct TreeMask {
    int size = 0;
    std::vector<std::uint8_t> bits;

    TreeMask() = default;
    explicit TreeMask(int n) : size(n), bits(static_cast<std::size_t>(n) * n, 0) {}

    bool allowed(int query, int key) const {
        return bits[static_cast<std::size_t>(query) * size + key] != 0;
    }
    void set(int query, int key) { bits[static_cast<std::size_t>(query) * size + key] = 1; }
};

// Per-layer key/value store indexed by flat row. Rows live in two regions:
// [0, committed_len) is the committed history; [committed_len, total) is the
// staged forest of the current iteration. Staged rows carry a parent link
// and a fuzzy flag; commit_path / discard_staged resolve the staged region
// at the end of an iteration.
class KvCache {
public:
    KvCache(int n_layers, int d_model);

    int n_layers() const { return n_layers_; }
    int d_model() const { return d_model_; }
    int committed_len() const { return committed_len_; }
    int staged_len() const { return static_cast<int>(staged_.size()); }
    int total_rows() const { return committed_len_ + staged_len(); }

    // Allocates one staged row per parent entry (kCommittedTail or the flat
    // index of an earlier staged row). Returns the new flat indices in order.
    std::vector<int> stage_append(std::span<const int> parents, bool fuzzy);

    // Ancestor-closure mask over all stored rows.
    TreeMask build_tree_mask() const;

    // Compacts the rows of a root-to-node staged chain into the committed
    // region, drops every other staged row. An empty path just discards.
    void commit_path(std::span<const int> path);

    // Drops the whole staged region.
    void discard_staged();

    // Overwrites existing rows of one layer with precise key/value rows and
    // clears their fuzzy flags. k and v carry one row per listed position.
    void calibrate_overwrite(int layer, std::span<const int> positions, const Matrix& k,
                             const Matrix& v);

    // Raw row write used by attention when filling freshly staged rows.
    void write_rows(int layer, std::span<const int> rows, const Matrix& k, const Matrix& v);

    std::span<const float> key_row(int layer, int flat) const;
    std::span<const float> value_row(int layer, int flat) const;

    // Parent flat index of a staged row (kCommittedTail when it roots in the
    // committed region).
    int parent_of(int flat) const;
    bool fuzzy_flag(int flat) const;
    bool any_fuzzy_staged() const;

    // Rotary position of a row: committed rows sit at their flat index;
    // staged rows sit at parent position + 1, so tree siblings share one
    // position.
    int position_of(int flat) const;

private:
    struct StagedRow {
        int parent;
        bool fuzzy;
        int position;
    };

    struct LayerStore {
        std::vector<float> keys;
        std::vector<float> values;
    };

    float* layer_row(std::vector<float>& store, int flat) {
        return store.data() + static_cast<std::size_t>(flat) * d_model_;
    }

    void check_row(int flat) const;

    int n_layers_;
    int d_model_;
    int committed_len_ = 0;
    std::vector<LayerStore> layers_;
    std::vector<StagedRow> staged_;
};

}  // namespace espec
