#include "espec/kv_cache.hpp"

#include <cstring>
#include <string>

#include "espec/errors.hpp"

namespace espec {

KvCache::KvCache(int n_layers, int d_model) : n_layers_(n_layers), d_model_(d_model) {
    if (n_layers <= 0 || d_model <= 0) {
        throw ConfigError("kv cache needs positive layer count and width");
    }
    layers_.resize(static_cast<std::size_t>(n_layers));
}

void KvCache::check_row(int flat) const {
    if (flat < 0 || flat >= total_rows()) {
        throw StructureError("kv row " + std::to_string(flat) + " out of range");
    }
}

std::vector<int> KvCache::stage_append(std::span<const int> parents, bool fuzzy) {
    std::vector<int> indices;
    indices.reserve(parents.size());
    for (int parent : parents) {
        const int flat = total_rows();
        if (parent != kCommittedTail && (parent < committed_len_ || parent >= flat)) {
            throw StructureError("staged parent must be the committed tail or an earlier staged row");
        }
        const int position =
            parent == kCommittedTail ? committed_len_ : staged_[parent - committed_len_].position + 1;
        staged_.push_back({parent, fuzzy, position});
        for (auto& layer : layers_) {
            layer.keys.resize(layer.keys.size() + d_model_, 0.0f);
            layer.values.resize(layer.values.size() + d_model_, 0.0f);
        }
        indices.push_back(flat);
    }
    return indices;
}

TreeMask KvCache::build_tree_mask() const {
    const int n = total_rows();
    TreeMask mask(n);
    // Committed region: causal.
    for (int q = 0; q < committed_len_; ++q) {
        for (int k = 0; k <= q; ++k) mask.set(q, k);
    }
    // Staged rows see every committed row plus their ancestor chain.
    for (int q = committed_len_; q < n; ++q) {
        for (int k = 0; k < committed_len_; ++k) mask.set(q, k);
        int node = q;
        while (node != kCommittedTail) {
            mask.set(q, node);
            node = staged_[node - committed_len_].parent;
        }
    }
    return mask;
}

void KvCache::commit_path(std::span<const int> path) {
    int expected_parent = kCommittedTail;
    for (int flat : path) {
        check_row(flat);
        if (flat < committed_len_) {
            throw StructureError("commit path entry is already committed");
        }
        if (staged_[flat - committed_len_].parent != expected_parent) {
            throw StructureError("commit path is not a root-to-node chain");
        }
        expected_parent = flat;
    }

    const int old_committed = committed_len_;
    for (auto& layer : layers_) {
        for (std::size_t i = 0; i < path.size(); ++i) {
            const int src = path[i];
            const int dst = old_committed + static_cast<int>(i);
            if (src != dst) {
                std::memcpy(layer_row(layer.keys, dst), layer_row(layer.keys, src),
                            sizeof(float) * static_cast<std::size_t>(d_model_));
                std::memcpy(layer_row(layer.values, dst), layer_row(layer.values, src),
                            sizeof(float) * static_cast<std::size_t>(d_model_));
            }
        }
    }
    committed_len_ = old_committed + static_cast<int>(path.size());
    staged_.clear();
    for (auto& layer : layers_) {
        layer.keys.resize(static_cast<std::size_t>(committed_len_) * d_model_);
        layer.values.resize(static_cast<std::size_t>(committed_len_) * d_model_);
    }
}

void KvCache::discard_staged() {
    staged_.clear();
    for (auto& layer : layers_) {
        layer.keys.resize(static_cast<std::size_t>(committed_len_) * d_model_);
        layer.values.resize(static_cast<std::size_t>(committed_len_) * d_model_);
    }
}

void KvCache::write_rows(int layer, std::span<const int> rows, const Matrix& k, const Matrix& v) {
    if (layer < 0 || layer >= n_layers_) {
        throw StructureError("kv layer index out of range");
    }
    if (k.rows != static_cast<int>(rows.size()) || v.rows != static_cast<int>(rows.size()) ||
        k.cols != d_model_ || v.cols != d_model_) {
        throw ShapeError("kv write shape mismatch");
    }
    auto& store = layers_[static_cast<std::size_t>(layer)];
    for (std::size_t i = 0; i < rows.size(); ++i) {
        check_row(rows[i]);
        std::memcpy(layer_row(store.keys, rows[i]), k.row(static_cast<int>(i)).data(),
                    sizeof(float) * static_cast<std::size_t>(d_model_));
        std::memcpy(layer_row(store.values, rows[i]), v.row(static_cast<int>(i)).data(),
                    sizeof(float) * static_cast<std::size_t>(d_model_));
    }
}

void KvCache::calibrate_overwrite(int layer, std::span<const int> positions, const Matrix& k,
                                  const Matrix& v) {
    write_rows(layer, positions, k, v);
    for (int flat : positions) {
        if (flat >= committed_len_) {
            staged_[flat - committed_len_].fuzzy = false;
        }
    }
}

std::span<const float> KvCache::key_row(int layer, int flat) const {
    check_row(flat);
    const auto& store = layers_[static_cast<std::size_t>(layer)];
    return {store.keys.data() + static_cast<std::size_t>(flat) * d_model_,
            static_cast<std::size_t>(d_model_)};
}

std::span<const float> KvCache::value_row(int layer, int flat) const {
    check_row(flat);
    const auto& store = layers_[static_cast<std::size_t>(layer)];
    return {store.values.data() + static_cast<std::size_t>(flat) * d_model_,
            static_cast<std::size_t>(d_model_)};
}

int KvCache::parent_of(int flat) const {
    check_row(flat);
    if (flat < committed_len_) {
        return flat - 1;
    }
    return staged_[flat - committed_len_].parent;
}

bool KvCache::fuzzy_flag(int flat) const {
    check_row(flat);
    if (flat < committed_len_) return false;
    return staged_[flat - committed_len_].fuzzy;
}

bool KvCache::any_fuzzy_staged() const {
    for (const auto& row : staged_) {
        if (row.fuzzy) return true;
    }
    return false;
}

int KvCache::position_of(int flat) const {
    check_row(flat);
    if (flat < committed_len_) return flat;
    return staged_[flat - committed_len_].position;
}

}  // namespace espec
