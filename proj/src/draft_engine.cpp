#include "espec/draft_engine.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "espec/errors.hpp"

namespace espec {

namespace {

Matrix add(const Matrix& a, const Matrix& b) {
    Matrix out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
    return out;
}

void check_forward_inputs(const Model& model, const Matrix& h_input, const ForwardBatch& batch) {
    if (h_input.cols != model.config.d_model) {
        throw ShapeError("forward input width must be d_model");
    }
    if (batch.mask == nullptr) {
        throw StructureError("forward batch needs a tree mask");
    }
    if (static_cast<int>(batch.flat_rows.size()) != h_input.rows) {
        throw ShapeError("forward batch must name one cache row per input row");
    }
}

}  // namespace

Matrix forward_sequential(const Model& model, const Matrix& h_input, KvCache& cache,
                          const ForwardBatch& batch, ForwardProbe* probe) {
    check_forward_inputs(model, h_input, batch);
    const auto& cfg = model.config;
    if (probe != nullptr) probe->layers.resize(static_cast<std::size_t>(cfg.n_layers));

    Matrix h = h_input;
    for (int layer = 0; layer < cfg.n_layers; ++layer) {
        const auto& lw = model.weights.layers[static_cast<std::size_t>(layer)];
        LayerProbe* lp = probe ? &probe->layers[static_cast<std::size_t>(layer)] : nullptr;

        const Matrix h_norm = rms_norm(h, lw.attn_norm_gain, cfg.norm_eps);
        Matrix attn = attention_forward(model, layer, h_norm, cache, batch,
                                        lp ? &lp->attn : nullptr);
        Matrix h_mid = add(h, attn);
        Matrix mlp = mlp_forward(model, layer, rms_norm(h_mid, lw.mlp_norm_gain, cfg.norm_eps));
        Matrix h_next = add(h_mid, mlp);

        if (lp != nullptr) {
            lp->h_in = h;
            lp->attn_out = std::move(attn);
            lp->h_mid = std::move(h_mid);
            lp->h_out = h_next;
        }
        h = std::move(h_next);
    }
    return h;
}

Matrix forward_fuzzy(const Model& model, const LayerPlan& plan, const Matrix& h_input,
                     KvCache& cache, const ForwardBatch& batch, const FuzzyOptions& options) {
    check_forward_inputs(model, h_input, batch);
    const auto& cfg = model.config;
    if (plan.n_layers() != cfg.n_layers) {
        throw ConfigError("layer plan covers " + std::to_string(plan.n_layers()) +
                          " layers but the model has " + std::to_string(cfg.n_layers));
    }
    ForwardProbe* probe = options.probe;
    if (probe != nullptr) probe->layers.resize(static_cast<std::size_t>(cfg.n_layers));

    Matrix h = h_input;
    for (const auto& group : plan.groups) {
        // Every attention layer in the group reads the group entry state.
        const Matrix h_entry = h;
        std::vector<Matrix> attn_outs(group.size());

        if (group.size() == 1) {
            const int layer = group[0];
            const auto& lw = model.weights.layers[static_cast<std::size_t>(layer)];
            LayerProbe* lp = probe ? &probe->layers[static_cast<std::size_t>(layer)] : nullptr;
            attn_outs[0] =
                attention_forward(model, layer, rms_norm(h_entry, lw.attn_norm_gain, cfg.norm_eps),
                                  cache, batch, lp ? &lp->attn : nullptr);
        } else {
            std::vector<std::function<void()>> tasks;
            tasks.reserve(group.size());
            for (std::size_t slot = 0; slot < group.size(); ++slot) {
                tasks.push_back([&, slot] {
                    const int layer = group[slot];
                    const auto& lw = model.weights.layers[static_cast<std::size_t>(layer)];
                    LayerProbe* lp =
                        probe ? &probe->layers[static_cast<std::size_t>(layer)] : nullptr;
                    attn_outs[slot] = attention_forward(
                        model, layer, rms_norm(h_entry, lw.attn_norm_gain, cfg.norm_eps), cache,
                        batch, lp ? &lp->attn : nullptr);
                });
            }
            if (options.reverse_group_order) {
                std::reverse(tasks.begin(), tasks.end());
            }
            if (options.pool != nullptr) {
                options.pool->run_tasks(tasks);
            } else {
                for (const auto& task : tasks) task();
            }
        }

        // Residual/MLP chain stays sequential inside the group.
        for (std::size_t slot = 0; slot < group.size(); ++slot) {
            const int layer = group[slot];
            const auto& lw = model.weights.layers[static_cast<std::size_t>(layer)];
            LayerProbe* lp = probe ? &probe->layers[static_cast<std::size_t>(layer)] : nullptr;

            Matrix h_mid = add(h, attn_outs[slot]);
            Matrix mlp =
                mlp_forward(model, layer, rms_norm(h_mid, lw.mlp_norm_gain, cfg.norm_eps));
            Matrix h_next = add(h_mid, mlp);

            if (lp != nullptr) {
                lp->h_in = h;
                lp->attn_out = std::move(attn_outs[slot]);
                lp->h_mid = std::move(h_mid);
                lp->h_out = h_next;
            }
            h = std::move(h_next);
        }
    }
    return h;
}

std::span<const DraftNode> DraftTree::children_of(int node_index) const {
    const auto& node = nodes[static_cast<std::size_t>(node_index)];
    if (node.n_children == 0) return {};
    return {nodes.data() + node.first_child, static_cast<std::size_t>(node.n_children)};
}

std::vector<Token> select_children(std::span<const float> logits, int k, float temperature,
                                   Xoshiro256ss& rng) {
    const int vocab = static_cast<int>(logits.size());
    if (k < 1 || k > vocab) {
        throw ConfigError("tree width must be in [1, vocab]");
    }

    std::vector<Token> picks;
    picks.reserve(static_cast<std::size_t>(k));

    if (temperature == 0.0f) {
        std::vector<int> order(static_cast<std::size_t>(vocab));
        std::iota(order.begin(), order.end(), 0);
        std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
            if (logits[static_cast<std::size_t>(a)] != logits[static_cast<std::size_t>(b)]) {
                return logits[static_cast<std::size_t>(a)] > logits[static_cast<std::size_t>(b)];
            }
            return a < b;
        });
        picks.assign(order.begin(), order.begin() + k);
        return picks;
    }

    // Sequential sampling without replacement: draw from p', zero the drawn
    // token, renormalize, repeat. Verification re-derives these conditional
    // distributions by clamping, which is what keeps the scheme lossless.
    const ProbVector dist = softmax_temp(logits, temperature);
    std::vector<double> weights(dist.probs.begin(), dist.probs.end());
    double mass = std::accumulate(weights.begin(), weights.end(), 0.0);
    for (int round = 0; round < k && mass > 1e-12; ++round) {
        const double u = rng.uniform_double() * mass;
        double cum = 0.0;
        int chosen = -1;
        for (int t = 0; t < vocab; ++t) {
            if (weights[static_cast<std::size_t>(t)] <= 0.0) continue;
            cum += weights[static_cast<std::size_t>(t)];
            chosen = t;
            if (u < cum) break;
        }
        if (chosen < 0) break;
        picks.push_back(chosen);
        mass -= weights[static_cast<std::size_t>(chosen)];
        weights[static_cast<std::size_t>(chosen)] = 0.0;
    }
    return picks;
}

DraftTree draft_tree(const Model& drafter, const LayerPlan& plan, KvCache& cache,
                     std::span<const float> root_logits, std::span<const int> widths,
                     float temperature, Xoshiro256ss& rng, ForwardCounters& counters,
                     bool fuzzy_passes, WorkerPool* pool) {
    if (widths.empty()) {
        throw ConfigError("draft tree needs at least one level");
    }
    for (int w : widths) {
        if (w < 1 || w > drafter.config.vocab_size) {
            throw ConfigError("tree width out of range");
        }
    }

    DraftTree tree;
    tree.widths.assign(widths.begin(), widths.end());
    tree.dists.push_back(softmax_temp(root_logits, temperature));

    const int n_levels = static_cast<int>(widths.size());
    // The final level's nodes are selected but never forwarded, so their
    // K/V rows are never staged on the drafter.
    auto stage_level = [&](std::span<const int> level_nodes) {
        std::vector<int> parents;
        parents.reserve(level_nodes.size());
        for (int idx : level_nodes) {
            const auto& node = tree.nodes[static_cast<std::size_t>(idx)];
            parents.push_back(node.parent < 0
                                  ? kCommittedTail
                                  : tree.nodes[static_cast<std::size_t>(node.parent)].cache_row);
        }
        const auto rows = cache.stage_append(parents, fuzzy_passes);
        for (std::size_t i = 0; i < level_nodes.size(); ++i) {
            tree.nodes[static_cast<std::size_t>(level_nodes[i])].cache_row = rows[i];
        }
    };

    std::vector<int> frontier;
    for (Token tok : select_children(root_logits, widths[0], temperature, rng)) {
        DraftNode node;
        node.token = tok;
        node.parent = -1;
        node.depth = 1;
        node.prob_index = 0;
        tree.nodes.push_back(node);
        frontier.push_back(static_cast<int>(tree.nodes.size()) - 1);
    }
    tree.root_children = static_cast<int>(frontier.size());

    for (int level = 1; level <= n_levels - 1; ++level) {
        if (frontier.empty()) break;
        stage_level(frontier);

        std::vector<Token> tokens;
        ForwardBatch batch;
        for (int idx : frontier) {
            const auto& node = tree.nodes[static_cast<std::size_t>(idx)];
            tokens.push_back(node.token);
            batch.flat_rows.push_back(node.cache_row);
            batch.positions.push_back(cache.position_of(node.cache_row));
        }
        const TreeMask mask = cache.build_tree_mask();
        batch.mask = &mask;

        const Matrix h_in = embed(drafter, tokens);
        Matrix hidden;
        if (fuzzy_passes) {
            FuzzyOptions options;
            options.pool = pool;
            hidden = forward_fuzzy(drafter, plan, h_in, cache, batch, options);
            ++counters.fuzzy_forwards;
        } else {
            hidden = forward_sequential(drafter, h_in, cache, batch);
            ++counters.sequential_forwards;
        }
        const Matrix logits = lm_logits(drafter, hidden);

        std::vector<int> next_frontier;
        for (std::size_t i = 0; i < frontier.size(); ++i) {
            const int parent_index = frontier[i];
            const auto row = logits.row(static_cast<int>(i));
            tree.dists.push_back(softmax_temp(row, temperature));
            const int prob_index = static_cast<int>(tree.dists.size()) - 1;

            const auto children = select_children(row, widths[static_cast<std::size_t>(level)],
                                                  temperature, rng);
            tree.nodes[static_cast<std::size_t>(parent_index)].first_child =
                static_cast<int>(tree.nodes.size());
            tree.nodes[static_cast<std::size_t>(parent_index)].n_children =
                static_cast<int>(children.size());
            for (Token tok : children) {
                DraftNode node;
                node.token = tok;
                node.parent = parent_index;
                node.depth = level + 1;
                node.prob_index = prob_index;
                tree.nodes.push_back(node);
                next_frontier.push_back(static_cast<int>(tree.nodes.size()) - 1);
            }
        }
        frontier = std::move(next_frontier);
    }
    return tree;
}

void accumulate_similarity(const Model& drafter, const LayerPlan& plan,
                           std::span<const Token> tokens, SimilarityStats& stats,
                           WorkerPool* pool) {
    const auto parallel_layers = plan.parallelized_layers();

    auto run_pass = [&](KvCache& cache, ForwardProbe& probe, bool fuzzy) {
        std::vector<int> parents(tokens.size(), kCommittedTail);
        for (std::size_t i = 1; i < tokens.size(); ++i) {
            parents[i] = static_cast<int>(i) - 1;
        }
        ForwardBatch batch;
        batch.flat_rows = cache.stage_append(parents, fuzzy);
        for (int row : batch.flat_rows) batch.positions.push_back(cache.position_of(row));
        const TreeMask mask = cache.build_tree_mask();
        batch.mask = &mask;
        const Matrix h_in = embed(drafter, tokens);
        if (fuzzy) {
            FuzzyOptions options;
            options.pool = pool;
            options.probe = &probe;
            forward_fuzzy(drafter, plan, h_in, cache, batch, options);
        } else {
            forward_sequential(drafter, h_in, cache, batch, &probe);
        }
    };

    KvCache fuzzy_cache(drafter.config.n_layers, drafter.config.d_model);
    KvCache precise_cache(drafter.config.n_layers, drafter.config.d_model);
    ForwardProbe fuzzy_probe, precise_probe;
    run_pass(fuzzy_cache, fuzzy_probe, true);
    run_pass(precise_cache, precise_probe, false);

    auto add_rows = [](SimilarityAcc& acc, const Matrix& a, const Matrix& b) {
        for (int r = 0; r < a.rows; ++r) acc.add(cosine_sim(a.row(r), b.row(r)));
    };
    for (int layer : parallel_layers) {
        const auto& fl = fuzzy_probe.layers[static_cast<std::size_t>(layer)];
        const auto& pl = precise_probe.layers[static_cast<std::size_t>(layer)];
        add_rows(stats.h, fl.h_in, pl.h_in);
        add_rows(stats.q, fl.attn.q, pl.attn.q);
        add_rows(stats.k, fl.attn.k, pl.attn.k);
        add_rows(stats.v, fl.attn.v, pl.attn.v);
        add_rows(stats.attn_out, fl.attn_out, pl.attn_out);
    }
}

std::vector<SimilarityRow> probe_similarity(const Model& drafter, std::span<const int> lp_sizes,
                                            std::span<const std::vector<Token>> corpus,
                                            WorkerPool* pool) {
    if (corpus.empty()) {
        throw ConfigError("similarity probe needs a non-empty corpus");
    }
    std::vector<SimilarityRow> rows;
    for (int lp : lp_sizes) {
        const LayerPlan plan = plan_groups(drafter.config.n_layers, lp);
        SimilarityStats stats;
        for (const auto& sequence : corpus) {
            accumulate_similarity(drafter, plan, sequence, stats, pool);
        }
        SimilarityRow row;
        row.lp_size = lp;
        row.h = stats.h.mean();
        row.q = stats.q.mean();
        row.k = stats.k.mean();
        row.v = stats.v.mean();
        row.attn_out = stats.attn_out.mean();
        rows.push_back(row);
    }
    return rows;
}

std::string similarity_csv(std::span<const SimilarityRow> rows) {
    std::ostringstream out;
    out << "lp_size,h,q,k,v,attnoutput\n";
    out.precision(6);
    out << std::fixed;
    for (const auto& row : rows) {
        out << row.lp_size << ',' << row.h << ',' << row.q << ',' << row.k << ',' << row.v << ','
            << row.attn_out << '\n';
    }
    return out.str();
}

}  // namespace espec
