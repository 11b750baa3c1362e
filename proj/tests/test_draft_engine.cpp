#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "espec/draft_engine.hpp"
#include "espec/errors.hpp"
#include "test_support.hpp"

using namespace espec;
using namespace espec::testing;

namespace {

struct PassSetup {
    ForwardBatch batch;
    TreeMask mask;
    Matrix h_in;
};

PassSetup stage_chain_pass(const Model& model, const std::vector<Token>& tokens, KvCache& cache,
                           bool fuzzy) {
    PassSetup setup;
    setup.batch.flat_rows =
        cache.stage_append(chain_parents(cache, static_cast<int>(tokens.size())), fuzzy);
    for (int row : setup.batch.flat_rows) {
        setup.batch.positions.push_back(cache.position_of(row));
    }
    setup.mask = cache.build_tree_mask();
    setup.batch.mask = &setup.mask;
    setup.h_in = embed(model, tokens);
    return setup;
}

}  // namespace

TEST_SUITE_BEGIN("draft_engine");

TEST_CASE("all-singleton fuzzy forward is bit-identical to sequential") {
    const Model model = init_model(tiny_config(5, 51));
    const LayerPlan plan = plan_groups(5, 1);
    Xoshiro256ss rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<Token> tokens;
        const int count = 1 + static_cast<int>(rng.next_u64() % 6);
        for (int i = 0; i < count; ++i) {
            tokens.push_back(static_cast<Token>(rng.next_u64() % 256));
        }
        KvCache seq_cache(model.config.n_layers, model.config.d_model);
        KvCache fuzzy_cache(model.config.n_layers, model.config.d_model);

        PassSetup seq = stage_chain_pass(model, tokens, seq_cache, false);
        const Matrix sequential = forward_sequential(model, seq.h_in, seq_cache, seq.batch);

        PassSetup fuz = stage_chain_pass(model, tokens, fuzzy_cache, false);
        const Matrix fuzzy = forward_fuzzy(model, plan, fuz.h_in, fuzzy_cache, fuz.batch);

        CHECK(sequential.data == fuzzy.data);
        for (int layer = 0; layer < model.config.n_layers; ++layer) {
            for (int row = 0; row < seq_cache.total_rows(); ++row) {
                const auto a = seq_cache.key_row(layer, row);
                const auto b = fuzzy_cache.key_row(layer, row);
                CHECK(std::equal(a.begin(), a.end(), b.begin()));
            }
        }
    }
}

TEST_CASE("grouped forward differs from sequential but stays correlated") {
    const Model model = init_model(tiny_config(8, 53));
    const LayerPlan plan = plan_groups(8, 2);
    const std::vector<Token> tokens = byte_tokens("correlated states");

    KvCache seq_cache(model.config.n_layers, model.config.d_model);
    PassSetup seq = stage_chain_pass(model, tokens, seq_cache, false);
    const Matrix sequential = forward_sequential(model, seq.h_in, seq_cache, seq.batch);

    KvCache fuzzy_cache(model.config.n_layers, model.config.d_model);
    PassSetup fuz = stage_chain_pass(model, tokens, fuzzy_cache, true);
    const Matrix fuzzy = forward_fuzzy(model, plan, fuz.h_in, fuzzy_cache, fuz.batch);

    CHECK(fuzzy.data != sequential.data);
    const double cos = cosine_sim(fuzzy.row(fuzzy.rows - 1), sequential.row(sequential.rows - 1));
    CHECK(cos > 0.0);
}

TEST_CASE("group results do not depend on worker count or submission order") {
    const Model model = init_model(tiny_config(9, 57));
    const LayerPlan plan = plan_groups(9, 4);
    const std::vector<Token> tokens = byte_tokens("deterministic");

    auto run = [&](int workers, bool reversed) {
        KvCache cache(model.config.n_layers, model.config.d_model);
        PassSetup setup = stage_chain_pass(model, tokens, cache, true);
        WorkerPool pool(workers);
        FuzzyOptions options;
        options.pool = workers > 1 ? &pool : nullptr;
        options.reverse_group_order = reversed;
        return forward_fuzzy(model, plan, setup.h_in, cache, setup.batch, options);
    };

    const Matrix reference = run(1, false);
    CHECK(run(2, false).data == reference.data);
    CHECK(run(4, false).data == reference.data);
    CHECK(run(4, true).data == reference.data);
    CHECK(run(1, true).data == reference.data);
}

TEST_CASE("the MLP chain stays sequential inside groups") {
    const Model model = init_model(tiny_config(8, 59));
    const LayerPlan plan = plan_groups(8, 3);
    const std::vector<Token> tokens = byte_tokens("structure");

    KvCache cache(model.config.n_layers, model.config.d_model);
    PassSetup setup = stage_chain_pass(model, tokens, cache, true);
    ForwardProbe probe;
    FuzzyOptions options;
    options.probe = &probe;
    forward_fuzzy(model, plan, setup.h_in, cache, setup.batch, options);

    REQUIRE(probe.layers.size() == 8);
    for (int layer = 0; layer < 8; ++layer) {
        const auto& lp = probe.layers[static_cast<std::size_t>(layer)];
        // Residual chain: h_mid = h_in + attn_out, bit for bit.
        for (std::size_t i = 0; i < lp.h_mid.data.size(); ++i) {
            CHECK(lp.h_mid.data[i] == lp.h_in.data[i] + lp.attn_out.data[i]);
        }
        // The next layer's h_in is this layer's h_out.
        if (layer + 1 < 8) {
            CHECK(probe.layers[static_cast<std::size_t>(layer + 1)].h_in.data == lp.h_out.data);
        }
    }
}

TEST_CASE("group attention depends only on the group entry state") {
    // Permuting execution order inside a group is covered above; this checks
    // the dependency directly: within a group, the attention capture for
    // layer i must equal a standalone attention call fed the entry state.
    const Model model = init_model(tiny_config(6, 61));
    const LayerPlan plan = parse_plan_override("0|1-3|4|5");
    const std::vector<Token> tokens = byte_tokens("entry");

    KvCache cache(model.config.n_layers, model.config.d_model);
    PassSetup setup = stage_chain_pass(model, tokens, cache, true);
    ForwardProbe probe;
    FuzzyOptions options;
    options.probe = &probe;
    forward_fuzzy(model, plan, setup.h_in, cache, setup.batch, options);

    // Each layer's attention touches only its own layer's cache rows, so a
    // standalone call on a fresh clone fed the entry state must reproduce the
    // in-group result exactly.
    const Matrix& entry = probe.layers[1].h_in;  // group entry = chain state before layer 1
    for (int layer : {1, 2, 3}) {
        KvCache replay_cache(model.config.n_layers, model.config.d_model);
        PassSetup replay = stage_chain_pass(model, tokens, replay_cache, true);
        const Matrix standalone = attention_forward(
            model, layer,
            rms_norm(entry, model.weights.layers[static_cast<std::size_t>(layer)].attn_norm_gain,
                     model.config.norm_eps),
            replay_cache, replay.batch);
        CHECK(standalone.data == probe.layers[static_cast<std::size_t>(layer)].attn_out.data);
    }
}

TEST_CASE("select_children") {
    Xoshiro256ss rng(63);
    SUBCASE("temperature zero takes the k largest logits, full-sort oracle") {
        for (int trial = 0; trial < 30; ++trial) {
            std::vector<float> logits(17);
            for (float& v : logits) v = rng.uniform_float() * 4 - 2;
            const int k = 1 + static_cast<int>(rng.next_u64() % 6);
            const auto picks = select_children(logits, k, 0.0f, rng);

            std::vector<int> order(logits.size());
            std::iota(order.begin(), order.end(), 0);
            std::sort(order.begin(), order.end(), [&](int a, int b) {
                if (logits[static_cast<std::size_t>(a)] != logits[static_cast<std::size_t>(b)]) {
                    return logits[static_cast<std::size_t>(a)] >
                           logits[static_cast<std::size_t>(b)];
                }
                return a < b;
            });
            REQUIRE(static_cast<int>(picks.size()) == k);
            for (int i = 0; i < k; ++i) {
                CHECK(picks[static_cast<std::size_t>(i)] == order[static_cast<std::size_t>(i)]);
            }
        }
    }
    SUBCASE("sampling draws distinct tokens") {
        std::vector<float> logits = {0.5f, 1.0f, -0.5f, 2.0f, 0.0f};
        for (int trial = 0; trial < 50; ++trial) {
            auto picks = select_children(logits, 3, 0.8f, rng);
            REQUIRE(picks.size() == 3);
            std::sort(picks.begin(), picks.end());
            CHECK(std::adjacent_find(picks.begin(), picks.end()) == picks.end());
        }
    }
    SUBCASE("width outside [1, vocab] is rejected") {
        std::vector<float> logits = {0.0f, 1.0f};
        CHECK_THROWS_AS(select_children(logits, 0, 0.0f, rng), ConfigError);
        CHECK_THROWS_AS(select_children(logits, 3, 0.0f, rng), ConfigError);
    }
}

TEST_CASE("draft_tree") {
    const Model model = init_model(tiny_config(4, 65));
    const LayerPlan plan = plan_groups(4, 2);

    KvCache cache(model.config.n_layers, model.config.d_model);
    prefill_committed(model, byte_tokens("context"), cache);
    KvCache fresh = cache;

    // Root distribution from the committed tail.
    KvCache scratch = cache;
    ForwardBatch tail;
    tail.flat_rows = scratch.stage_append(std::vector<int>{kCommittedTail}, false);
    tail.positions = {scratch.position_of(tail.flat_rows[0])};
    const TreeMask tail_mask = scratch.build_tree_mask();
    tail.mask = &tail_mask;
    const Matrix tail_hidden =
        forward_sequential(model, embed(model, std::vector<Token>{32}), scratch, tail);
    const Matrix root_logits = lm_logits(model, tail_hidden);

    SUBCASE("greedy chain of depth five") {
        Xoshiro256ss rng(1);
        ForwardCounters counters;
        KvCache tree_cache = fresh;
        const std::vector<int> widths = {1, 1, 1, 1, 1};
        const DraftTree tree = draft_tree(model, plan, tree_cache, root_logits.row(0), widths,
                                          0.0f, rng, counters);
        CHECK(tree.node_count() == 5);
        CHECK(counters.fuzzy_forwards == 4);
        CHECK(counters.sequential_forwards == 0);
        for (int i = 0; i < 5; ++i) {
            const auto& node = tree.nodes[static_cast<std::size_t>(i)];
            CHECK(node.depth == i + 1);
            CHECK(node.parent == i - 1);
        }
        // Greedy: every node is the argmax of its selection distribution.
        CHECK(tree.nodes[0].token ==
              argmax(tree.dists[static_cast<std::size_t>(tree.nodes[0].prob_index)].probs));
    }

    SUBCASE("widths [2,2] stage six nodes, only the forwarded level in cache") {
        Xoshiro256ss rng(2);
        ForwardCounters counters;
        KvCache tree_cache = fresh;
        const std::vector<int> widths = {2, 2};
        const DraftTree tree = draft_tree(model, plan, tree_cache, root_logits.row(0), widths,
                                          0.8f, rng, counters);
        CHECK(tree.node_count() == 6);
        CHECK(counters.fuzzy_forwards == 1);
        CHECK(tree_cache.staged_len() == 2);  // the final level is never forwarded
        for (const auto& node : tree.nodes) {
            if (node.depth == 1) {
                CHECK(node.cache_row >= 0);
                CHECK(tree_cache.fuzzy_flag(node.cache_row));
            } else {
                CHECK(node.cache_row == -1);
            }
        }
        // Sibling order is the selection order recorded in node order.
        CHECK(tree.root_children == 2);
        CHECK(tree.children_of(0).size() == 2);
        CHECK(tree.children_of(1).size() == 2);
    }

    SUBCASE("sequential passes when fuzzy drafting is off") {
        Xoshiro256ss rng(3);
        ForwardCounters counters;
        KvCache tree_cache = fresh;
        const std::vector<int> widths = {2, 1, 1};
        draft_tree(model, plan, tree_cache, root_logits.row(0), widths, 0.8f, rng, counters,
                   /*fuzzy_passes=*/false);
        CHECK(counters.fuzzy_forwards == 0);
        CHECK(counters.sequential_forwards == 2);
        CHECK_FALSE(tree_cache.any_fuzzy_staged());
    }

    SUBCASE("widths beyond the vocabulary are rejected") {
        Xoshiro256ss rng(4);
        ForwardCounters counters;
        KvCache tree_cache = fresh;
        const std::vector<int> widths = {kDefaultVocab + 1};
        CHECK_THROWS_AS(draft_tree(model, plan, tree_cache, root_logits.row(0), widths, 0.8f,
                                   rng, counters),
                        ConfigError);
    }
}

TEST_CASE("similarity probe") {
    const Model model = init_model(tiny_config(8, 71));
    std::vector<std::vector<Token>> corpus;
    Xoshiro256ss rng(5);
    for (int s = 0; s < 4; ++s) {
        std::vector<Token> seq = {kBosToken};
        for (int i = 0; i < 16; ++i) seq.push_back(static_cast<Token>(rng.next_u64() % 256));
        corpus.push_back(seq);
    }

    const std::vector<int> lp_sizes = {1, 2, 3, 4};
    const auto rows = probe_similarity(model, lp_sizes, corpus);
    REQUIRE(rows.size() == 4);

    SUBCASE("no approximation at lp size one") {
        CHECK(rows[0].h == 1.0);
        CHECK(rows[0].q == 1.0);
        CHECK(rows[0].k == 1.0);
        CHECK(rows[0].v == 1.0);
        CHECK(rows[0].attn_out == 1.0);
    }
    SUBCASE("all means live in [-1, 1]") {
        for (const auto& row : rows) {
            for (double v : {row.h, row.q, row.k, row.v, row.attn_out}) {
                CHECK(v >= -1.0);
                CHECK(v <= 1.0);
            }
        }
    }
    SUBCASE("quality degrades (at most) slowly as more layers are grouped") {
        for (std::size_t i = 1; i < rows.size(); ++i) {
            CHECK(rows[i].h <= rows[i - 1].h + 0.02);
            CHECK(rows[i].q <= rows[i - 1].q + 0.02);
            CHECK(rows[i].k <= rows[i - 1].k + 0.02);
            CHECK(rows[i].v <= rows[i - 1].v + 0.02);
            CHECK(rows[i].attn_out <= rows[i - 1].attn_out + 0.02);
        }
    }
    SUBCASE("csv heading is stable") {
        CHECK(similarity_csv(rows).rfind("lp_size,h,q,k,v,attnoutput\n", 0) == 0);
    }
    SUBCASE("empty corpus is rejected") {
        CHECK_THROWS_AS(probe_similarity(model, lp_sizes, {}), ConfigError);
    }
}

TEST_SUITE_END();
