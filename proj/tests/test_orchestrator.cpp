#include <doctest.h>

#include <cstring>
#include <sstream>

#include "espec/errors.hpp"
#include "espec/orchestrator.hpp"
#include "test_support.hpp"

using namespace espec;
using namespace espec::testing;

namespace {

std::span<const std::uint8_t> bytes(const char* text) {
    return {reinterpret_cast<const std::uint8_t*>(text), std::strlen(text)};
}

RunConfig base_config(Algorithm algorithm) {
    RunConfig config;
    config.algorithm = algorithm;
    config.n = 4;
    config.widths = {2, 2, 2, 2};
    config.lp_size = 2;
    config.temperature = 0.8f;
    config.max_new_tokens = 16;
    config.seed = 3;
    return config;
}

RunReport strip_wall(RunReport report) {
    report.tokens_per_s_wall = 0;
    report.per100_wall = {};
    for (auto& trace : report.iterations) {
        trace.draft_wall = trace.verify_wall = trace.calibrate_wall = 0;
    }
    return report;
}

}  // namespace

TEST_SUITE_BEGIN("orchestrator");

TEST_CASE("vanilla emits one token per base forward") {
    const Model base = init_model(tiny_config(4, 81));
    const Model draft = make_truncated_draft(base, 2);
    RunConfig config = base_config(Algorithm::vanilla);
    config.max_new_tokens = 16;

    const GenerateResult result = generate(base, draft, config, bytes("count me"));
    CHECK(result.tokens.size() == 16);
    CHECK(result.report.iterations.size() == 16);
    long base_forwards = 0;
    for (const auto& trace : result.report.iterations) {
        base_forwards += trace.base_forwards;
        CHECK(trace.fuzzy_forwards == 0);
        CHECK(trace.sequential_forwards == 0);
    }
    CHECK(base_forwards == 16);
    CHECK_FALSE(result.report.has_alpha);
    CHECK(result.report.speedup_vs_vanilla == doctest::Approx(1.0));
}

TEST_CASE("self-drafting greedy run accepts everything") {
    const Model base = init_model(tiny_config(4, 83));
    RunConfig config = base_config(Algorithm::easyspec);
    config.temperature = 0.0f;
    config.lp_size = 1;  // exact drafting: the drafter IS the base model
    config.widths = {1, 1, 1, 1};
    config.max_new_tokens = 20;

    const GenerateResult result = generate(base, base, config, bytes("fixed point"));
    CHECK(result.report.alpha == doctest::Approx(1.0));
    for (const auto& trace : result.report.iterations) {
        CHECK(trace.m == trace.n);
    }
    CHECK(result.report.speedup_vs_vanilla > 1.0);
}

TEST_CASE("one easyspec iteration runs 1 sequential + (n-1) fuzzy + 1 base pass") {
    const Model base = init_model(tiny_config(6, 85));
    const Model draft = make_truncated_draft(base, 4);
    RunConfig config = base_config(Algorithm::easyspec);
    config.n = 4;
    config.widths = {2, 2, 2, 2};

    const GenerateResult result = generate(base, draft, config, bytes("accounting"));
    for (const auto& trace : result.report.iterations) {
        CHECK(trace.sequential_forwards == 1);
        CHECK(trace.fuzzy_forwards == config.n - 1);
        CHECK(trace.base_forwards == 1);
        CHECK(trace.calibrate_sim > 0.0);
        CHECK(trace.draft_sim > 0.0);
        CHECK(trace.verify_sim > 0.0);
    }
}

TEST_CASE("plain sd runs n sequential drafter passes and one base pass") {
    const Model base = init_model(tiny_config(5, 87));
    const Model draft = make_truncated_draft(base, 3);
    RunConfig config = base_config(Algorithm::sd);
    config.n = 5;
    config.widths = {1, 1, 1, 1, 1};

    const GenerateResult result = generate(base, draft, config, bytes("chains"));
    for (const auto& trace : result.report.iterations) {
        CHECK(trace.sequential_forwards == 5);
        CHECK(trace.fuzzy_forwards == 0);
        CHECK(trace.base_forwards == 1);
        CHECK(trace.calibrate_sim == 0.0);
    }
}

TEST_CASE("sd_tree with unit widths reproduces sd token for token") {
    const Model base = init_model(tiny_config(5, 89));
    const Model draft = make_truncated_draft(base, 3);
    RunConfig sd_config = base_config(Algorithm::sd);
    sd_config.n = 5;
    sd_config.widths = {1, 1, 1, 1, 1};
    RunConfig tree_config = sd_config;
    tree_config.algorithm = Algorithm::sd_tree;

    const GenerateResult sd_result = generate(base, draft, sd_config, bytes("equivalence"));
    const GenerateResult tree_result = generate(base, draft, tree_config, bytes("equivalence"));
    CHECK(sd_result.tokens == tree_result.tokens);
}

TEST_CASE("identical config and seed reproduce tokens and the report") {
    const Model base = init_model(tiny_config(6, 91));
    const Model draft = make_truncated_draft(base, 4);
    const RunConfig config = base_config(Algorithm::easyspec);

    const GenerateResult a = generate(base, draft, config, bytes("replay"));
    const GenerateResult b = generate(base, draft, config, bytes("replay"));
    CHECK(a.tokens == b.tokens);
    CHECK(strip_wall(a.report) == strip_wall(b.report));

    RunConfig reseeded = config;
    reseeded.seed += 1;
    const GenerateResult c = generate(base, draft, reseeded, bytes("replay"));
    CHECK(a.tokens != c.tokens);
}

TEST_CASE("after every calibrated iteration the drafter cache is a precise prefill") {
    const Model base = init_model(tiny_config(5, 93));
    const Model draft = make_truncated_draft(base, 3);
    RunConfig config = base_config(Algorithm::easyspec);
    config.max_new_tokens = 18;

    int inspected = 0;
    const IterationHook hook = [&](const IterationInspection& view) {
        ++inspected;
        CHECK_FALSE(view.draft_cache.any_fuzzy_staged());
        CHECK(view.draft_cache.staged_len() == 0);

        const int covered = view.draft_cache.committed_len();
        REQUIRE(covered <= static_cast<int>(view.committed.size()));
        const std::vector<Token> prefix(view.committed.begin(),
                                        view.committed.begin() + covered);
        KvCache oracle(draft.config.n_layers, draft.config.d_model);
        prefill_committed(draft, prefix, oracle);
        for (int layer = 0; layer < draft.config.n_layers; ++layer) {
            for (int row = 0; row < covered; ++row) {
                const auto got_k = view.draft_cache.key_row(layer, row);
                const auto want_k = oracle.key_row(layer, row);
                const auto got_v = view.draft_cache.value_row(layer, row);
                const auto want_v = oracle.value_row(layer, row);
                for (int c = 0; c < draft.config.d_model; ++c) {
                    CHECK(got_k[c] == doctest::Approx(want_k[c]).epsilon(1e-5));
                    CHECK(got_v[c] == doctest::Approx(want_v[c]).epsilon(1e-5));
                }
            }
        }
    };
    generate(base, draft, config, bytes("calibrated"), hook);
    CHECK(inspected >= 2);
}

TEST_CASE("baseline sd keeps a prefill-exact drafter cache and the base trails by one") {
    const Model base = init_model(tiny_config(6, 105));
    const Model draft = make_truncated_draft(base, 4);
    RunConfig config = base_config(Algorithm::sd);
    config.widths = {1, 1, 1, 1};
    config.max_new_tokens = 12;

    const IterationHook hook = [&](const IterationInspection& view) {
        // Base cache always holds rows for every committed token but the
        // last (the frontier is re-input with the next batch).
        CHECK(view.base_cache.committed_len() ==
              static_cast<int>(view.committed.size()) - 1);

        const int covered = view.draft_cache.committed_len();
        const std::vector<Token> prefix(view.committed.begin(),
                                        view.committed.begin() + covered);
        KvCache oracle(draft.config.n_layers, draft.config.d_model);
        prefill_committed(draft, prefix, oracle);
        for (int layer = 0; layer < draft.config.n_layers; ++layer) {
            for (int row = 0; row < covered; ++row) {
                const auto got = view.draft_cache.key_row(layer, row);
                const auto want = oracle.key_row(layer, row);
                for (int c = 0; c < draft.config.d_model; ++c) {
                    CHECK(got[c] == doctest::Approx(want[c]).epsilon(1e-5));
                }
            }
        }
    };
    generate(base, draft, config, bytes("baseline"), hook);
}

TEST_CASE("without calibration the drafter cache keeps fuzzy rows") {
    // Needs a drafter deep enough for lp=2 to form a real pair group.
    const Model base = init_model(tiny_config(7, 95));
    const Model draft = make_truncated_draft(base, 5);
    RunConfig config = base_config(Algorithm::easyspec);
    config.calibration = false;
    config.max_new_tokens = 12;

    bool any_difference = false;
    const IterationHook hook = [&](const IterationInspection& view) {
        const int covered = view.draft_cache.committed_len();
        const std::vector<Token> prefix(view.committed.begin(),
                                        view.committed.begin() + covered);
        KvCache oracle(draft.config.n_layers, draft.config.d_model);
        prefill_committed(draft, prefix, oracle);
        for (int layer = 0; layer < draft.config.n_layers && !any_difference; ++layer) {
            for (int row = 0; row < covered && !any_difference; ++row) {
                const auto got = view.draft_cache.key_row(layer, row);
                const auto want = oracle.key_row(layer, row);
                for (int c = 0; c < draft.config.d_model; ++c) {
                    if (std::abs(got[c] - want[c]) > 1e-4f) {
                        any_difference = true;
                        break;
                    }
                }
            }
        }
    };
    const GenerateResult result = generate(base, draft, config, bytes("drifting"), hook);
    CHECK(any_difference);  // fuzzy values persist, the ablation arm drifts
    for (const auto& trace : result.report.iterations) {
        CHECK(trace.sequential_forwards == 0);
        CHECK(trace.fuzzy_forwards == config.n);  // leading pass is fuzzy too
        CHECK(trace.calibrate_sim == 0.0);
    }
}

TEST_CASE("speculative output matches vanilla in distribution (smoke)") {
    // 5-layer drafter so the lp=2 plan genuinely parallelizes a pair.
    const Model base = init_model(tiny_config(7, 21));
    const Model draft = make_truncated_draft(base, 5);
    RunConfig config = base_config(Algorithm::easyspec);
    config.n = 3;
    config.widths = {2, 2, 2};
    config.lp_size = 2;
    config.max_new_tokens = 2;
    config.seed = 11;

    const long runs = 4000;
    const auto spec = prefix_distribution(base, draft, config, bytes("easyspec"), runs, 2);
    RunConfig vanilla = config;
    vanilla.algorithm = Algorithm::vanilla;
    const auto ref = prefix_distribution(base, draft, vanilla, bytes("easyspec"), runs, 2);
    const double tv = total_variation(spec, ref, runs, runs);
    CHECK(tv < 0.08);
}

TEST_CASE("simulated drafting cost follows T_seq + (n-1) T_fuzzy per iteration") {
    const Model base = init_model(tiny_config(7, 121));
    const Model draft = make_truncated_draft(base, 5);
    RunConfig config = base_config(Algorithm::easyspec);
    config.n = 3;
    config.widths = {2, 2, 2};
    config.lp_size = 2;
    config.max_new_tokens = 12;

    const GenerateResult result = generate(base, draft, config, bytes("relation"));
    const LayerPlan plan = plan_groups(draft.config.n_layers, config.lp_size);

    int prompt_len = static_cast<int>(std::strlen("relation")) + 1;  // BOS + bytes
    int previous_m = 0;
    for (std::size_t i = 0; i < result.report.iterations.size(); ++i) {
        const auto& trace = result.report.iterations[i];
        // The calibration pass covers the uncached suffix: the whole prompt
        // first, then last iteration's accepted tokens plus the bonus.
        const int suffix = i == 0 ? prompt_len : previous_m + 1;
        CHECK(trace.calibrate_sim ==
              doctest::Approx(sequential_draft_forward_time(config.cost,
                                                            draft.config.n_layers, suffix)));
        // Fuzzy passes cover tree levels 1..n-1 of the full width-2 tree.
        double expected_draft = 0.0;
        int level_size = 1;
        for (int level = 1; level <= config.n - 1; ++level) {
            level_size *= 2;
            expected_draft += simulate_draft_group(config.cost, plan, level_size);
        }
        CHECK(trace.draft_sim == doctest::Approx(expected_draft));
        previous_m = trace.m;
    }
}

TEST_CASE("acceptance rate stays in range and stage times are attributed") {
    const Model base = init_model(tiny_config(6, 97));
    const Model draft = make_truncated_draft(base, 4);
    const RunConfig config = base_config(Algorithm::easyspec);

    const GenerateResult result = generate(base, draft, config, bytes("ranges"));
    CHECK(result.report.alpha >= 0.0);
    CHECK(result.report.alpha <= 1.0);

    double stage_sum = 0.0;
    for (const auto& trace : result.report.iterations) {
        stage_sum += trace.draft_sim + trace.verify_sim + trace.calibrate_sim;
    }
    CHECK(result.report.total_sim == doctest::Approx(stage_sum));
}

TEST_CASE("occupancy shows layer-level fan-out only for easyspec") {
    const Model base = init_model(tiny_config(7, 119));
    const Model draft = make_truncated_draft(base, 5);

    auto busy_draft_devices = [](const std::string& csv) {
        int busy = 0;
        std::istringstream lines(csv);
        std::string line;
        while (std::getline(lines, line)) {
            if (line.find(",draft,") == std::string::npos) continue;
            const auto second_comma = line.find(',', line.find(',') + 1);
            const double units = std::stod(line.substr(second_comma + 1));
            busy += units > 0.0 ? 1 : 0;
        }
        return busy;
    };

    RunConfig config = base_config(Algorithm::easyspec);
    config.lp_size = 2;
    config.max_new_tokens = 8;
    const GenerateResult spec = generate(base, draft, config, bytes("devices"));
    CHECK(busy_draft_devices(spec.occupancy_csv) > 1);

    config = base_config(Algorithm::sd);
    config.widths = {1, 1, 1, 1};
    config.max_new_tokens = 8;
    const GenerateResult sd = generate(base, draft, config, bytes("devices"));
    CHECK(busy_draft_devices(sd.occupancy_csv) == config.cost.tp_size_draft);
}

TEST_CASE("token output is independent of the worker count") {
    const Model base = init_model(tiny_config(7, 123));
    const Model draft = make_truncated_draft(base, 5);
    RunConfig config = base_config(Algorithm::easyspec);
    config.max_new_tokens = 10;

    config.workers = 1;
    const GenerateResult one = generate(base, draft, config, bytes("pool"));
    config.workers = 4;
    const GenerateResult four = generate(base, draft, config, bytes("pool"));
    CHECK(one.tokens == four.tokens);
    CHECK(strip_wall(one.report) == strip_wall(four.report));
}

TEST_CASE("max_new_tokens truncates the final burst") {
    const Model base = init_model(tiny_config(4, 99));
    RunConfig config = base_config(Algorithm::easyspec);
    config.temperature = 0.0f;
    config.lp_size = 1;
    config.max_new_tokens = 7;  // not a multiple of n+1

    const GenerateResult result = generate(base, base, config, bytes("cap"));
    CHECK(result.tokens.size() == 7);
    long emitted = 0;
    for (const auto& trace : result.report.iterations) emitted += trace.emitted;
    CHECK(emitted == 7);
}

TEST_CASE("bad run configs are rejected") {
    const Model base = init_model(tiny_config(4, 101));
    const Model draft = make_truncated_draft(base, 2);

    RunConfig config = base_config(Algorithm::easyspec);
    config.max_new_tokens = 0;
    CHECK_THROWS_AS(generate(base, draft, config, bytes("x")), ConfigError);

    config = base_config(Algorithm::sd);
    config.widths = {2, 1, 1, 1};
    CHECK_THROWS_AS(generate(base, draft, config, bytes("x")), ConfigError);

    config = base_config(Algorithm::easyspec);
    config.widths = {2, 2};  // wrong length for n=4
    CHECK_THROWS_AS(generate(base, draft, config, bytes("x")), ConfigError);

    config = base_config(Algorithm::easyspec);
    config.max_new_tokens = 100000;  // cannot fit max_positions
    CHECK_THROWS_AS(generate(base, draft, config, bytes("x")), ConfigError);
}

TEST_CASE("tokenizer round trip") {
    const auto tokens = tokenize_prompt(bytes("Az"), kDefaultVocab);
    CHECK(tokens == std::vector<Token>{kBosToken, 'A', 'z'});
    CHECK(render_tokens(tokens) == "<bos>Az");
    CHECK_THROWS_AS(tokenize_prompt(bytes("x"), 8), ConfigError);
}

TEST_SUITE_END();
