#include "espec/orchestrator.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cmath>
#include <thread>

#include "espec/draft_engine.hpp"
#include "espec/errors.hpp"
#include "espec/rng.hpp"
#include "espec/verifier.hpp"
#include "espec/worker_pool.hpp"

namespace espec {

std::string to_string(Algorithm algorithm) {
    switch (algorithm) {
        case Algorithm::vanilla: return "vanilla";
        case Algorithm::sd: return "sd";
        case Algorithm::sd_tree: return "sd_tree";
        case Algorithm::easyspec: return "easyspec";
    }
    throw ConfigError("unknown algorithm");
}

Algorithm algorithm_from_string(const std::string& name) {
    if (name == "vanilla") return Algorithm::vanilla;
    if (name == "sd") return Algorithm::sd;
    if (name == "sd_tree") return Algorithm::sd_tree;
    if (name == "easyspec") return Algorithm::easyspec;
    throw ConfigError("unknown algorithm '" + name + "'");
}

std::vector<int> RunConfig::effective_widths() const {
    if (widths.empty()) {
        return std::vector<int>(static_cast<std::size_t>(n), 1);
    }
    return widths;
}

std::vector<Token> tokenize_prompt(std::span<const std::uint8_t> prompt, int vocab_size) {
    if (vocab_size < kDefaultVocab && !prompt.empty()) {
        throw ConfigError("byte prompts need the full " + std::to_string(kDefaultVocab) +
                          "-token vocabulary");
    }
    std::vector<Token> tokens;
    tokens.reserve(prompt.size() + 1);
    tokens.push_back(kBosToken);
    for (std::uint8_t byte : prompt) tokens.push_back(static_cast<Token>(byte));
    return tokens;
}

std::string render_tokens(std::span<const Token> tokens) {
    std::string out;
    for (Token tok : tokens) {
        if (tok == kBosToken) {
            out += "<bos>";
        } else if (tok == kEosToken) {
            out += "<eos>";
        } else if (tok >= 0x20 && tok < 0x7f) {
            out += static_cast<char>(tok);
        } else {
            char buf[8];
            std::snprintf(buf, sizeof buf, "\\x%02x", tok & 0xff);
            out += buf;
        }
    }
    return out;
}

double vanilla_baseline_sim(const CostParams& cost, int base_layers, int prompt_len, long tokens) {
    if (tokens <= 0) return 0.0;
    double total = base_forward_time(cost, base_layers, std::max(prompt_len, 1));
    total += static_cast<double>(tokens - 1) * base_forward_time(cost, base_layers, 1);
    return total;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

struct StageSimDelta {
    SimClock* clock;
    Stage stage;
    double before;
    explicit StageSimDelta(SimClock& c, Stage s) : clock(&c), stage(s), before(c.stage_elapsed(s)) {}
    double delta() const { return clock->stage_elapsed(stage) - before; }
};

void validate_run_config(const RunConfig& config, const Model& base, const Model& draft) {
    config.cost.validate();
    if (config.n < 1) throw ConfigError("speculation length must be >= 1");
    if (config.max_new_tokens < 1) throw ConfigError("max_new_tokens must be >= 1");
    if (config.temperature < 0.0f) throw ConfigError("temperature must be >= 0");
    const auto widths = config.effective_widths();
    if (static_cast<int>(widths.size()) != config.n) {
        throw ConfigError("widths must list one branching factor per speculation level");
    }
    for (int w : widths) {
        if (w < 1 || w > draft.config.vocab_size) {
            throw ConfigError("tree widths must lie in [1, vocab]");
        }
    }
    if (config.algorithm == Algorithm::sd) {
        for (int w : widths) {
            if (w != 1) throw ConfigError("plain sd requires all tree widths = 1");
        }
    }
    if (base.config.vocab_size != draft.config.vocab_size ||
        base.config.d_model != draft.config.d_model) {
        throw ConfigError("base and draft models must share vocabulary and width");
    }
}

LayerPlan resolve_plan(const RunConfig& config, const Model& draft) {
    if (config.algorithm != Algorithm::easyspec) {
        return plan_groups(draft.config.n_layers, 1);
    }
    LayerPlan plan = config.plan_override ? parse_plan_override(*config.plan_override)
                                          : plan_groups(draft.config.n_layers, config.lp_size);
    if (plan.n_layers() != draft.config.n_layers) {
        throw ConfigError("layer plan covers " + std::to_string(plan.n_layers()) +
                          " layers, drafter has " + std::to_string(draft.config.n_layers));
    }
    return plan;
}

// One generation in flight. The committed token list is shared truth; each
// cache tracks how many committed tokens it has rows for. The base cache
// always trails by exactly one token (the context frontier is re-input with
// the next tree), while the drafter cache is refilled up to the full
// committed length by the leading suffix pass of each iteration.
class Generation {
public:
    Generation(const Model& base, const Model& draft, const RunConfig& config,
               std::span<const std::uint8_t> prompt, const IterationHook& hook)
        : hook_(hook),
          base_(base),
          draft_(draft),
          config_(config),
          widths_(config.effective_widths()),
          plan_(resolve_plan(config, draft)),
          base_cache_(base.config.n_layers, base.config.d_model),
          draft_cache_(draft.config.n_layers, draft.config.d_model),
          rng_(config.seed),
          clock_(config.cost.devices),
          pool_(resolve_worker_count(config.workers, plan_.max_group_size())) {
        validate_run_config(config, base, draft);
        committed_ = tokenize_prompt(prompt, base.config.vocab_size);
        const int needed = static_cast<int>(committed_.size()) + config.max_new_tokens + config.n;
        const int room = std::min(base.config.max_positions, draft.config.max_positions);
        if (needed > room) {
            throw ConfigError("prompt plus max_new_tokens exceeds max_positions (" +
                              std::to_string(needed) + " > " + std::to_string(room) + ")");
        }
    }

    GenerateResult run() {
        std::vector<Token> generated;
        std::vector<IterationTrace> traces;
        const int prompt_len = static_cast<int>(committed_.size());

        int iteration = 0;
        while (static_cast<int>(generated.size()) < config_.max_new_tokens) {
            traces.push_back(config_.algorithm == Algorithm::vanilla
                                 ? run_iteration_vanilla(generated)
                                 : run_iteration_speculative(generated));
            if (hook_) {
                hook_(IterationInspection{iteration, committed_, draft_cache_, base_cache_});
            }
            ++iteration;
        }
        if (static_cast<int>(generated.size()) > config_.max_new_tokens) {
            generated.resize(static_cast<std::size_t>(config_.max_new_tokens));
        }

        GenerateResult result;
        result.tokens = std::move(generated);
        const double baseline =
            vanilla_baseline_sim(config_.cost, base_.config.n_layers, prompt_len,
                                 static_cast<long>(result.tokens.size()));
        result.report = aggregate(traces, baseline);
        result.report.algorithm = to_string(config_.algorithm);
        result.report.n = config_.algorithm == Algorithm::vanilla ? 0 : config_.n;
        result.report.widths = config_.algorithm == Algorithm::vanilla ? std::vector<int>{} : widths_;
        result.report.lp_size = config_.algorithm == Algorithm::easyspec ? plan_.lp_size : 1;
        result.report.config_echo = config_echo();
        result.occupancy_csv = clock_.occupancy_csv();
        return result;
    }

private:
    nlohmann::ordered_json config_echo() const {
        nlohmann::ordered_json j;
        j["algorithm"] = to_string(config_.algorithm);
        j["n"] = config_.n;
        j["widths"] = widths_;
        j["plan"] = format_plan(plan_);
        j["temperature"] = config_.temperature;
        j["max_new_tokens"] = config_.max_new_tokens;
        j["seed"] = config_.seed;
        j["calibration"] = config_.calibration;
        j["cost"] = {{"c_fixed", config_.cost.c_fixed},
                     {"c_mem", config_.cost.c_mem},
                     {"c_comp", config_.cost.c_comp},
                     {"t_addi", config_.cost.t_addi},
                     {"attn_workload", config_.cost.attn_workload},
                     {"mlp_workload", config_.cost.mlp_workload},
                     {"base_layer_workload", config_.cost.base_layer_workload},
                     {"tp_size_base", config_.cost.tp_size_base},
                     {"tp_size_draft", config_.cost.tp_size_draft},
                     {"devices", config_.cost.devices}};
        return j;
    }

    // Stages the committed tokens a cache is missing as a non-branching
    // chain and returns (rows, tokens).
    struct SuffixChain {
        std::vector<int> rows;
        std::vector<Token> tokens;
    };

    SuffixChain stage_suffix(KvCache& cache, int cached_tokens, bool fuzzy) {
        SuffixChain chain;
        const int total = static_cast<int>(committed_.size());
        std::vector<int> parents;
        for (int i = cached_tokens; i < total; ++i) {
            parents.push_back(parents.empty() ? kCommittedTail
                                              : cache.committed_len() +
                                                    static_cast<int>(parents.size()) - 1);
            chain.tokens.push_back(committed_[static_cast<std::size_t>(i)]);
        }
        chain.rows = cache.stage_append(parents, fuzzy);
        return chain;
    }

    ForwardBatch batch_for_rows(const KvCache& cache, const std::vector<int>& rows,
                                const TreeMask* mask, bool calibrate_writes) const {
        ForwardBatch batch;
        batch.flat_rows = rows;
        for (int row : rows) batch.positions.push_back(cache.position_of(row));
        batch.mask = mask;
        batch.calibrate_writes = calibrate_writes;
        return batch;
    }

    // Drafter leading pass over the uncached committed suffix. Sequential
    // and precise in sd/sd_tree and calibrated easyspec (where it doubles as
    // the KV refill), fuzzy in the no-calibration ablation arm. Emits the
    // level-1 draft distribution and commits the suffix rows.
    Matrix drafter_leading_pass(IterationTrace& trace) {
        const bool easyspec = config_.algorithm == Algorithm::easyspec;
        const bool calibrated = easyspec && config_.calibration;
        const bool fuzzy_pass = easyspec && !config_.calibration;
        const Stage stage = calibrated ? Stage::calibrate : Stage::draft;

        const auto start = Clock::now();
        StageSimDelta sim(clock_, stage);

        SuffixChain chain = stage_suffix(draft_cache_, draft_cached_, fuzzy_pass);
        const TreeMask mask = draft_cache_.build_tree_mask();
        const ForwardBatch batch = batch_for_rows(draft_cache_, chain.rows, &mask, calibrated);
        const Matrix h_in = embed(draft_, chain.tokens);

        Matrix hidden;
        if (fuzzy_pass) {
            FuzzyOptions options;
            options.pool = &pool_;
            hidden = forward_fuzzy(draft_, plan_, h_in, draft_cache_, batch, options);
            ++counters_.fuzzy_forwards;
            sim_fuzzy_draft_forward(config_.cost, plan_, static_cast<int>(chain.tokens.size()),
                                    clock_, stage);
        } else {
            hidden = forward_sequential(draft_, h_in, draft_cache_, batch);
            ++counters_.sequential_forwards;
            sim_sequential_draft_forward(config_.cost, draft_.config.n_layers,
                                         static_cast<int>(chain.tokens.size()), clock_, stage);
        }
        draft_cache_.commit_path(chain.rows);
        draft_cached_ = static_cast<int>(committed_.size());

        Matrix root_logits = lm_logits(draft_, Matrix(1, hidden.cols,
                                                      {hidden.row(hidden.rows - 1).begin(),
                                                       hidden.row(hidden.rows - 1).end()}));

        const double elapsed = seconds_since(start);
        if (calibrated) {
            trace.calibrate_wall += elapsed;
            trace.calibrate_sim += sim.delta();
        } else {
            trace.draft_wall += elapsed;
            trace.draft_sim += sim.delta();
        }
        return root_logits;
    }

    DraftTree draft_stage(const Matrix& root_logits, IterationTrace& trace) {
        const bool fuzzy_passes = config_.algorithm == Algorithm::easyspec;
        const auto start = Clock::now();
        StageSimDelta sim(clock_, Stage::draft);

        DraftTree tree = draft_tree(draft_, plan_, draft_cache_, root_logits.row(0), widths_,
                                    config_.temperature, rng_, counters_, fuzzy_passes, &pool_);

        // Simulated cost per forwarded level (the last level is selected but
        // never forwarded).
        std::vector<int> level_sizes(static_cast<std::size_t>(config_.n), 0);
        for (const auto& node : tree.nodes) {
            ++level_sizes[static_cast<std::size_t>(node.depth - 1)];
        }
        for (int level = 0; level + 1 < config_.n; ++level) {
            const int s = level_sizes[static_cast<std::size_t>(level)];
            if (s == 0) break;
            if (fuzzy_passes) {
                sim_fuzzy_draft_forward(config_.cost, plan_, s, clock_, Stage::draft);
            } else {
                sim_sequential_draft_forward(config_.cost, draft_.config.n_layers, s, clock_,
                                             Stage::draft);
            }
        }

        trace.draft_wall += seconds_since(start);
        trace.draft_sim += sim.delta();
        trace.drafted_nodes = tree.node_count();
        return tree;
    }

    VerificationOutcome verify_stage(const DraftTree& tree, std::vector<int>& node_base_rows,
                                     IterationTrace& trace) {
        const auto start = Clock::now();
        StageSimDelta sim(clock_, Stage::verify);

        const int base_cached = base_cache_.committed_len();
        SuffixChain chain = stage_suffix(base_cache_, base_cached, false);

        // Tree nodes are staged right after the suffix chain in index order,
        // so node j lands on row first_node_row + j.
        const int first_node_row = chain.rows.back() + 1;
        std::vector<int> tree_parents;
        std::vector<Token> tree_tokens;
        for (const auto& node : tree.nodes) {
            tree_parents.push_back(node.parent < 0 ? chain.rows.back()
                                                   : first_node_row + node.parent);
            tree_tokens.push_back(node.token);
        }
        node_base_rows = base_cache_.stage_append(tree_parents, false);

        std::vector<int> all_rows = chain.rows;
        all_rows.insert(all_rows.end(), node_base_rows.begin(), node_base_rows.end());
        std::vector<Token> all_tokens = chain.tokens;
        all_tokens.insert(all_tokens.end(), tree_tokens.begin(), tree_tokens.end());

        const TreeMask mask = base_cache_.build_tree_mask();
        const ForwardBatch batch = batch_for_rows(base_cache_, all_rows, &mask, false);
        const Matrix hidden = forward_sequential(base_, embed(base_, all_tokens), base_cache_, batch);
        const Matrix logits = lm_logits(base_, hidden);
        ++counters_.base_forwards;
        sim_base_forward(config_.cost, base_.config.n_layers, static_cast<int>(all_tokens.size()),
                         clock_, Stage::verify);

        std::vector<ProbVector> base_dists;
        base_dists.reserve(tree.nodes.size() + 1);
        const int frontier_row = static_cast<int>(chain.rows.size()) - 1;
        base_dists.push_back(softmax_temp(logits.row(frontier_row), config_.temperature));
        for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
            base_dists.push_back(softmax_temp(logits.row(frontier_row + 1 + static_cast<int>(i)),
                                              config_.temperature));
        }

        VerificationOutcome outcome = verify_tree(tree, base_dists, config_.temperature, rng_);

        // Base cache keeps the suffix chain plus the accepted path; the
        // other tree rows are dropped.
        std::vector<int> commit_rows = chain.rows;
        for (int node_index : outcome.accepted_path) {
            commit_rows.push_back(node_base_rows[static_cast<std::size_t>(node_index)]);
        }
        base_cache_.commit_path(commit_rows);

        trace.verify_wall += seconds_since(start);
        trace.verify_sim += sim.delta();
        return outcome;
    }

    void resolve_draft_cache(const DraftTree& tree, const VerificationOutcome& outcome) {
        if (config_.algorithm == Algorithm::easyspec && config_.calibration) {
            // Fuzzy rows are dropped no matter how much was accepted; the
            // next leading pass refills them with precise values.
            draft_cache_.discard_staged();
            return;
        }
        std::vector<int> commit_rows;
        for (int node_index : outcome.accepted_path) {
            const int row = tree.nodes[static_cast<std::size_t>(node_index)].cache_row;
            if (row < 0) break;  // final level is never staged on the drafter
            commit_rows.push_back(row);
        }
        draft_cache_.commit_path(commit_rows);
        draft_cached_ += static_cast<int>(commit_rows.size());
    }

    IterationTrace run_iteration_speculative(std::vector<Token>& generated) {
        IterationTrace trace;
        trace.n = config_.n;
        const long base_before = counters_.base_forwards;
        const long fuzzy_before = counters_.fuzzy_forwards;
        const long seq_before = counters_.sequential_forwards;

        const Matrix root_logits = drafter_leading_pass(trace);
        const DraftTree tree = draft_stage(root_logits, trace);
        std::vector<int> node_base_rows;
        const VerificationOutcome outcome = verify_stage(tree, node_base_rows, trace);
        resolve_draft_cache(tree, outcome);

        for (Token tok : outcome.accepted_tokens) committed_.push_back(tok);
        committed_.push_back(outcome.bonus_token);

        const int remaining = config_.max_new_tokens - static_cast<int>(generated.size());
        const int emit_count = std::min(outcome.m + 1, remaining);
        for (int i = 0; i < emit_count; ++i) {
            const std::size_t from = committed_.size() - static_cast<std::size_t>(outcome.m + 1);
            generated.push_back(committed_[from + static_cast<std::size_t>(i)]);
        }

        trace.m = outcome.m;
        trace.emitted = emit_count;
        trace.base_forwards = counters_.base_forwards - base_before;
        trace.fuzzy_forwards = counters_.fuzzy_forwards - fuzzy_before;
        trace.sequential_forwards = counters_.sequential_forwards - seq_before;
        return trace;
    }

    IterationTrace run_iteration_vanilla(std::vector<Token>& generated) {
        IterationTrace trace;
        const auto start = Clock::now();
        StageSimDelta sim(clock_, Stage::verify);

        const int cached = base_cache_.committed_len();
        SuffixChain chain = stage_suffix(base_cache_, cached, false);
        const TreeMask mask = base_cache_.build_tree_mask();
        const ForwardBatch batch = batch_for_rows(base_cache_, chain.rows, &mask, false);
        const Matrix hidden = forward_sequential(base_, embed(base_, chain.tokens), base_cache_, batch);
        ++counters_.base_forwards;
        sim_base_forward(config_.cost, base_.config.n_layers,
                         static_cast<int>(chain.tokens.size()), clock_, Stage::verify);

        const Matrix logits = lm_logits(
            base_, Matrix(1, hidden.cols,
                          {hidden.row(hidden.rows - 1).begin(), hidden.row(hidden.rows - 1).end()}));
        const ProbVector dist = softmax_temp(logits.row(0), config_.temperature);
        const Token next = config_.temperature == 0.0f
                               ? argmax(dist.probs)
                               : sample_from(dist, rng_);
        base_cache_.commit_path(chain.rows);
        committed_.push_back(next);
        generated.push_back(next);

        trace.emitted = 1;
        trace.base_forwards = 1;
        trace.verify_wall = seconds_since(start);
        trace.verify_sim = sim.delta();
        return trace;
    }

    IterationHook hook_;
    const Model& base_;
    const Model& draft_;
    RunConfig config_;
    std::vector<int> widths_;
    LayerPlan plan_;
    KvCache base_cache_;
    KvCache draft_cache_;
    Xoshiro256ss rng_;
    SimClock clock_;
    WorkerPool pool_;
    ForwardCounters counters_;
    std::vector<Token> committed_;
    int draft_cached_ = 0;
};

}  // namespace

GenerateResult generate(const Model& base, const Model& draft, const RunConfig& config,
                        std::span<const std::uint8_t> prompt, const IterationHook& hook) {
    Generation generation(base, draft, config, prompt, hook);
    return generation.run();
}

std::map<std::vector<Token>, long> prefix_distribution(const Model& base, const Model& draft,
                                                       RunConfig config,
                                                       std::span<const std::uint8_t> prompt,
                                                       long runs, int threads) {
    config.workers = 1;  // runs are the parallel axis here
    const std::uint64_t base_seed = config.seed;

    const int n_threads = std::max(1, threads);
    std::vector<std::map<std::vector<Token>, long>> partials(static_cast<std::size_t>(n_threads));
    std::vector<std::thread> workers;
    auto work = [&](int thread_index) {
        auto& local = partials[static_cast<std::size_t>(thread_index)];
        RunConfig run_config = config;
        for (long r = thread_index; r < runs; r += n_threads) {
            SplitMix64 mix(base_seed + 0x9E37ULL * static_cast<std::uint64_t>(r + 1));
            run_config.seed = mix.next();
            const GenerateResult result = generate(base, draft, run_config, prompt);
            ++local[result.tokens];
        }
    };
    if (n_threads == 1) {
        work(0);
    } else {
        for (int t = 0; t < n_threads; ++t) workers.emplace_back(work, t);
        for (auto& w : workers) w.join();
    }

    std::map<std::vector<Token>, long> merged;
    for (const auto& partial : partials) {
        for (const auto& [key, count] : partial) merged[key] += count;
    }
    return merged;
}

double total_variation(const std::map<std::vector<Token>, long>& a,
                       const std::map<std::vector<Token>, long>& b, long runs_a, long runs_b) {
    if (runs_a <= 0 || runs_b <= 0) {
        throw ConfigError("total variation needs positive run counts");
    }
    double distance = 0.0;
    auto ita = a.begin();
    auto itb = b.begin();
    while (ita != a.end() || itb != b.end()) {
        double pa = 0.0, pb = 0.0;
        if (itb == b.end() || (ita != a.end() && ita->first < itb->first)) {
            pa = static_cast<double>(ita->second) / runs_a;
            ++ita;
        } else if (ita == a.end() || itb->first < ita->first) {
            pb = static_cast<double>(itb->second) / runs_b;
            ++itb;
        } else {
            pa = static_cast<double>(ita->second) / runs_a;
            pb = static_cast<double>(itb->second) / runs_b;
            ++ita;
            ++itb;
        }
        distance += std::abs(pa - pb);
    }
    return distance / 2.0;
}

}  // namespace espec
