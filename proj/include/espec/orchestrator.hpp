#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "espec/cost_sim.hpp"
#include "espec/layer_plan.hpp"
#include "espec/model.hpp"
#include "espec/report.hpp"

namespace espec {

enum class Algorithm { vanilla, sd, sd_tree, easyspec };

std::string to_string(Algorithm algorithm);
Algorithm algorithm_from_string(const std::string& name);

struct RunConfig {
    Algorithm algorithm = Algorithm::easyspec;
    int n = 5;                    // speculation length (tree depth)
    std::vector<int> widths;      // per-depth branching; empty means all 1s
    int lp_size = 4;
    std::optional<std::string> plan_override;
    float temperature = 0.8f;
    int max_new_tokens = 64;
    std::uint64_t seed = 1;
    bool calibration = true;      // easyspec only; off reproduces the ablation arm
    int workers = 0;              // 0 = auto (largest plan group, ESPEC_WORKERS override)
    CostParams cost;

    // Effective widths: the configured list, or n ones.
    std::vector<int> effective_widths() const;
};

struct GenerateResult {
    std::vector<Token> tokens;  // newly generated tokens, prompt excluded
    RunReport report;
    std::string occupancy_csv;
};

// End-of-iteration view for instrumentation and oracle tests. The caches
// are the live ones; committed covers everything decided so far, while each
// cache's committed_len says how many of those tokens it holds rows for.
struct IterationInspection {
    int iteration = 0;
    std::span<const Token> committed;
    const KvCache& draft_cache;
    const KvCache& base_cache;
};
using IterationHook = std::function<void(const IterationInspection&)>;

std::vector<Token> tokenize_prompt(std::span<const std::uint8_t> prompt, int vocab_size);

// Printable rendering of generated tokens (bytes pass through, control
// bytes and BOS/EOS become escapes).
std::string render_tokens(std::span<const Token> tokens);

// Runs one generation to max_new_tokens. Identical (models, config, prompt)
// triples give identical tokens and identical reports up to wall-clock
// fields.
GenerateResult generate(const Model& base, const Model& draft, const RunConfig& config,
                        std::span<const std::uint8_t> prompt, const IterationHook& hook = {});

// Simulated cost of emitting `tokens` tokens vanilla-style after a prompt of
// prompt_len tokens: one token-parallel pass over the prompt, then one base
// forward per remaining token.
double vanilla_baseline_sim(const CostParams& cost, int base_layers, int prompt_len, long tokens);

// Empirical distribution of the first max_new_tokens generated tokens over
// `runs` independent generations; run r uses a seed derived from
// (config.seed, r), so the result is independent of the thread count.
std::map<std::vector<Token>, long> prefix_distribution(const Model& base, const Model& draft,
                                                       RunConfig config,
                                                       std::span<const std::uint8_t> prompt,
                                                       long runs, int threads);

// Total variation distance between two empirical distributions.
double total_variation(const std::map<std::vector<Token>, long>& a,
                       const std::map<std::vector<Token>, long>& b, long runs_a, long runs_b);

}  // namespace espec
