#include "espec/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "espec/draft_engine.hpp"
#include "espec/errors.hpp"
#include "espec/model_io.hpp"
#include "espec/orchestrator.hpp"
#include "espec/verifier.hpp"

namespace espec::cli {

namespace {

using ordered_json = nlohmann::ordered_json;

std::vector<int> parse_int_list(const std::string& text, const char* what) {
    std::vector<int> values;
    std::stringstream stream(text);
    std::string token;
    while (std::getline(stream, token, ',')) {
        // "a..b" expands to the inclusive range.
        const auto dots = token.find("..");
        try {
            if (dots != std::string::npos) {
                const int lo = std::stoi(token.substr(0, dots));
                const int hi = std::stoi(token.substr(dots + 2));
                for (int v = lo; v <= hi; ++v) values.push_back(v);
            } else {
                values.push_back(std::stoi(token));
            }
        } catch (const std::exception&) {
            throw ConfigError(std::string("cannot parse ") + what + " list '" + text + "'");
        }
    }
    if (values.empty()) {
        throw ConfigError(std::string(what) + " list is empty");
    }
    return values;
}

std::vector<double> parse_double_list(const std::string& text, const char* what) {
    std::vector<double> values;
    std::stringstream stream(text);
    std::string token;
    while (std::getline(stream, token, ',')) {
        try {
            values.push_back(std::stod(token));
        } catch (const std::exception&) {
            throw ConfigError(std::string("cannot parse ") + what + " list '" + text + "'");
        }
    }
    if (values.empty()) {
        throw ConfigError(std::string(what) + " list is empty");
    }
    return values;
}

void reject_unknown_keys(const ordered_json& object, const std::set<std::string>& allowed,
                         const char* where) {
    for (const auto& [key, value] : object.items()) {
        (void)value;
        if (!allowed.count(key)) {
            throw ConfigError("unknown key '" + key + "' in " + where + " config");
        }
    }
}

// Everything a command needs, merged from the config file and flag
// overrides (flags win).
struct Settings {
    ModelConfig model;
    std::optional<std::string> model_file;
    std::optional<std::string> draft_file;
    std::optional<int> draft_keep_layers;
    std::optional<std::uint64_t> draft_seed;
    std::optional<int> draft_layers;
    RunConfig run;
    std::string out_dir = ".";
};

void load_config_file(Settings& s, const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file '" + path + "'");
    }
    ordered_json j;
    try {
        j = ordered_json::parse(in);
    } catch (const std::exception& e) {
        throw ConfigError("invalid config JSON: " + std::string(e.what()));
    }
    reject_unknown_keys(j, {"model", "draft", "run", "cost", "workers"}, "top-level");

    if (j.contains("model")) {
        const auto& m = j["model"];
        reject_unknown_keys(m,
                            {"vocab_size", "d_model", "n_layers", "n_heads", "d_head", "d_mlp",
                             "max_positions", "norm_eps", "seed", "file"},
                            "model");
        auto& cfg = s.model;
        if (m.contains("vocab_size")) cfg.vocab_size = m["vocab_size"].get<int>();
        if (m.contains("d_model")) cfg.d_model = m["d_model"].get<int>();
        if (m.contains("n_layers")) cfg.n_layers = m["n_layers"].get<int>();
        if (m.contains("n_heads")) cfg.n_heads = m["n_heads"].get<int>();
        if (m.contains("d_head")) cfg.d_head = m["d_head"].get<int>();
        if (m.contains("d_mlp")) cfg.d_mlp = m["d_mlp"].get<int>();
        if (m.contains("max_positions")) cfg.max_positions = m["max_positions"].get<int>();
        if (m.contains("norm_eps")) cfg.norm_eps = m["norm_eps"].get<float>();
        if (m.contains("seed")) cfg.seed = m["seed"].get<std::uint64_t>();
        if (m.contains("file")) s.model_file = m["file"].get<std::string>();
    }
    if (j.contains("draft")) {
        const auto& d = j["draft"];
        reject_unknown_keys(d, {"keep_layers", "file", "seed", "n_layers"}, "draft");
        if (d.contains("keep_layers")) s.draft_keep_layers = d["keep_layers"].get<int>();
        if (d.contains("file")) s.draft_file = d["file"].get<std::string>();
        if (d.contains("seed")) s.draft_seed = d["seed"].get<std::uint64_t>();
        if (d.contains("n_layers")) s.draft_layers = d["n_layers"].get<int>();
    }
    if (j.contains("run")) {
        const auto& r = j["run"];
        reject_unknown_keys(r,
                            {"algorithm", "n", "widths", "lp", "plan", "temperature",
                             "max_new_tokens", "seed", "calibration"},
                            "run");
        if (r.contains("algorithm")) s.run.algorithm = algorithm_from_string(r["algorithm"]);
        if (r.contains("n")) s.run.n = r["n"].get<int>();
        if (r.contains("widths")) s.run.widths = r["widths"].get<std::vector<int>>();
        if (r.contains("lp")) s.run.lp_size = r["lp"].get<int>();
        if (r.contains("plan")) s.run.plan_override = r["plan"].get<std::string>();
        if (r.contains("temperature")) s.run.temperature = r["temperature"].get<float>();
        if (r.contains("max_new_tokens")) s.run.max_new_tokens = r["max_new_tokens"].get<int>();
        if (r.contains("seed")) s.run.seed = r["seed"].get<std::uint64_t>();
        if (r.contains("calibration")) s.run.calibration = r["calibration"].get<bool>();
    }
    if (j.contains("cost")) {
        const auto& c = j["cost"];
        reject_unknown_keys(c,
                            {"c_fixed", "c_mem", "c_comp", "t_addi", "attn_workload",
                             "mlp_workload", "base_layer_workload", "tp_size_base",
                             "tp_size_draft", "devices"},
                            "cost");
        auto& cost = s.run.cost;
        if (c.contains("c_fixed")) cost.c_fixed = c["c_fixed"].get<double>();
        if (c.contains("c_mem")) cost.c_mem = c["c_mem"].get<double>();
        if (c.contains("c_comp")) cost.c_comp = c["c_comp"].get<double>();
        if (c.contains("t_addi")) cost.t_addi = c["t_addi"].get<double>();
        if (c.contains("attn_workload")) cost.attn_workload = c["attn_workload"].get<double>();
        if (c.contains("mlp_workload")) cost.mlp_workload = c["mlp_workload"].get<double>();
        if (c.contains("base_layer_workload")) {
            cost.base_layer_workload = c["base_layer_workload"].get<double>();
        }
        if (c.contains("tp_size_base")) cost.tp_size_base = c["tp_size_base"].get<int>();
        if (c.contains("tp_size_draft")) cost.tp_size_draft = c["tp_size_draft"].get<int>();
        if (c.contains("devices")) cost.devices = c["devices"].get<int>();
    }
    if (j.contains("workers")) {
        s.run.workers = j["workers"].get<int>();
    }
}

struct Flags {
    std::string config_path;
    std::string algorithms;
    std::string widths;
    std::string plan;
    std::string out_dir;
    std::string prompt = "the quick brown fox";
    std::int64_t seed = -1;
    std::int64_t init_seed = -1;
    int n = -1;
    std::string lp;
    double temperature = -1.0;
    int max_new_tokens = -1;
    int workers = -1;
    int keep_layers = -1;
    bool no_calibration = false;
};

void add_common_flags(CLI::App* app, Flags& flags) {
    app->add_option("--config", flags.config_path, "JSON run-config file");
    app->add_option("--seed", flags.seed, "generation seed");
    app->add_option("--algorithms", flags.algorithms,
                    "comma list of vanilla,sd,sd_tree,easyspec");
    app->add_option("--n", flags.n, "speculation length");
    app->add_option("--lp", flags.lp, "layer-parallel size (lists like 1..5 where a sweep applies)");
    app->add_option("--plan", flags.plan, "explicit layer plan, e.g. 0|1-3|4-6|7");
    app->add_option("--widths", flags.widths, "per-depth tree widths, e.g. 4,4,4,4,4");
    app->add_option("--temperature", flags.temperature, "sampling temperature (0 = greedy)");
    app->add_option("--max-new-tokens", flags.max_new_tokens, "tokens to generate");
    app->add_option("--workers", flags.workers, "layer-group worker threads");
    app->add_option("--out", flags.out_dir, "output directory");
    app->add_option("--init-seed", flags.init_seed, "seed fresh model weights");
    app->add_option("--keep-layers", flags.keep_layers, "drafter = first K base layers");
    app->add_flag("--no-calibration", flags.no_calibration, "disable bonus calibration");
}

Settings resolve_settings(const Flags& flags) {
    Settings s;
    s.model.n_layers = 12;
    s.model.d_model = 64;
    s.model.n_heads = 4;
    s.model.d_head = 16;
    s.model.d_mlp = 128;
    s.model.seed = 7;
    s.run.widths = {2, 2, 2, 2, 2};
    if (!flags.config_path.empty()) {
        load_config_file(s, flags.config_path);
    }
    if (flags.seed >= 0) s.run.seed = static_cast<std::uint64_t>(flags.seed);
    if (flags.init_seed >= 0) s.model.seed = static_cast<std::uint64_t>(flags.init_seed);
    if (flags.n >= 0) s.run.n = flags.n;
    if (!flags.lp.empty()) s.run.lp_size = parse_int_list(flags.lp, "lp").front();
    if (!flags.plan.empty()) s.run.plan_override = flags.plan;
    if (!flags.widths.empty()) s.run.widths = parse_int_list(flags.widths, "widths");
    if (flags.temperature >= 0.0) s.run.temperature = static_cast<float>(flags.temperature);
    if (flags.max_new_tokens >= 0) s.run.max_new_tokens = flags.max_new_tokens;
    if (flags.workers >= 0) s.run.workers = flags.workers;
    if (flags.keep_layers >= 0) s.draft_keep_layers = flags.keep_layers;
    if (flags.no_calibration) s.run.calibration = false;
    if (!flags.out_dir.empty()) s.out_dir = flags.out_dir;

    if (flags.widths.empty() && static_cast<int>(s.run.widths.size()) != s.run.n) {
        // Keep the default widths consistent when only --n was given.
        const int fill = s.run.widths.empty() ? 2 : s.run.widths.front();
        s.run.widths.assign(static_cast<std::size_t>(s.run.n), fill);
    }
    return s;
}

struct ModelPair {
    Model base;
    Model draft;
};

ModelPair build_models(const Settings& s) {
    ModelPair pair;
    if (s.model_file) {
        pair.base = load_model(*s.model_file);
    } else {
        pair.base = init_model(s.model);
    }
    if (s.draft_file) {
        pair.draft = load_model(*s.draft_file);
    } else if (s.draft_seed || s.draft_layers) {
        ModelConfig cfg = pair.base.config;
        if (s.draft_layers) cfg.n_layers = *s.draft_layers;
        if (s.draft_seed) cfg.seed = *s.draft_seed;
        pair.draft = init_model(cfg);
    } else {
        const int keep = s.draft_keep_layers.value_or(
            std::max(2, (2 * pair.base.config.n_layers) / 3));
        pair.draft = make_truncated_draft(pair.base, keep);
    }
    return pair;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write '" + path + "'");
    }
    out << content;
}

std::string out_path(const Settings& s, const std::string& name) {
    std::filesystem::create_directories(s.out_dir);
    return (std::filesystem::path(s.out_dir) / name).string();
}

std::vector<std::vector<std::uint8_t>> synth_prompts(std::uint64_t seed, int count, int length) {
    Xoshiro256ss rng(seed ^ 0xC0FFEEULL);
    std::vector<std::vector<std::uint8_t>> prompts(static_cast<std::size_t>(count));
    for (auto& prompt : prompts) {
        prompt.resize(static_cast<std::size_t>(length));
        for (auto& byte : prompt) {
            byte = static_cast<std::uint8_t>(32 + (rng.next_u64() % 95));  // printable ascii
        }
    }
    return prompts;
}

int cmd_generate(const Flags& flags) {
    Settings s = resolve_settings(flags);
    if (!flags.algorithms.empty()) {
        s.run.algorithm = algorithm_from_string(flags.algorithms);
    }
    const ModelPair models = build_models(s);
    const std::span<const std::uint8_t> prompt{
        reinterpret_cast<const std::uint8_t*>(flags.prompt.data()), flags.prompt.size()};

    const GenerateResult result = generate(models.base, models.draft, s.run, prompt);
    std::cout << "tokens: " << render_tokens(result.tokens) << "\n";
    if (result.report.has_alpha) {
        std::cout << "alpha: " << result.report.alpha << "\n";
    }
    std::cout << "sim speedup vs vanilla: " << result.report.speedup_vs_vanilla << "\n";

    write_file(out_path(s, "generate_report.json"), emit_report(result.report, ReportFormat::json));
    write_file(out_path(s, "occupancy.csv"), result.occupancy_csv);
    std::cout << "report: " << out_path(s, "generate_report.json") << "\n";
    return 0;
}

int cmd_bench(const Flags& flags, int n_prompts, int prompt_len) {
    Settings s = resolve_settings(flags);
    std::vector<Algorithm> algorithms = {Algorithm::vanilla, Algorithm::sd, Algorithm::sd_tree,
                                         Algorithm::easyspec};
    if (!flags.algorithms.empty()) {
        algorithms.clear();
        std::stringstream stream(flags.algorithms);
        std::string token;
        while (std::getline(stream, token, ',')) {
            algorithms.push_back(algorithm_from_string(token));
        }
    }

    const ModelPair models = build_models(s);
    const auto prompts = synth_prompts(s.run.seed, n_prompts, prompt_len);

    std::ostringstream csv;
    csv << kReportCsvHeader << "\n";
    for (Algorithm algorithm : algorithms) {
        RunConfig config = s.run;
        config.algorithm = algorithm;
        if (algorithm == Algorithm::sd) {
            config.widths.assign(static_cast<std::size_t>(config.n), 1);
        }

        std::vector<IterationTrace> traces;
        double baseline = 0.0;
        nlohmann::ordered_json echo;
        for (std::size_t i = 0; i < prompts.size(); ++i) {
            RunConfig per_prompt = config;
            per_prompt.seed = config.seed + i;
            const GenerateResult result = generate(models.base, models.draft, per_prompt, prompts[i]);
            traces.insert(traces.end(), result.report.iterations.begin(),
                          result.report.iterations.end());
            baseline += vanilla_baseline_sim(config.cost, models.base.config.n_layers,
                                             static_cast<int>(prompts[i].size()) + 1,
                                             static_cast<long>(result.tokens.size()));
            echo = result.report.config_echo;
        }
        RunReport report = aggregate(traces, baseline);
        report.algorithm = to_string(algorithm);
        report.n = algorithm == Algorithm::vanilla ? 0 : config.n;
        report.widths = algorithm == Algorithm::vanilla ? std::vector<int>{} : config.widths;
        report.lp_size = algorithm == Algorithm::easyspec ? s.run.lp_size : 1;
        report.config_echo = echo;
        csv << report_csv_row(report) << "\n";
        write_file(out_path(s, "bench_" + report.algorithm + ".json"),
                   emit_report(report, ReportFormat::json));
    }
    write_file(out_path(s, "bench.csv"), csv.str());
    std::cout << csv.str();
    return 0;
}

int cmd_simulate(const Flags& flags, const std::string& alpha_list, int draft_layers,
                 int base_layers) {
    Settings s = resolve_settings(flags);
    const std::vector<int> lp_sizes =
        flags.lp.empty() ? parse_int_list("1..5", "lp") : parse_int_list(flags.lp, "lp");
    const std::vector<int> width_values =
        flags.widths.empty() ? std::vector<int>{1, 4, 8, 12}
                             : parse_int_list(flags.widths, "widths");
    std::vector<double> alphas(lp_sizes.size(), 0.8);
    if (!alpha_list.empty()) {
        const auto parsed = parse_double_list(alpha_list, "alpha");
        if (parsed.size() == 1) {
            alphas.assign(lp_sizes.size(), parsed[0]);
        } else if (parsed.size() == lp_sizes.size()) {
            alphas = parsed;
        } else {
            throw ConfigError("--alpha must list one value or one per --lp entry");
        }
    }
    const int n = s.run.n;
    const CostParams& cost = s.run.cost;
    cost.validate();

    std::ostringstream csv;
    csv << "width,lp_size,alpha,tokens_per_iter,iter_units,throughput,speedup_vs_vanilla\n";
    const double vanilla_throughput = 1.0 / base_forward_time(cost, base_layers, 1);
    for (int width : width_values) {
        for (std::size_t i = 0; i < lp_sizes.size(); ++i) {
            const int lp = lp_sizes[i];
            const double alpha = alphas[i];
            const LayerPlan plan = plan_groups(draft_layers, lp);

            const double tokens_per_iter = static_cast<double>(n) * alpha + 1.0;
            double iter_units =
                sequential_draft_forward_time(cost, draft_layers, tokens_per_iter);
            double level_size = 1.0;
            double tree_nodes = 0.0;
            for (int level = 1; level <= n; ++level) {
                level_size *= width;
                tree_nodes += level_size;
                if (level <= n - 1) {
                    iter_units += simulate_draft_group(cost, plan, level_size);
                }
            }
            iter_units += base_forward_time(cost, base_layers, 1.0 + tree_nodes);

            const double throughput = tokens_per_iter / iter_units;
            csv << width << ',' << lp << ',' << alpha << ',' << tokens_per_iter << ','
                << iter_units << ',' << throughput << ',' << throughput / vanilla_throughput
                << "\n";
        }
    }
    write_file(out_path(s, "simulate.csv"), csv.str());
    std::cout << csv.str();
    return 0;
}

int cmd_probe(const Flags& flags, int corpus_bytes, int seq_len) {
    Settings s = resolve_settings(flags);
    const ModelPair models = build_models(s);

    const std::vector<int> lp_sizes =
        flags.lp.empty() ? std::vector<int>{1, 2, 3, 4} : parse_int_list(flags.lp, "lp");

    if (seq_len < 2) throw ConfigError("probe sequences need at least 2 tokens");
    const int n_sequences = std::max(1, corpus_bytes / seq_len);
    const auto prompts = synth_prompts(s.run.seed, n_sequences, seq_len - 1);
    std::vector<std::vector<Token>> corpus;
    for (const auto& prompt : prompts) {
        corpus.push_back(tokenize_prompt(prompt, models.draft.config.vocab_size));
    }

    WorkerPool pool(resolve_worker_count(s.run.workers, 1));
    const auto rows = probe_similarity(models.draft, lp_sizes, corpus, &pool);
    const std::string csv = similarity_csv(rows);
    write_file(out_path(s, "probe.csv"), csv);
    std::cout << csv;
    return 0;
}

int cmd_check_lossless(const Flags& flags, int vocab, int trials, long e2e_runs) {
    if (vocab < 2 || vocab > 4096) throw ConfigError("--vocab must be in [2, 4096]");
    if (trials < 1) throw ConfigError("--trials must be >= 1");
    Xoshiro256ss rng(flags.seed >= 0 ? static_cast<std::uint64_t>(flags.seed) : 11);

    auto random_dist = [&] {
        ProbVector p(vocab);
        double sum = 0.0;
        std::vector<double> raw(static_cast<std::size_t>(vocab));
        for (auto& v : raw) {
            v = -std::log(1.0 - rng.uniform_double());
            sum += v;
        }
        for (int t = 0; t < vocab; ++t) {
            p[t] = static_cast<float>(raw[static_cast<std::size_t>(t)] / sum);
        }
        return p;
    };

    double worst = 0.0;
    for (int trial = 0; trial < trials; ++trial) {
        const ProbVector p = random_dist();
        ProbVector p_prime = random_dist();
        // Adversarial drafts: one-hot, or nearly no mass on p's argmax.
        if (trial % 3 == 1) {
            std::fill(p_prime.probs.begin(), p_prime.probs.end(), 0.0f);
            p_prime[static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(vocab))] = 1.0f;
        } else if (trial % 3 == 2) {
            p_prime[argmax(p.probs)] = 1e-12f;
            float sum = 0.0f;
            for (float v : p_prime.probs) sum += v;
            for (float& v : p_prime.probs) v /= sum;
        }
        const ProbVector out = induced_step_distribution(p, p_prime);
        for (int t = 0; t < vocab; ++t) {
            worst = std::max(worst, std::abs(static_cast<double>(out[t]) - p[t]));
        }
    }
    std::cout << "analytic one-step losslessness: max |induced - p| = " << worst << " over "
              << trials << " trials\n";
    if (worst > 1e-6) {
        throw CheckError("analytic losslessness exceeded 1e-6");
    }

    if (e2e_runs > 0) {
        ModelConfig cfg;
        cfg.d_model = 32;
        cfg.n_heads = 2;
        cfg.d_head = 16;
        cfg.d_mlp = 64;
        cfg.n_layers = 4;
        cfg.max_positions = 64;
        cfg.seed = 21;
        const Model base = init_model(cfg);
        const Model draft = make_truncated_draft(base, 3);
        RunConfig run;
        run.algorithm = Algorithm::easyspec;
        run.n = 3;
        run.widths = {2, 2, 2};
        run.lp_size = 2;
        run.temperature = 0.8f;
        run.max_new_tokens = 2;
        run.seed = flags.seed >= 0 ? static_cast<std::uint64_t>(flags.seed) : 11;
        const std::string prompt_text = "easyspec";
        const std::span<const std::uint8_t> prompt{
            reinterpret_cast<const std::uint8_t*>(prompt_text.data()), prompt_text.size()};
        const int threads = static_cast<int>(std::thread::hardware_concurrency());

        auto spec_counts = prefix_distribution(base, draft, run, prompt, e2e_runs, threads);
        RunConfig vanilla = run;
        vanilla.algorithm = Algorithm::vanilla;
        auto vanilla_counts = prefix_distribution(base, draft, vanilla, prompt, e2e_runs, threads);
        const double tv = total_variation(spec_counts, vanilla_counts, e2e_runs, e2e_runs);
        // Loose smoke bound; the acceptance suite runs the strict version.
        const double bound = std::max(0.05, 8.0 / std::sqrt(static_cast<double>(e2e_runs)));
        std::cout << "statistical e2e: TV(easyspec, vanilla) = " << tv << " over " << e2e_runs
                  << " runs (bound " << bound << ")\n";
        if (tv > bound) {
            throw CheckError("end-to-end distribution drift detected");
        }
    }
    std::cout << "losslessness checks passed\n";
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"layer-parallel speculative decoding engine"};
    app.require_subcommand(1);

    Flags flags;
    int n_prompts = 4;
    int prompt_len = 16;
    std::string alpha_list;
    int draft_layers = 8;
    int base_layers = 12;
    int corpus_bytes = 4096;
    int seq_len = 64;
    int vocab = 8;
    int trials = 1000;
    long e2e_runs = 2000;

    auto* gen = app.add_subcommand("generate", "generate tokens with one algorithm");
    add_common_flags(gen, flags);
    gen->add_option("--prompt", flags.prompt, "prompt text");

    auto* bench = app.add_subcommand("bench", "compare algorithms over a prompt corpus");
    add_common_flags(bench, flags);
    bench->add_option("--n-prompts", n_prompts, "corpus size");
    bench->add_option("--prompt-len", prompt_len, "prompt length in bytes");

    auto* sim = app.add_subcommand("simulate", "cost-model sweep, no tensor math");
    add_common_flags(sim, flags);
    sim->add_option("--alpha", alpha_list, "acceptance rate(s), one per --lp entry");
    sim->add_option("--draft-layers", draft_layers, "drafter layer count");
    sim->add_option("--base-layers", base_layers, "base layer count");

    auto* probe = app.add_subcommand("probe", "fuzzy-vs-precise similarity table");
    add_common_flags(probe, flags);
    probe->add_option("--corpus-bytes", corpus_bytes, "synthetic corpus size");
    probe->add_option("--seq-len", seq_len, "tokens per probe sequence");

    auto* check = app.add_subcommand("check_lossless", "run the losslessness oracles");
    add_common_flags(check, flags);
    check->add_option("--vocab", vocab, "vocabulary size for the analytic suite");
    check->add_option("--trials", trials, "random (p, p') pairs");
    check->add_option("--e2e-runs", e2e_runs, "statistical end-to-end runs per arm (0 = skip)");

    try {
        app.parse(argc, argv);
        if (gen->parsed()) return cmd_generate(flags);
        if (bench->parsed()) return cmd_bench(flags, n_prompts, prompt_len);
        if (sim->parsed()) return cmd_simulate(flags, alpha_list, draft_layers, base_layers);
        if (probe->parsed()) return cmd_probe(flags, corpus_bytes, seq_len);
        if (check->parsed()) return cmd_check_lossless(flags, vocab, trials, e2e_runs);
        return 1;
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const IoError& e) {
        std::cerr << "model i/o error: " << e.what() << "\n";
        return 2;
    } catch (const CheckError& e) {
        std::cerr << "check failed: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace espec::cli
