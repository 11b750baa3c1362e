#include "espec/report.hpp"

#include <sstream>

#include "espec/errors.hpp"

namespace espec {

namespace {

using ordered_json = nlohmann::ordered_json;

ordered_json trace_to_json(const IterationTrace& t) {
    ordered_json j;
    j["m"] = t.m;
    j["n"] = t.n;
    j["drafted_nodes"] = t.drafted_nodes;
    j["emitted"] = t.emitted;
    j["draft_wall"] = t.draft_wall;
    j["verify_wall"] = t.verify_wall;
    j["calibrate_wall"] = t.calibrate_wall;
    j["draft_sim"] = t.draft_sim;
    j["verify_sim"] = t.verify_sim;
    j["calibrate_sim"] = t.calibrate_sim;
    j["fuzzy_forwards"] = t.fuzzy_forwards;
    j["sequential_forwards"] = t.sequential_forwards;
    j["base_forwards"] = t.base_forwards;
    return j;
}

IterationTrace trace_from_json(const ordered_json& j) {
    IterationTrace t;
    t.m = j.at("m").get<int>();
    t.n = j.at("n").get<int>();
    t.drafted_nodes = j.at("drafted_nodes").get<int>();
    t.emitted = j.at("emitted").get<int>();
    t.draft_wall = j.at("draft_wall").get<double>();
    t.verify_wall = j.at("verify_wall").get<double>();
    t.calibrate_wall = j.at("calibrate_wall").get<double>();
    t.draft_sim = j.at("draft_sim").get<double>();
    t.verify_sim = j.at("verify_sim").get<double>();
    t.calibrate_sim = j.at("calibrate_sim").get<double>();
    t.fuzzy_forwards = j.at("fuzzy_forwards").get<long>();
    t.sequential_forwards = j.at("sequential_forwards").get<long>();
    t.base_forwards = j.at("base_forwards").get<long>();
    return t;
}

}  // namespace

RunReport aggregate(std::span<const IterationTrace> traces, double vanilla_baseline_sim) {
    if (traces.empty()) {
        throw ConfigError("cannot aggregate an empty trace list");
    }

    RunReport report;
    long emitted = 0;
    long accepted = 0, attempted = 0;
    double wall_draft = 0, wall_verify = 0, wall_calibrate = 0;
    double sim_draft = 0, sim_verify = 0, sim_calibrate = 0;
    for (const auto& t : traces) {
        emitted += t.emitted;
        accepted += t.m;
        attempted += t.n;
        wall_draft += t.draft_wall;
        wall_verify += t.verify_wall;
        wall_calibrate += t.calibrate_wall;
        sim_draft += t.draft_sim;
        sim_verify += t.verify_sim;
        sim_calibrate += t.calibrate_sim;
    }
    if (emitted <= 0) {
        throw ConfigError("traces emitted zero tokens");
    }

    report.tokens_emitted = emitted;
    report.has_alpha = attempted > 0;
    report.alpha = attempted > 0 ? static_cast<double>(accepted) / attempted : 0.0;

    const double per_token = 100.0 / static_cast<double>(emitted);
    report.per100_wall = {wall_draft * per_token, wall_verify * per_token,
                          wall_calibrate * per_token};
    report.per100_sim = {sim_draft * per_token, sim_verify * per_token,
                         sim_calibrate * per_token};
    report.draft_total_per100_sim = report.per100_sim.draft + report.per100_sim.calibrate;

    report.total_sim = sim_draft + sim_verify + sim_calibrate;
    if (report.total_sim > 0.0) {
        report.speedup_vs_vanilla = vanilla_baseline_sim / report.total_sim;
    }
    const double wall_total = wall_draft + wall_verify + wall_calibrate;
    report.tokens_per_s_wall = wall_total > 0.0 ? emitted / wall_total : 0.0;
    report.iterations.assign(traces.begin(), traces.end());
    return report;
}

std::string emit_report(const RunReport& report, ReportFormat format) {
    if (format == ReportFormat::csv) {
        return std::string(kReportCsvHeader) + "\n" + report_csv_row(report) + "\n";
    }

    ordered_json j;
    j["algorithm"] = report.algorithm;
    j["n"] = report.n;
    j["widths"] = report.widths;
    j["lp_size"] = report.lp_size;
    if (report.has_alpha) {
        j["alpha"] = report.alpha;
    } else {
        j["alpha"] = nullptr;
    }
    j["tokens_emitted"] = report.tokens_emitted;
    j["tokens_per_s_wall"] = report.tokens_per_s_wall;
    j["sim"] = {{"draft_per_100", report.per100_sim.draft},
                {"verify_per_100", report.per100_sim.verify},
                {"calibrate_per_100", report.per100_sim.calibrate},
                {"draft_total_per_100", report.draft_total_per100_sim},
                {"total_sim", report.total_sim},
                {"total_speedup_vs_vanilla", report.speedup_vs_vanilla}};
    j["wall"] = {{"draft_per_100", report.per100_wall.draft},
                 {"verify_per_100", report.per100_wall.verify},
                 {"calibrate_per_100", report.per100_wall.calibrate}};
    j["config"] = report.config_echo;
    j["iterations"] = ordered_json::array();
    for (const auto& t : report.iterations) {
        j["iterations"].push_back(trace_to_json(t));
    }
    return j.dump(2);
}

RunReport parse_report(const std::string& json_text) {
    ordered_json j;
    try {
        j = ordered_json::parse(json_text);
    } catch (const std::exception& e) {
        throw IoError(std::string("invalid report JSON: ") + e.what());
    }

    RunReport report;
    report.algorithm = j.at("algorithm").get<std::string>();
    report.n = j.at("n").get<int>();
    report.widths = j.at("widths").get<std::vector<int>>();
    report.lp_size = j.at("lp_size").get<int>();
    report.has_alpha = !j.at("alpha").is_null();
    report.alpha = report.has_alpha ? j.at("alpha").get<double>() : 0.0;
    report.tokens_emitted = j.at("tokens_emitted").get<long>();
    report.tokens_per_s_wall = j.at("tokens_per_s_wall").get<double>();
    const auto& sim = j.at("sim");
    report.per100_sim = {sim.at("draft_per_100").get<double>(),
                         sim.at("verify_per_100").get<double>(),
                         sim.at("calibrate_per_100").get<double>()};
    report.draft_total_per100_sim = sim.at("draft_total_per_100").get<double>();
    report.total_sim = sim.at("total_sim").get<double>();
    report.speedup_vs_vanilla = sim.at("total_speedup_vs_vanilla").get<double>();
    const auto& wall = j.at("wall");
    report.per100_wall = {wall.at("draft_per_100").get<double>(),
                          wall.at("verify_per_100").get<double>(),
                          wall.at("calibrate_per_100").get<double>()};
    report.config_echo = j.at("config");
    for (const auto& entry : j.at("iterations")) {
        report.iterations.push_back(trace_from_json(entry));
    }
    return report;
}

std::string report_csv_row(const RunReport& report) {
    std::ostringstream out;
    out << report.algorithm << ',' << report.n << ',' << report.lp_size << ',';
    if (report.has_alpha) out << report.alpha;
    out << ',' << report.per100_sim.draft << ',' << report.per100_sim.verify << ','
        << report.per100_sim.calibrate << ',' << report.speedup_vs_vanilla;
    return out.str();
}

}  // namespace espec
