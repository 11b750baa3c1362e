#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace espec {

// Per-iteration record: accepted count, drafted tree size, emitted tokens,
// stage times in wall seconds and simulated units, and forward counts.
struct IterationTrace {
    int m = 0;
    int n = 0;
    int drafted_nodes = 0;
    int emitted = 0;
    double draft_wall = 0.0;
    double verify_wall = 0.0;
    double calibrate_wall = 0.0;
    double draft_sim = 0.0;
    double verify_sim = 0.0;
    double calibrate_sim = 0.0;
    long fuzzy_forwards = 0;
    long sequential_forwards = 0;
    long base_forwards = 0;

    bool operator==(const IterationTrace&) const = default;
};

struct StageBreakdown {
    double draft = 0.0;
    double verify = 0.0;
    double calibrate = 0.0;

    double total() const { return draft + verify + calibrate; }
    bool operator==(const StageBreakdown&) const = default;
};

struct RunReport {
    std::string algorithm;
    int n = 0;
    std::vector<int> widths;
    int lp_size = 1;
    bool has_alpha = false;  // vanilla runs draft nothing
    double alpha = 0.0;
    long tokens_emitted = 0;
    double tokens_per_s_wall = 0.0;
    StageBreakdown per100_wall;
    StageBreakdown per100_sim;
    // Folded drafting view (draft + calibrate) for two-stage comparability.
    double draft_total_per100_sim = 0.0;
    double speedup_vs_vanilla = 1.0;
    double total_sim = 0.0;
    nlohmann::ordered_json config_echo = nlohmann::ordered_json::object();
    std::vector<IterationTrace> iterations;

    bool operator==(const RunReport&) const = default;
};

// Derives the report metrics from traces. vanilla_baseline_sim is the
// simulated cost of emitting the same tokens without speculation. Throws on
// an empty trace list or zero emitted tokens.
RunReport aggregate(std::span<const IterationTrace> traces, double vanilla_baseline_sim);

enum class ReportFormat { json, csv };

std::string emit_report(const RunReport& report, ReportFormat format);

RunReport parse_report(const std::string& json_text);

inline constexpr char kReportCsvHeader[] =
    "algorithm,n,lp_size,alpha,d_per100,v_per100,c_per100,speedup";

// One CSV row (no header).
std::string report_csv_row(const RunReport& report);

}  // namespace espec
