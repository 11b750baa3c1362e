#include "espec/cost_sim.hpp"

#include <sstream>

#include "espec/errors.hpp"

namespace espec {

void CostParams::validate() const {
    if (c_fixed < 0 || c_mem < 0 || c_comp < 0 || t_addi < 0 || attn_workload < 0 ||
        mlp_workload < 0 || base_layer_workload < 0) {
        throw ConfigError("cost parameters must be non-negative");
    }
    if (tp_size_base < 1 || tp_size_draft < 1 || devices < 1) {
        throw ConfigError("tp sizes and device count must be >= 1");
    }
    if (tp_size_base > devices || tp_size_draft > devices) {
        throw ConfigError("tp size cannot exceed the device count");
    }
}

double t_exe(const CostParams& params, double workload, double s_tokens, int tp_size) {
    if (workload < 0 || s_tokens < 1.0 || tp_size < 1) {
        throw ConfigError("t_exe needs workload >= 0, s >= 1, tp >= 1");
    }
    const double split = workload / tp_size;
    double cost = params.c_fixed + params.c_mem * split + params.c_comp * split * s_tokens;
    if (tp_size > 1) cost += params.t_addi;
    return cost;
}

double group_attention_time(const CostParams& params, int group_size, double s_tokens) {
    if (group_size < 1) {
        throw ConfigError("group size must be >= 1");
    }
    double cost = t_exe(params, params.attn_workload, s_tokens, params.tp_size_draft);
    if (group_size > 1) cost += params.t_addi;
    return cost;
}

double simulate_draft_group(const CostParams& params, const LayerPlan& plan, double s_tokens) {
    params.validate();
    if (plan.max_group_size() > params.devices) {
        throw ConfigError("layer plan group of " + std::to_string(plan.max_group_size()) +
                          " layers exceeds " + std::to_string(params.devices) + " devices");
    }
    double total = 0.0;
    for (const auto& group : plan.groups) {
        total += group_attention_time(params, static_cast<int>(group.size()), s_tokens);
        total += static_cast<double>(group.size()) *
                 t_exe(params, params.mlp_workload, s_tokens, params.tp_size_draft);
    }
    return total;
}

double sequential_draft_forward_time(const CostParams& params, int n_layers, double s_tokens) {
    return static_cast<double>(n_layers) *
           (t_exe(params, params.attn_workload, s_tokens, params.tp_size_draft) +
            t_exe(params, params.mlp_workload, s_tokens, params.tp_size_draft));
}

double base_forward_time(const CostParams& params, int n_layers, double s_tokens) {
    return static_cast<double>(n_layers) *
           t_exe(params, params.base_layer_workload, s_tokens, params.tp_size_base);
}

double total_time_model(double n_tokens, double t_draft, double t_base, int n, double alpha) {
    if (!(alpha > 0.0)) {
        throw DomainError("throughput is undefined at zero acceptance rate");
    }
    if (alpha > 1.0 || n < 1) {
        throw ConfigError("total_time_model needs alpha in (0,1] and n >= 1");
    }
    return n_tokens * t_draft + (n_tokens / (static_cast<double>(n) * alpha)) * t_base;
}

SimClock::SimClock(int devices) : device_busy_(static_cast<std::size_t>(devices)) {
    if (devices < 1) {
        throw ConfigError("sim clock needs at least one device");
    }
}

void SimClock::add_elapsed(Stage stage, double units) {
    stage_elapsed_[static_cast<std::size_t>(stage)] += units;
}

void SimClock::add_device_busy(int device, Stage stage, double units) {
    device_busy_.at(static_cast<std::size_t>(device))[static_cast<std::size_t>(stage)] += units;
}

double SimClock::total_elapsed() const {
    return stage_elapsed_[0] + stage_elapsed_[1] + stage_elapsed_[2];
}

int SimClock::busy_device_count(Stage stage) const {
    int count = 0;
    for (const auto& busy : device_busy_) {
        if (busy[static_cast<std::size_t>(stage)] > 0.0) ++count;
    }
    return count;
}

std::string SimClock::occupancy_csv() const {
    static constexpr const char* kStageNames[3] = {"draft", "verify", "calibrate"};
    std::ostringstream out;
    out << "device,stage,busy_units,total_units\n";
    const double total = total_elapsed();
    for (std::size_t device = 0; device < device_busy_.size(); ++device) {
        for (int stage = 0; stage < 3; ++stage) {
            out << device << ',' << kStageNames[stage] << ','
                << device_busy_[device][static_cast<std::size_t>(stage)] << ',' << total << '\n';
        }
    }
    return out.str();
}

double sim_sequential_draft_forward(const CostParams& params, int n_layers, int s_tokens,
                                    SimClock& clock, Stage stage) {
    const double elapsed = sequential_draft_forward_time(params, n_layers, s_tokens);
    clock.add_elapsed(stage, elapsed);
    for (int device = 0; device < params.tp_size_draft; ++device) {
        clock.add_device_busy(device, stage, elapsed);
    }
    return elapsed;
}

double sim_fuzzy_draft_forward(const CostParams& params, const LayerPlan& plan, int s_tokens,
                               SimClock& clock, Stage stage) {
    const double elapsed = simulate_draft_group(params, plan, s_tokens);
    clock.add_elapsed(stage, elapsed);
    for (const auto& group : plan.groups) {
        const double attn =
            t_exe(params, params.attn_workload, s_tokens, params.tp_size_draft);
        for (std::size_t slot = 0; slot < group.size(); ++slot) {
            clock.add_device_busy(static_cast<int>(slot), stage, attn);
        }
        clock.add_device_busy(0, stage,
                              static_cast<double>(group.size()) *
                                  t_exe(params, params.mlp_workload, s_tokens,
                                        params.tp_size_draft));
    }
    return elapsed;
}

double sim_base_forward(const CostParams& params, int n_layers, int s_tokens, SimClock& clock,
                        Stage stage) {
    const double elapsed = base_forward_time(params, n_layers, s_tokens);
    clock.add_elapsed(stage, elapsed);
    for (int device = 0; device < params.tp_size_base; ++device) {
        clock.add_device_busy(device, stage, elapsed);
    }
    return elapsed;
}

}  // namespace espec
