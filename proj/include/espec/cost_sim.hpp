#pragma once

#include <array>
#include <string>
#include <vector>

#include "espec/layer_plan.hpp"

namespace espec {

// Affine device cost model: a forward of workload w with s-token parallelism
// on a tp-sized split costs
//   c_fixed + c_mem * (w / tp) + c_comp * (w / tp) * s + (tp > 1 ? t_addi : 0).
// The defaults put the drafter in the memory-bound regime (TP hurts it, the
// optimal drafter TP size is 1) while the base model is large enough that TP
// up to `devices` pays off.
struct CostParams {
    double c_fixed = 0.02;
    double c_mem = 1.0;
    double c_comp = 0.01;
    double t_addi = 0.1;
    double attn_workload = 0.15;        // one drafter attention layer
    double mlp_workload = 0.05;         // one drafter MLP layer
    double base_layer_workload = 2.0;   // one base-model layer (attention + MLP)
    int tp_size_base = 8;
    int tp_size_draft = 1;
    int devices = 8;

    void validate() const;
};

double t_exe(const CostParams& params, double workload, double s_tokens, int tp_size);

// Attention time of one layer group: the layers run concurrently on
// group_size devices, so one t_exe plus the synchronization overhead when
// the group is larger than one.
double group_attention_time(const CostParams& params, int group_size, double s_tokens);

// Simulated drafter forward under a plan: per group, concurrent attention
// plus the sequential MLP chain. An all-singleton plan reproduces the
// layer-sequential cost exactly. Throws when a group is wider than the
// device count.
double simulate_draft_group(const CostParams& params, const LayerPlan& plan, double s_tokens = 1);

double sequential_draft_forward_time(const CostParams& params, int n_layers, double s_tokens = 1);

double base_forward_time(const CostParams& params, int n_layers, double s_tokens = 1);

// Decoding-time balance: n_tokens * t_draft + (n_tokens / (n * alpha)) * t_base.
double total_time_model(double n_tokens, double t_draft, double t_base, int n, double alpha);

enum class Stage { draft = 0, verify = 1, calibrate = 2 };

// Pure simulated-time ledger: per-stage elapsed units plus per-device busy
// units. Never touches real time.
class SimClock {
public:
    explicit SimClock(int devices);

    void add_elapsed(Stage stage, double units);
    void add_device_busy(int device, Stage stage, double units);

    double stage_elapsed(Stage stage) const {
        return stage_elapsed_[static_cast<std::size_t>(stage)];
    }
    double total_elapsed() const;
    int devices() const { return static_cast<int>(device_busy_.size()); }
    double device_busy(int device, Stage stage) const {
        return device_busy_[static_cast<std::size_t>(device)][static_cast<std::size_t>(stage)];
    }
    // Devices with nonzero busy time in a stage.
    int busy_device_count(Stage stage) const;

    // CSV: device,stage,busy_units,total_units.
    std::string occupancy_csv() const;

private:
    std::array<double, 3> stage_elapsed_{};
    std::vector<std::array<double, 3>> device_busy_;
};

// Clock-advancing wrappers used by the generation loop; each returns the
// elapsed units it added to `stage`.
double sim_sequential_draft_forward(const CostParams& params, int n_layers, int s_tokens,
                                    SimClock& clock, Stage stage);
double sim_fuzzy_draft_forward(const CostParams& params, const LayerPlan& plan, int s_tokens,
                               SimClock& clock, Stage stage);
double sim_base_forward(const CostParams& params, int n_layers, int s_tokens, SimClock& clock,
                        Stage stage);

}  // namespace espec
