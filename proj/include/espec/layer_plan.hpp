#pragma once

#include <string>
#include <vector>

namespace espec {

// Partition of drafter layers into sequential singletons and layer-parallel
// groups. Groups cover every layer exactly once in ascending order; the
// first and last layer are always singletons.
struct LayerPlan {
    std::vector<std::vector<int>> groups;
    int lp_size = 1;

    int n_layers() const;
    int max_group_size() const;
    bool all_singletons() const;
    // Layers that belong to a group of size >= 2.
    std::vector<int> parallelized_layers() const;
};

// Builds the plan for a given layer-parallel size: layer 0 alone, then
// [1..N-1], [N..2N-1], ... with any chunk that would swallow the last layer
// truncated before it, and the last layer alone. N values too large for the
// layer count simply degenerate (N=1 gives all singletons).
LayerPlan plan_groups(int n_layers, int lp_size);

// Parses an explicit plan like "0|1-3|4-7|8" and validates the LayerPlan
// invariants. Rejects gaps, overlaps and descending order.
LayerPlan parse_plan_override(const std::string& spec);

std::string format_plan(const LayerPlan& plan);

// Throws ConfigError when a plan violates the structural invariants.
void validate_plan(const LayerPlan& plan);

}  // namespace espec
