#include "espec/layer_plan.hpp"

#include <algorithm>
#include <sstream>

#include "espec/errors.hpp"

namespace espec {

int LayerPlan::n_layers() const {
    int count = 0;
    for (const auto& g : groups) count += static_cast<int>(g.size());
    return count;
}

int LayerPlan::max_group_size() const {
    int best = 0;
    for (const auto& g : groups) best = std::max(best, static_cast<int>(g.size()));
    return best;
}

bool LayerPlan::all_singletons() const { return max_group_size() <= 1; }

std::vector<int> LayerPlan::parallelized_layers() const {
    std::vector<int> layers;
    for (const auto& g : groups) {
        if (g.size() >= 2) layers.insert(layers.end(), g.begin(), g.end());
    }
    return layers;
}

void validate_plan(const LayerPlan& plan) {
    if (plan.groups.empty()) {
        throw ConfigError("layer plan has no groups");
    }
    int expected = 0;
    for (const auto& g : plan.groups) {
        if (g.empty()) throw ConfigError("layer plan contains an empty group");
        for (int layer : g) {
            if (layer != expected) {
                throw ConfigError("layer plan must cover layers contiguously in ascending order");
            }
            ++expected;
        }
    }
    if (plan.groups.front().size() != 1 || plan.groups.back().size() != 1) {
        throw ConfigError("first and last layer must be singleton groups");
    }
    if (plan.max_group_size() > plan.lp_size && plan.lp_size > 0) {
        throw ConfigError("layer plan group exceeds the layer-parallel size");
    }
}

LayerPlan plan_groups(int n_layers, int lp_size) {
    if (n_layers < 2) {
        throw ConfigError("layer plan needs at least 2 layers");
    }
    if (lp_size < 1) {
        throw ConfigError("layer-parallel size must be >= 1");
    }

    LayerPlan plan;
    plan.lp_size = lp_size;
    plan.groups.push_back({0});

    int next = 1;
    const int last = n_layers - 1;
    while (next < last) {
        // The chunk after layer 0 ends at lp_size so the first parallel
        // group holds layers 1..N-1; later chunks are full N-sets.
        int end = (next == 1) ? std::max(lp_size, 2) : next + lp_size;
        end = std::min(end, last);
        std::vector<int> group;
        for (int layer = next; layer < end; ++layer) group.push_back(layer);
        plan.groups.push_back(std::move(group));
        next = end;
    }
    plan.groups.push_back({last});

    validate_plan(plan);
    return plan;
}

LayerPlan parse_plan_override(const std::string& spec) {
    LayerPlan plan;
    std::stringstream stream(spec);
    std::string token;
    while (std::getline(stream, token, '|')) {
        if (token.empty()) {
            throw ConfigError("empty group in plan override '" + spec + "'");
        }
        const auto dash = token.find('-');
        int lo = 0, hi = 0;
        try {
            if (dash == std::string::npos) {
                lo = hi = std::stoi(token);
            } else {
                lo = std::stoi(token.substr(0, dash));
                hi = std::stoi(token.substr(dash + 1));
            }
        } catch (const std::exception&) {
            throw ConfigError("unparsable group '" + token + "' in plan override");
        }
        if (lo < 0 || hi < lo) {
            throw ConfigError("invalid layer range '" + token + "' in plan override");
        }
        std::vector<int> group;
        for (int layer = lo; layer <= hi; ++layer) group.push_back(layer);
        plan.groups.push_back(std::move(group));
    }
    plan.lp_size = plan.max_group_size();
    validate_plan(plan);
    return plan;
}

std::string format_plan(const LayerPlan& plan) {
    std::string out;
    for (std::size_t i = 0; i < plan.groups.size(); ++i) {
        if (i > 0) out += '|';
        const auto& g = plan.groups[i];
        out += std::to_string(g.front());
        if (g.size() > 1) {
            out += '-';
            out += std::to_string(g.back());
        }
    }
    return out;
}

}  // namespace espec
