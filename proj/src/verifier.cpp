#include "espec/verifier.hpp"

#include <algorithm>
#include <cmath>

#include "espec/errors.hpp"

namespace espec {

namespace {

constexpr double kResidualFloor = 1e-9;

double clamp_unit(double v) { return std::min(1.0, std::max(0.0, v)); }

}  // namespace

bool acceptance_test(double p_tok, double p_prime_tok, double u) {
    if (!(p_prime_tok > 0.0)) {
        throw CheckError("drafted token carries zero draft probability");
    }
    return u < std::min(1.0, p_tok / p_prime_tok);
}

ProbVector residual_distribution(const ProbVector& p, const ProbVector& p_prime) {
    if (p.vocab_size != p_prime.vocab_size) {
        throw ShapeError("residual over mismatched vocabularies");
    }
    ProbVector out(p.vocab_size);
    double mass = 0.0;
    for (int t = 0; t < p.vocab_size; ++t) {
        const double diff = static_cast<double>(p[t]) - p_prime[t];
        if (diff > 0.0) {
            out[t] = static_cast<float>(diff);
            mass += diff;
        }
    }
    if (mass < kResidualFloor) {
        return p;
    }
    for (float& v : out.probs) v = static_cast<float>(v / mass);
    return out;
}

ProbVector bonus_distribution(const ProbVector& p, const ProbVector& p_prime, int m, int n) {
    if (m == n) {
        return p;
    }
    return residual_distribution(p, p_prime);
}

ProbVector induced_step_distribution(const ProbVector& p, const ProbVector& p_prime) {
    if (p.vocab_size != p_prime.vocab_size) {
        throw ShapeError("induced step over mismatched vocabularies");
    }
    double beta = 0.0;
    for (int t = 0; t < p.vocab_size; ++t) {
        beta += std::min(static_cast<double>(p[t]), static_cast<double>(p_prime[t]));
    }
    const ProbVector res = residual_distribution(p, p_prime);
    ProbVector out(p.vocab_size);
    const double reject_mass = clamp_unit(1.0 - beta);
    for (int t = 0; t < p.vocab_size; ++t) {
        const double accept = std::min(static_cast<double>(p[t]), static_cast<double>(p_prime[t]));
        out[t] = static_cast<float>(accept + reject_mass * res[t]);
    }
    return out;
}

Token sample_from(const ProbVector& dist, Xoshiro256ss& rng) {
    const double u = rng.uniform_double();
    double cum = 0.0;
    Token last_positive = -1;
    for (int t = 0; t < dist.vocab_size; ++t) {
        if (dist[t] <= 0.0f) continue;
        cum += dist[t];
        last_positive = t;
        if (u < cum) return t;
    }
    if (last_positive < 0) {
        throw CheckError("sampling from an all-zero distribution");
    }
    return last_positive;
}

VerificationOutcome verify_tree(const DraftTree& tree, std::span<const ProbVector> base_dists,
                                float temperature, Xoshiro256ss& rng) {
    if (tree.nodes.empty()) {
        throw StructureError("verifying an empty draft tree");
    }
    if (base_dists.size() != tree.nodes.size() + 1) {
        throw ShapeError("need one base distribution per tree node plus the context frontier");
    }

    VerificationOutcome outcome;
    outcome.n = static_cast<int>(tree.widths.size());

    const bool greedy = temperature == 0.0f;
    ProbVector target = base_dists[0];
    int parent = -1;

    for (int depth = 1; depth <= outcome.n; ++depth) {
        int first = 0, count = 0;
        if (parent < 0) {
            first = 0;
            count = tree.root_children;
        } else {
            first = tree.nodes[static_cast<std::size_t>(parent)].first_child;
            count = tree.nodes[static_cast<std::size_t>(parent)].n_children;
        }
        if (count == 0) break;

        // Siblings share one draft distribution; rejected tokens are clamped
        // out so the i-th test sees exactly the conditional the i-th sibling
        // was sampled from.
        std::vector<double> local_draft;
        {
            const auto& dist =
                tree.dists[static_cast<std::size_t>(tree.nodes[static_cast<std::size_t>(first)].prob_index)];
            local_draft.assign(dist.probs.begin(), dist.probs.end());
        }
        double draft_mass = 0.0;
        for (double v : local_draft) draft_mass += v;

        int accepted_node = -1;
        for (int i = 0; i < count; ++i) {
            const int node_index = first + i;
            const Token token = tree.nodes[static_cast<std::size_t>(node_index)].token;

            bool accept;
            if (greedy) {
                accept = token == argmax(target.probs);
            } else {
                const double p_tok = target[token];
                const double p_prime_tok =
                    local_draft[static_cast<std::size_t>(token)] / draft_mass;
                const double u = rng.uniform_double();
                accept = acceptance_test(p_tok, p_prime_tok, u);
            }

            if (accept) {
                accepted_node = node_index;
                break;
            }

            // Target shrinks by the clamped draft distribution, then the
            // rejected token leaves the draft support.
            ProbVector clamped(target.vocab_size);
            for (int t = 0; t < target.vocab_size; ++t) {
                clamped[t] = static_cast<float>(local_draft[static_cast<std::size_t>(t)] /
                                                draft_mass);
            }
            target = residual_distribution(target, clamped);
            draft_mass -= local_draft[static_cast<std::size_t>(token)];
            local_draft[static_cast<std::size_t>(token)] = 0.0;
            if (draft_mass <= kResidualFloor && i + 1 < count) {
                throw CheckError("sibling candidates exhaust the draft distribution");
            }
        }

        if (accepted_node < 0) break;

        outcome.accepted_path.push_back(accepted_node);
        outcome.accepted_tokens.push_back(
            tree.nodes[static_cast<std::size_t>(accepted_node)].token);
        ++outcome.m;
        target = base_dists[static_cast<std::size_t>(accepted_node) + 1];
        parent = accepted_node;
    }

    if (greedy) {
        outcome.bonus_token = argmax(target.probs);
    } else {
        outcome.bonus_token = sample_from(target, rng);
    }
    return outcome;
}

}  // namespace espec
