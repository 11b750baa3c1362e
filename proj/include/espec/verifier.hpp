#pragma once

#include <span>
#include <vector>

#include "espec/draft_engine.hpp"
#include "espec/matrix.hpp"
#include "espec/rng.hpp"

namespace espec {

// Result of verifying one draft tree. m tokens were accepted along
// accepted_path, then one bonus token was sampled; 0 <= m <= n where n is
// the attempted speculation depth.
struct VerificationOutcome {
    std::vector<Token> accepted_tokens;
    std::vector<int> accepted_path;  // node indices into the verified tree
    Token bonus_token = 0;
    int m = 0;
    int n = 0;
};

// Classic acceptance rule: accept iff u < min(1, p_tok / p_prime_tok).
// A drafted token must have positive draft probability; p_prime_tok == 0
// signals an internal inconsistency.
bool acceptance_test(double p_tok, double p_prime_tok, double u);

// norm(max(0, p - p_prime)); falls back to p when the residual mass is
// numerically zero (p ~ p_prime), so the result is always a distribution.
ProbVector residual_distribution(const ProbVector& p, const ProbVector& p_prime);

// Distribution the bonus token is sampled from: p itself when all n drafts
// were accepted, the normalized positive residual otherwise.
ProbVector bonus_distribution(const ProbVector& p, const ProbVector& p_prime, int m, int n);

// Analytic marginal of one draft-accept-or-bonus step:
//   out(x) = min(p(x), p'(x)) + (1 - beta) * res(x),  beta = sum min(p, p').
// Equals p for every draft distribution p'; the losslessness oracle.
ProbVector induced_step_distribution(const ProbVector& p, const ProbVector& p_prime);

// Inverse-CDF sample using one uniform draw.
Token sample_from(const ProbVector& dist, Xoshiro256ss& rng);

// Walks the tree against the base model's distributions. base_dists[0] is
// the distribution at the context frontier; base_dists[1 + i] belongs to
// node i. Siblings are tested in stored (selection) order; a rejected
// sibling updates the local target to the clamped residual and is zeroed
// out of the local draft distribution before the next sibling is tried.
// At temperature 0 acceptance is exact match against the base argmax and no
// uniform draws are consumed.
VerificationOutcome verify_tree(const DraftTree& tree, std::span<const ProbVector> base_dists,
                                float temperature, Xoshiro256ss& rng);

}  // namespace espec
