#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace crossenc {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;  // measured values, shown on both pass and fail
};

// Frozen oracles.
CheckResult check_softmax_oracle();
CheckResult check_layernorm_oracle();
CheckResult check_cross_attend_oracle();
CheckResult check_adam_first_step();     // closed form within 1e-6
CheckResult check_grad_small();          // composite-graph finite differences

// Structural invariants on seeded toy models.
CheckResult check_alpha_row_sums(uint64_t seed);              // 1 +- 1e-6
CheckResult check_e_slice(uint64_t seed);                     // E == H[0:N]
CheckResult check_padding_invariance(uint64_t seed);          // <= 1e-5
CheckResult check_permutation_equivariance(uint64_t seed);    // <= 1e-5
CheckResult check_softmax_logit_ordering(uint64_t seed, int cases);
CheckResult check_mean_attention_stochastic(uint64_t seed);
CheckResult check_checkpoint_roundtrip(uint64_t seed);
CheckResult check_recall_monte_carlo(uint64_t seed);

std::vector<CheckResult> run_selftests(uint64_t seed);
bool all_passed(const std::vector<CheckResult>& results);
void print_results(const std::vector<CheckResult>& results, std::ostream& os);

}  // namespace crossenc
