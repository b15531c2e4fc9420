#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "linattn/augmented.hpp"
#include "linattn/config.hpp"
#include "linattn/tensor.hpp"

namespace linattn {

// Independent oracles for the three attention branches. These go through
// the batched tensor-op route (explicit score matrices, masks, prefix
// matmuls) and share no code with the row kernels they check.

// Within-group causal softmax attention, one score matrix per group.
Tensor local_attention_oracle(const Tensor& q, const Tensor& k, const Tensor& v,
                              size_t group_size);

// Grouped global linear attention via explicit prefix products:
// rows of group g read phi(Q_g) . (phi(K_prefix)^T V_prefix).
Tensor grouped_global_oracle(const Tensor& q, const Tensor& k, const Tensor& v,
                             size_t group_size, FeatureMap fm,
                             GlobalScale gs = GlobalScale::none);

// Direct-summation depthwise conv oracles.
Tensor masked_conv_oracle(const Tensor& v, const ConvWeights& w);
Tensor unmasked_conv_oracle(const Tensor& v, const ConvWeights& w);

// Largest elementwise absolute difference; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

// Compact oracle-equivalence suite behind the CLI `invariants` command:
// branch sums, prefill/decode equality, tree/sequential equality, commit
// equivalence, causality fuzzing, G=1 reduction, snapshot round-trip.
std::vector<CheckResult> run_invariant_checks(uint64_t seed);

}  // namespace linattn
