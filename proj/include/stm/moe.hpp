#pragma once

// Top-k routing and ReGLU expert FFNs. expert_dense is the straight-line
// oracle path; expert_sparse evaluates the gate fully, then touches up rows
// and down columns only where the gate came out positive.

#include <vector>

#include "stm/container.hpp"
#include "stm/kernels.hpp"

namespace stm {

struct RouterDecision {
  std::vector<int> expert_ids;          // top_k, ascending
  std::vector<float> gate_weights;      // aligned with expert_ids, sums to 1
  std::vector<float> full_probabilities;  // softmax over all experts
};

struct ExpertWeights {
  Matrix gate;  // (ffn_dim, hidden_dim)
  Matrix up;    // (ffn_dim, hidden_dim)
  Matrix down;  // (hidden_dim, ffn_dim)

  size_t resident_bytes() const {
    return gate.size_bytes() + up.size_bytes() + down.size_bytes();
  }
};

// logits = router_weights * hidden; selection by logit, ties to the lower
// index; gate weights renormalized over the selected logits.
RouterDecision route(const std::vector<float>& hidden, const Matrix& router_weights,
                     int top_k);

// y = down * (relu(gate*x) ⊙ (up*x))
std::vector<float> expert_dense(const std::vector<float>& x, const ExpertWeights& w);

// Same result; computes up/down work only for active neurons. Reports
// |{g_i > 0}| / ffn_dim if activation_ratio is non-null.
std::vector<float> expert_sparse(const std::vector<float>& x, const ExpertWeights& w,
                                 float* activation_ratio = nullptr);

// Weighted sum of the selected experts' outputs in expert-id order.
// experts[i] resolves decision.expert_ids[i]; null -> StateError (the offload
// contract was violated). Per-expert activation ratios are appended to
// activation_ratios when given.
std::vector<float> moe_forward(const std::vector<float>& post_attention_hidden,
                               const RouterDecision& decision,
                               const std::vector<const ExpertWeights*>& experts,
                               bool sparse = true,
                               std::vector<float>* activation_ratios = nullptr);

// Dequantize one fetched expert segment into compute-ready weights.
ExpertWeights decode_expert_weights(const ExpertSegment& segment);

}  // namespace stm
