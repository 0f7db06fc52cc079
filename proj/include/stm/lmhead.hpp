#pragma once

// Sparse vocabulary projection. A low-rank sketch of the head matrix scores
// all rows in O(rank * (hidden + vocab)); only the selected candidate rows
// get real dot products. The predictor is pluggable behind this interface —
// these factors are a deterministic subspace-iteration sketch.

#include <cstdint>
#include <vector>

#include "stm/kernels.hpp"

namespace stm {

inline constexpr uint64_t kPredictorSeed = 0x70726564u;  // fixed build seed
inline constexpr int kPredictorIterations = 8;

struct RowPredictor {
  int rank = 0;
  Matrix left;   // (rank, hidden_dim)
  Matrix right;  // (vocab_size, rank)
  int top_m = 64;                   // always-selected best predicted rows
  float tau = 0;                    // score threshold; effective iff use_tau
  bool use_tau = false;
};

// Deterministic rank-r factorization of the head matrix (subspace iteration,
// seeded start, fixed iteration count). RangeError if rank is too large.
RowPredictor build_predictor(const Matrix& head, int rank,
                             uint64_t seed = kPredictorSeed);

// scores = right * (left * hidden); returns rows with score >= tau (when
// enabled) unioned with the top_m scored rows. Sorted, distinct, non-empty.
std::vector<int> predict_rows(const RowPredictor& predictor,
                              const std::vector<float>& hidden);

std::vector<float> predictor_scores(const RowPredictor& predictor,
                                    const std::vector<float>& hidden);

struct SparseLogits {
  std::vector<int> ids;       // sorted active rows
  std::vector<float> values;  // aligned with ids
  float fill = 0;             // value reported for inactive rows
  size_t dot_count = 0;       // row dot products actually computed
};

// Computes logits only for the candidate rows. fill_zero reproduces the
// zero-fill compatibility behavior; default marks inactive rows -inf so
// sampling can exclude them.
SparseLogits sparse_logits(const Matrix& head, const std::vector<float>& hidden,
                           const std::vector<int>& candidates,
                           bool fill_zero = false);

int argmax_sparse(const SparseLogits& logits);  // ties -> lowest id

}  // namespace stm
