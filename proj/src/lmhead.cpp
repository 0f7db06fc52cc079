#include "stm/lmhead.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "stm/error.hpp"
#include "stm/rng.hpp"

namespace stm {

namespace {

// B <- orthonormal basis of span(B) via modified Gram-Schmidt, columns in
// place. Degenerate columns are replaced with deterministic unit vectors.
void orthonormalize_columns(Matrix& b) {
  const int n = b.rows;
  const int r = b.cols;
  for (int j = 0; j < r; j++) {
    for (int k = 0; k < j; k++) {
      float dot = 0;
      for (int i = 0; i < n; i++) dot += b.at(i, k) * b.at(i, j);
      for (int i = 0; i < n; i++) b.at(i, j) -= dot * b.at(i, k);
    }
    float norm = 0;
    for (int i = 0; i < n; i++) norm += b.at(i, j) * b.at(i, j);
    norm = std::sqrt(norm);
    if (norm < 1e-12f) {
      for (int i = 0; i < n; i++) b.at(i, j) = 0;
      b.at(j % n, j) = 1.0f;
      j--;  // redo this column against the previous ones
      continue;
    }
    for (int i = 0; i < n; i++) b.at(i, j) /= norm;
  }
}

}  // namespace

RowPredictor build_predictor(const Matrix& head, int rank, uint64_t seed) {
  const int vocab = head.rows;
  const int hidden = head.cols;
  if (rank < 1 || rank > std::min(vocab, hidden))
    throw RangeError("predictor rank " + std::to_string(rank) +
                     " outside [1, min(vocab, hidden)]");

  // M = head^T head (hidden x hidden), iterated on a seeded random basis.
  Matrix m(hidden, hidden);
  for (int i = 0; i < hidden; i++)
    for (int j = 0; j < hidden; j++) {
      float acc = 0;
      for (int v = 0; v < vocab; v++) acc += head.at(v, i) * head.at(v, j);
      m.at(i, j) = acc;
    }

  Matrix b(hidden, rank);
  {
    CounterRng rng(seed, "predictor.init");
    for (float& v : b.data) v = rng.next_symmetric();
  }
  orthonormalize_columns(b);

  Matrix next(hidden, rank);
  for (int iter = 0; iter < kPredictorIterations; iter++) {
    for (int i = 0; i < hidden; i++)
      for (int j = 0; j < rank; j++) {
        float acc = 0;
        for (int k = 0; k < hidden; k++) acc += m.at(i, k) * b.at(k, j);
        next.at(i, j) = acc;
      }
    std::swap(b, next);
    orthonormalize_columns(b);
  }

  RowPredictor p;
  p.rank = rank;
  p.left = Matrix(rank, hidden);
  for (int j = 0; j < rank; j++)
    for (int i = 0; i < hidden; i++) p.left.at(j, i) = b.at(i, j);
  p.right = Matrix(vocab, rank);
  for (int v = 0; v < vocab; v++)
    for (int j = 0; j < rank; j++) {
      float acc = 0;
      for (int i = 0; i < hidden; i++) acc += head.at(v, i) * b.at(i, j);
      p.right.at(v, j) = acc;
    }
  return p;
}

std::vector<float> predictor_scores(const RowPredictor& p,
                                    const std::vector<float>& hidden) {
  std::vector<float> sketch = matvec(p.left, hidden);
  return matvec(p.right, sketch);
}

std::vector<int> predict_rows(const RowPredictor& p,
                              const std::vector<float>& hidden) {
  std::vector<float> scores = predictor_scores(p, hidden);
  const int vocab = static_cast<int>(scores.size());
  const int m = std::min(std::max(1, p.top_m), vocab);

  std::vector<char> selected(vocab, 0);
  if (p.use_tau) {
    for (int v = 0; v < vocab; v++)
      if (scores[v] >= p.tau) selected[v] = 1;
  }
  std::vector<int> order(vocab);
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + m, order.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  for (int i = 0; i < m; i++) selected[order[i]] = 1;

  std::vector<int> out;
  out.reserve(static_cast<size_t>(m));
  for (int v = 0; v < vocab; v++)
    if (selected[v]) out.push_back(v);
  return out;
}

SparseLogits sparse_logits(const Matrix& head, const std::vector<float>& hidden,
                           const std::vector<int>& candidates, bool fill_zero) {
  SparseLogits out;
  out.fill = fill_zero ? 0.0f : -std::numeric_limits<float>::infinity();
  out.ids = candidates;
  out.values.resize(candidates.size());
  for (int row : candidates)
    if (row < 0 || row >= head.rows)
      throw RangeError("candidate row " + std::to_string(row) + " out of range");
  const int n = static_cast<int>(candidates.size());
#pragma omp parallel for schedule(static) if (static_cast<long>(n) * head.cols > 16384)
  for (int i = 0; i < n; i++) {
    int row = candidates[i];
    const float* wr = head.row(row);
    float acc = 0;
    for (int c = 0; c < head.cols; c++) acc += wr[c] * hidden[c];
    out.values[i] = acc;
  }
  out.dot_count = candidates.size();
  return out;
}

int argmax_sparse(const SparseLogits& logits) {
  if (logits.ids.empty()) throw StateError("argmax over empty sparse logits");
  size_t best = 0;
  for (size_t i = 1; i < logits.ids.size(); i++)
    if (logits.values[i] > logits.values[best]) best = i;
  return logits.ids[best];
}

}  // namespace stm
