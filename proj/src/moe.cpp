#include "stm/moe.hpp"

#include <algorithm>
#include <numeric>

#include "stm/error.hpp"
#include "stm/quant.hpp"

namespace stm {

RouterDecision route(const std::vector<float>& hidden, const Matrix& router_weights,
                     int top_k) {
  const int num_experts = router_weights.rows;
  if (top_k < 1 || top_k > num_experts)
    throw ConfigError("route: top_k " + std::to_string(top_k) +
                      " outside [1, " + std::to_string(num_experts) + "]");
  std::vector<float> logits = matvec(router_weights, hidden);

  RouterDecision d;
  d.full_probabilities = logits;
  softmax_inplace(d.full_probabilities.data(), num_experts);

  std::vector<int> order(num_experts);
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + top_k, order.end(),
                    [&](int a, int b) {
                      if (logits[a] != logits[b]) return logits[a] > logits[b];
                      return a < b;  // ties to the lower index
                    });
  d.expert_ids.assign(order.begin(), order.begin() + top_k);
  std::sort(d.expert_ids.begin(), d.expert_ids.end());

  d.gate_weights.resize(top_k);
  for (int i = 0; i < top_k; i++) d.gate_weights[i] = logits[d.expert_ids[i]];
  softmax_inplace(d.gate_weights.data(), top_k);
  return d;
}

namespace {

void check_expert_shapes(const std::vector<float>& x, const ExpertWeights& w) {
  int hidden = static_cast<int>(x.size());
  if (w.gate.cols != hidden || w.up.cols != hidden || w.down.rows != hidden ||
      w.gate.rows != w.up.rows || w.down.cols != w.gate.rows)
    throw ShapeError("expert weights inconsistent with input length " +
                     std::to_string(hidden));
}

}  // namespace

std::vector<float> expert_dense(const std::vector<float>& x, const ExpertWeights& w) {
  check_expert_shapes(x, w);
  const int ffn = w.gate.rows;
  std::vector<float> g = matvec(w.gate, x);
  std::vector<float> u = matvec(w.up, x);
  for (int i = 0; i < ffn; i++) g[i] = (g[i] > 0.0f ? g[i] : 0.0f) * u[i];
  return matvec(w.down, g);
}

std::vector<float> expert_sparse(const std::vector<float>& x, const ExpertWeights& w,
                                 float* activation_ratio) {
  check_expert_shapes(x, w);
  const int ffn = w.gate.rows;
  const int hidden = static_cast<int>(x.size());

  std::vector<float> g = matvec(w.gate, x);  // the gate is always evaluated fully
  std::vector<int> active;
  active.reserve(ffn);
  for (int i = 0; i < ffn; i++)
    if (g[i] > 0.0f) active.push_back(i);
  if (activation_ratio)
    *activation_ratio = static_cast<float>(active.size()) / static_cast<float>(ffn);

  const int na = static_cast<int>(active.size());
  std::vector<float> t(na);
#pragma omp parallel for schedule(static) if (static_cast<long>(na) * hidden > 16384)
  for (int a = 0; a < na; a++) {
    const float* ur = w.up.row(active[a]);
    float dot = 0.0f;
    for (int c = 0; c < hidden; c++) dot += ur[c] * x[c];
    t[a] = g[active[a]] * dot;
  }

  std::vector<float> y(hidden, 0.0f);
#pragma omp parallel for schedule(static) if (static_cast<long>(na) * hidden > 16384)
  for (int r = 0; r < hidden; r++) {
    const float* dr = w.down.row(r);
    float acc = 0.0f;
    for (int a = 0; a < na; a++) acc += dr[active[a]] * t[a];
    y[r] = acc;
  }
  return y;
}

std::vector<float> moe_forward(const std::vector<float>& post_attention_hidden,
                               const RouterDecision& decision,
                               const std::vector<const ExpertWeights*>& experts,
                               bool sparse, std::vector<float>* activation_ratios) {
  if (experts.size() != decision.expert_ids.size())
    throw StateError("moe_forward: resolved expert count mismatch");
  std::vector<float> out(post_attention_hidden.size(), 0.0f);
  for (size_t i = 0; i < experts.size(); i++) {
    if (!experts[i])
      throw StateError("moe_forward: missing weights for expert " +
                       std::to_string(decision.expert_ids[i]));
    float ratio = 0.0f;
    std::vector<float> y = sparse
                               ? expert_sparse(post_attention_hidden, *experts[i], &ratio)
                               : expert_dense(post_attention_hidden, *experts[i]);
    if (sparse && activation_ratios) activation_ratios->push_back(ratio);
    if (!sparse && activation_ratios) {
      // dense path still reports the gate's activity for the trace
      std::vector<float> g = matvec(experts[i]->gate, post_attention_hidden);
      int na = 0;
      for (float v : g)
        if (v > 0.0f) na++;
      activation_ratios->push_back(static_cast<float>(na) / static_cast<float>(g.size()));
    }
    float w = decision.gate_weights[i];
    for (size_t j = 0; j < out.size(); j++) out[j] += w * y[j];
  }
  return out;
}

ExpertWeights decode_expert_weights(const ExpertSegment& seg) {
  auto decode = [&](const TensorRecord& rec) {
    auto bytes = seg.tensor_bytes(rec);
    return dequantize_matrix_q4(bytes.data(), bytes.size(),
                                static_cast<int>(rec.rows), static_cast<int>(rec.cols));
  };
  ExpertWeights w;
  w.gate = decode(seg.gate);
  w.up = decode(seg.up);
  w.down = decode(seg.down);
  return w;
}

}  // namespace stm
