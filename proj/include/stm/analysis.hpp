#pragma once

// Offline statistics over decode traces: expert activation frequency maps,
// neuron-level sparsity distributions, and the group-partitioned load
// balance objective.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "stm/trace.hpp"

namespace stm {

struct ActivationStats {
  int num_layers = 0;
  int num_experts = 0;
  int top_k = 0;
  uint64_t total_tokens = 0;
  std::vector<std::vector<uint64_t>> counts;  // [layer][expert]

  double frequency(int layer, int expert) const {
    return total_tokens == 0 ? 0.0
                             : static_cast<double>(counts[layer][expert]) /
                                   static_cast<double>(total_tokens);
  }
};

struct QuantileSummary {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
  size_t samples = 0;
};

// Per-invocation inactive-neuron fractions, grouped by (layer, expert).
struct SparsityStats {
  int num_layers = 0;
  int num_experts = 0;
  std::vector<std::vector<std::vector<float>>> samples;  // [layer][expert]

  QuantileSummary quantiles(int layer, int expert) const;
  std::vector<float> layer_samples(int layer) const;  // pooled over experts
  QuantileSummary layer_quantiles(int layer) const;
};

// Exact quantiles with linear interpolation between closest ranks.
QuantileSummary summarize(std::vector<float> values);

struct TraceStats {
  ActivationStats activation;
  SparsityStats sparsity;
};

TraceStats accumulate_stats(const DecodeTrace& trace);
TraceStats accumulate_stats(std::istream& trace_stream);

// Tab-separated tables for external plotting.
void write_activation_table(std::ostream& out, const ActivationStats& stats);
void write_sparsity_table(std::ostream& out, const SparsityStats& stats);

struct BalanceLossResult {
  std::vector<double> per_group;  // NaN for empty groups
  double mean = 0;                // over non-empty groups
  std::vector<int> empty_groups;
};

// Per group g: f_i = selections of expert i / (top_k * tokens in g),
// p_i = mean routing probability of expert i, L_g = N * sum_i f_i * p_i.
// Uniform routing scores 1.0; full concentration on one expert scores N.
BalanceLossResult dp_group_balance_loss(
    const std::vector<std::vector<int>>& assignments,
    const std::vector<std::vector<float>>& probabilities,
    const std::vector<int>& group_labels, int num_experts);

// Runs the model greedily over each corpus line and aggregates gate
// sparsity per routed expert invocation.
SparsityStats neuron_sparsity_report(const std::string& model_path,
                                     const std::vector<std::string>& corpus,
                                     int max_tokens);

}  // namespace stm
