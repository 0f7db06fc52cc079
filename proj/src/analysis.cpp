#include "stm/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "stm/engine.hpp"
#include "stm/error.hpp"

namespace stm {

QuantileSummary summarize(std::vector<float> values) {
  QuantileSummary s;
  s.samples = values.size();
  if (values.empty()) return s;
  std::sort(values.begin(), values.end());
  auto at = [&](double p) {
    double idx = p * static_cast<double>(values.size() - 1);
    size_t lo = static_cast<size_t>(idx);
    size_t hi = std::min(lo + 1, values.size() - 1);
    double frac = idx - static_cast<double>(lo);
    return (1.0 - frac) * values[lo] + frac * values[hi];
  };
  s.min = values.front();
  s.q1 = at(0.25);
  s.median = at(0.5);
  s.q3 = at(0.75);
  s.max = values.back();
  return s;
}

QuantileSummary SparsityStats::quantiles(int layer, int expert) const {
  return summarize(samples[layer][expert]);
}

std::vector<float> SparsityStats::layer_samples(int layer) const {
  std::vector<float> pooled;
  for (const auto& per_expert : samples[layer])
    pooled.insert(pooled.end(), per_expert.begin(), per_expert.end());
  return pooled;
}

QuantileSummary SparsityStats::layer_quantiles(int layer) const {
  return summarize(layer_samples(layer));
}

TraceStats accumulate_stats(const DecodeTrace& trace) {
  TraceStats stats;
  ActivationStats& act = stats.activation;
  SparsityStats& sp = stats.sparsity;
  for (const StepTraceRec& rec : trace.steps) {
    act.num_layers = std::max(act.num_layers, static_cast<int>(rec.layers.size()));
    for (const LayerTraceRec& l : rec.layers) {
      act.top_k = std::max(act.top_k, static_cast<int>(l.experts.size()));
      for (const ExpertTraceRec& e : l.experts)
        act.num_experts = std::max(act.num_experts, e.id + 1);
    }
  }
  act.counts.assign(act.num_layers, std::vector<uint64_t>(act.num_experts, 0));
  sp.num_layers = act.num_layers;
  sp.num_experts = act.num_experts;
  sp.samples.assign(act.num_layers, std::vector<std::vector<float>>(act.num_experts));

  for (const StepTraceRec& rec : trace.steps) {
    act.total_tokens++;
    for (size_t l = 0; l < rec.layers.size(); l++) {
      for (const ExpertTraceRec& e : rec.layers[l].experts) {
        act.counts[l][e.id]++;
        sp.samples[l][e.id].push_back(1.0f - e.activation_ratio);
      }
    }
  }
  return stats;
}

TraceStats accumulate_stats(std::istream& trace_stream) {
  return accumulate_stats(read_trace(trace_stream));
}

void write_activation_table(std::ostream& out, const ActivationStats& stats) {
  out << "layer\texpert\tcount\tfrequency\n";
  for (int l = 0; l < stats.num_layers; l++)
    for (int e = 0; e < stats.num_experts; e++)
      out << l << "\t" << e << "\t" << stats.counts[l][e] << "\t"
          << stats.frequency(l, e) << "\n";
}

void write_sparsity_table(std::ostream& out, const SparsityStats& stats) {
  out << "layer\texpert\tsamples\tmin\tq1\tmedian\tq3\tmax\n";
  for (int l = 0; l < stats.num_layers; l++)
    for (int e = 0; e < stats.num_experts; e++) {
      QuantileSummary q = stats.quantiles(l, e);
      out << l << "\t" << e << "\t" << q.samples << "\t" << q.min << "\t" << q.q1
          << "\t" << q.median << "\t" << q.q3 << "\t" << q.max << "\n";
    }
}

BalanceLossResult dp_group_balance_loss(
    const std::vector<std::vector<int>>& assignments,
    const std::vector<std::vector<float>>& probabilities,
    const std::vector<int>& group_labels, int num_experts) {
  const size_t n = assignments.size();
  if (probabilities.size() != n || group_labels.size() != n)
    throw ShapeError("balance loss: stream lengths differ");
  if (n == 0) throw ShapeError("balance loss: empty streams");
  size_t top_k = assignments[0].size();
  int num_groups = 0;
  for (size_t t = 0; t < n; t++) {
    if (assignments[t].size() != top_k)
      throw ShapeError("balance loss: ragged assignment lists");
    if (probabilities[t].size() != static_cast<size_t>(num_experts))
      throw ShapeError("balance loss: probability row length != num_experts");
    if (group_labels[t] < 0) throw RangeError("balance loss: negative group id");
    num_groups = std::max(num_groups, group_labels[t] + 1);
  }

  BalanceLossResult result;
  result.per_group.assign(num_groups, std::numeric_limits<double>::quiet_NaN());
  double sum = 0;
  int non_empty = 0;
  for (int g = 0; g < num_groups; g++) {
    std::vector<double> f(num_experts, 0.0);
    std::vector<double> p(num_experts, 0.0);
    uint64_t tokens = 0;
    for (size_t t = 0; t < n; t++) {
      if (group_labels[t] != g) continue;
      tokens++;
      for (int e : assignments[t]) {
        if (e < 0 || e >= num_experts)
          throw RangeError("balance loss: expert id out of range");
        f[e] += 1.0;
      }
      for (int e = 0; e < num_experts; e++) p[e] += probabilities[t][e];
    }
    if (tokens == 0) {
      result.empty_groups.push_back(g);
      continue;
    }
    double loss = 0;
    for (int e = 0; e < num_experts; e++) {
      double fe = f[e] / (static_cast<double>(top_k) * static_cast<double>(tokens));
      double pe = p[e] / static_cast<double>(tokens);
      loss += fe * pe;
    }
    loss *= static_cast<double>(num_experts);
    result.per_group[g] = loss;
    sum += loss;
    non_empty++;
  }
  result.mean = non_empty > 0 ? sum / non_empty : 0.0;
  return result;
}

SparsityStats neuron_sparsity_report(const std::string& model_path,
                                     const std::vector<std::string>& corpus,
                                     int max_tokens) {
  DecodeTrace combined;
  for (const std::string& prompt : corpus) {
    GenerationParams p;
    p.max_tokens = max_tokens;
    p.sparse_ffn = true;  // the sparse path reports gate activity exactly
    Engine engine(model_path, p);
    GenerateResult r = engine.generate(prompt);
    for (StepTraceRec& rec : r.trace.steps)
      combined.steps.push_back(std::move(rec));
  }
  return accumulate_stats(combined).sparsity;
}

}  // namespace stm
