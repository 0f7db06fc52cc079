#pragma once

// Decode trace: one structured text record per step plus a trailing summary.
// The analysis tooling consumes these offline, so the hot path only appends
// to in-memory structs.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace stm {

struct ExpertTraceRec {
  int id = 0;
  float activation_ratio = 0;
};

struct LayerTraceRec {
  std::vector<ExpertTraceRec> experts;  // routed experts, ascending id
  int cache_hits = 0;
  uint64_t stall_ns = 0;
};

struct StepTraceRec {
  int step = 0;
  bool prefill = false;
  int token = 0;
  std::vector<LayerTraceRec> layers;
  int candidate_count = 0;  // LM-head candidate set size (vocab_size when dense)
  uint64_t latency_ns = 0;
};

struct TraceSummary {
  uint64_t steps = 0;
  uint64_t generated = 0;
  double tokens_per_s = 0;
  uint64_t peak_resident_bytes = 0;
  uint64_t cache_hits = 0;
  uint64_t cache_misses = 0;
  uint64_t evictions = 0;
  uint64_t bytes_read = 0;
  uint64_t stall_ns = 0;
};

struct DecodeTrace {
  std::vector<StepTraceRec> steps;
  TraceSummary summary;
};

void write_trace(std::ostream& out, const DecodeTrace& trace);
std::string step_record_json(const StepTraceRec& rec);

// ParseError carries the 1-based line number of the offending record.
DecodeTrace read_trace(std::istream& in);

}  // namespace stm
