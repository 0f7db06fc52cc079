#pragma once

// Expert store with deterministic latency injection. Zero latencies = real
// storage behavior. Wall-clock callers ask fetch() to sleep the injected
// duration; the virtual-time pipeline accounts fetch_cost_ns() instead.

#include <atomic>
#include <cstdint>
#include <string>

#include "stm/container.hpp"

namespace stm {

struct LatencyModel {
  uint64_t fixed_ns = 0;
  uint64_t per_byte_ns = 0;
  bool zero() const { return fixed_ns == 0 && per_byte_ns == 0; }
};

class StorageModel {
 public:
  StorageModel(const std::string& path, LatencyModel latency = {});

  const ContainerIndex& index() const { return reader_.index(); }
  const LatencyModel& latency() const { return latency_; }

  // Reads exactly one expert's padded byte range. Thread-safe.
  ExpertSegment fetch(int layer, int expert, bool sleep_latency);

  uint64_t fetch_cost_ns(int layer, int expert) const;
  uint64_t segment_bytes(int layer, int expert) const;

  uint64_t bytes_read() const { return reader_.bytes_read(); }
  uint64_t fetches() const { return fetches_.load(); }

  // Make the n-th fetch (0-based, counted from now) fail with a retryable
  // StorageError.
  void fail_fetch_at(uint64_t n);

 private:
  SegmentReader reader_;
  LatencyModel latency_;
  std::atomic<uint64_t> fetches_{0};
  std::atomic<int64_t> fail_at_{-1};
};

}  // namespace stm
