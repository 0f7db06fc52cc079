#include "stm/storage.hpp"

#include <chrono>
#include <thread>

#include "stm/error.hpp"

namespace stm {

StorageModel::StorageModel(const std::string& path, LatencyModel latency)
    : reader_(path), latency_(latency) {}

ExpertSegment StorageModel::fetch(int layer, int expert, bool sleep_latency) {
  uint64_t n = fetches_.fetch_add(1);
  if (static_cast<int64_t>(n) == fail_at_.load())
    throw StorageError("injected I/O failure on fetch " + std::to_string(n));
  if (sleep_latency && !latency_.zero())
    std::this_thread::sleep_for(
        std::chrono::nanoseconds(fetch_cost_ns(layer, expert)));
  return reader_.fetch(layer, expert);
}

uint64_t StorageModel::fetch_cost_ns(int layer, int expert) const {
  return latency_.fixed_ns + latency_.per_byte_ns * segment_bytes(layer, expert);
}

uint64_t StorageModel::segment_bytes(int layer, int expert) const {
  return SegmentReader::segment_bytes(reader_.index(), layer, expert);
}

void StorageModel::fail_fetch_at(uint64_t n) {
  fail_at_.store(static_cast<int64_t>(fetches_.load() + n));
}

}  // namespace stm
