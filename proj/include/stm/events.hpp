#pragma once

// Global ordering instrumentation for the decode pipeline. Stamps are cheap
// and strictly increasing, which lets tests assert that expert-store traffic
// for a layer happens after its router decision and that no fetch is issued
// after its attention finished.

#include <atomic>
#include <cstdint>
#include <mutex>
#include <vector>

namespace stm {

enum class EventKind { RouterDecided, FetchIssued, SegmentRead, AttentionDone };

struct Event {
  EventKind kind;
  int step;
  int layer;
  uint64_t seq;
};

class EventRecorder {
 public:
  uint64_t stamp(EventKind kind, int step, int layer) {
    uint64_t seq = next_.fetch_add(1);
    std::lock_guard<std::mutex> lock(mu_);
    events_.push_back({kind, step, layer, seq});
    return seq;
  }

  std::vector<Event> events() const {
    std::lock_guard<std::mutex> lock(mu_);
    return events_;
  }

  void clear() {
    std::lock_guard<std::mutex> lock(mu_);
    events_.clear();
  }

 private:
  std::atomic<uint64_t> next_{0};
  mutable std::mutex mu_;
  std::vector<Event> events_;
};

}  // namespace stm
