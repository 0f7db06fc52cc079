#pragma once

// Prefetch pipeline: expert fetches issued at router time so they overlap
// attention compute, awaited right before the FFN needs the weights.
//
// Two drivers share the contract. AsyncFetchPipeline runs a pool of fetch
// unit threads against the wall clock. VirtualFetchPipeline performs the
// reads synchronously but accounts completion on a caller-advanced virtual
// clock, so stall measurements are exactly reproducible.

#include <atomic>
#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

#include "stm/events.hpp"
#include "stm/expert_cache.hpp"
#include "stm/storage.hpp"

namespace stm {

struct VirtualClock {
  uint64_t now_ns = 0;
};

struct ResolvedExpert {
  ExpertKey key;
  std::shared_ptr<const ExpertWeights> weights;
  uint64_t epoch = 0;
};

namespace detail {
struct FetchTask {
  ExpertKey key;
  int step = 0;
  int layer = 0;
  std::mutex mu;
  std::condition_variable cv;
  bool done = false;
  std::exception_ptr error;
  std::shared_ptr<const ExpertWeights> weights;
  uint64_t epoch = 0;
};
}  // namespace detail

struct PrefetchTicket {
  int step = -1;
  int layer = -1;
  std::vector<ExpertKey> keys;

  bool issued = false;
  bool awaited = false;
  bool released = false;
  int hits = 0;    // resident when issued
  int misses = 0;  // fetches enqueued
  uint64_t stall_ns = 0;

  // internal
  std::vector<ResolvedExpert> pinned;
  std::vector<std::shared_ptr<detail::FetchTask>> tasks;
  uint64_t ready_ns = 0;
  std::exception_ptr deferred_error;
  std::vector<ResolvedExpert> resolved;
};

PrefetchTicket make_ticket(int step, int layer, const std::vector<int>& expert_ids);

class FetchPipeline {
 public:
  virtual ~FetchPipeline() = default;

  // Enqueues fetches for non-resident keys and pins resident ones.
  // Idempotent: a second call on the same ticket is a no-op.
  virtual void issue(PrefetchTicket& t) = 0;

  // Blocks only for still-unfinished fetches; the blocked time goes into the
  // stall counters. Returns weights per ticket key, pinned until release().
  // A storage failure recorded on the ticket is rethrown here.
  virtual std::vector<ResolvedExpert> await(PrefetchTicket& t) = 0;

  // Unpins everything the ticket pinned. Joins in-flight fetches first.
  virtual void release(PrefetchTicket& t) = 0;

  uint64_t stall_ns() const { return stall_ns_.load(); }

 protected:
  std::atomic<uint64_t> stall_ns_{0};
};

class AsyncFetchPipeline : public FetchPipeline {
 public:
  AsyncFetchPipeline(ExpertCache& cache, StorageModel& storage,
                     EventRecorder* events, int fetch_units);
  ~AsyncFetchPipeline() override;

  void issue(PrefetchTicket& t) override;
  std::vector<ResolvedExpert> await(PrefetchTicket& t) override;
  void release(PrefetchTicket& t) override;

 private:
  void worker();

  ExpertCache& cache_;
  StorageModel& storage_;
  EventRecorder* events_;
  std::vector<std::thread> units_;
  std::mutex qmu_;
  std::condition_variable qcv_;
  std::deque<std::shared_ptr<detail::FetchTask>> queue_;
  bool stopping_ = false;
};

class VirtualFetchPipeline : public FetchPipeline {
 public:
  VirtualFetchPipeline(ExpertCache& cache, StorageModel& storage,
                       EventRecorder* events, int fetch_units, VirtualClock* clock);

  void issue(PrefetchTicket& t) override;
  std::vector<ResolvedExpert> await(PrefetchTicket& t) override;
  void release(PrefetchTicket& t) override;

 private:
  ExpertCache& cache_;
  StorageModel& storage_;
  EventRecorder* events_;
  VirtualClock* clock_;
  std::vector<uint64_t> unit_free_ns_;
};

}  // namespace stm
