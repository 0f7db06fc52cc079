#include "stm/prefetch.hpp"

#include <algorithm>
#include <chrono>

#include "stm/error.hpp"

namespace stm {

PrefetchTicket make_ticket(int step, int layer, const std::vector<int>& expert_ids) {
  PrefetchTicket t;
  t.step = step;
  t.layer = layer;
  t.keys.reserve(expert_ids.size());
  for (int e : expert_ids) t.keys.push_back({layer, e});
  return t;
}

namespace {

std::vector<ResolvedExpert> order_by_keys(const PrefetchTicket& t) {
  std::vector<ResolvedExpert> out;
  out.reserve(t.keys.size());
  for (ExpertKey k : t.keys) {
    auto it = std::find_if(t.pinned.begin(), t.pinned.end(),
                           [&](const ResolvedExpert& r) { return r.key == k; });
    out.push_back(it != t.pinned.end() ? *it : ResolvedExpert{k, nullptr, 0});
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------- async

AsyncFetchPipeline::AsyncFetchPipeline(ExpertCache& cache, StorageModel& storage,
                                       EventRecorder* events, int fetch_units)
    : cache_(cache), storage_(storage), events_(events) {
  for (int i = 0; i < std::max(1, fetch_units); i++)
    units_.emplace_back([this] { worker(); });
}

AsyncFetchPipeline::~AsyncFetchPipeline() {
  {
    std::lock_guard<std::mutex> lock(qmu_);
    stopping_ = true;
  }
  qcv_.notify_all();
  for (auto& u : units_) u.join();
}

void AsyncFetchPipeline::worker() {
  for (;;) {
    std::shared_ptr<detail::FetchTask> task;
    {
      std::unique_lock<std::mutex> lock(qmu_);
      qcv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
      if (queue_.empty()) return;
      task = queue_.front();
      queue_.pop_front();
    }
    try {
      ExpertSegment seg = storage_.fetch(task->key.layer, task->key.expert,
                                         /*sleep_latency=*/true);
      if (events_) events_->stamp(EventKind::SegmentRead, task->step, task->layer);
      auto weights = std::make_shared<ExpertWeights>(decode_expert_weights(seg));
      size_t bytes = weights->resident_bytes();
      // Visible to others only now, fully loaded, already pinned.
      cache_.insert(task->key, weights, bytes, /*pinned=*/true);
      uint64_t epoch = cache_.epoch(task->key);
      {
        std::lock_guard<std::mutex> lock(task->mu);
        task->weights = std::move(weights);
        task->epoch = epoch;
        task->done = true;
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(task->mu);
      task->error = std::current_exception();
      task->done = true;
    }
    task->cv.notify_all();
  }
}

void AsyncFetchPipeline::issue(PrefetchTicket& t) {
  if (t.issued) return;
  t.issued = true;
  for (ExpertKey key : t.keys) {
    if (auto w = cache_.lookup(key, /*pin=*/true)) {
      t.hits++;
      t.pinned.push_back({key, std::move(w), cache_.epoch(key)});
      continue;
    }
    t.misses++;
    auto task = std::make_shared<detail::FetchTask>();
    task->key = key;
    task->step = t.step;
    task->layer = t.layer;
    if (events_) events_->stamp(EventKind::FetchIssued, t.step, t.layer);
    {
      std::lock_guard<std::mutex> lock(qmu_);
      queue_.push_back(task);
    }
    qcv_.notify_one();
    t.tasks.push_back(std::move(task));
  }
}

std::vector<ResolvedExpert> AsyncFetchPipeline::await(PrefetchTicket& t) {
  if (!t.issued) throw StateError("await on unissued ticket");
  if (t.awaited) return t.resolved;

  uint64_t waited_ns = 0;
  for (auto& task : t.tasks) {
    std::unique_lock<std::mutex> lock(task->mu);
    if (!task->done) {
      auto t0 = std::chrono::steady_clock::now();
      task->cv.wait(lock, [&] { return task->done; });
      waited_ns += static_cast<uint64_t>(
          std::chrono::duration_cast<std::chrono::nanoseconds>(
              std::chrono::steady_clock::now() - t0)
              .count());
    }
  }
  stall_ns_ += waited_ns;
  t.stall_ns = waited_ns;

  std::exception_ptr first_error;
  for (auto& task : t.tasks) {
    if (task->error && !first_error) first_error = task->error;
    if (task->weights)
      t.pinned.push_back({task->key, task->weights, task->epoch});
  }
  t.tasks.clear();

  if (first_error) {
    for (const ResolvedExpert& r : t.pinned) cache_.unpin(r.key);
    t.pinned.clear();
    t.released = true;
    t.awaited = true;
    std::rethrow_exception(first_error);
  }

  t.resolved = order_by_keys(t);
  t.awaited = true;
  return t.resolved;
}

void AsyncFetchPipeline::release(PrefetchTicket& t) {
  if (!t.issued || t.released) return;
  // Join anything still in flight (abort paths skip await).
  for (auto& task : t.tasks) {
    std::unique_lock<std::mutex> lock(task->mu);
    task->cv.wait(lock, [&] { return task->done; });
    if (task->weights) t.pinned.push_back({task->key, task->weights, task->epoch});
  }
  t.tasks.clear();
  for (const ResolvedExpert& r : t.pinned) cache_.unpin(r.key);
  t.pinned.clear();
  t.released = true;
}

// -------------------------------------------------------------- virtual

VirtualFetchPipeline::VirtualFetchPipeline(ExpertCache& cache, StorageModel& storage,
                                           EventRecorder* events, int fetch_units,
                                           VirtualClock* clock)
    : cache_(cache),
      storage_(storage),
      events_(events),
      clock_(clock),
      unit_free_ns_(std::max(1, fetch_units), 0) {}

void VirtualFetchPipeline::issue(PrefetchTicket& t) {
  if (t.issued) return;
  t.issued = true;
  const uint64_t issue_ns = clock_->now_ns;
  uint64_t ready = issue_ns;
  for (ExpertKey key : t.keys) {
    if (auto w = cache_.lookup(key, /*pin=*/true)) {
      t.hits++;
      t.pinned.push_back({key, std::move(w), cache_.epoch(key)});
      continue;
    }
    t.misses++;
    if (events_) events_->stamp(EventKind::FetchIssued, t.step, t.layer);
    try {
      ExpertSegment seg =
          storage_.fetch(key.layer, key.expert, /*sleep_latency=*/false);
      if (events_) events_->stamp(EventKind::SegmentRead, t.step, t.layer);
      auto weights = std::make_shared<ExpertWeights>(decode_expert_weights(seg));
      size_t bytes = weights->resident_bytes();
      cache_.insert(key, weights, bytes, /*pinned=*/true);
      t.pinned.push_back({key, std::move(weights), cache_.epoch(key)});

      // Earliest-free fetch unit, ties to the lowest index.
      size_t u = static_cast<size_t>(
          std::min_element(unit_free_ns_.begin(), unit_free_ns_.end()) -
          unit_free_ns_.begin());
      uint64_t start = std::max(unit_free_ns_[u], issue_ns);
      uint64_t completion = start + storage_.fetch_cost_ns(key.layer, key.expert);
      unit_free_ns_[u] = completion;
      ready = std::max(ready, completion);
    } catch (...) {
      if (!t.deferred_error) t.deferred_error = std::current_exception();
    }
  }
  t.ready_ns = ready;
}

std::vector<ResolvedExpert> VirtualFetchPipeline::await(PrefetchTicket& t) {
  if (!t.issued) throw StateError("await on unissued ticket");
  if (t.awaited) return t.resolved;
  t.awaited = true;
  if (t.deferred_error) {
    for (const ResolvedExpert& r : t.pinned) cache_.unpin(r.key);
    t.pinned.clear();
    t.released = true;
    std::rethrow_exception(t.deferred_error);
  }
  uint64_t stall = t.ready_ns > clock_->now_ns ? t.ready_ns - clock_->now_ns : 0;
  clock_->now_ns += stall;
  stall_ns_ += stall;
  t.stall_ns = stall;
  t.resolved = order_by_keys(t);
  return t.resolved;
}

void VirtualFetchPipeline::release(PrefetchTicket& t) {
  if (!t.issued || t.released) return;
  for (const ResolvedExpert& r : t.pinned) cache_.unpin(r.key);
  t.pinned.clear();
  t.released = true;
}

}  // namespace stm
