#include <chrono>
#include <fstream>
#include <thread>

#include "doctest.h"
#include "oracles.hpp"
#include "stm/container.hpp"
#include "stm/error.hpp"
#include "stm/prefetch.hpp"

using namespace stm;

namespace {

constexpr uint64_t kMs = 1'000'000;

struct Rig {
  oracle::TempFile file;
  std::unique_ptr<StorageModel> storage;
  std::unique_ptr<ExpertCache> cache;
  VirtualClock clock;
  EventRecorder events;

  explicit Rig(LatencyModel latency, size_t cache_bytes = 64ull << 20) {
    auto bytes = generate_fixture(preset("tiny"), 7);
    std::ofstream out(file.path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    out.close();
    storage = std::make_unique<StorageModel>(file.path, latency);
    cache = std::make_unique<ExpertCache>(cache_bytes);
  }
};

}  // namespace

TEST_CASE("fetches fully hidden under attention cost zero stall") {
  Rig rig({1 * kMs, 0});
  VirtualFetchPipeline pipe(*rig.cache, *rig.storage, &rig.events, 2, &rig.clock);

  PrefetchTicket t = make_ticket(0, 0, {1, 4});
  pipe.issue(t);             // fetches complete at 1ms on the virtual clock
  rig.clock.now_ns += 5 * kMs;  // attention takes 5ms
  pipe.await(t);
  CHECK(t.stall_ns == 0);
  CHECK(pipe.stall_ns() == 0);
  pipe.release(t);
}

TEST_CASE("issuing at FFN start exposes the whole fetch latency") {
  Rig rig({5 * kMs, 0});
  VirtualFetchPipeline pipe(*rig.cache, *rig.storage, &rig.events, 2, &rig.clock);

  rig.clock.now_ns += 1 * kMs;  // attention already done: 1ms
  PrefetchTicket t = make_ticket(0, 0, {1, 4});
  pipe.issue(t);
  auto resolved = pipe.await(t);
  CHECK(t.stall_ns >= 4 * kMs);
  CHECK(t.stall_ns == 5 * kMs);
  REQUIRE(resolved.size() == 2);
  CHECK(resolved[0].weights != nullptr);
  pipe.release(t);
}

TEST_CASE("a ticket complete before await adds zero stall") {
  Rig rig({3 * kMs, 0});
  VirtualFetchPipeline pipe(*rig.cache, *rig.storage, &rig.events, 2, &rig.clock);

  PrefetchTicket warm = make_ticket(0, 0, {2});
  pipe.issue(warm);
  rig.clock.now_ns += 10 * kMs;
  pipe.await(warm);
  pipe.release(warm);
  uint64_t stall_before = pipe.stall_ns();
  uint64_t bytes_before = rig.storage->bytes_read();

  PrefetchTicket t = make_ticket(1, 0, {2});  // resident now
  pipe.issue(t);
  CHECK(t.hits == 1);
  CHECK(t.misses == 0);
  pipe.await(t);
  CHECK(t.stall_ns == 0);
  CHECK(pipe.stall_ns() == stall_before);
  CHECK(rig.storage->bytes_read() == bytes_before);  // zero I/O on hits
  pipe.release(t);
}

TEST_CASE("duplicate issue on the same ticket is a no-op") {
  Rig rig({1 * kMs, 0});
  VirtualFetchPipeline pipe(*rig.cache, *rig.storage, &rig.events, 2, &rig.clock);
  PrefetchTicket t = make_ticket(0, 1, {0, 5});
  pipe.issue(t);
  uint64_t fetches = rig.storage->fetches();
  pipe.issue(t);
  pipe.issue(t);
  CHECK(rig.storage->fetches() == fetches);
  CHECK(t.misses == 2);
  pipe.await(t);
  pipe.release(t);
}

TEST_CASE("misses fetch exactly the padded segment bytes") {
  Rig rig({});
  VirtualFetchPipeline pipe(*rig.cache, *rig.storage, &rig.events, 2, &rig.clock);
  PrefetchTicket t = make_ticket(0, 1, {2, 6});
  pipe.issue(t);
  CHECK(rig.storage->fetches() == 2);
  CHECK(rig.storage->bytes_read() == rig.storage->segment_bytes(1, 2) +
                                         rig.storage->segment_bytes(1, 6));
  pipe.await(t);
  pipe.release(t);
}

TEST_CASE("pinned experts survive cache pressure until release") {
  // One tiny expert is 3 * 6144 floats; cache holds exactly two of them.
  const size_t expert_bytes = 3 * 96 * 64 * sizeof(float);
  Rig rig({}, 2 * expert_bytes);
  VirtualFetchPipeline pipe(*rig.cache, *rig.storage, &rig.events, 2, &rig.clock);

  PrefetchTicket t = make_ticket(0, 0, {0, 1});
  pipe.issue(t);
  auto resolved = pipe.await(t);
  uint64_t e0 = resolved[0].epoch;
  uint64_t e1 = resolved[1].epoch;

  // Another layer's inserts cannot evict the pinned pair; the failure is
  // recorded on that ticket and surfaces at its await.
  PrefetchTicket crowd = make_ticket(0, 1, {3, 4});
  pipe.issue(crowd);
  CHECK_THROWS_AS(pipe.await(crowd), OvercommitError);

  CHECK(rig.cache->epoch({0, 0}) == e0);
  CHECK(rig.cache->epoch({0, 1}) == e1);
  pipe.release(t);

  // After release the same pressure succeeds by evicting them.
  PrefetchTicket other = make_ticket(1, 1, {3, 4});
  pipe.issue(other);
  pipe.await(other);
  pipe.release(other);
  CHECK(rig.cache->epoch({0, 0}) == 0);
}

TEST_CASE("async pipeline resolves weights and measures only real waiting") {
  Rig rig({2 * kMs, 0});
  AsyncFetchPipeline pipe(*rig.cache, *rig.storage, &rig.events, 2);

  PrefetchTicket t = make_ticket(0, 0, {1, 4});
  pipe.issue(t);
  std::this_thread::sleep_for(std::chrono::milliseconds(30));  // hide the fetch
  auto resolved = pipe.await(t);
  REQUIRE(resolved.size() == 2);
  CHECK(resolved[0].weights != nullptr);
  CHECK(resolved[1].weights != nullptr);
  CHECK(t.stall_ns < 25 * kMs);  // most of the latency was overlapped
  pipe.release(t);

  // weights match a direct decode of the same segment
  ExpertWeights direct = decode_expert_weights(rig.storage->fetch(0, 1, false));
  CHECK(resolved[0].weights->gate.data == direct.gate.data);
}

TEST_CASE("storage failure surfaces at await and aborts cleanly") {
  Rig rig({});
  AsyncFetchPipeline pipe(*rig.cache, *rig.storage, &rig.events, 1);

  rig.storage->fail_fetch_at(0);
  PrefetchTicket t = make_ticket(0, 0, {2, 3});
  pipe.issue(t);
  CHECK_THROWS_AS(pipe.await(t), StorageError);

  // Nothing stays pinned: filling the cache afterwards cannot overcommit.
  PrefetchTicket again = make_ticket(1, 0, {2, 3});
  pipe.issue(again);
  auto resolved = pipe.await(again);
  CHECK(resolved[0].weights != nullptr);
  pipe.release(again);
}
