#pragma once

// Shared LRU cache of decoded expert weights, one pool across every MoE
// layer. Capacity is denominated in resident bytes; pinned entries are never
// evicted. Thread-safe: fetch units insert while the compute stream looks up.

#include <cstdint>
#include <list>
#include <memory>
#include <mutex>
#include <unordered_map>
#include <vector>

#include "stm/moe.hpp"

namespace stm {

struct ExpertKey {
  int layer = 0;
  int expert = 0;
  bool operator==(const ExpertKey&) const = default;
};

struct ExpertKeyHash {
  size_t operator()(const ExpertKey& k) const {
    return std::hash<uint64_t>()((static_cast<uint64_t>(k.layer) << 32) |
                                 static_cast<uint32_t>(k.expert));
  }
};

struct CacheCounters {
  uint64_t lookups = 0;
  uint64_t hits = 0;
  uint64_t misses = 0;
  uint64_t evictions = 0;
  uint64_t inserts = 0;
};

class ExpertCache {
 public:
  explicit ExpertCache(size_t capacity_bytes);

  // Hit refreshes recency and pins when requested; miss only counts.
  std::shared_ptr<const ExpertWeights> lookup(ExpertKey key, bool pin = false);

  // Peek without touching recency or counters.
  bool resident(ExpertKey key) const;

  // Evicts LRU unpinned entries until the new entry fits; returns the evicted
  // keys. CapacityError if the entry alone exceeds capacity, OvercommitError
  // if everything resident is pinned and there is no room.
  std::vector<ExpertKey> insert(ExpertKey key,
                                std::shared_ptr<const ExpertWeights> weights,
                                size_t bytes, bool pinned = false);

  void pin(ExpertKey key);
  void unpin(ExpertKey key);

  // Monotone insertion stamp; 0 when absent. An unchanged epoch over an
  // interval proves the entry was not evicted and reloaded in between.
  uint64_t epoch(ExpertKey key) const;

  size_t capacity_bytes() const { return capacity_; }
  size_t resident_bytes() const;
  size_t peak_resident_bytes() const;
  CacheCounters counters() const;

 private:
  struct Entry {
    std::shared_ptr<const ExpertWeights> weights;
    size_t bytes = 0;
    int pins = 0;
    uint64_t epoch = 0;
    std::list<ExpertKey>::iterator lru_it;
  };

  mutable std::mutex mu_;
  size_t capacity_;
  size_t resident_ = 0;
  size_t peak_ = 0;
  uint64_t next_epoch_ = 1;
  std::list<ExpertKey> lru_;  // front = most recently used
  std::unordered_map<ExpertKey, Entry, ExpertKeyHash> map_;
  CacheCounters counters_;
};

}  // namespace stm
