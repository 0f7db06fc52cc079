#include "stm/expert_cache.hpp"

#include "stm/error.hpp"

namespace stm {

namespace {
std::string key_str(ExpertKey k) {
  return "(" + std::to_string(k.layer) + "," + std::to_string(k.expert) + ")";
}
}  // namespace

ExpertCache::ExpertCache(size_t capacity_bytes) : capacity_(capacity_bytes) {}

std::shared_ptr<const ExpertWeights> ExpertCache::lookup(ExpertKey key, bool pin) {
  std::lock_guard<std::mutex> lock(mu_);
  counters_.lookups++;
  auto it = map_.find(key);
  if (it == map_.end()) {
    counters_.misses++;
    return nullptr;
  }
  counters_.hits++;
  lru_.splice(lru_.begin(), lru_, it->second.lru_it);
  if (pin) it->second.pins++;
  return it->second.weights;
}

bool ExpertCache::resident(ExpertKey key) const {
  std::lock_guard<std::mutex> lock(mu_);
  return map_.contains(key);
}

std::vector<ExpertKey> ExpertCache::insert(ExpertKey key,
                                           std::shared_ptr<const ExpertWeights> weights,
                                           size_t bytes, bool pinned) {
  std::lock_guard<std::mutex> lock(mu_);
  if (bytes > capacity_)
    throw CapacityError("expert " + key_str(key) + " (" + std::to_string(bytes) +
                        " bytes) larger than cache capacity " +
                        std::to_string(capacity_));
  if (auto it = map_.find(key); it != map_.end()) {
    // Already resident (e.g. raced with a concurrent fetch): refresh only.
    lru_.splice(lru_.begin(), lru_, it->second.lru_it);
    if (pinned) it->second.pins++;
    return {};
  }

  std::vector<ExpertKey> evicted;
  while (resident_ + bytes > capacity_) {
    auto victim = lru_.end();
    for (auto it = std::prev(lru_.end());; --it) {
      if (map_.at(*it).pins == 0) {
        victim = it;
        break;
      }
      if (it == lru_.begin()) break;
    }
    if (victim == lru_.end())
      throw OvercommitError(
          "cache overcommitted: all resident experts pinned; capacity " +
          std::to_string(capacity_) + " bytes cannot hold one token's working set");
    auto vit = map_.find(*victim);
    resident_ -= vit->second.bytes;
    evicted.push_back(*victim);
    counters_.evictions++;
    lru_.erase(victim);
    map_.erase(vit);
  }

  lru_.push_front(key);
  Entry e;
  e.weights = std::move(weights);
  e.bytes = bytes;
  e.pins = pinned ? 1 : 0;
  e.epoch = next_epoch_++;
  e.lru_it = lru_.begin();
  map_.emplace(key, std::move(e));
  resident_ += bytes;
  peak_ = std::max(peak_, resident_);
  counters_.inserts++;
  return evicted;
}

void ExpertCache::pin(ExpertKey key) {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = map_.find(key);
  if (it == map_.end()) throw StateError("pin of non-resident expert " + key_str(key));
  it->second.pins++;
}

void ExpertCache::unpin(ExpertKey key) {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = map_.find(key);
  if (it == map_.end())
    throw StateError("unpin of non-resident expert " + key_str(key));
  if (it->second.pins <= 0) throw StateError("unpin below zero " + key_str(key));
  it->second.pins--;
}

uint64_t ExpertCache::epoch(ExpertKey key) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = map_.find(key);
  return it == map_.end() ? 0 : it->second.epoch;
}

size_t ExpertCache::resident_bytes() const {
  std::lock_guard<std::mutex> lock(mu_);
  return resident_;
}

size_t ExpertCache::peak_resident_bytes() const {
  std::lock_guard<std::mutex> lock(mu_);
  return peak_;
}

CacheCounters ExpertCache::counters() const {
  std::lock_guard<std::mutex> lock(mu_);
  return counters_;
}

}  // namespace stm
