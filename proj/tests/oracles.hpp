#pragma once

// Test-only reference implementations, kept independent of the code paths
// they check: brute-force masked attention straight from the definition, a
// single-step LRU simulator, and small fixture/file helpers.

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "stm/fixture.hpp"
#include "stm/kernels.hpp"

namespace oracle {

// Full attention with an explicit causal band mask, double accumulation.
// keys/values: one vector of kv_heads*head_dim floats per position.
// window == 0 means global attention.
inline std::vector<float> dense_attention(
    const std::vector<std::vector<float>>& keys,
    const std::vector<std::vector<float>>& values, const std::vector<float>& q,
    int q_heads, int kv_heads, int head_dim, int64_t position, int window) {
  std::vector<float> out(static_cast<size_t>(q_heads) * head_dim, 0.0f);
  int group = q_heads / kv_heads;
  for (int h = 0; h < q_heads; h++) {
    int kvh = h / group;
    std::vector<double> scores;
    std::vector<int64_t> allowed;
    for (int64_t t = 0; t <= position; t++) {
      if (window > 0 && t < position - window + 1) continue;  // outside the band
      const float* kh = keys[t].data() + static_cast<size_t>(kvh) * head_dim;
      double dot = 0;
      for (int d = 0; d < head_dim; d++)
        dot += static_cast<double>(q[h * head_dim + d]) * kh[d];
      scores.push_back(dot / std::sqrt(static_cast<double>(head_dim)));
      allowed.push_back(t);
    }
    double mx = *std::max_element(scores.begin(), scores.end());
    double sum = 0;
    for (double& s : scores) {
      s = std::exp(s - mx);
      sum += s;
    }
    for (size_t i = 0; i < allowed.size(); i++) {
      const float* vh =
          values[allowed[i]].data() + static_cast<size_t>(kvh) * head_dim;
      double w = scores[i] / sum;
      for (int d = 0; d < head_dim; d++)
        out[h * head_dim + d] += static_cast<float>(w * vh[d]);
    }
  }
  return out;
}

// Step-by-step LRU over entry counts. access() = lookup + insert-on-miss.
struct RefLru {
  size_t capacity;
  std::deque<int64_t> order;  // front = MRU

  struct Result {
    bool hit = false;
    std::vector<int64_t> evicted;
  };

  explicit RefLru(size_t capacity) : capacity(capacity) {}

  Result access(int64_t key) {
    Result r;
    auto it = std::find(order.begin(), order.end(), key);
    if (it != order.end()) {
      r.hit = true;
      order.erase(it);
      order.push_front(key);
      return r;
    }
    while (order.size() >= capacity) {
      r.evicted.push_back(order.back());
      order.pop_back();
    }
    order.push_front(key);
    return r;
  }

  bool resident(int64_t key) const {
    return std::find(order.begin(), order.end(), key) != order.end();
  }
};

// Self-deleting temp file path.
struct TempFile {
  std::string path;
  explicit TempFile(const std::string& suffix = ".stm") {
    char buf[] = "/tmp/stm_test_XXXXXX";
    int fd = mkstemp(buf);
    ::close(fd);
    ::unlink(buf);
    path = std::string(buf) + suffix;
  }
  ~TempFile() { ::unlink(path.c_str()); }
  TempFile(const TempFile&) = delete;
};

inline stm::Matrix random_matrix(int rows, int cols, uint64_t seed,
                                 const std::string& tag) {
  return stm::fixture_matrix(rows, cols, seed, tag, 1);
}

}  // namespace oracle
