#pragma once

// Grouped-query attention over per-layer KV caches. Windowed layers rotate
// q/k (rotary pairs (2j, 2j+1)) and keep a ring buffer of window_size slots;
// global layers skip rotation entirely and keep every position.

#include <cstdint>
#include <vector>

#include "stm/config.hpp"

namespace stm {

struct RopeParams {
  float base = 0;
  int head_dim = 0;
  std::vector<float> inv_freq;  // freq_j = base^(-2j/head_dim), strictly decreasing
};

RopeParams make_rope_params(float base, int head_dim);  // ShapeError if odd

// Rotates pairs (x_{2j}, x_{2j+1}) by angle position * freq_j. Norm-preserving.
void rope_apply_inplace(float* head_vec, int64_t position, const RopeParams& params);
std::vector<float> rope_apply(const std::vector<float>& head_vec, int64_t position,
                              const RopeParams& params);

class KVCache {
 public:
  explicit KVCache(const ModelConfig& config);

  // k/v are (kv_heads, head_dim), already rotated for windowed layers.
  // position must equal the layer cursor.
  void append(int layer, const float* k, const float* v, int64_t position);
  void rollback_last(int layer);  // drop the most recent append

  int64_t cursor(int layer) const;
  LayerKind kind(int layer) const;
  int capacity(int layer) const;
  int64_t total_slots() const;  // sum of per-layer capacities
  int kv_heads() const { return kv_heads_; }
  int head_dim() const { return head_dim_; }
  int window() const { return window_; }

  const float* key(int layer, int kv_head, int64_t position) const;
  const float* value(int layer, int kv_head, int64_t position) const;

 private:
  struct Layer {
    LayerKind kind;
    int capacity;
    int64_t cursor = 0;
    std::vector<float> k, v;  // (kv_heads, capacity, head_dim)
  };
  int kv_heads_;
  int head_dim_;
  int window_;
  std::vector<Layer> layers_;

  int slot(const Layer& l, int64_t position) const;
};

// Causal softmax attention for one token, scale 1/sqrt(head_dim). Query head
// h reads kv head h / (q_heads/kv_heads). Windowed layers attend to
// [max(0, position-window+1), position]; global layers to [0, position].
// q is (q_heads, head_dim) and must be rotated iff the layer is windowed.
void attend(float* out, int layer, const float* q, int q_heads,
            const KVCache& cache, int64_t position);

}  // namespace stm
