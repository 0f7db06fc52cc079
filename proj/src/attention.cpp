#include "stm/attention.hpp"

#include <algorithm>
#include <cmath>

#include "stm/error.hpp"
#include "stm/kernels.hpp"

namespace stm {

RopeParams make_rope_params(float base, int head_dim) {
  if (head_dim % 2 != 0)
    throw ShapeError("rope: head_dim " + std::to_string(head_dim) + " is odd");
  RopeParams p;
  p.base = base;
  p.head_dim = head_dim;
  p.inv_freq.resize(head_dim / 2);
  for (int j = 0; j < head_dim / 2; j++)
    p.inv_freq[j] = std::pow(base, -2.0f * static_cast<float>(j) / static_cast<float>(head_dim));
  return p;
}

void rope_apply_inplace(float* x, int64_t position, const RopeParams& params) {
  for (int j = 0; j < params.head_dim / 2; j++) {
    float angle = static_cast<float>(position) * params.inv_freq[j];
    float c = std::cos(angle);
    float s = std::sin(angle);
    float x0 = x[2 * j];
    float x1 = x[2 * j + 1];
    x[2 * j] = x0 * c - x1 * s;
    x[2 * j + 1] = x0 * s + x1 * c;
  }
}

std::vector<float> rope_apply(const std::vector<float>& head_vec, int64_t position,
                              const RopeParams& params) {
  if (static_cast<int>(head_vec.size()) != params.head_dim)
    throw ShapeError("rope: vector length != head_dim");
  std::vector<float> out = head_vec;
  rope_apply_inplace(out.data(), position, params);
  return out;
}

KVCache::KVCache(const ModelConfig& config)
    : kv_heads_(config.num_kv_heads),
      head_dim_(config.head_dim),
      window_(config.window_size) {
  layers_.reserve(config.num_layers);
  for (int l = 0; l < config.num_layers; l++) {
    Layer layer;
    layer.kind = layer_kind(l, config);
    layer.capacity =
        layer.kind == LayerKind::SwaRope ? config.window_size : config.max_context;
    size_t n = static_cast<size_t>(kv_heads_) * layer.capacity * head_dim_;
    layer.k.assign(n, 0.0f);
    layer.v.assign(n, 0.0f);
    layers_.push_back(std::move(layer));
  }
}

int KVCache::slot(const Layer& l, int64_t position) const {
  return l.kind == LayerKind::SwaRope ? static_cast<int>(position % window_)
                                      : static_cast<int>(position);
}

void KVCache::append(int layer, const float* k, const float* v, int64_t position) {
  Layer& l = layers_[layer];
  if (position != l.cursor)
    throw StateError("kv_append: position " + std::to_string(position) +
                     " != cursor " + std::to_string(l.cursor));
  if (l.kind == LayerKind::NopeGlobal && position >= l.capacity)
    throw StateError("kv_append: context limit exceeded");
  int s = slot(l, position);
  for (int h = 0; h < kv_heads_; h++) {
    float* kdst = l.k.data() + (static_cast<size_t>(h) * l.capacity + s) * head_dim_;
    float* vdst = l.v.data() + (static_cast<size_t>(h) * l.capacity + s) * head_dim_;
    for (int d = 0; d < head_dim_; d++) {
      kdst[d] = k[h * head_dim_ + d];
      vdst[d] = v[h * head_dim_ + d];
    }
  }
  l.cursor++;
}

void KVCache::rollback_last(int layer) {
  Layer& l = layers_[layer];
  if (l.cursor == 0) throw StateError("kv rollback on empty cache");
  l.cursor--;
}

int64_t KVCache::cursor(int layer) const { return layers_[layer].cursor; }
LayerKind KVCache::kind(int layer) const { return layers_[layer].kind; }
int KVCache::capacity(int layer) const { return layers_[layer].capacity; }

int64_t KVCache::total_slots() const {
  int64_t total = 0;
  for (const Layer& l : layers_) total += l.capacity;
  return total;
}

const float* KVCache::key(int layer, int kv_head, int64_t position) const {
  const Layer& l = layers_[layer];
  return l.k.data() +
         (static_cast<size_t>(kv_head) * l.capacity + slot(l, position)) * head_dim_;
}

const float* KVCache::value(int layer, int kv_head, int64_t position) const {
  const Layer& l = layers_[layer];
  return l.v.data() +
         (static_cast<size_t>(kv_head) * l.capacity + slot(l, position)) * head_dim_;
}

void attend(float* out, int layer, const float* q, int q_heads,
            const KVCache& cache, int64_t position) {
  if (cache.cursor(layer) <= position)
    throw StateError("attend: cache cursor " + std::to_string(cache.cursor(layer)) +
                     " behind position " + std::to_string(position));
  const int head_dim = cache.head_dim();
  const int group = q_heads / cache.kv_heads();
  const int64_t first = cache.kind(layer) == LayerKind::SwaRope
                            ? std::max<int64_t>(0, position - cache.window() + 1)
                            : 0;
  const int span = static_cast<int>(position - first + 1);
  const float scale = 1.0f / std::sqrt(static_cast<float>(head_dim));

#pragma omp parallel for schedule(static)
  for (int h = 0; h < q_heads; h++) {
    int kvh = h / group;
    const float* qh = q + static_cast<size_t>(h) * head_dim;
    std::vector<float> scores(span);
    for (int t = 0; t < span; t++) {
      const float* kh = cache.key(layer, kvh, first + t);
      float dot = 0.0f;
      for (int d = 0; d < head_dim; d++) dot += qh[d] * kh[d];
      scores[t] = dot * scale;
    }
    softmax_inplace(scores.data(), span);
    float* oh = out + static_cast<size_t>(h) * head_dim;
    for (int d = 0; d < head_dim; d++) oh[d] = 0.0f;
    for (int t = 0; t < span; t++) {
      const float* vh = cache.value(layer, kvh, first + t);
      for (int d = 0; d < head_dim; d++) oh[d] += scores[t] * vh[d];
    }
  }
}

}  // namespace stm
