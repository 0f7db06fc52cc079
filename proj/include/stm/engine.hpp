#pragma once

// End-to-end decode loop. Per layer: norm, route, prefetch-issue, attention
// (with KV append), residual, norm, await experts, MoE, residual; then the
// final norm and the (dense or sparse) vocabulary projection. Prefill runs
// the same per-token path as decoding.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "stm/attention.hpp"
#include "stm/config.hpp"
#include "stm/container.hpp"
#include "stm/events.hpp"
#include "stm/expert_cache.hpp"
#include "stm/kernels.hpp"
#include "stm/lmhead.hpp"
#include "stm/moe.hpp"
#include "stm/prefetch.hpp"
#include "stm/storage.hpp"
#include "stm/trace.hpp"

namespace stm {

struct GenerationParams {
  int max_tokens = 16;
  float temperature = 0;  // 0 = greedy
  uint64_t seed = 0;      // sampling seed
  bool sparse_ffn = false;
  bool sparse_head = false;
  bool offload = false;
  size_t cache_bytes = 256ull << 20;
  LatencyModel latency;
  bool prefetch = true;  // false: issue fetches only when the FFN needs them
  int fetch_units = 4;
  bool virtual_time = false;      // deterministic clock for latency injection
  uint64_t attn_virtual_ns = 0;   // attention cost per layer on that clock
  bool zero_fill_inactive = false;  // literal zero fill for unselected logits
  int head_top_m = 64;
  bool collect_step_debug = false;
};

struct StepDebug {
  int step = 0;
  std::vector<float> final_hidden;  // post final-norm, feeds the LM head
  std::vector<int> candidates;      // empty when the dense head ran
  int sampled_next = -1;            // token drawn from this step's logits
};

struct GenerateResult {
  std::vector<int> prompt_tokens;
  std::vector<int> tokens;  // generated
  DecodeTrace trace;
};

class Engine {
 public:
  Engine(const std::string& model_path, const GenerationParams& params);
  ~Engine();

  const ModelConfig& config() const { return config_; }
  const GenerationParams& params() const { return params_; }

  // Byte-identity tokenization: token id = byte value.
  GenerateResult generate(const std::string& prompt);

  // Verification surfaces.
  const EventRecorder& events() const { return events_; }
  const ExpertCache* cache() const { return cache_.get(); }
  StorageModel* storage() { return storage_.get(); }
  const VirtualClock& clock() const { return vclock_; }
  const std::vector<StepDebug>& step_debug() const { return step_debug_; }
  const KVCache& kv_cache() const { return *kv_; }
  const Matrix& lm_head() const { return lm_head_; }

 private:
  struct LayerWeights {
    std::vector<float> attn_norm, ffn_norm;
    Matrix wq, wk, wv, wo, router;
  };
  struct Logits {
    bool sparse = false;
    std::vector<float> dense;
    SparseLogits sp;
  };

  void load(const std::string& path);
  Logits step_forward(int token, bool prefill, StepTraceRec& rec);
  int sample(const Logits& logits);

  GenerationParams params_;
  ModelConfig config_;
  Matrix embedding_, lm_head_;
  RowPredictor predictor_;
  std::vector<float> final_norm_;
  std::vector<LayerWeights> layers_;
  RopeParams rope_;

  std::vector<std::vector<ExpertWeights>> resident_experts_;  // in-memory mode
  size_t resident_expert_bytes_ = 0;
  std::unique_ptr<StorageModel> storage_;
  std::unique_ptr<ExpertCache> cache_;
  std::unique_ptr<FetchPipeline> pipeline_;
  VirtualClock vclock_;
  EventRecorder events_;

  std::unique_ptr<KVCache> kv_;
  int64_t position_ = 0;
  int step_ = 0;
  std::vector<StepDebug> step_debug_;
};

struct BenchConfig {
  std::string prompt = "ab";
  int max_tokens = 32;
  uint64_t seed = 0;
  std::vector<int> sparse_options{0, 1};   // toggles sparse_ffn + sparse_head
  std::vector<int> offload_options{0, 1};
  std::vector<size_t> cache_sizes{256ull << 20};
  LatencyModel latency;
  bool virtual_time = false;
  uint64_t attn_virtual_ns = 0;
  int fetch_units = 4;
};

struct BenchRow {
  bool sparse = false;
  bool offload = false;
  size_t cache_bytes = 0;
  double tokens_per_s = 0;
  double hit_rate = 0;
  double stall_ms = 0;
  uint64_t bytes_read = 0;
};

std::vector<BenchRow> run_benchmark(const std::string& model_path,
                                    const BenchConfig& config);
std::string format_benchmark(const std::vector<BenchRow>& rows);

}  // namespace stm
