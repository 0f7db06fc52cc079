#include "stm/engine.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "stm/error.hpp"
#include "stm/rng.hpp"

namespace stm {

namespace {

// Unpins a ticket on every exit path; release() is idempotent.
struct TicketGuard {
  FetchPipeline* pipeline;
  PrefetchTicket* ticket;
  ~TicketGuard() {
    if (pipeline) pipeline->release(*ticket);
  }
};

uint64_t wall_ns() {
  return static_cast<uint64_t>(
      std::chrono::duration_cast<std::chrono::nanoseconds>(
          std::chrono::steady_clock::now().time_since_epoch())
          .count());
}

std::vector<float> norm_gain(const Container& c, const std::string& name) {
  Matrix m = c.matrix(name);
  return m.data;
}

}  // namespace

Engine::Engine(const std::string& model_path, const GenerationParams& params)
    : params_(params) {
  load(model_path);
}

Engine::~Engine() = default;

void Engine::load(const std::string& path) {
  Container container = Container::from_file(path);
  config_ = container.config();
  if (auto violations = validate_config(config_); !violations.empty())
    throw ModelError("container config invalid: " + violations.front());

  embedding_ = container.matrix("embedding");
  lm_head_ = container.matrix("lmhead");
  final_norm_ = norm_gain(container, "final_norm");

  predictor_.left = container.matrix("lmhead.predictor.left");
  predictor_.right = container.matrix("lmhead.predictor.right");
  predictor_.rank = predictor_.left.rows;
  predictor_.top_m = params_.head_top_m;

  layers_.resize(config_.num_layers);
  for (int l = 0; l < config_.num_layers; l++) {
    std::string p = "layer." + std::to_string(l) + ".";
    LayerWeights& lw = layers_[l];
    lw.attn_norm = norm_gain(container, p + "attn_norm");
    lw.ffn_norm = norm_gain(container, p + "ffn_norm");
    lw.wq = container.matrix(p + "attn.wq");
    lw.wk = container.matrix(p + "attn.wk");
    lw.wv = container.matrix(p + "attn.wv");
    lw.wo = container.matrix(p + "attn.wo");
    lw.router = container.matrix(p + "router");
  }

  rope_ = make_rope_params(config_.rope_base, config_.head_dim);
  kv_ = std::make_unique<KVCache>(config_);

  if (params_.offload) {
    storage_ = std::make_unique<StorageModel>(path, params_.latency);
    cache_ = std::make_unique<ExpertCache>(params_.cache_bytes);
    if (params_.virtual_time)
      pipeline_ = std::make_unique<VirtualFetchPipeline>(
          *cache_, *storage_, &events_, params_.fetch_units, &vclock_);
    else
      pipeline_ = std::make_unique<AsyncFetchPipeline>(*cache_, *storage_, &events_,
                                                       params_.fetch_units);
  } else {
    resident_experts_.resize(config_.num_layers);
    for (int l = 0; l < config_.num_layers; l++) {
      resident_experts_[l].reserve(config_.num_experts);
      for (int e = 0; e < config_.num_experts; e++) {
        ExpertWeights w;
        w.gate = container.matrix(expert_tensor_name(l, e, "gate"));
        w.up = container.matrix(expert_tensor_name(l, e, "up"));
        w.down = container.matrix(expert_tensor_name(l, e, "down"));
        resident_expert_bytes_ += w.resident_bytes();
        resident_experts_[l].push_back(std::move(w));
      }
    }
  }
}

Engine::Logits Engine::step_forward(int token, bool prefill, StepTraceRec& rec) {
  const int step = step_;
  const int64_t position = position_;
  std::vector<int> appended_layers;
  appended_layers.reserve(config_.num_layers);

  try {
    std::vector<float> h(embedding_.row(token),
                         embedding_.row(token) + config_.hidden_dim);
    std::vector<float> h_norm(config_.hidden_dim);
    std::vector<float> h_norm2(config_.hidden_dim);
    std::vector<float> attn_out(config_.attn_dim());

    for (int l = 0; l < config_.num_layers; l++) {
      const LayerWeights& lw = layers_[l];
      LayerKind kind = kv_->kind(l);

      rms_norm(h_norm.data(), h.data(), lw.attn_norm.data(), config_.hidden_dim,
               config_.norm_epsilon);

      RouterDecision decision = route(h_norm, lw.router, config_.top_k);
      events_.stamp(EventKind::RouterDecided, step, l);

      PrefetchTicket ticket = make_ticket(step, l, decision.expert_ids);
      TicketGuard guard{pipeline_.get(), &ticket};
      if (pipeline_ && params_.prefetch) pipeline_->issue(ticket);

      std::vector<float> q = matvec(lw.wq, h_norm);
      std::vector<float> k = matvec(lw.wk, h_norm);
      std::vector<float> v = matvec(lw.wv, h_norm);
      if (kind == LayerKind::SwaRope) {
        for (int hh = 0; hh < config_.num_q_heads; hh++)
          rope_apply_inplace(q.data() + hh * config_.head_dim, position, rope_);
        for (int hh = 0; hh < config_.num_kv_heads; hh++)
          rope_apply_inplace(k.data() + hh * config_.head_dim, position, rope_);
      }
      kv_->append(l, k.data(), v.data(), position);
      appended_layers.push_back(l);
      attend(attn_out.data(), l, q.data(), config_.num_q_heads, *kv_, position);
      std::vector<float> proj = matvec(lw.wo, attn_out);
      if (params_.virtual_time) vclock_.now_ns += params_.attn_virtual_ns;
      events_.stamp(EventKind::AttentionDone, step, l);
      add_inplace(h.data(), proj.data(), config_.hidden_dim);

      rms_norm(h_norm2.data(), h.data(), lw.ffn_norm.data(), config_.hidden_dim,
               config_.norm_epsilon);

      std::vector<const ExpertWeights*> experts;
      std::vector<ResolvedExpert> resolved;
      if (pipeline_) {
        if (!params_.prefetch) pipeline_->issue(ticket);
        resolved = pipeline_->await(ticket);
        for (const ResolvedExpert& r : resolved) experts.push_back(r.weights.get());
      } else {
        for (int id : decision.expert_ids)
          experts.push_back(&resident_experts_[l][id]);
      }

      std::vector<float> ratios;
      std::vector<float> moe_out =
          moe_forward(h_norm2, decision, experts, params_.sparse_ffn, &ratios);
      add_inplace(h.data(), moe_out.data(), config_.hidden_dim);
      if (pipeline_) pipeline_->release(ticket);

      LayerTraceRec lrec;
      for (size_t i = 0; i < decision.expert_ids.size(); i++)
        lrec.experts.push_back(
            {decision.expert_ids[i], i < ratios.size() ? ratios[i] : 0.0f});
      lrec.cache_hits = ticket.hits;
      lrec.stall_ns = ticket.stall_ns;
      rec.layers.push_back(std::move(lrec));
    }

    std::vector<float> final_h =
        rms_norm(h, final_norm_, config_.norm_epsilon);

    Logits out;
    if (params_.sparse_head) {
      std::vector<int> candidates = predict_rows(predictor_, final_h);
      out.sparse = true;
      out.sp = sparse_logits(lm_head_, final_h, candidates, params_.zero_fill_inactive);
      rec.candidate_count = static_cast<int>(candidates.size());
      if (params_.collect_step_debug)
        step_debug_.push_back({step, final_h, candidates, -1});
    } else {
      out.dense = matvec(lm_head_, final_h);
      rec.candidate_count = config_.vocab_size;
      if (params_.collect_step_debug)
        step_debug_.push_back({step, final_h, {}, -1});
    }

    rec.step = step;
    rec.prefill = prefill;
    rec.token = token;
    position_++;
    step_++;
    return out;
  } catch (...) {
    // No partial KV appends survive an aborted step.
    for (int l : appended_layers) kv_->rollback_last(l);
    throw;
  }
}

int Engine::sample(const Logits& logits) {
  if (params_.temperature <= 0.0f) {
    return logits.sparse ? argmax_sparse(logits.sp)
                         : argmax(logits.dense.data(),
                                  static_cast<int>(logits.dense.size()));
  }
  // Seeded draw over the softmax of the available logits.
  std::vector<int> ids;
  std::vector<float> vals;
  if (!logits.sparse) {
    ids.resize(logits.dense.size());
    for (size_t i = 0; i < ids.size(); i++) ids[i] = static_cast<int>(i);
    vals = logits.dense;
  } else if (params_.zero_fill_inactive) {
    // Literal zero-fill compatibility: every row participates.
    ids.resize(config_.vocab_size);
    vals.assign(config_.vocab_size, 0.0f);
    for (size_t i = 0; i < ids.size(); i++) ids[i] = static_cast<int>(i);
    for (size_t i = 0; i < logits.sp.ids.size(); i++)
      vals[logits.sp.ids[i]] = logits.sp.values[i];
  } else {
    ids = logits.sp.ids;
    vals = logits.sp.values;
  }
  for (float& v : vals) v /= params_.temperature;
  softmax_inplace(vals.data(), static_cast<int>(vals.size()));
  double u = to_unit(counter_rand(stream_key(params_.seed, "sample"), step_));
  double acc = 0;
  for (size_t i = 0; i < ids.size(); i++) {
    acc += vals[i];
    if (u < acc) return ids[i];
  }
  return ids.back();
}

GenerateResult Engine::generate(const std::string& prompt) {
  if (prompt.empty()) throw Error("empty prompt");
  if (config_.vocab_size < 256)
    throw ModelError("vocab_size " + std::to_string(config_.vocab_size) +
                     " too small for byte tokenization");

  GenerateResult result;
  for (unsigned char b : prompt) result.prompt_tokens.push_back(b);

  auto step_start = [&] { return params_.virtual_time ? vclock_.now_ns : wall_ns(); };

  Logits last;
  int current_step = 0;
  auto run_step = [&](int token, bool prefill) {
    StepTraceRec rec;
    uint64_t t0 = step_start();
    try {
      last = step_forward(token, prefill, rec);
    } catch (StorageError& e) {
      throw StorageError("step " + std::to_string(current_step) + ": " + e.what(),
                         e.retryable);
    } catch (Error& e) {
      throw Error("step " + std::to_string(current_step) + ": " + e.what());
    }
    rec.latency_ns = step_start() - t0;
    result.trace.steps.push_back(std::move(rec));
    current_step++;
  };

  for (int token : result.prompt_tokens) run_step(token, /*prefill=*/true);

  for (int g = 0; g < params_.max_tokens; g++) {
    int token = sample(last);
    if (params_.collect_step_debug && !step_debug_.empty())
      step_debug_.back().sampled_next = token;
    result.tokens.push_back(token);
    run_step(token, /*prefill=*/false);
  }

  TraceSummary& s = result.trace.summary;
  s.steps = result.trace.steps.size();
  s.generated = result.tokens.size();
  uint64_t total_ns = 0;
  for (const StepTraceRec& rec : result.trace.steps) total_ns += rec.latency_ns;
  s.tokens_per_s = total_ns > 0
                       ? static_cast<double>(s.steps) * 1e9 / static_cast<double>(total_ns)
                       : 0.0;
  if (cache_) {
    CacheCounters cc = cache_->counters();
    s.cache_hits = cc.hits;
    s.cache_misses = cc.misses;
    s.evictions = cc.evictions;
    s.peak_resident_bytes = cache_->peak_resident_bytes();
  } else {
    s.peak_resident_bytes = resident_expert_bytes_;
  }
  if (storage_) s.bytes_read = storage_->bytes_read();
  if (pipeline_) s.stall_ns = pipeline_->stall_ns();
  return result;
}

std::vector<BenchRow> run_benchmark(const std::string& model_path,
                                    const BenchConfig& config) {
  std::vector<BenchRow> rows;
  for (int sparse : config.sparse_options) {
    for (int offload : config.offload_options) {
      std::vector<size_t> cache_sizes =
          offload ? config.cache_sizes : std::vector<size_t>{0};
      for (size_t cache_bytes : cache_sizes) {
        GenerationParams p;
        p.max_tokens = config.max_tokens;
        p.seed = config.seed;
        p.sparse_ffn = sparse != 0;
        p.sparse_head = sparse != 0;
        p.offload = offload != 0;
        if (offload) p.cache_bytes = cache_bytes;
        p.latency = config.latency;
        p.virtual_time = config.virtual_time;
        p.attn_virtual_ns = config.attn_virtual_ns;
        p.fetch_units = config.fetch_units;

        Engine engine(model_path, p);
        GenerateResult r = engine.generate(config.prompt);
        BenchRow row;
        row.sparse = sparse != 0;
        row.offload = offload != 0;
        row.cache_bytes = offload ? cache_bytes : 0;
        row.tokens_per_s = r.trace.summary.tokens_per_s;
        uint64_t lookups = r.trace.summary.cache_hits + r.trace.summary.cache_misses;
        row.hit_rate = lookups > 0 ? static_cast<double>(r.trace.summary.cache_hits) /
                                         static_cast<double>(lookups)
                                   : 0.0;
        row.stall_ms = static_cast<double>(r.trace.summary.stall_ns) / 1e6;
        row.bytes_read = r.trace.summary.bytes_read;
        rows.push_back(row);
      }
    }
  }
  return rows;
}

std::string format_benchmark(const std::vector<BenchRow>& rows) {
  std::ostringstream out;
  char line[160];
  snprintf(line, sizeof(line), "%-8s %-8s %14s %12s %10s %12s %14s\n", "sparse",
           "offload", "cache_bytes", "tokens/s", "hit_rate", "stall_ms",
           "bytes_read");
  out << line;
  for (const BenchRow& r : rows) {
    snprintf(line, sizeof(line), "%-8s %-8s %14zu %12.2f %10.3f %12.3f %14llu\n",
             r.sparse ? "on" : "off", r.offload ? "on" : "off", r.cache_bytes,
             r.tokens_per_s, r.hit_rate, r.stall_ms,
             static_cast<unsigned long long>(r.bytes_read));
    out << line;
  }
  return out.str();
}

}  // namespace stm
