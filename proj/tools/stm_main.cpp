// stm — CPU inference engine for sparse MoE models with expert offloading.
//
// Subcommands:
//   gen-fixture  write a deterministic random model container
//   run          generate tokens from a prompt
//   bench        sweep sparse/offload/cache configurations
//   inspect      print a container's config and tensor index
//   stats        turn a decode trace into activation/sparsity tables

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "stm/analysis.hpp"
#include "stm/config.hpp"
#include "stm/container.hpp"
#include "stm/engine.hpp"
#include "stm/error.hpp"
#include "stm/fixture.hpp"

namespace {

stm::LatencyModel parse_latency(const std::string& s) {
  if (s.empty()) return {};
  size_t colon = s.find(':');
  if (colon == std::string::npos)
    throw CLI::ValidationError("--inject-latency expects NS_FIXED:NS_PER_BYTE");
  stm::LatencyModel m;
  m.fixed_ns = std::stoull(s.substr(0, colon));
  m.per_byte_ns = std::stoull(s.substr(colon + 1));
  return m;
}

std::string decode_bytes(const std::vector<int>& tokens) {
  std::string out;
  for (int t : tokens) {
    if (t >= 32 && t < 127) {
      out.push_back(static_cast<char>(t));
    } else if (t < 256) {
      char buf[8];
      snprintf(buf, sizeof(buf), "\\x%02x", t);
      out += buf;
    } else {
      out += "<" + std::to_string(t) + ">";
    }
  }
  return out;
}

int cmd_gen_fixture(const std::string& preset_name, const std::string& config_path,
                    uint64_t seed, const std::string& out_path, int predictor_rank) {
  stm::ModelConfig config;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw stm::ModelError("cannot open config '" + config_path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    config = stm::config_from_text(ss.str());
  } else {
    config = stm::preset(preset_name);
  }
  stm::write_fixture_file(out_path, config, seed, predictor_rank);
  stm::Container c = stm::Container::from_file(out_path);
  std::cout << "wrote " << out_path << " (" << c.bytes().size() << " bytes, "
            << c.index().tensors.size() << " tensors, checksum "
            << c.index().checksum << ")\n";
  return 0;
}

int cmd_run(const std::string& model, const std::string& prompt,
            const stm::GenerationParams& params, const std::string& trace_path) {
  stm::Engine engine(model, params);
  stm::GenerateResult result = engine.generate(prompt);

  std::cout << "tokens:";
  for (int t : result.tokens) std::cout << " " << t;
  std::cout << "\ntext: " << decode_bytes(result.tokens) << "\n";
  const stm::TraceSummary& s = result.trace.summary;
  std::cout << "steps " << s.steps << ", tokens/s " << s.tokens_per_s
            << ", stall_ms " << static_cast<double>(s.stall_ns) / 1e6;
  uint64_t lookups = s.cache_hits + s.cache_misses;
  if (lookups > 0)
    std::cout << ", hit_rate "
              << static_cast<double>(s.cache_hits) / static_cast<double>(lookups)
              << ", bytes_read " << s.bytes_read;
  std::cout << ", peak_resident_bytes " << s.peak_resident_bytes << "\n";

  if (!trace_path.empty()) {
    std::ofstream out(trace_path);
    if (!out) throw stm::Error("cannot write trace '" + trace_path + "'");
    stm::write_trace(out, result.trace);
  }
  return 0;
}

int cmd_inspect(const std::string& model) {
  stm::Container c = stm::Container::from_file(model);
  std::cout << stm::config_to_text(c.config());
  std::cout << "payload_offset=" << c.index().payload_offset
            << " payload_length=" << c.index().payload_length
            << " checksum=" << c.index().checksum << "\n";
  std::cout << "tensors (" << c.index().tensors.size() << "):\n";
  for (const stm::TensorRecord& r : c.index().tensors) {
    std::cout << "  " << r.name << " dtype=" << (r.dtype == stm::DType::Q4 ? "q4" : "f32")
              << " rows=" << r.rows << " cols=" << r.cols << " offset=" << r.byte_offset
              << " length=" << r.byte_length << "\n";
  }
  return 0;
}

int cmd_stats(const std::string& trace_path, const std::string& activation_out,
              const std::string& sparsity_out) {
  std::ifstream in(trace_path);
  if (!in) throw stm::Error("cannot open trace '" + trace_path + "'");
  stm::TraceStats stats = stm::accumulate_stats(in);
  auto emit = [&](const std::string& path, auto writer) {
    if (path.empty() || path == "-") {
      writer(std::cout);
    } else {
      std::ofstream out(path);
      if (!out) throw stm::Error("cannot write '" + path + "'");
      writer(out);
    }
  };
  emit(activation_out, [&](std::ostream& o) { stm::write_activation_table(o, stats.activation); });
  emit(sparsity_out, [&](std::ostream& o) { stm::write_sparsity_table(o, stats.sparsity); });
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CPU inference engine for sparse MoE models with expert offloading"};
  app.require_subcommand(1);

  // gen-fixture
  auto* gen = app.add_subcommand("gen-fixture", "write a deterministic random model");
  std::string gen_preset = "tiny", gen_config, gen_out = "model.stm";
  uint64_t gen_seed = 0;
  int gen_rank = 16;
  gen->add_option("--preset", gen_preset, "tiny | 4b-shape | 21b-shape")
      ->check(CLI::IsMember(stm::preset_names()));
  gen->add_option("--config", gen_config, "config text file (overrides --preset)");
  gen->add_option("--seed", gen_seed, "fixture seed");
  gen->add_option("--out", gen_out, "output path")->required();
  gen->add_option("--predictor-rank", gen_rank, "LM-head predictor rank");

  // run
  std::string model, prompt, latency_str, trace_path;
  stm::GenerationParams params;
  bool no_prefetch = false;

  auto* run = app.add_subcommand("run", "generate tokens from a prompt");
  run->add_option("--model", model, "model container path")->required();
  run->add_option("--prompt", prompt, "prompt bytes")->required();
  run->add_option("--max-tokens", params.max_tokens, "tokens to generate");
  run->add_option("--temperature", params.temperature, "0 = greedy");
  run->add_option("--seed", params.seed, "sampling seed");
  run->add_flag("--sparse-ffn", params.sparse_ffn, "neuron-sparse expert FFN path");
  run->add_flag("--sparse-head", params.sparse_head, "predictor-gated LM head");
  run->add_flag("--offload", params.offload, "serve experts from storage via the cache");
  run->add_option("--cache-bytes", params.cache_bytes, "expert cache capacity");
  run->add_option("--inject-latency", latency_str, "NS_FIXED:NS_PER_BYTE per fetch");
  run->add_flag("--no-prefetch", no_prefetch, "issue fetches only at FFN time");
  run->add_option("--fetch-units", params.fetch_units, "parallel fetch units");
  run->add_flag("--virtual-time", params.virtual_time, "deterministic latency clock");
  run->add_option("--attn-ns", params.attn_virtual_ns, "attention cost per layer (virtual)");
  run->add_flag("--zero-fill-inactive", params.zero_fill_inactive,
                "fill unselected logits with zero instead of excluding them");
  run->add_option("--head-top-m", params.head_top_m, "guaranteed LM-head candidates");
  run->add_option("--trace", trace_path, "write per-step trace (jsonl)");

  // bench
  stm::BenchConfig bench_cfg;
  std::string bench_model, bench_latency_str;
  auto* bench = app.add_subcommand("bench", "sweep sparse/offload/cache configurations");
  bench->add_option("--model", bench_model, "model container path")->required();
  bench->add_option("--prompt", bench_cfg.prompt, "prompt bytes");
  bench->add_option("--max-tokens", bench_cfg.max_tokens, "tokens per configuration");
  bench->add_option("--seed", bench_cfg.seed, "sampling seed");
  bench->add_option("--sweep-sparse", bench_cfg.sparse_options, "list: 0 1");
  bench->add_option("--sweep-offload", bench_cfg.offload_options, "list: 0 1");
  bench->add_option("--cache-bytes", bench_cfg.cache_sizes, "cache sizes to sweep");
  bench->add_option("--inject-latency", bench_latency_str, "NS_FIXED:NS_PER_BYTE per fetch");
  bench->add_flag("--virtual-time", bench_cfg.virtual_time, "deterministic latency clock");
  bench->add_option("--attn-ns", bench_cfg.attn_virtual_ns, "attention cost per layer (virtual)");
  bench->add_option("--fetch-units", bench_cfg.fetch_units, "parallel fetch units");

  // inspect
  std::string inspect_model;
  auto* inspect = app.add_subcommand("inspect", "print container config and index");
  inspect->add_option("--model", inspect_model, "model container path")->required();

  // stats
  std::string stats_trace, stats_activation = "-", stats_sparsity = "-";
  auto* stats = app.add_subcommand("stats", "trace -> activation/sparsity tables");
  stats->add_option("--trace", stats_trace, "decode trace (jsonl)")->required();
  stats->add_option("--activation", stats_activation, "activation table path ('-' = stdout)");
  stats->add_option("--sparsity", stats_sparsity, "sparsity table path ('-' = stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed())
      return cmd_gen_fixture(gen_preset, gen_config, gen_seed, gen_out, gen_rank);
    if (run->parsed()) {
      params.latency = parse_latency(latency_str);
      params.prefetch = !no_prefetch;
      return cmd_run(model, prompt, params, trace_path);
    }
    if (bench->parsed()) {
      bench_cfg.latency = parse_latency(bench_latency_str);
      auto rows = stm::run_benchmark(bench_model, bench_cfg);
      std::cout << stm::format_benchmark(rows);
      return 0;
    }
    if (inspect->parsed()) return cmd_inspect(inspect_model);
    if (stats->parsed()) return cmd_stats(stats_trace, stats_activation, stats_sparsity);
  } catch (const stm::ModelError& e) {
    std::cerr << "model error: " << e.what() << "\n";
    return 2;
  } catch (const stm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const stm::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
