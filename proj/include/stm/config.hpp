#pragma once

#include <string>
#include <vector>

namespace stm {

// Architectural hyperparameters. Attention works in its own inner dimension
// (num_q_heads * head_dim), which may differ from hidden_dim; hidden_dim
// only has to be a multiple of head_dim.
struct ModelConfig {
  int num_layers = 0;
  int hidden_dim = 0;
  int head_dim = 0;
  int ffn_dim = 0;  // per-expert intermediate size
  int num_q_heads = 0;
  int num_kv_heads = 0;
  int num_experts = 0;
  int top_k = 0;
  int window_size = 4096;       // SWA span in tokens, inclusive of self
  int attn_pattern_period = 4;  // 1 global-NoPE layer + (period-1) SWA layers
  float rope_base = 1e5f;
  int vocab_size = 0;
  int max_context = 0;
  float norm_epsilon = 1e-5f;

  int attn_dim() const { return num_q_heads * head_dim; }
  int kv_dim() const { return num_kv_heads * head_dim; }
};

enum class LayerKind { NopeGlobal, SwaRope };

// Layer index -> attention flavor. Index 0, period, 2*period, ... are the
// global NoPE layers; everything else is windowed RoPE.
LayerKind layer_kind(int layer_index, const ModelConfig& config);

int num_nope_layers(const ModelConfig& config);

// Returns every violated invariant; empty means valid.
std::vector<std::string> validate_config(const ModelConfig& config);

// Named presets: "tiny" (desk-scale fixture), "4b-shape", "21b-shape".
ModelConfig preset(const std::string& name);

std::vector<std::string> preset_names();

}  // namespace stm
