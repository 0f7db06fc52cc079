#include "stm/config.hpp"

#include "stm/error.hpp"

namespace stm {

LayerKind layer_kind(int layer_index, const ModelConfig& config) {
  if (layer_index < 0 || layer_index >= config.num_layers) {
    throw RangeError("layer_kind: layer index " + std::to_string(layer_index) +
                     " outside [0, " + std::to_string(config.num_layers) + ")");
  }
  return layer_index % config.attn_pattern_period == 0 ? LayerKind::NopeGlobal
                                                       : LayerKind::SwaRope;
}

int num_nope_layers(const ModelConfig& config) {
  return (config.num_layers + config.attn_pattern_period - 1) /
         config.attn_pattern_period;
}

std::vector<std::string> validate_config(const ModelConfig& c) {
  std::vector<std::string> v;
  auto positive = [&](int value, const char* name) {
    if (value < 1) v.push_back(std::string(name) + " must be >= 1");
  };
  positive(c.num_layers, "num_layers");
  positive(c.hidden_dim, "hidden_dim");
  positive(c.head_dim, "head_dim");
  positive(c.ffn_dim, "ffn_dim");
  positive(c.num_q_heads, "num_q_heads");
  positive(c.num_kv_heads, "num_kv_heads");
  positive(c.num_experts, "num_experts");
  positive(c.window_size, "window_size");
  positive(c.attn_pattern_period, "attn_pattern_period");
  positive(c.vocab_size, "vocab_size");
  positive(c.max_context, "max_context");
  if (c.head_dim >= 1 && c.head_dim % 2 != 0)
    v.push_back("head_dim must be even (rotary pairs)");
  if (c.hidden_dim >= 1 && c.head_dim >= 1 && c.hidden_dim % c.head_dim != 0)
    v.push_back("hidden_dim must be a multiple of head_dim");
  if (c.num_q_heads >= 1 && c.num_kv_heads >= 1 &&
      c.num_q_heads % c.num_kv_heads != 0)
    v.push_back("num_q_heads must be a multiple of num_kv_heads");
  if (c.top_k < 1 || c.top_k > c.num_experts)
    v.push_back("top_k must be in [1, num_experts]");
  if (c.norm_epsilon < 0) v.push_back("norm_epsilon must be >= 0");
  if (!(c.rope_base > 0)) v.push_back("rope_base must be > 0");
  return v;
}

ModelConfig preset(const std::string& name) {
  ModelConfig c;
  if (name == "tiny") {
    c.num_layers = 2;
    c.hidden_dim = 64;
    c.head_dim = 16;
    c.ffn_dim = 96;
    c.num_q_heads = 4;
    c.num_kv_heads = 2;
    c.num_experts = 8;
    c.top_k = 2;
    c.window_size = 16;
    c.vocab_size = 512;
    c.max_context = 128;
  } else if (name == "4b-shape") {
    c.num_layers = 32;
    c.hidden_dim = 1536;
    c.head_dim = 128;
    c.ffn_dim = 768;
    c.num_q_heads = 12;
    c.num_kv_heads = 2;
    c.num_experts = 32;
    c.top_k = 4;
    c.vocab_size = 512;
    c.max_context = 8192;
  } else if (name == "21b-shape") {
    c.num_layers = 52;
    c.hidden_dim = 2560;
    c.head_dim = 128;
    c.ffn_dim = 768;
    c.num_q_heads = 28;
    c.num_kv_heads = 4;
    c.num_experts = 64;
    c.top_k = 6;
    c.vocab_size = 512;
    c.max_context = 8192;
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  return c;
}

std::vector<std::string> preset_names() { return {"tiny", "4b-shape", "21b-shape"}; }

}  // namespace stm
