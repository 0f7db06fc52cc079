#include "stm/fixture.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "stm/container.hpp"
#include "stm/error.hpp"
#include "stm/lmhead.hpp"
#include "stm/quant.hpp"
#include "stm/rng.hpp"

namespace stm {

Matrix fixture_matrix(int rows, int cols, uint64_t seed, const std::string& name,
                      int fan_in) {
  Matrix m(rows, cols);
  CounterRng rng(seed, name);
  float scale = 1.0f / std::sqrt(static_cast<float>(fan_in));
  for (float& v : m.data) v = rng.next_symmetric() * scale;
  return m;
}

namespace {

std::vector<uint8_t> f32_bytes(const Matrix& m) {
  std::vector<uint8_t> bytes(m.size_bytes());
  std::memcpy(bytes.data(), m.data.data(), bytes.size());
  return bytes;
}

NamedTensor f32_tensor(std::string name, Matrix m) {
  return {std::move(name), DType::F32, static_cast<uint64_t>(m.rows),
          static_cast<uint64_t>(m.cols), f32_bytes(m)};
}

NamedTensor q4_tensor(std::string name, const Matrix& m) {
  return {std::move(name), DType::Q4, static_cast<uint64_t>(m.rows),
          static_cast<uint64_t>(m.cols), quantize_matrix_q4(m)};
}

}  // namespace

std::vector<uint8_t> generate_fixture(const ModelConfig& c, uint64_t seed,
                                      int predictor_rank) {
  if (auto violations = validate_config(c); !violations.empty())
    throw ConfigError("invalid config: " + violations.front());
  if (c.hidden_dim % kQ4BlockSize != 0 || c.ffn_dim % kQ4BlockSize != 0)
    throw ConfigError("hidden_dim and ffn_dim must be multiples of 32 for Q4 experts");
  int rank = std::min(predictor_rank, std::min(c.hidden_dim, c.vocab_size));
  if (rank < 1) throw ConfigError("predictor rank must be >= 1");

  std::vector<NamedTensor> tensors;
  auto gen = [&](const std::string& name, int rows, int cols, int fan_in) {
    return fixture_matrix(rows, cols, seed, name, fan_in);
  };

  tensors.push_back(f32_tensor("embedding", gen("embedding", c.vocab_size, c.hidden_dim, 1)));
  tensors.push_back(f32_tensor("final_norm", gen("final_norm", 1, c.hidden_dim, 1)));

  for (int l = 0; l < c.num_layers; l++) {
    std::string p = "layer." + std::to_string(l) + ".";
    tensors.push_back(f32_tensor(p + "attn_norm", gen(p + "attn_norm", 1, c.hidden_dim, 1)));
    tensors.push_back(f32_tensor(p + "ffn_norm", gen(p + "ffn_norm", 1, c.hidden_dim, 1)));
    tensors.push_back(f32_tensor(p + "attn.wq", gen(p + "attn.wq", c.attn_dim(), c.hidden_dim, c.hidden_dim)));
    tensors.push_back(f32_tensor(p + "attn.wk", gen(p + "attn.wk", c.kv_dim(), c.hidden_dim, c.hidden_dim)));
    tensors.push_back(f32_tensor(p + "attn.wv", gen(p + "attn.wv", c.kv_dim(), c.hidden_dim, c.hidden_dim)));
    tensors.push_back(f32_tensor(p + "attn.wo", gen(p + "attn.wo", c.hidden_dim, c.attn_dim(), c.attn_dim())));
    tensors.push_back(f32_tensor(p + "router", gen(p + "router", c.num_experts, c.hidden_dim, c.hidden_dim)));
    for (int e = 0; e < c.num_experts; e++) {
      for (const char* part : {"gate", "up", "down"}) {
        std::string name = expert_tensor_name(l, e, part);
        Matrix m = std::strcmp(part, "down") == 0
                       ? gen(name, c.hidden_dim, c.ffn_dim, c.ffn_dim)
                       : gen(name, c.ffn_dim, c.hidden_dim, c.hidden_dim);
        tensors.push_back(q4_tensor(name, m));
      }
    }
  }

  Matrix head = gen("lmhead", c.vocab_size, c.hidden_dim, c.hidden_dim);
  NamedTensor head_tensor = q4_tensor("lmhead", head);
  // The predictor sketches the matrix the engine will actually multiply by,
  // i.e. the dequantized head.
  Matrix head_dq = dequantize_matrix_q4(head_tensor.bytes.data(), head_tensor.bytes.size(),
                                        c.vocab_size, c.hidden_dim);
  tensors.push_back(std::move(head_tensor));
  RowPredictor pred = build_predictor(head_dq, rank);
  tensors.push_back(f32_tensor("lmhead.predictor.left", std::move(pred.left)));
  tensors.push_back(f32_tensor("lmhead.predictor.right", std::move(pred.right)));

  return write_container(c, std::move(tensors));
}

void write_fixture_file(const std::string& path, const ModelConfig& config,
                        uint64_t seed, int predictor_rank) {
  auto bytes = generate_fixture(config, seed, predictor_rank);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ModelError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ModelError("write failed for '" + path + "'");
}

}  // namespace stm
