#pragma once

// Deterministic model generation for desk-scale verification. Every tensor
// is drawn from the counter PRNG keyed by (seed, tensor name) and scaled by
// 1/sqrt(fan_in), so the same (config, seed) is byte-identical everywhere
// and adding tensors never perturbs existing ones.

#include <cstdint>
#include <string>
#include <vector>

#include "stm/config.hpp"
#include "stm/kernels.hpp"

namespace stm {

// Uniform [-1,1) entries scaled by 1/sqrt(fan_in), keyed by (seed, name).
Matrix fixture_matrix(int rows, int cols, uint64_t seed, const std::string& name,
                      int fan_in);

// Complete serialized container. Expert and LM-head tensors are Q4; norms,
// router, attention projections, embedding and the predictor factors are f32.
std::vector<uint8_t> generate_fixture(const ModelConfig& config, uint64_t seed,
                                      int predictor_rank = 16);

void write_fixture_file(const std::string& path, const ModelConfig& config,
                        uint64_t seed, int predictor_rank = 16);

}  // namespace stm
