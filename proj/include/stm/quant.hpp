#pragma once

// 4-bit block quantization: 32 consecutive elements share one half-precision
// scale. Code c decodes to (c - 8) * scale. Byte j of a block packs element
// 2j in the low nibble and element 2j+1 in the high nibble.

#include <array>
#include <cstdint>
#include <vector>

#include "stm/fp16.hpp"
#include "stm/kernels.hpp"

namespace stm {

inline constexpr int kQ4BlockSize = 32;

struct Q4Block {
  uint16_t scale_bits = 0;  // binary16
  std::array<uint8_t, 16> nibbles{};

  float scale() const { return f16_to_f32(scale_bits); }
  int code(int i) const {
    uint8_t b = nibbles[i >> 1];
    return (i & 1) ? (b >> 4) : (b & 0x0f);
  }
};
static_assert(sizeof(Q4Block) == 18);

// Length must be a multiple of 32. Per block: scale = maxabs_element / -8
// (0 for an all-zero block), codes round to nearest with ties away from zero,
// clamped to [0, 15].
std::vector<Q4Block> quantize_q4(const float* x, size_t n);
std::vector<Q4Block> quantize_q4(const std::vector<float>& x);

void dequantize_q4(const Q4Block* blocks, size_t num_blocks, float* out);
std::vector<float> dequantize_q4(const std::vector<Q4Block>& blocks);

// Serialized size of one quantized row.
size_t q4_row_bytes(int cols);

// Row-major matrix <-> packed block bytes (each row quantized separately).
std::vector<uint8_t> quantize_matrix_q4(const Matrix& m);
Matrix dequantize_matrix_q4(const uint8_t* bytes, size_t len, int rows, int cols);

}  // namespace stm
