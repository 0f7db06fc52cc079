#include "stm/quant.hpp"

#include <cmath>
#include <cstring>

#include "stm/error.hpp"

namespace stm {

std::vector<Q4Block> quantize_q4(const float* x, size_t n) {
  if (n % kQ4BlockSize != 0)
    throw ShapeError("quantize_q4: length " + std::to_string(n) +
                     " is not a multiple of 32");
  std::vector<Q4Block> blocks(n / kQ4BlockSize);
  for (size_t b = 0; b < blocks.size(); b++) {
    const float* xb = x + b * kQ4BlockSize;
    float max_val = 0.0f;  // signed value of the max-abs element, first wins
    float max_abs = 0.0f;
    for (int i = 0; i < kQ4BlockSize; i++) {
      float a = std::fabs(xb[i]);
      if (a > max_abs) {
        max_abs = a;
        max_val = xb[i];
      }
    }
    Q4Block& blk = blocks[b];
    blk.scale_bits = f32_to_f16(max_val / -8.0f);
    // Codes are computed against the stored (half-rounded) scale so the
    // round trip only pays the grid error, not the scale rounding twice.
    float s = blk.scale();
    for (int j = 0; j < 16; j++) {
      uint8_t packed = 0;
      for (int half = 0; half < 2; half++) {
        int i = 2 * j + half;
        long code = 8;
        if (s != 0.0f) {
          code = std::lroundf(xb[i] / s) + 8;
          if (code < 0) code = 0;
          if (code > 15) code = 15;
        }
        packed |= static_cast<uint8_t>(code) << (half * 4);
      }
      blk.nibbles[j] = packed;
    }
  }
  return blocks;
}

std::vector<Q4Block> quantize_q4(const std::vector<float>& x) {
  return quantize_q4(x.data(), x.size());
}

void dequantize_q4(const Q4Block* blocks, size_t num_blocks, float* out) {
  for (size_t b = 0; b < num_blocks; b++) {
    float s = blocks[b].scale();
    float* ob = out + b * kQ4BlockSize;
    for (int i = 0; i < kQ4BlockSize; i++)
      ob[i] = static_cast<float>(blocks[b].code(i) - 8) * s;
  }
}

std::vector<float> dequantize_q4(const std::vector<Q4Block>& blocks) {
  std::vector<float> out(blocks.size() * kQ4BlockSize);
  dequantize_q4(blocks.data(), blocks.size(), out.data());
  return out;
}

size_t q4_row_bytes(int cols) {
  return static_cast<size_t>(cols / kQ4BlockSize) * sizeof(Q4Block);
}

std::vector<uint8_t> quantize_matrix_q4(const Matrix& m) {
  if (m.cols % kQ4BlockSize != 0)
    throw ShapeError("quantize_matrix_q4: cols must be a multiple of 32");
  std::vector<uint8_t> bytes(static_cast<size_t>(m.rows) * q4_row_bytes(m.cols));
  size_t row_bytes = q4_row_bytes(m.cols);
  for (int r = 0; r < m.rows; r++) {
    auto blocks = quantize_q4(m.row(r), static_cast<size_t>(m.cols));
    std::memcpy(bytes.data() + r * row_bytes, blocks.data(), row_bytes);
  }
  return bytes;
}

Matrix dequantize_matrix_q4(const uint8_t* bytes, size_t len, int rows, int cols) {
  size_t row_bytes = q4_row_bytes(cols);
  if (len != row_bytes * static_cast<size_t>(rows))
    throw ShapeError("dequantize_matrix_q4: byte length mismatch");
  Matrix m(rows, cols);
  size_t blocks_per_row = static_cast<size_t>(cols) / kQ4BlockSize;
  std::vector<Q4Block> blocks(blocks_per_row);
  for (int r = 0; r < rows; r++) {
    std::memcpy(blocks.data(), bytes + r * row_bytes, row_bytes);
    dequantize_q4(blocks.data(), blocks_per_row, m.row(r));
  }
  return m;
}

}  // namespace stm
