#pragma once

// Shared numeric primitives. The hot kernels are OpenMP-parallel; stm::ref
// holds the serial reference versions the tests and the kernel benchmark
// compare against.

#include <cstddef>
#include <vector>

namespace stm {

// Dense row-major matrix.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<float> data;

  Matrix() = default;
  Matrix(int rows, int cols)
      : rows(rows), cols(cols), data(static_cast<size_t>(rows) * cols) {}

  float* row(int r) { return data.data() + static_cast<size_t>(r) * cols; }
  const float* row(int r) const { return data.data() + static_cast<size_t>(r) * cols; }
  float& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  float at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
  size_t size_bytes() const { return data.size() * sizeof(float); }
};

// out[r] = dot(w.row(r), x). Parallel over rows; per-row accumulation is
// sequential, so results do not depend on the thread count.
void matvec(float* out, const Matrix& w, const float* x);
std::vector<float> matvec(const Matrix& w, const std::vector<float>& x);

// y_i = gain_i * x_i / sqrt(mean(x^2) + eps)
void rms_norm(float* y, const float* x, const float* gain, int n, float eps);
std::vector<float> rms_norm(const std::vector<float>& x,
                            const std::vector<float>& gain, float eps);

// In-place max-subtracted softmax.
void softmax_inplace(float* x, int n);

void add_inplace(float* y, const float* x, int n);

int argmax(const float* x, int n);  // ties -> lowest index

namespace ref {
void matvec(float* out, const Matrix& w, const float* x);
}

}  // namespace stm
