#include "stm/kernels.hpp"

#include <cmath>

#include "stm/error.hpp"

namespace stm {

void matvec(float* out, const Matrix& w, const float* x) {
  const int rows = w.rows;
  const int cols = w.cols;
  const float* data = w.data.data();
  // Skip the team for tiny matrices; the engine calls this in a tight loop.
#pragma omp parallel for schedule(static) if (static_cast<long>(rows) * cols > 16384)
  for (int r = 0; r < rows; r++) {
    const float* wr = data + static_cast<size_t>(r) * cols;
    float acc = 0.0f;
    for (int c = 0; c < cols; c++) acc += wr[c] * x[c];
    out[r] = acc;
  }
}

std::vector<float> matvec(const Matrix& w, const std::vector<float>& x) {
  if (static_cast<int>(x.size()) != w.cols)
    throw ShapeError("matvec: x length " + std::to_string(x.size()) +
                     " != cols " + std::to_string(w.cols));
  std::vector<float> out(w.rows);
  matvec(out.data(), w, x.data());
  return out;
}

void rms_norm(float* y, const float* x, const float* gain, int n, float eps) {
  float ss = 0.0f;
  for (int i = 0; i < n; i++) ss += x[i] * x[i];
  float inv = 1.0f / std::sqrt(ss / static_cast<float>(n) + eps);
  for (int i = 0; i < n; i++) y[i] = gain[i] * x[i] * inv;
}

std::vector<float> rms_norm(const std::vector<float>& x,
                            const std::vector<float>& gain, float eps) {
  if (x.size() != gain.size())
    throw ShapeError("rms_norm: x and gain lengths differ");
  std::vector<float> y(x.size());
  rms_norm(y.data(), x.data(), gain.data(), static_cast<int>(x.size()), eps);
  return y;
}

void softmax_inplace(float* x, int n) {
  float m = x[0];
  for (int i = 1; i < n; i++)
    if (x[i] > m) m = x[i];
  float sum = 0.0f;
  for (int i = 0; i < n; i++) {
    x[i] = std::exp(x[i] - m);
    sum += x[i];
  }
  for (int i = 0; i < n; i++) x[i] /= sum;
}

void add_inplace(float* y, const float* x, int n) {
  for (int i = 0; i < n; i++) y[i] += x[i];
}

int argmax(const float* x, int n) {
  int best = 0;
  for (int i = 1; i < n; i++)
    if (x[i] > x[best]) best = i;
  return best;
}

namespace ref {

void matvec(float* out, const Matrix& w, const float* x) {
  for (int r = 0; r < w.rows; r++) {
    const float* wr = w.row(r);
    float acc = 0.0f;
    for (int c = 0; c < w.cols; c++) acc += wr[c] * x[c];
    out[r] = acc;
  }
}

}  // namespace ref

}  // namespace stm
