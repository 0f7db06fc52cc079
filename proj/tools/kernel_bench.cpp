// Compares the OpenMP kernels against their serial reference implementations
// and the dense expert path against the neuron-sparse one.
//
//   kernel_bench [reps]

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <vector>

#include "stm/fixture.hpp"
#include "stm/kernels.hpp"
#include "stm/moe.hpp"

using namespace stm;

namespace {

double time_ms(int reps, auto&& fn) {
  fn();  // warmup
  auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; i++) fn();
  auto dt = std::chrono::steady_clock::now() - t0;
  return std::chrono::duration<double, std::milli>(dt).count() / reps;
}

void bench_matvec(int rows, int cols, int reps) {
  Matrix w = fixture_matrix(rows, cols, 1, "bench.w", cols);
  std::vector<float> x = fixture_matrix(1, cols, 2, "bench.x", 1).data;
  std::vector<float> out(rows);
  double serial = time_ms(reps, [&] { ref::matvec(out.data(), w, x.data()); });
  double parallel = time_ms(reps, [&] { matvec(out.data(), w, x.data()); });
  printf("matvec %5dx%-5d  serial %8.3f ms  parallel %8.3f ms  speedup %5.2fx\n",
         rows, cols, serial, parallel, serial / parallel);
}

void bench_expert(int ffn, int hidden, int reps) {
  ExpertWeights w;
  w.gate = fixture_matrix(ffn, hidden, 3, "bench.gate", hidden);
  w.up = fixture_matrix(ffn, hidden, 3, "bench.up", hidden);
  w.down = fixture_matrix(hidden, ffn, 3, "bench.down", ffn);
  std::vector<float> x = fixture_matrix(1, hidden, 4, "bench.x2", 1).data;
  float ratio = 0;
  double dense = time_ms(reps, [&] { expert_dense(x, w); });
  double sparse = time_ms(reps, [&] { expert_sparse(x, w, &ratio); });
  printf("expert %5dx%-5d  dense  %8.3f ms  sparse   %8.3f ms  speedup %5.2fx (active %.2f)\n",
         ffn, hidden, dense, sparse, dense / sparse, ratio);
}

}  // namespace

int main(int argc, char** argv) {
  int reps = argc > 1 ? std::atoi(argv[1]) : 50;
  printf("threads: %d, reps: %d\n", omp_get_max_threads(), reps);
  bench_matvec(768, 1536, reps);
  bench_matvec(2048, 2048, reps);
  bench_matvec(512, 64, reps);
  bench_expert(768, 1536, reps);
  bench_expert(96, 64, reps);
  return 0;
}
