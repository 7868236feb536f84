// Timing comparison between the serial reference kernels and their
// OpenMP counterparts, plus the per-sample evaluation loop. Run with
// OMP_NUM_THREADS to vary the thread count.

#include <cstdio>

#ifdef _OPENMP
#include <omp.h>
#else
#include <chrono>
#endif

#include "dobi/kernels.hpp"
#include "dobi/model.hpp"
#include "dobi/rng.hpp"

namespace {

double now_seconds() {
#ifdef _OPENMP
  return omp_get_wtime();
#else
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
#endif
}

dobi::DenseMatrix random_matrix(dobi::index rows, dobi::index cols, std::uint64_t seed) {
  dobi::Pcg32 rng(seed);
  dobi::DenseMatrix m(rows, cols);
  for (double& v : m.data()) v = rng.next_gaussian();
  return m;
}

template <typename Fn>
double time_best_of(int reps, Fn&& fn) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const double t0 = now_seconds();
    fn();
    const double t1 = now_seconds();
    best = t1 - t0 < best ? t1 - t0 : best;
  }
  return best;
}

}  // namespace

int main() {
#ifdef _OPENMP
  std::printf("threads: %d\n", omp_get_max_threads());
#else
  std::printf("threads: 1 (OpenMP disabled)\n");
#endif
  std::printf("%-28s %12s %12s %8s\n", "kernel", "serial [s]", "parallel [s]", "speedup");

  for (dobi::index n : {128, 256, 384}) {
    const dobi::DenseMatrix a = random_matrix(n, n, 1);
    const dobi::DenseMatrix b = random_matrix(n, n, 2);
    volatile double sink = 0.0;
    const double ts = time_best_of(3, [&] { sink = dobi::kernels::matmul_serial(a, b)(0, 0); });
    const double tp = time_best_of(3, [&] { sink = dobi::kernels::matmul_omp(a, b)(0, 0); });
    std::printf("matmul %4td x %-4td            %12.6f %12.6f %7.2fx\n", n, n, ts, tp, ts / tp);
    (void)sink;
  }

  {
    const dobi::ToyModel model = dobi::make_char_lm(7);
    const dobi::Dataset ds = dobi::make_dataset(dobi::DatasetKind::char_lm, 7, 64);
    volatile double sink = 0.0;
    // eval_dense parallelizes over samples; force one thread for the
    // serial column by chunking manually.
    const double tser = time_best_of(3, [&] {
      double acc = 0.0;
      for (const auto& s : ds.samples)
        acc += dobi::task_loss_output(dobi::forward(model, s.input), s, ds.kind);
      sink = acc / static_cast<double>(ds.samples.size());
    });
    const double tpar = time_best_of(3, [&] { sink = dobi::eval_dense(model, ds); });
    std::printf("dataset eval (64 samples)    %12.6f %12.6f %7.2fx\n", tser, tpar, tser / tpar);
    (void)sink;
  }
  return 0;
}
