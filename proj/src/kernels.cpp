#include "dobi/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dobi::kernels {

namespace {
void require_product_shape(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) throw shape_error("matmul: inner dimensions differ");
}
}  // namespace

DenseMatrix matmul_serial(const DenseMatrix& a, const DenseMatrix& b) {
  require_product_shape(a, b);
  const index m = a.rows(), n = b.cols(), kk = a.cols();
  DenseMatrix c(m, n);
  for (index i = 0; i < m; ++i)
    for (index j = 0; j < n; ++j) {
      double acc = 0.0;
      for (index k = 0; k < kk; ++k) acc += a(i, k) * b(k, j);
      c(i, j) = acc;
    }
  return c;
}

DenseMatrix matmul_omp(const DenseMatrix& a, const DenseMatrix& b) {
  require_product_shape(a, b);
  const index m = a.rows(), n = b.cols(), kk = a.cols();
  DenseMatrix c(m, n);
  const double* pa = a.raw();
  const double* pb = b.raw();
  double* pc = c.raw();
  // ikj order: contiguous access on b and c; per-element k runs ascending,
  // matching the serial kernel bit-for-bit.
#pragma omp parallel for schedule(static) if (m * n * kk > 32768)
  for (index i = 0; i < m; ++i) {
    double* crow = pc + i * n;
    for (index k = 0; k < kk; ++k) {
      const double aik = pa[i * kk + k];
      const double* brow = pb + k * n;
      for (index j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

DenseMatrix gram_omp(const DenseMatrix& a) {
  const index m = a.rows(), n = a.cols();
  DenseMatrix g(n, n);
#pragma omp parallel for schedule(static) if (n * n * m > 32768)
  for (index i = 0; i < n; ++i) {
    for (index j = i; j < n; ++j) {
      double acc = 0.0;
      for (index r = 0; r < m; ++r) acc += a(r, i) * a(r, j);
      g(i, j) = acc;
      g(j, i) = acc;
    }
  }
  return g;
}

}  // namespace dobi::kernels

namespace dobi {

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  return kernels::matmul_omp(a, b);
}

}  // namespace dobi
