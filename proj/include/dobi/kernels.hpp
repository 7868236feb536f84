#ifndef DOBI_KERNELS_HPP
#define DOBI_KERNELS_HPP

#include "dobi/matrix.hpp"

namespace dobi::kernels {

// Serial reference product, plain ijk triple loop. Kept as the oracle the
// parallel kernel is tested against; both accumulate over k in ascending
// order so results are bit-identical.
DenseMatrix matmul_serial(const DenseMatrix& a, const DenseMatrix& b);

// OpenMP product, rows distributed across threads. Each output element is
// written by exactly one thread, so the result does not depend on the
// thread count.
DenseMatrix matmul_omp(const DenseMatrix& a, const DenseMatrix& b);

// gram(a) = aᵀ·a, symmetric. Parallel over output rows.
DenseMatrix gram_omp(const DenseMatrix& a);

}  // namespace dobi::kernels

namespace dobi {

// Default product used throughout the library (OpenMP kernel).
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);

}  // namespace dobi

#endif
