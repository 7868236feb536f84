#ifndef DOBI_SVD_HPP
#define DOBI_SVD_HPP

#include <cstdint>
#include <vector>

#include "dobi/matrix.hpp"

namespace dobi {

// Thin SVD triple a = u · diag(s) · vt with q retained factors.
// u is m×q with orthonormal columns, vt is q×n with orthonormal rows,
// s is nonnegative and sorted descending. Signs are fixed so the
// largest-magnitude entry of each u column is positive, which makes the
// factorization deterministic under small perturbations (the
// finite-difference harness depends on this).
struct SvdFactors {
  DenseMatrix u;
  std::vector<double> s;
  DenseMatrix vt;

  index q() const { return static_cast<index>(s.size()); }
};

// Full thin SVD, q = min(rows, cols). One-sided Jacobi in f64.
// Throws numeric_error on non-finite input or if the sweep limit is hit.
SvdFactors svd_full(const DenseMatrix& a);

// Randomized top-q factorization: seeded Gaussian range finder with
// `niter` power-iteration passes, then an exact SVD of the projected
// q×n panel. Throws value_error when q is out of [1, min(m,n)] or
// niter < 1.
SvdFactors svd_lowrank(const DenseMatrix& a, index q, int niter,
                       std::uint64_t seed = 0x51a9d2f6c3b8e07ULL);

// u · diag(s) · vt.
DenseMatrix svd_reconstruct(const SvdFactors& f);

// Rank-k reconstruction u_k · diag(s_k) · vt_k (hard truncation).
DenseMatrix truncated_reconstruct(const SvdFactors& f, index k);

// ‖xᵀx − I‖_F over the columns of x; test and invariant helper.
double column_orthonormality_residual(const DenseMatrix& x);

}  // namespace dobi

#endif
