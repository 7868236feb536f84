#include "dobi/svd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dobi/kernels.hpp"
#include "dobi/rng.hpp"

namespace dobi {

namespace {

// One-sided Jacobi on a tall matrix (m >= n). Rotates column pairs of the
// working copy until all pairs are numerically orthogonal; the accumulated
// rotations form v. Singular values are the final column norms.
struct JacobiResult {
  DenseMatrix u;          // m×n, orthonormal columns
  std::vector<double> s;  // n, unsorted
  DenseMatrix v;          // n×n
};

JacobiResult jacobi_tall(const DenseMatrix& a) {
  const index m = a.rows(), n = a.cols();
  DenseMatrix b = a;
  DenseMatrix v = DenseMatrix::identity(n);

  const double tol = 1e-15;
  const int max_sweeps = 60;
  // Columns that fell to rounding noise would thrash forever against each
  // other; anything this far below the matrix norm counts as zero.
  double total2 = 0.0;
  for (double v : b.data()) total2 += v * v;
  const double noise_floor2 = total2 * 1e-28;
  bool converged = (n <= 1);
  for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
    converged = true;
    for (index p = 0; p < n - 1; ++p) {
      for (index q = p + 1; q < n; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (index i = 0; i < m; ++i) {
          const double bp = b(i, p), bq = b(i, q);
          alpha += bp * bp;
          beta += bq * bq;
          gamma += bp * bq;
        }
        if (alpha <= noise_floor2 && beta <= noise_floor2) continue;
        if (std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        converged = false;

        // Rutishauser rotation annihilating the (p,q) inner product.
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double sn = c * t;
        for (index i = 0; i < m; ++i) {
          const double bp = b(i, p), bq = b(i, q);
          b(i, p) = c * bp - sn * bq;
          b(i, q) = sn * bp + c * bq;
        }
        for (index i = 0; i < n; ++i) {
          const double vp = v(i, p), vq = v(i, q);
          v(i, p) = c * vp - sn * vq;
          v(i, q) = sn * vp + c * vq;
        }
      }
    }
  }
  if (!converged) throw numeric_error("svd_full: Jacobi sweeps did not converge");

  JacobiResult r{DenseMatrix(m, n), std::vector<double>(static_cast<std::size_t>(n)), std::move(v)};
  double smax = 0.0;
  for (index j = 0; j < n; ++j) {
    double nrm = 0.0;
    for (index i = 0; i < m; ++i) nrm += b(i, j) * b(i, j);
    nrm = std::sqrt(nrm);
    r.s[static_cast<std::size_t>(j)] = nrm;
    smax = std::max(smax, nrm);
  }

  // Normalize the well-conditioned columns; complete the near-null ones to
  // an orthonormal set so u always satisfies the factor invariants.
  const double nullspace_tol = (smax > 0.0 ? smax : 1.0) * 1e-14;
  std::vector<index> degenerate;
  for (index j = 0; j < n; ++j) {
    const double nrm = r.s[static_cast<std::size_t>(j)];
    if (nrm > nullspace_tol) {
      for (index i = 0; i < m; ++i) r.u(i, j) = b(i, j) / nrm;
    } else {
      r.s[static_cast<std::size_t>(j)] = std::max(nrm, 0.0);
      degenerate.push_back(j);
    }
  }
  for (index j : degenerate) {
    // Try coordinate axes until one survives double orthogonalization.
    for (index cand = 0; cand < m; ++cand) {
      DenseMatrix col(m, 1);
      col(cand, 0) = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (index t = 0; t < n; ++t) {
          if (t == j) continue;
          bool t_is_degenerate_after = false;
          for (index d : degenerate)
            if (d == t && t > j) t_is_degenerate_after = true;
          if (t_is_degenerate_after) continue;
          double proj = 0.0;
          for (index i = 0; i < m; ++i) proj += col(i, 0) * r.u(i, t);
          for (index i = 0; i < m; ++i) col(i, 0) -= proj * r.u(i, t);
        }
      }
      double nrm = 0.0;
      for (index i = 0; i < m; ++i) nrm += col(i, 0) * col(i, 0);
      nrm = std::sqrt(nrm);
      if (nrm > 0.5) {
        for (index i = 0; i < m; ++i) r.u(i, j) = col(i, 0) / nrm;
        break;
      }
    }
  }
  return r;
}

void sort_and_fix_signs(DenseMatrix& u, std::vector<double>& s, DenseMatrix& v) {
  const index n = static_cast<index>(s.size());
  std::vector<index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), index{0});
  std::stable_sort(order.begin(), order.end(), [&](index a, index b) {
    return s[static_cast<std::size_t>(a)] > s[static_cast<std::size_t>(b)];
  });

  DenseMatrix us(u.rows(), n), vs(v.rows(), n);
  std::vector<double> ss(static_cast<std::size_t>(n));
  for (index jj = 0; jj < n; ++jj) {
    const index src = order[static_cast<std::size_t>(jj)];
    ss[static_cast<std::size_t>(jj)] = s[static_cast<std::size_t>(src)];

    // Deterministic sign: largest-|entry| of the u column made positive.
    index imax = 0;
    double vmax = 0.0;
    for (index i = 0; i < u.rows(); ++i) {
      const double av = std::abs(u(i, src));
      if (av > vmax) {
        vmax = av;
        imax = i;
      }
    }
    const double sgn = (u(imax, src) < 0.0) ? -1.0 : 1.0;
    for (index i = 0; i < u.rows(); ++i) us(i, jj) = sgn * u(i, src);
    for (index i = 0; i < v.rows(); ++i) vs(i, jj) = sgn * v(i, src);
  }
  u = std::move(us);
  s = std::move(ss);
  v = std::move(vs);
}

}  // namespace

SvdFactors svd_full(const DenseMatrix& a) {
  require_finite(a, "svd_full");
  if (a.rows() == 0 || a.cols() == 0) throw shape_error("svd_full: empty matrix");

  if (a.rows() >= a.cols()) {
    auto [u, s, v] = jacobi_tall(a);
    sort_and_fix_signs(u, s, v);
    return SvdFactors{std::move(u), std::move(s), transpose(v)};
  }
  // a = (aᵀ)ᵀ: factor the tall transpose c = u_c s v_cᵀ, then
  // a = v_c s u_cᵀ.
  auto [uc, s, vc] = jacobi_tall(transpose(a));
  sort_and_fix_signs(vc, s, uc);
  return SvdFactors{std::move(vc), std::move(s), transpose(uc)};
}

namespace {

// In-place modified Gram-Schmidt, two passes. Columns that collapse are
// completed with coordinate directions so the basis is always full.
void orthonormalize_columns(DenseMatrix& x) {
  const index m = x.rows(), n = x.cols();
  const double scale = std::max(max_abs(x), 1.0);
  for (index j = 0; j < n; ++j) {
    for (int pass = 0; pass < 2; ++pass) {
      for (index t = 0; t < j; ++t) {
        double proj = 0.0;
        for (index i = 0; i < m; ++i) proj += x(i, t) * x(i, j);
        for (index i = 0; i < m; ++i) x(i, j) -= proj * x(i, t);
      }
    }
    double nrm = 0.0;
    for (index i = 0; i < m; ++i) nrm += x(i, j) * x(i, j);
    nrm = std::sqrt(nrm);
    if (nrm > scale * 1e-13) {
      for (index i = 0; i < m; ++i) x(i, j) /= nrm;
      continue;
    }
    for (index cand = 0; cand < m; ++cand) {
      for (index i = 0; i < m; ++i) x(i, j) = (i == cand) ? 1.0 : 0.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (index t = 0; t < j; ++t) {
          double proj = 0.0;
          for (index i = 0; i < m; ++i) proj += x(i, t) * x(i, j);
          for (index i = 0; i < m; ++i) x(i, j) -= proj * x(i, t);
        }
      }
      nrm = 0.0;
      for (index i = 0; i < m; ++i) nrm += x(i, j) * x(i, j);
      nrm = std::sqrt(nrm);
      if (nrm > 0.5) {
        for (index i = 0; i < m; ++i) x(i, j) /= nrm;
        break;
      }
    }
  }
}

}  // namespace

SvdFactors svd_lowrank(const DenseMatrix& a, index q, int niter, std::uint64_t seed) {
  require_finite(a, "svd_lowrank");
  const index m = a.rows(), n = a.cols();
  const index qmax = std::min(m, n);
  if (q < 1 || q > qmax) throw value_error("svd_lowrank: q out of range [1, min(m,n)]");
  if (niter < 1) throw value_error("svd_lowrank: niter must be >= 1");

  // Oversampled Gaussian range finder: extra test vectors sharpen the
  // captured subspace, surplus directions are dropped after the panel SVD.
  const index ell = std::min(q + 8, qmax);
  Pcg32 rng(seed);
  DenseMatrix omega(n, ell);
  for (double& x : omega.data()) x = rng.next_gaussian();

  DenseMatrix y = matmul(a, omega);  // m×ell
  orthonormalize_columns(y);
  const DenseMatrix at = transpose(a);
  for (int it = 0; it < niter; ++it) {
    DenseMatrix z = matmul(at, y);  // n×ell
    orthonormalize_columns(z);
    y = matmul(a, z);  // m×ell
    orthonormalize_columns(y);
  }

  // b = yᵀ a is q×n; its exact SVD lifts back through the range basis.
  DenseMatrix b = matmul(transpose(y), a);
  SvdFactors fb = svd_full(b);
  SvdFactors out;
  out.u = matmul(y, fb.u);
  out.s = std::move(fb.s);
  out.vt = std::move(fb.vt);
  if (out.q() > q) {
    DenseMatrix u(m, q), vt(q, n);
    std::vector<double> s(static_cast<std::size_t>(q));
    for (index j = 0; j < q; ++j) {
      s[static_cast<std::size_t>(j)] = out.s[static_cast<std::size_t>(j)];
      for (index i = 0; i < m; ++i) u(i, j) = out.u(i, j);
      for (index i = 0; i < n; ++i) vt(j, i) = out.vt(j, i);
    }
    out = SvdFactors{std::move(u), std::move(s), std::move(vt)};
  }
  return out;
}

DenseMatrix svd_reconstruct(const SvdFactors& f) {
  return matmul(scale_cols(f.u, f.s), f.vt);
}

DenseMatrix truncated_reconstruct(const SvdFactors& f, index k) {
  if (k < 0 || k > f.q()) throw value_error("truncated_reconstruct: k out of range");
  const index m = f.u.rows(), n = f.vt.cols();
  if (k == 0) return DenseMatrix(m, n);
  DenseMatrix uk(m, k);
  for (index i = 0; i < m; ++i)
    for (index j = 0; j < k; ++j) uk(i, j) = f.u(i, j) * f.s[static_cast<std::size_t>(j)];
  DenseMatrix vtk(k, n);
  for (index j = 0; j < k; ++j)
    for (index i = 0; i < n; ++i) vtk(j, i) = f.vt(j, i);
  return matmul(uk, vtk);
}

double column_orthonormality_residual(const DenseMatrix& x) {
  DenseMatrix g = kernels::gram_omp(x);
  for (index i = 0; i < g.rows(); ++i) g(i, i) -= 1.0;
  return frob_norm(g);
}

}  // namespace dobi
