#ifndef DOBI_SVD_GRAD_HPP
#define DOBI_SVD_GRAD_HPP

#include <optional>
#include <vector>

#include "dobi/svd.hpp"

namespace dobi {

// Upstream gradients of a scalar loss with respect to the SVD factors.
// Absent members are treated as zero.
struct UpstreamGrads {
  std::optional<DenseMatrix> g_u;           // m×q, dL/dU
  std::optional<std::vector<double>> g_s;   // q,   dL/dσ
  std::optional<DenseMatrix> g_vt;          // q×n, dL/d(Vᵀ)
};

// Stabilization thresholds for the backward pass.
//   eps_val  — clamp floor applied to singular values before any division
//   eps_grad — reciprocal assigned to pairs clamped to the floor
//   eps_diff — gap below which the truncated geometric series replaces the
//              exact reciprocal
//   n_taylor — number of retained series terms K
// eps_grad and n_taylor follow the published settings; eps_val and
// eps_diff are chosen so the series branch only engages where the exact
// formula has lost at least six digits to cancellation.
struct BackwardConfig {
  double eps_val = 1e-12;
  double eps_grad = 1e-10;
  double eps_diff = 1e-6;
  int n_taylor = 10;

  void validate() const;
};

// (x - xᵀ)/2. Throws shape_error on non-square input.
DenseMatrix skew_part(const DenseMatrix& x);

// Stabilized reciprocal difference matrix for the rotation terms of the
// backward pass. Off-diagonal entry (i,j) approximates 1/(σ_j² - σ_i²)
// with four regimes on the lower triangle (i > j, so σ_j is the larger
// value after descending sort):
//   (a) both values at the clamp floor            -> eps_grad
//   (b) exact tie                                 -> n_taylor / σ_large²
//   (c) gap in (0, eps_diff]                      -> truncated geometric
//       series (1 - r^{2K}) / (σ_large² (1 - r²)), r = σ_small/σ_large
//   (d) otherwise                                 -> exact reciprocal
// The upper triangle is minus the transpose and the diagonal is 1.
// Lower-triangle entries are positive for a descending spectrum; the sign
// orientation is certified by the finite-difference harness.
DenseMatrix build_stable_e_recip(const std::vector<double>& s, const BackwardConfig& cfg);

// Gradient of the loss with respect to the decomposed matrix:
//   gA = U (Ω_U Σ + Σ Ω_V + diag(g_s)) Vᵀ + Term₁ + Term₂
// with Ω_U = (Uᵀg_U - g_UᵀU) ∘ E, Ω_V = (Vᵀg_V - g_VᵀV) ∘ E and the
// rectangular corrections
//   Term₁ = (I - UUᵀ) g_U Σ_clamp⁻¹ Vᵀ   (omitted when q == m, exactly 0)
//   Term₂ = U Σ_clamp⁻¹ g_Vᵀ (I - VVᵀ)   (omitted when q == n, exactly 0).
// Early returns: all grads absent -> 0; only g_s -> U diag(g_s) Vᵀ.
// The full skew x - xᵀ (not the halved skew_part) is what matches central
// finite differences; see grad_check.
DenseMatrix svd_backward(const SvdFactors& f, const UpstreamGrads& g, const BackwardConfig& cfg);

// Scalar loss over SVD factors used by the gradient checker:
//   L = Σ w_i σ_i + <c_u, U> + <c_v, V> + ½‖U_k Σ_k V_kᵀ‖_F²   (trunc_k)
// Every term is optional; together they exercise all three upstream
// channels.
struct LossSpec {
  std::vector<double> sigma_weights;   // empty -> no σ term
  std::optional<DenseMatrix> c_u;      // m×q
  std::optional<DenseMatrix> c_v;      // n×q
  std::optional<index> trunc_k;

  double eval(const SvdFactors& f) const;
  UpstreamGrads grads(const SvdFactors& f) const;
};

struct GradCheckReport {
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
  index probe_count = 0;
  bool all_finite = true;
  double max_grad_magnitude = 0.0;  // largest |gA| entry seen
};

// Central finite differences (step h) on every entry of a versus the
// analytic backward pass. When compare_values is false only finiteness
// and magnitude are recorded, which is the meaningful check on degenerate
// spectra where the factors themselves are not unique.
GradCheckReport grad_check(const DenseMatrix& a, const LossSpec& loss, const BackwardConfig& cfg,
                           double h, bool compare_values = true);

}  // namespace dobi

#endif
