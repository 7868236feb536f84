#include "dobi/svd_grad.hpp"

#include <algorithm>
#include <cmath>

#include "dobi/kernels.hpp"

namespace dobi {

void BackwardConfig::validate() const {
  if (!(eps_val > 0.0) || !(eps_grad > 0.0) || !(eps_diff > 0.0))
    throw value_error("BackwardConfig: thresholds must be strictly positive");
  if (n_taylor < 1) throw value_error("BackwardConfig: n_taylor must be >= 1");
}

DenseMatrix skew_part(const DenseMatrix& x) {
  if (x.rows() != x.cols()) throw shape_error("skew_part: matrix must be square");
  DenseMatrix r(x.rows(), x.cols());
  for (index i = 0; i < x.rows(); ++i)
    for (index j = 0; j < x.cols(); ++j) r(i, j) = 0.5 * (x(i, j) - x(j, i));
  return r;
}

DenseMatrix build_stable_e_recip(const std::vector<double>& s, const BackwardConfig& cfg) {
  cfg.validate();
  const index q = static_cast<index>(s.size());
  for (index i = 0; i < q; ++i) {
    if (s[static_cast<std::size_t>(i)] < 0.0)
      throw value_error("build_stable_e_recip: negative singular value");
    if (i + 1 < q && s[static_cast<std::size_t>(i)] < s[static_cast<std::size_t>(i + 1)])
      throw value_error("build_stable_e_recip: values must be sorted descending");
  }

  DenseMatrix e(q, q, 0.0);
  for (index i = 0; i < q; ++i) e(i, i) = 1.0;

  for (index i = 1; i < q; ++i) {
    for (index j = 0; j < i; ++j) {
      // Descending order puts the larger value at the column index.
      const double lo = std::max(s[static_cast<std::size_t>(i)], cfg.eps_val);
      const double hi = std::max(s[static_cast<std::size_t>(j)], cfg.eps_val);
      const double gap = hi - lo;
      double val;
      if (hi == cfg.eps_val) {
        val = cfg.eps_grad;  // (a) whole pair at the clamp floor
      } else if (gap == 0.0) {
        val = static_cast<double>(cfg.n_taylor) / (hi * hi);  // (b) exact tie
      } else if (gap <= cfg.eps_diff) {
        // (c) truncated geometric series in r² = (σ_small/σ_large)²,
        // closed form (1 - r^{2K})/(1 - r²) written via expm1/log1p so
        // nothing cancels as r -> 1.
        const double d = gap / hi;  // 1 - r, exact for close operands
        const double one_minus_r2k = -std::expm1(2.0 * cfg.n_taylor * std::log1p(-d));
        const double one_minus_r2 = d * (2.0 - d);
        val = one_minus_r2k / (one_minus_r2 * hi * hi);
      } else {
        val = 1.0 / ((hi - lo) * (hi + lo));  // (d) exact
      }
      e(i, j) = val;
      e(j, i) = -val;
    }
  }
  return e;
}

namespace {

DenseMatrix zero_like_shape(index m, index n) { return DenseMatrix(m, n); }

bool effectively_zero(const std::optional<DenseMatrix>& g) {
  return !g.has_value() || max_abs(*g) == 0.0;
}

bool effectively_zero(const std::optional<std::vector<double>>& g) {
  if (!g.has_value()) return true;
  for (double v : *g)
    if (v != 0.0) return false;
  return true;
}

void check_grad_shapes(const SvdFactors& f, const UpstreamGrads& g) {
  if (g.g_u && (g.g_u->rows() != f.u.rows() || g.g_u->cols() != f.q()))
    throw shape_error("svd_backward: g_u shape mismatch");
  if (g.g_vt && (g.g_vt->rows() != f.q() || g.g_vt->cols() != f.vt.cols()))
    throw shape_error("svd_backward: g_vt shape mismatch");
  if (g.g_s && static_cast<index>(g.g_s->size()) != f.q())
    throw shape_error("svd_backward: g_s length mismatch");
}

}  // namespace

DenseMatrix svd_backward(const SvdFactors& f, const UpstreamGrads& g, const BackwardConfig& cfg) {
  cfg.validate();
  check_grad_shapes(f, g);
  const index m = f.u.rows(), n = f.vt.cols(), q = f.q();

  const bool zu = effectively_zero(g.g_u);
  const bool zv = effectively_zero(g.g_vt);
  const bool zs = effectively_zero(g.g_s);
  if (zu && zv && zs) return zero_like_shape(m, n);
  if (zu && zv) {
    DenseMatrix core(q, q);
    for (index i = 0; i < q; ++i) core(i, i) = (*g.g_s)[static_cast<std::size_t>(i)];
    return matmul(matmul(f.u, core), f.vt);
  }

  std::vector<double> s_clamp(f.s);
  for (double& v : s_clamp) v = std::max(v, cfg.eps_val);

  const DenseMatrix e = build_stable_e_recip(f.s, cfg);
  const DenseMatrix v = transpose(f.vt);

  DenseMatrix core(q, q);
  if (!zu) {
    // Ω_U = (Uᵀg_U - g_UᵀU) ∘ E, then right-scaled by Σ.
    DenseMatrix utgu = matmul(transpose(f.u), *g.g_u);
    DenseMatrix omega_u = hadamard(scale(skew_part(utgu), 2.0), e);
    DenseMatrix omega_u_sigma = scale_cols(omega_u, f.s);
    core = add(core, omega_u_sigma);
  }
  if (!zv) {
    DenseMatrix g_v = transpose(*g.g_vt);  // n×q, dL/dV
    DenseMatrix vtgv = matmul(f.vt, g_v);
    DenseMatrix omega_v = hadamard(scale(skew_part(vtgv), 2.0), e);
    DenseMatrix sigma_omega_v = scale_rows(omega_v, f.s);
    core = add(core, sigma_omega_v);
  }
  if (!zs) {
    for (index i = 0; i < q; ++i) core(i, i) += (*g.g_s)[static_cast<std::size_t>(i)];
  }

  DenseMatrix ga = matmul(matmul(f.u, core), f.vt);

  // Rectangular corrections. Each is identically zero when the projector
  // collapses, so they are skipped in the square cases rather than left to
  // cancel in floating point (the cancellation would be amplified by the
  // 1/σ_clamp scaling on degenerate spectra).
  if (!zu && q < m) {
    std::vector<double> inv(s_clamp);
    for (double& x : inv) x = 1.0 / x;
    DenseMatrix gu_scaled = scale_cols(*g.g_u, inv);  // m×q
    DenseMatrix proj = matmul(f.u, matmul(transpose(f.u), gu_scaled));
    DenseMatrix term1 = matmul(sub(gu_scaled, proj), f.vt);
    ga = add(ga, term1);
  }
  if (!zv && q < n) {
    std::vector<double> inv(s_clamp);
    for (double& x : inv) x = 1.0 / x;
    DenseMatrix gvt_scaled = scale_rows(*g.g_vt, inv);  // q×n
    DenseMatrix proj = matmul(matmul(gvt_scaled, v), f.vt);
    DenseMatrix term2 = matmul(f.u, sub(gvt_scaled, proj));
    ga = add(ga, term2);
  }

  if (!ga.all_finite())
    throw numeric_error("svd_backward: non-finite gradient despite stabilization");
  return ga;
}

double LossSpec::eval(const SvdFactors& f) const {
  double l = 0.0;
  if (!sigma_weights.empty()) {
    if (static_cast<index>(sigma_weights.size()) != f.q())
      throw shape_error("LossSpec: sigma_weights length mismatch");
    for (index i = 0; i < f.q(); ++i)
      l += sigma_weights[static_cast<std::size_t>(i)] * f.s[static_cast<std::size_t>(i)];
  }
  if (c_u) l += dot(*c_u, f.u);
  if (c_v) l += dot(*c_v, transpose(f.vt));
  if (trunc_k) {
    for (index i = 0; i < std::min(*trunc_k, f.q()); ++i) {
      const double s = f.s[static_cast<std::size_t>(i)];
      l += 0.5 * s * s;
    }
  }
  return l;
}

UpstreamGrads LossSpec::grads(const SvdFactors& f) const {
  UpstreamGrads g;
  if (!sigma_weights.empty() || trunc_k) {
    std::vector<double> gs(static_cast<std::size_t>(f.q()), 0.0);
    if (!sigma_weights.empty())
      for (index i = 0; i < f.q(); ++i) gs[static_cast<std::size_t>(i)] += sigma_weights[static_cast<std::size_t>(i)];
    if (trunc_k)
      for (index i = 0; i < std::min(*trunc_k, f.q()); ++i)
        gs[static_cast<std::size_t>(i)] += f.s[static_cast<std::size_t>(i)];
    g.g_s = std::move(gs);
  }
  if (c_u) g.g_u = *c_u;
  if (c_v) g.g_vt = transpose(*c_v);
  return g;
}

GradCheckReport grad_check(const DenseMatrix& a, const LossSpec& loss, const BackwardConfig& cfg,
                           double h, bool compare_values) {
  if (!(h > 0.0)) throw value_error("grad_check: step must be positive");
  GradCheckReport rep;

  const SvdFactors f = svd_full(a);
  const DenseMatrix ga = svd_backward(f, loss.grads(f), cfg);
  rep.all_finite = ga.all_finite();
  rep.max_grad_magnitude = max_abs(ga);
  if (!compare_values) return rep;

  for (index i = 0; i < a.rows(); ++i) {
    for (index j = 0; j < a.cols(); ++j) {
      DenseMatrix ap = a, am = a;
      ap(i, j) += h;
      am(i, j) -= h;
      const double lp = loss.eval(svd_full(ap));
      const double lm = loss.eval(svd_full(am));
      const double fd = (lp - lm) / (2.0 * h);
      const double an = ga(i, j);
      const double abs_err = std::abs(fd - an);
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-7});
      rep.max_abs_error = std::max(rep.max_abs_error, abs_err);
      rep.max_rel_error = std::max(rep.max_rel_error, abs_err / denom);
      ++rep.probe_count;
      if (!std::isfinite(fd) || !std::isfinite(an)) rep.all_finite = false;
    }
  }
  return rep;
}

}  // namespace dobi
