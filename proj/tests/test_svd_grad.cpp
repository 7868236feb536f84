#include <doctest.h>

#include <cmath>

#include "dobi/kernels.hpp"
#include "dobi/rng.hpp"
#include "dobi/svd_grad.hpp"

using namespace dobi;
using idx = dobi::index;

namespace {

DenseMatrix random_matrix(idx rows, idx cols, std::uint64_t seed, double scale = 1.0) {
  Pcg32 rng(seed);
  DenseMatrix m(rows, cols);
  for (double& v : m.data()) v = scale * rng.next_gaussian();
  return m;
}

// Matrix with a prescribed spectrum: Q1·diag(s)·Q2ᵀ from seeded rotations.
DenseMatrix matrix_with_spectrum(idx m, idx n, const std::vector<double>& s, std::uint64_t seed) {
  const SvdFactors f1 = svd_full(random_matrix(m, m, seed));
  const SvdFactors f2 = svd_full(random_matrix(n, n, seed + 1));
  const idx q = static_cast<idx>(s.size());
  DenseMatrix us(m, q);
  for (idx i = 0; i < m; ++i)
    for (idx j = 0; j < q; ++j) us(i, j) = f1.u(i, j) * s[static_cast<std::size_t>(j)];
  DenseMatrix vt(q, n);
  for (idx j = 0; j < q; ++j)
    for (idx i = 0; i < n; ++i) vt(j, i) = f2.u(i, j);
  return matmul(us, vt);
}

LossSpec full_loss(idx m, idx n, idx q, std::uint64_t seed) {
  LossSpec loss;
  Pcg32 rng(seed);
  loss.sigma_weights.resize(static_cast<std::size_t>(q));
  for (double& w : loss.sigma_weights) w = rng.next_gaussian();
  DenseMatrix cu(m, q), cv(n, q);
  for (double& v : cu.data()) v = rng.next_gaussian();
  for (double& v : cv.data()) v = rng.next_gaussian();
  loss.c_u = std::move(cu);
  loss.c_v = std::move(cv);
  return loss;
}

}  // namespace

TEST_CASE("skew_part basics") {
  DenseMatrix sym{{1, 2}, {2, 5}};
  CHECK(frob_norm(skew_part(sym)) == 0.0);

  DenseMatrix anti{{0, 3}, {-3, 0}};
  CHECK(frob_dist(skew_part(anti), anti) == 0.0);

  const DenseMatrix x = random_matrix(4, 4, 5);
  const DenseMatrix sp = skew_part(x);
  for (idx i = 0; i < 4; ++i)
    for (idx j = 0; j < 4; ++j) {
      CHECK(sp(i, j) == doctest::Approx(0.5 * (x(i, j) - x(j, i))).epsilon(1e-15));
      CHECK(sp(i, j) + sp(j, i) == doctest::Approx(0.0));
    }

  CHECK_THROWS_AS(skew_part(DenseMatrix(2, 3)), shape_error);
}

TEST_CASE("e_recip: well-separated pair uses the exact reciprocal") {
  BackwardConfig cfg;
  const DenseMatrix e = build_stable_e_recip({3.0, 1.0}, cfg);
  CHECK(e(0, 0) == 1.0);
  CHECK(e(1, 1) == 1.0);
  // Antisymmetric ±1/((3-1)(3+1)) pattern, positive below the diagonal.
  CHECK(e(1, 0) == doctest::Approx(0.125).epsilon(1e-15));
  CHECK(e(0, 1) == doctest::Approx(-0.125).epsilon(1e-15));
}

TEST_CASE("e_recip: exact tie takes the K/sigma^2 cap") {
  BackwardConfig cfg;  // n_taylor = 10
  const DenseMatrix e = build_stable_e_recip({2.0, 2.0}, cfg);
  CHECK(std::abs(e(1, 0)) == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(e(0, 1) == -e(1, 0));
}

TEST_CASE("e_recip: near-tie matches the explicit series sum") {
  BackwardConfig cfg;
  const double s2 = 1.0 - 1e-9;
  const DenseMatrix e = build_stable_e_recip({1.0, s2}, cfg);
  // Oracle: term-by-term sum of the geometric series in r².
  const double r2 = s2 * s2;
  double expect = 0.0;
  for (int t = 0; t < cfg.n_taylor; ++t) expect += std::pow(r2, t);
  CHECK(e(1, 0) == doctest::Approx(expect).epsilon(1e-13));
}

TEST_CASE("e_recip: clamped pair takes eps_grad") {
  BackwardConfig cfg;
  const DenseMatrix e = build_stable_e_recip({1e-15, 1e-16}, cfg);
  CHECK(e(1, 0) == doctest::Approx(cfg.eps_grad));
}

TEST_CASE("e_recip: branch consistency at the eps_diff boundary") {
  BackwardConfig cfg;
  // Pairs whose absolute gap equals eps_diff while the geometric tail
  // r^{2K} is far below 1e-8; the series branch must agree with the
  // exact branch to 1e-6 relative.
  for (double hi : {1.2e-6, 1.5e-6, 1.66e-6}) {
    const double lo = hi - cfg.eps_diff;
    REQUIRE(lo > 0.0);
    const double r = lo / hi;
    REQUIRE(std::pow(r, 2 * cfg.n_taylor) < 1e-8);
    const DenseMatrix e = build_stable_e_recip({hi, lo}, cfg);
    const double exact = 1.0 / ((hi - lo) * (hi + lo));
    CHECK(std::abs(e(1, 0) - exact) / exact < 1e-6);
  }
}

TEST_CASE("e_recip rejects unsorted or negative input") {
  BackwardConfig cfg;
  CHECK_THROWS_AS(build_stable_e_recip({1.0, 2.0}, cfg), value_error);
  CHECK_THROWS_AS(build_stable_e_recip({2.0, -1.0}, cfg), value_error);
}

TEST_CASE("svd_backward early returns") {
  const DenseMatrix a = random_matrix(4, 3, 9);
  const SvdFactors f = svd_full(a);
  BackwardConfig cfg;

  CHECK(frob_norm(svd_backward(f, UpstreamGrads{}, cfg)) == 0.0);

  UpstreamGrads only_s;
  only_s.g_s = std::vector<double>{0.3, -0.7, 1.1};
  const DenseMatrix ga = svd_backward(f, only_s, cfg);
  DenseMatrix core(3, 3);
  core(0, 0) = 0.3;
  core(1, 1) = -0.7;
  core(2, 2) = 1.1;
  CHECK(frob_dist(ga, matmul(matmul(f.u, core), f.vt)) < 1e-14);
}

TEST_CASE("svd_backward shape validation") {
  const SvdFactors f = svd_full(random_matrix(4, 3, 10));
  BackwardConfig cfg;
  UpstreamGrads g;
  g.g_u = DenseMatrix(3, 3);
  CHECK_THROWS_AS(svd_backward(f, g, cfg), shape_error);
}

TEST_CASE("svd_backward matches finite differences on a gapped 5x4 matrix") {
  const DenseMatrix a = matrix_with_spectrum(5, 4, {4.0, 3.0, 2.0, 1.0}, 1234);
  const LossSpec loss = full_loss(5, 4, 4, 77);
  BackwardConfig cfg;
  const GradCheckReport rep = grad_check(a, loss, cfg, 1e-5);
  CHECK(rep.all_finite);
  CHECK(rep.probe_count == 20);
  CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("grad_check across sizes and upstream channels") {
  BackwardConfig cfg;
  SUBCASE("sigma-sum only") {
    LossSpec loss;
    loss.sigma_weights = {1.0, -2.0, 0.5};
    const DenseMatrix a = matrix_with_spectrum(4, 3, {3.0, 1.7, 0.6}, 555);
    CHECK(grad_check(a, loss, cfg, 1e-5).max_rel_error < 1e-4);
  }
  SUBCASE("truncated-energy loss") {
    LossSpec loss;
    loss.trunc_k = 2;
    const DenseMatrix a = matrix_with_spectrum(5, 4, {2.5, 1.5, 0.9, 0.3}, 556);
    CHECK(grad_check(a, loss, cfg, 1e-5).max_rel_error < 1e-4);
  }
  SUBCASE("u-channel only, wide matrix") {
    LossSpec loss;
    DenseMatrix cu(3, 3);
    Pcg32 rng(42);
    for (double& v : cu.data()) v = rng.next_gaussian();
    loss.c_u = std::move(cu);
    const DenseMatrix a = matrix_with_spectrum(3, 5, {2.0, 1.2, 0.4}, 557);
    CHECK(grad_check(a, loss, cfg, 1e-5).max_rel_error < 1e-4);
  }
}

TEST_CASE("grad_check: tied spectrum stays finite") {
  const DenseMatrix a = matrix_with_spectrum(4, 4, {2.0, 2.0, 1.0, 0.5}, 808);
  const LossSpec loss = full_loss(4, 4, 4, 99);
  BackwardConfig cfg;
  const GradCheckReport rep = grad_check(a, loss, cfg, 1e-5, /*compare_values=*/false);
  CHECK(rep.all_finite);
}

TEST_CASE("grad_check: all-tiny spectrum obeys the rotation cap") {
  // Spectrum strictly below the clamp floor; only U/V channels active.
  // Every reciprocal takes the eps_grad cap so the whole gradient is
  // bounded by ‖g_upstream‖·eps_grad·σ_max with 10x slack.
  BackwardConfig cfg;
  const std::vector<double> s(4, 0.5 * cfg.eps_val);
  const DenseMatrix a = matrix_with_spectrum(4, 4, s, 909);
  LossSpec loss = full_loss(4, 4, 4, 100);
  loss.sigma_weights.clear();

  const GradCheckReport rep = grad_check(a, loss, cfg, 1e-9, /*compare_values=*/false);
  CHECK(rep.all_finite);

  double gnorm2 = 0.0;
  for (double v : loss.c_u->data()) gnorm2 += v * v;
  for (double v : loss.c_v->data()) gnorm2 += v * v;
  const double sigma_max = svd_full(a).s[0];
  CHECK(rep.max_grad_magnitude <= std::sqrt(gnorm2) * cfg.eps_grad * sigma_max * 10.0);
}

TEST_CASE("svd_backward finiteness on hostile spectra") {
  BackwardConfig cfg;
  Pcg32 rng(2718);
  const std::vector<std::vector<double>> spectra = {
      {1.0, 1.0, 1.0},
      {5.0, 1e-13, 1e-14},
      {0.0, 0.0, 0.0},
      {2.0, 2.0 - 1e-9, 1.0},
      {1e-12, 1e-12, 1e-12},
  };
  int case_id = 0;
  for (const auto& s : spectra) {
    const DenseMatrix a = matrix_with_spectrum(5, 3, s, 3000 + case_id);
    const SvdFactors f = svd_full(a);
    UpstreamGrads g;
    DenseMatrix gu(5, 3), gvt(3, 3);
    for (double& v : gu.data()) v = rng.next_gaussian();
    for (double& v : gvt.data()) v = rng.next_gaussian();
    std::vector<double> gs(3);
    for (double& v : gs) v = rng.next_gaussian();
    g.g_u = std::move(gu);
    g.g_vt = std::move(gvt);
    g.g_s = std::move(gs);
    const DenseMatrix ga = svd_backward(f, g, cfg);
    CHECK(ga.all_finite());
    ++case_id;
  }
}

TEST_CASE("e_recip triangles are negatives; rotation terms come out symmetric") {
  // The reciprocal matrix is antisymmetric off the diagonal, so its
  // Hadamard product with the (antisymmetric) skew factor is symmetric.
  // The finite-difference suite above is what certifies the signs.
  const DenseMatrix a = random_matrix(4, 4, 33);
  const SvdFactors f = svd_full(a);
  BackwardConfig cfg;
  const DenseMatrix e = build_stable_e_recip(f.s, cfg);
  for (idx i = 0; i < 4; ++i)
    for (idx j = 0; j < 4; ++j)
      if (i != j) CHECK(e(i, j) == -e(j, i));

  const DenseMatrix gu = random_matrix(4, 4, 34);
  const DenseMatrix omega =
      hadamard(scale(skew_part(matmul(transpose(f.u), gu)), 2.0), e);
  CHECK(frob_norm(sub(omega, transpose(omega))) < 1e-12);
}
