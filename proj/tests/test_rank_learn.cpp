#include <doctest.h>

#include <cmath>

#include "dobi/kernels.hpp"
#include "dobi/rng.hpp"
#include "dobi/rank_learn.hpp"

using namespace dobi;
using idx = dobi::index;

namespace {

DenseMatrix random_matrix(idx rows, idx cols, std::uint64_t seed) {
  Pcg32 rng(seed);
  DenseMatrix m(rows, cols);
  for (double& v : m.data()) v = rng.next_gaussian();
  return m;
}

}  // namespace

TEST_CASE("smooth_mask pinned values") {
  SUBCASE("midpoint: i == k gives half weight") {
    SmoothTruncation t{2.0, 10.0};
    const auto out = smooth_mask({3.0, 2.0}, t);  // index 2 holds sigma=2
    CHECK(out[1] == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("well inside the kept region") {
    SmoothTruncation t{3.0, 10.0};
    const auto out = smooth_mask({9.9, 2.0, 1.0}, t);
    CHECK(out[1] == doctest::Approx(2.0).epsilon(1e-7));
    CHECK(2.0 - out[1] < 2e-8);
  }
  SUBCASE("half an index past the cut") {
    SmoothTruncation t{2.5, 10.0};
    const auto out = smooth_mask({5.0, 2.0, 1.0}, t);
    CHECK(out[2] == doctest::Approx(0.5 * (1.0 + std::tanh(-5.0))).epsilon(1e-10));
    CHECK(out[2] == doctest::Approx(4.5398e-5).epsilon(1e-3));
  }
}

TEST_CASE("smooth_mask monotonicity in k and order preservation") {
  const std::vector<double> s{5.0, 3.0, 1.5, 0.2};
  double prev_total = -1.0;
  for (double k = 0.0; k <= 4.0; k += 0.25) {
    const auto out = smooth_mask(s, SmoothTruncation{k, 10.0});
    for (std::size_t i = 0; i + 1 < out.size(); ++i) CHECK(out[i] >= out[i + 1]);
    double total = 0.0;
    for (double v : out) total += v;
    CHECK(total >= prev_total);
    prev_total = total;
  }
}

TEST_CASE("smooth_mask_dk matches finite differences") {
  const std::vector<double> s{4.0, 2.0, 1.0};
  const double h = 1e-6;
  for (double k : {0.5, 1.0, 2.3, 2.9}) {
    const auto d = smooth_mask_dk(s, SmoothTruncation{k, 10.0});
    const auto up = smooth_mask(s, SmoothTruncation{k + h, 10.0});
    const auto dn = smooth_mask(s, SmoothTruncation{k - h, 10.0});
    for (std::size_t i = 0; i < s.size(); ++i)
      CHECK(d[i] == doctest::Approx((up[i] - dn[i]) / (2 * h)).epsilon(1e-5));
  }
}

TEST_CASE("truncate_activation limits") {
  SUBCASE("k at full rank keeps everything but the tail index") {
    // Last singular value engineered to be negligible so the half-weight
    // midpoint at i = k cannot show.
    DenseMatrix a = random_matrix(6, 4, 21);
    SvdFactors f = svd_full(a);
    f.s[3] = 1e-9;
    a = svd_reconstruct(f);
    const DenseMatrix out = truncate_activation(a, SmoothTruncation{4.0, 50.0});
    CHECK(frob_dist(out, a) / frob_norm(a) < 1e-6);
  }
  SUBCASE("k = 0 suppresses all modes") {
    const DenseMatrix a = random_matrix(6, 4, 22);
    const DenseMatrix out = truncate_activation(a, SmoothTruncation{0.0, 50.0});
    CHECK(frob_norm(out) / frob_norm(a) < 1e-4);
  }
  SUBCASE("half-index positions reproduce hard truncation at large beta") {
    const DenseMatrix a = random_matrix(6, 4, 23);
    const SvdFactors f = svd_full(a);
    for (idx k = 1; k < 4; ++k) {
      const DenseMatrix smooth = truncate_activation(a, SmoothTruncation{k + 0.5, 50.0});
      const DenseMatrix hard = truncated_reconstruct(f, k);
      CHECK(frob_dist(smooth, hard) / frob_norm(hard) < 1e-8);
    }
  }
}

TEST_CASE("ratio formulas") {
  CHECK(ratio_traditional(4096, 4096, 2048) == doctest::Approx(1.0));
  CHECK(ratio_traditional(4, 4, 1) == doctest::Approx(0.5));
  CHECK(ratio_traditional(6, 4, 2) == doctest::Approx(20.0 / 24.0));

  CHECK(ratio_remapped(4096, 4096, 2048) == doctest::Approx(0.5));
  CHECK(ratio_remapped(6, 4, 4) == doctest::Approx(1.0));

  CHECK_THROWS_AS(ratio_remapped(4, 4, 5.0), value_error);
  CHECK_THROWS_AS(ratio_traditional(4, 4, -1.0), value_error);
}

TEST_CASE("remapped ratio is a bijection on integer k") {
  for (idx m : {4, 6, 17, 33}) {
    for (idx n : {3, 6, 21}) {
      double prev = -1.0;
      for (idx k = 0; k <= std::min(m, n); ++k) {
        const double r = ratio_remapped(m, n, static_cast<double>(k));
        CHECK(r > prev);
        prev = r;
        CHECK(invert_ratio_remapped(m, n, r) == k);
      }
    }
  }
}

TEST_CASE("model_ratio aggregates layer costs") {
  RankAllocation alloc;
  alloc.entries.push_back({"a", SmoothTruncation{2.0, 10.0}, 4, 4});
  alloc.entries.push_back({"b", SmoothTruncation{3.0, 10.0}, 4, 4});
  CHECK(model_ratio(alloc) == doctest::Approx(0.625));

  for (auto& e : alloc.entries) e.trunc.k = 4.0;
  CHECK(model_ratio(alloc) == doctest::Approx(1.0));
  for (auto& e : alloc.entries) e.trunc.k = 0.0;
  CHECK(model_ratio(alloc) == doctest::Approx(0.0));
}

TEST_CASE("multi_objective_loss composition") {
  RankAllocation alloc;
  alloc.entries.push_back({"a", SmoothTruncation{2.0, 10.0}, 4, 4});

  CompressionTarget tgt{0.5, 1.0};
  const LossBreakdown hit = multi_objective_loss(0.37, alloc, tgt);
  CHECK(hit.penalty == doctest::Approx(0.0));
  CHECK(hit.total == doctest::Approx(0.37));

  CompressionTarget tgt2{0.6, 1.0};
  const LossBreakdown b = multi_objective_loss(0.0, alloc, tgt2);
  CHECK(b.penalty == doctest::Approx(0.1));
  CHECK(b.total == doctest::Approx(0.1));

  // Symmetric penalty.
  CompressionTarget lo{0.45, 1.0}, hi{0.55, 1.0};
  CHECK(multi_objective_loss(0.0, alloc, lo).penalty ==
        doctest::Approx(multi_objective_loss(0.0, alloc, hi).penalty));
}

TEST_CASE("penalty pull drives the ratio to the target") {
  RankAllocation alloc;
  alloc.entries.push_back({"a", SmoothTruncation{8.0, 10.0}, 8, 8});
  alloc.entries.push_back({"b", SmoothTruncation{8.0, 10.0}, 8, 16});
  CompressionTarget tgt{0.6, 10.0};

  AdamOptimizer opt;
  opt.lr = 0.1;
  std::vector<double> k{8.0, 8.0};
  for (int step = 0; step < 200; ++step) {
    for (std::size_t i = 0; i < k.size(); ++i) alloc.entries[i].trunc.k = k[i];
    const auto g = penalty_grad(alloc, tgt);
    opt.step(k, g);
    for (std::size_t i = 0; i < k.size(); ++i) {
      const auto& e = alloc.entries[i];
      k[i] = std::clamp(k[i], 0.0, static_cast<double>(std::min(e.m, e.n)));
    }
  }
  for (std::size_t i = 0; i < k.size(); ++i) alloc.entries[i].trunc.k = k[i];
  CHECK(std::abs(model_ratio(alloc) - 0.6) < 1e-3);
}

TEST_CASE("round_ranks") {
  SUBCASE("integers pass through") {
    RankAllocation alloc;
    alloc.entries.push_back({"a", SmoothTruncation{2.0, 10.0}, 4, 4});
    alloc.entries.push_back({"b", SmoothTruncation{3.0, 10.0}, 4, 4});
    const IntAllocation r = round_ranks(alloc, CompressionTarget{0.625, 10.0});
    CHECK(r.entries[0].k == 2);
    CHECK(r.entries[1].k == 3);
  }
  SUBCASE("nearest integer then ratio repair") {
    RankAllocation alloc;
    alloc.entries.push_back({"a", SmoothTruncation{2.4, 10.0}, 4, 4});
    alloc.entries.push_back({"b", SmoothTruncation{2.6, 10.0}, 4, 4});
    const IntAllocation r = round_ranks(alloc, CompressionTarget{0.625, 10.0});
    CHECK(r.entries[0].k == 2);
    CHECK(r.entries[1].k == 3);
  }
  SUBCASE("granularity bound on random allocations") {
    // Targets stay above the k >= 1 floor so the one-step bound applies.
    Pcg32 rng(99);
    for (int trial = 0; trial < 50; ++trial) {
      RankAllocation alloc;
      double dense = 0.0, coarsest = 0.0;
      for (int l = 0; l < 4; ++l) {
        const idx m = 4 + static_cast<idx>(rng.next_u32() % 9);
        const idx n = 4 + static_cast<idx>(rng.next_u32() % 9);
        const double k = rng.next_double() * static_cast<double>(std::min(m, n));
        alloc.entries.push_back({"l" + std::to_string(l), SmoothTruncation{k, 10.0}, m, n});
        dense += static_cast<double>(m * n);
        coarsest = std::max(coarsest, static_cast<double>(std::max(m, n)));
      }
      const double target = 0.4 + 0.5 * rng.next_double();
      const IntAllocation r = round_ranks(alloc, CompressionTarget{target, 10.0});
      CHECK(std::abs(model_ratio(r) - target) <= coarsest / dense + 1e-12);
    }
  }
}

TEST_CASE("allocation json round trip") {
  RankAllocation alloc;
  alloc.entries.push_back({"fc1", SmoothTruncation{2.25, 10.0}, 16, 32});
  alloc.entries.push_back({"fc2", SmoothTruncation{7.5, 10.0}, 32, 8});
  const RankAllocation back = allocation_from_json(allocation_to_json(alloc));
  REQUIRE(back.entries.size() == 2);
  CHECK(back.entries[0].layer == "fc1");
  CHECK(back.entries[0].trunc.k == 2.25);
  CHECK(back.entries[1].m == 32);
}
