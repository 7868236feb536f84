#include <doctest.h>

#include <cmath>

#include "dobi/kernels.hpp"
#include "dobi/model.hpp"
#include "dobi/rng.hpp"

using namespace dobi;
using idx = dobi::index;

namespace {

// Naive reference evaluation with scalar loops, independent of the
// library's kernel path.
DenseMatrix naive_forward(const ToyModel& model, const DenseMatrix& x) {
  DenseMatrix h = x;
  for (const auto& l : model.layers) {
    DenseMatrix a(h.rows(), l.weight.cols());
    for (idx i = 0; i < h.rows(); ++i)
      for (idx j = 0; j < l.weight.cols(); ++j) {
        double acc = 0.0;
        for (idx k = 0; k < h.cols(); ++k) acc += h(i, k) * l.weight(k, j);
        a(i, j) = acc;
      }
    for (double& v : a.data()) {
      if (l.act == Activation::relu) v = v > 0.0 ? v : 0.0;
      if (l.act == Activation::tanh_act) v = std::tanh(v);
    }
    h = std::move(a);
  }
  return h;
}

}  // namespace

TEST_CASE("forward: identity model reproduces the input") {
  ToyModel m;
  m.input_dim = 4;
  m.output_dim = 4;
  m.layers.push_back({"id1", DenseMatrix::identity(4), Activation::identity, true});
  m.layers.push_back({"id2", DenseMatrix::identity(4), Activation::identity, true});
  Pcg32 rng(5);
  DenseMatrix x(6, 4);
  for (double& v : x.data()) v = rng.next_gaussian();
  CHECK(frob_dist(forward(m, x), x) == 0.0);
}

TEST_CASE("forward: single linear layer is exactly x*W") {
  ToyModel m;
  m.input_dim = 3;
  m.output_dim = 2;
  m.layers.push_back({"w", DenseMatrix{{1, 2}, {3, 4}, {5, 6}}, Activation::identity, true});
  const DenseMatrix x{{1, 0, 1}, {0, 2, 0}};
  const DenseMatrix y = forward(m, x);
  CHECK(y(0, 0) == 6.0);
  CHECK(y(0, 1) == 8.0);
  CHECK(y(1, 0) == 6.0);
  CHECK(y(1, 1) == 8.0);
}

TEST_CASE("forward matches the naive evaluator digit for digit") {
  const ToyModel m = make_teacher_student_mlp(31);
  const Dataset ds = make_dataset(DatasetKind::teacher_student_regression, 31, 3);
  for (const auto& s : ds.samples) {
    const DenseMatrix a = forward(m, s.input);
    const DenseMatrix b = naive_forward(m, s.input);
    for (idx i = 0; i < a.size(); ++i)
      CHECK(a.data()[static_cast<std::size_t>(i)] == b.data()[static_cast<std::size_t>(i)]);
  }
}

TEST_CASE("dataset generation is bitwise deterministic") {
  const Dataset a = make_dataset(DatasetKind::char_lm, 99, 8);
  const Dataset b = make_dataset(DatasetKind::char_lm, 99, 8);
  REQUIRE(a.samples.size() == b.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(a.samples[i].classes == b.samples[i].classes);
    for (idx j = 0; j < a.samples[i].input.size(); ++j)
      CHECK(a.samples[i].input.data()[static_cast<std::size_t>(j)] ==
            b.samples[i].input.data()[static_cast<std::size_t>(j)]);
  }
  const Dataset c = make_dataset(DatasetKind::char_lm, 100, 8);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.samples.size(); ++i)
    any_diff = any_diff || a.samples[i].classes != c.samples[i].classes;
  CHECK(any_diff);
}

TEST_CASE("rows stay at least as large as every feature dimension") {
  const Dataset reg = make_dataset(DatasetKind::teacher_student_regression, 1, 2);
  CHECK(reg.rows >= 32);
  const Dataset lm = make_dataset(DatasetKind::char_lm, 1, 2);
  CHECK(lm.rows >= 24);
}

TEST_CASE("task_loss basics") {
  Sample s;
  s.target = DenseMatrix{{1, 2}, {3, 4}};
  CHECK(task_loss_output(s.target, s, DatasetKind::teacher_student_regression) == 0.0);

  // Uniform logits over 16 symbols -> perplexity 16.
  Sample lm;
  lm.classes = {3, 7};
  const DenseMatrix logits(2, 16, 0.25);
  const double ce = task_loss_output(logits, lm, DatasetKind::char_lm);
  CHECK(perplexity_from_loss(ce) == doctest::Approx(16.0).epsilon(1e-12));
}

TEST_CASE("task_loss matches a scalar-loop oracle on a seeded case") {
  const ToyModel m = make_char_lm(11);
  const Dataset ds = make_dataset(DatasetKind::char_lm, 11, 2);
  const Sample& s = ds.samples[0];
  const DenseMatrix out = forward(m, s.input);
  double ce = 0.0;
  for (idx r = 0; r < out.rows(); ++r) {
    double z = 0.0;
    for (idx j = 0; j < out.cols(); ++j) z += std::exp(out(r, j));
    ce += std::log(z) - out(r, static_cast<idx>(s.classes[static_cast<std::size_t>(r)]));
  }
  ce /= static_cast<double>(out.rows());
  CHECK(task_loss_output(out, s, ds.kind) == doctest::Approx(ce).epsilon(1e-12));
}

TEST_CASE("char_lm model fits its grammar near the entropy floor") {
  const ToyModel m = make_char_lm(7);
  const Dataset ds = make_dataset(DatasetKind::char_lm, 7, 32);
  const double ce = eval_dense(m, ds);
  // Grammar entropy is ~1.39 nats; the analytic weights land close.
  CHECK(ce < 1.6);
  CHECK(perplexity_from_loss(ce) < 5.0);
}

TEST_CASE("forward modes: factored full rank equals dense") {
  const ToyModel m = make_char_lm(3);
  const Dataset ds = make_dataset(DatasetKind::char_lm, 3, 4);
  const IntAllocation full = full_rank_allocation(m);
  const FactoredModel fm = factorize_exact(m, full);
  for (const auto& s : ds.samples) {
    const DenseMatrix d = forward(m, s.input);
    const DenseMatrix f = forward_factored(fm, s.input);
    CHECK(frob_dist(d, f) / (frob_norm(d) + 1e-30) < 1e-6);
  }
}

TEST_CASE("forward modes: hard truncation at k=0 suppresses activations") {
  ToyModel m;
  m.input_dim = 4;
  m.output_dim = 4;
  m.layers.push_back({"w", DenseMatrix::identity(4), Activation::identity, true});
  IntAllocation alloc;
  alloc.entries.push_back({"w", 0, 4, 4});
  Pcg32 rng(9);
  DenseMatrix x(5, 4);
  for (double& v : x.data()) v = rng.next_gaussian();
  CHECK(frob_norm(forward_hard(m, x, alloc)) == 0.0);
}

TEST_CASE("forward modes: hard truncation at full rank equals dense") {
  const ToyModel m = make_teacher_student_mlp(17);
  const Dataset ds = make_dataset(DatasetKind::teacher_student_regression, 17, 3);
  const IntAllocation full = full_rank_allocation(m);
  for (const auto& s : ds.samples) {
    const DenseMatrix d = forward(m, s.input);
    const DenseMatrix h = forward_hard(m, s.input, full);
    CHECK(frob_dist(d, h) / frob_norm(d) < 1e-10);
  }
}

TEST_CASE("forward modes: smooth at half-index positions equals hard") {
  const ToyModel m = make_char_lm(5);
  const Dataset ds = make_dataset(DatasetKind::char_lm, 5, 3);
  IntAllocation hard = full_rank_allocation(m);
  for (auto& e : hard.entries) e.k = std::min(e.m, e.n) / 2;
  RankAllocation smooth;
  for (const auto& e : hard.entries)
    smooth.entries.push_back({e.layer,
                              SmoothTruncation{static_cast<double>(e.k) + 0.5, 50.0}, e.m, e.n});
  for (const auto& s : ds.samples) {
    const DenseMatrix a = forward_smooth(m, s.input, smooth);
    const DenseMatrix b = forward_hard(m, s.input, hard);
    CHECK(frob_dist(a, b) / (frob_norm(b) + 1e-30) < 1e-6);
  }
}

TEST_CASE("mode errors: missing allocation entries are rejected") {
  const ToyModel m = make_char_lm(5);
  IntAllocation partial;
  partial.entries.push_back({"block1.in", 8, 16, 24});
  Pcg32 rng(1);
  DenseMatrix x(32, 16);
  for (double& v : x.data()) v = rng.next_gaussian();
  CHECK_THROWS_AS(forward_hard(m, x, partial), shape_error);
}

TEST_CASE("compare_truncation_modes favors activation truncation") {
  const ToyModel m = make_char_lm(21);
  const Dataset ds = make_dataset(DatasetKind::char_lm, 21, 24);

  SUBCASE("full rank: both modes tie with dense") {
    const TruncationComparison cmp =
        compare_truncation_modes(m, ds, full_rank_allocation(m));
    CHECK(cmp.activation_loss == doctest::Approx(cmp.dense_loss).epsilon(1e-9));
    CHECK(cmp.weight_loss == doctest::Approx(cmp.dense_loss).epsilon(1e-9));
  }

  SUBCASE("ratio 0.6 ordering and per-layer sweep") {
    const IntAllocation alloc = uniform_allocation(m, 0.6, RatioCounting::remapped);
    const TruncationComparison cmp = compare_truncation_modes(m, ds, alloc);
    CHECK(cmp.activation_loss < cmp.weight_loss);
    CHECK(cmp.activation_no_worse);
    CHECK(cmp.sweep.size() == 12);  // 4 layers x 3 probes
    for (const auto& row : cmp.sweep) CHECK(row.activation_loss <= row.weight_loss);
  }
}
