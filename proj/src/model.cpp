#include "dobi/model.hpp"

#include <algorithm>
#include <cmath>

#include "dobi/kernels.hpp"
#include "dobi/rng.hpp"

namespace dobi {

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::tanh_act: return "tanh";
  }
  throw value_error("activation_name: unknown enum value");
}

Activation activation_from_name(const std::string& name) {
  if (name == "identity") return Activation::identity;
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh_act;
  throw value_error("unknown activation: " + name);
}

void ToyModel::validate() const {
  if (layers.empty()) throw shape_error("ToyModel: no layers");
  if (layers.front().weight.rows() != input_dim)
    throw shape_error("ToyModel: first layer does not match input_dim");
  for (std::size_t i = 0; i + 1 < layers.size(); ++i)
    if (layers[i].weight.cols() != layers[i + 1].weight.rows())
      throw shape_error("ToyModel: dimension chain broken at layer " + layers[i].name);
  if (layers.back().weight.cols() != output_dim)
    throw shape_error("ToyModel: last layer does not match output_dim");
  for (std::size_t i = 0; i < layers.size(); ++i)
    for (std::size_t j = i + 1; j < layers.size(); ++j)
      if (layers[i].name == layers[j].name)
        throw value_error("ToyModel: duplicate layer name " + layers[i].name);
}

std::vector<const LayerSpec*> ToyModel::compressible_layers() const {
  std::vector<const LayerSpec*> out;
  for (const auto& l : layers)
    if (l.compressible) out.push_back(&l);
  return out;
}

namespace {

double round_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

DenseMatrix seeded_gaussian(index rows, index cols, Pcg32& rng, double scale) {
  DenseMatrix w(rows, cols);
  for (double& x : w.data()) x = round_f32(scale * rng.next_gaussian());
  return w;
}

double apply_act(Activation a, double v) {
  switch (a) {
    case Activation::identity: return v;
    case Activation::relu: return v > 0.0 ? v : 0.0;
    case Activation::tanh_act: return std::tanh(v);
  }
  return v;
}

DenseMatrix apply_act(Activation a, const DenseMatrix& m) {
  if (a == Activation::identity) return m;
  DenseMatrix r = m;
  for (double& v : r.data()) v = apply_act(a, v);
  return r;
}

}  // namespace

ToyModel make_teacher_student_mlp(std::uint64_t seed) {
  Pcg32 rng(seed, 0x6d6c70ULL);  // "mlp" stream
  ToyModel m;
  m.input_dim = 16;
  m.output_dim = 8;
  const index dims[] = {16, 32, 32, 8};
  const Activation acts[] = {Activation::tanh_act, Activation::tanh_act, Activation::identity};
  for (int i = 0; i < 3; ++i) {
    LayerSpec l;
    l.name = "fc" + std::to_string(i + 1);
    l.weight = seeded_gaussian(dims[i], dims[i + 1], rng, 1.0 / std::sqrt(static_cast<double>(dims[i])));
    l.act = acts[i];
    l.compressible = true;
    m.layers.push_back(std::move(l));
  }
  m.validate();
  return m;
}

namespace {

constexpr index kVocab = 16;
constexpr index kLmHidden = 24;

// Peaked first-order transition table for the synthetic grammar: three
// preferred successors per symbol, remaining mass spread uniformly.
std::vector<std::vector<double>> grammar_transitions(std::uint64_t seed) {
  Pcg32 rng(seed, 0x6772616dULL);  // "gram" stream
  std::vector<std::vector<double>> p(kVocab, std::vector<double>(kVocab, 0.0));
  for (index i = 0; i < kVocab; ++i) {
    const index a = static_cast<index>(rng.next_u32() % kVocab);
    index b = static_cast<index>(rng.next_u32() % kVocab);
    while (b == a) b = static_cast<index>(rng.next_u32() % kVocab);
    index c = static_cast<index>(rng.next_u32() % kVocab);
    while (c == a || c == b) c = static_cast<index>(rng.next_u32() % kVocab);
    const double rest = 0.10 / static_cast<double>(kVocab - 3);
    for (index j = 0; j < kVocab; ++j) p[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = rest;
    p[static_cast<std::size_t>(i)][static_cast<std::size_t>(a)] = 0.55;
    p[static_cast<std::size_t>(i)][static_cast<std::size_t>(b)] = 0.25;
    p[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] = 0.10;
  }
  return p;
}

}  // namespace

ToyModel make_char_lm(std::uint64_t seed) {
  const auto p = grammar_transitions(seed);

  // Bigram log-probabilities, the ideal logit table for this grammar.
  DenseMatrix logp(kVocab, kVocab);
  for (index i = 0; i < kVocab; ++i)
    for (index j = 0; j < kVocab; ++j)
      logp(i, j) = std::log(p[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);

  // Realize logits ≈ x·logp through tanh blocks kept in their linear
  // regime: block1 carries alpha·logp and rescales by 1/alpha, block2 is
  // a near-identity passthrough. Small seeded noise keeps every spectrum
  // generic.
  Pcg32 rng(seed, 0x6c6dULL);  // "lm" stream
  const double alpha = 0.05, beta = 0.08, noise = 0.01;

  ToyModel m;
  m.input_dim = kVocab;
  m.output_dim = kVocab;

  LayerSpec l1;
  l1.name = "block1.in";
  l1.weight = DenseMatrix(kVocab, kLmHidden);
  for (index i = 0; i < kVocab; ++i)
    for (index j = 0; j < kLmHidden; ++j) {
      const double base = (j < kVocab) ? alpha * logp(i, j) : 0.0;
      l1.weight(i, j) = round_f32(base + noise * alpha * rng.next_gaussian());
    }
  l1.act = Activation::tanh_act;

  LayerSpec l2;
  l2.name = "block1.out";
  l2.weight = DenseMatrix(kLmHidden, kVocab);
  for (index i = 0; i < kLmHidden; ++i)
    for (index j = 0; j < kVocab; ++j) {
      const double base = (i == j) ? beta : 0.0;
      l2.weight(i, j) = round_f32(base + noise * beta * rng.next_gaussian());
    }
  l2.act = Activation::identity;

  LayerSpec l3;
  l3.name = "block2.in";
  l3.weight = DenseMatrix(kVocab, kLmHidden);
  for (index i = 0; i < kVocab; ++i)
    for (index j = 0; j < kLmHidden; ++j) {
      const double base = (i == j) ? beta : 0.0;
      l3.weight(i, j) = round_f32(base + noise * beta * rng.next_gaussian());
    }
  l3.act = Activation::tanh_act;

  LayerSpec l4;
  l4.name = "block2.out";
  l4.weight = DenseMatrix(kLmHidden, kVocab);
  const double gain = 1.0 / (alpha * beta * beta);
  for (index i = 0; i < kLmHidden; ++i)
    for (index j = 0; j < kVocab; ++j) {
      const double base = (i == j) ? gain : 0.0;
      l4.weight(i, j) = round_f32(base + noise * rng.next_gaussian());
    }
  l4.act = Activation::identity;

  m.layers = {std::move(l1), std::move(l2), std::move(l3), std::move(l4)};
  m.validate();
  return m;
}

ToyModel make_random_model(const std::vector<index>& dims, Activation act, std::uint64_t seed) {
  if (dims.size() < 2) throw value_error("make_random_model: need at least two dims");
  Pcg32 rng(seed, 0x72616e64ULL);
  ToyModel m;
  m.input_dim = dims.front();
  m.output_dim = dims.back();
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    LayerSpec l;
    l.name = "layer" + std::to_string(i + 1);
    l.weight = seeded_gaussian(dims[i], dims[i + 1], rng, 1.0 / std::sqrt(static_cast<double>(dims[i])));
    l.act = (i + 2 < dims.size()) ? act : Activation::identity;
    l.compressible = true;
    m.layers.push_back(std::move(l));
  }
  m.validate();
  return m;
}

std::string dataset_kind_name(DatasetKind k) {
  return k == DatasetKind::teacher_student_regression ? "teacher_student_regression" : "char_lm";
}

DatasetKind dataset_kind_from_name(const std::string& name) {
  if (name == "teacher_student_regression") return DatasetKind::teacher_student_regression;
  if (name == "char_lm") return DatasetKind::char_lm;
  throw value_error("unknown dataset kind: " + name);
}

Dataset make_dataset(DatasetKind kind, std::uint64_t seed, index count, index rows) {
  if (count < 1) throw value_error("make_dataset: count must be >= 1");
  Dataset ds;
  ds.kind = kind;
  ds.seed = seed;

  if (kind == DatasetKind::teacher_student_regression) {
    ds.rows = rows > 0 ? rows : 40;
    const ToyModel teacher = make_teacher_student_mlp(seed);
    Pcg32 rng(seed, 0x64617461ULL);  // "data" stream
    for (index s = 0; s < count; ++s) {
      Sample sm;
      sm.input = DenseMatrix(ds.rows, teacher.input_dim);
      for (double& v : sm.input.data()) v = round_f32(rng.next_gaussian());
      DenseMatrix out = forward(teacher, sm.input);
      for (double& v : out.data()) v = round_f32(v);
      sm.target = std::move(out);
      ds.samples.push_back(std::move(sm));
    }
    return ds;
  }

  ds.rows = rows > 0 ? rows : 32;
  const auto p = grammar_transitions(seed);
  Pcg32 rng(seed, 0x64617461ULL);
  for (index s = 0; s < count; ++s) {
    std::vector<int> tokens(static_cast<std::size_t>(ds.rows + 1));
    tokens[0] = static_cast<int>(rng.next_u32() % kVocab);
    for (index t = 1; t <= ds.rows; ++t) {
      const auto& row = p[static_cast<std::size_t>(tokens[static_cast<std::size_t>(t - 1)])];
      double u = rng.next_double();
      int next = kVocab - 1;
      for (index j = 0; j < kVocab; ++j) {
        u -= row[static_cast<std::size_t>(j)];
        if (u < 0.0) {
          next = static_cast<int>(j);
          break;
        }
      }
      tokens[static_cast<std::size_t>(t)] = next;
    }
    Sample sm;
    sm.input = DenseMatrix(ds.rows, kVocab);
    for (index t = 0; t < ds.rows; ++t) sm.input(t, tokens[static_cast<std::size_t>(t)]) = 1.0;
    sm.classes.assign(tokens.begin() + 1, tokens.end());
    ds.samples.push_back(std::move(sm));
  }
  return ds;
}

DenseMatrix forward(const ToyModel& model, const DenseMatrix& x,
                    std::vector<DenseMatrix>* linear_outputs) {
  if (x.cols() != model.input_dim) throw shape_error("forward: input dim mismatch");
  DenseMatrix h = x;
  if (linear_outputs) linear_outputs->clear();
  for (const auto& l : model.layers) {
    DenseMatrix a = matmul(h, l.weight);
    if (linear_outputs) linear_outputs->push_back(a);
    h = apply_act(l.act, a);
  }
  return h;
}

namespace {

template <typename TruncFn>
DenseMatrix forward_truncated(const ToyModel& model, const DenseMatrix& x, TruncFn&& trunc) {
  if (x.cols() != model.input_dim) throw shape_error("forward: input dim mismatch");
  DenseMatrix h = x;
  std::size_t slot = 0;
  for (const auto& l : model.layers) {
    DenseMatrix a = matmul(h, l.weight);
    if (l.compressible) {
      a = trunc(slot, a);
      ++slot;
    }
    h = apply_act(l.act, a);
  }
  return h;
}

template <typename Alloc>
void require_alloc_matches(const ToyModel& model, const Alloc& alloc) {
  const auto comp = model.compressible_layers();
  if (comp.size() != alloc.entries.size())
    throw shape_error("allocation does not cover the compressible layers");
  for (std::size_t i = 0; i < comp.size(); ++i)
    if (comp[i]->name != alloc.entries[i].layer)
      throw shape_error("allocation layer order mismatch: " + alloc.entries[i].layer);
}

}  // namespace

DenseMatrix forward_smooth(const ToyModel& model, const DenseMatrix& x,
                           const RankAllocation& alloc) {
  require_alloc_matches(model, alloc);
  return forward_truncated(model, x, [&](std::size_t slot, const DenseMatrix& a) {
    return truncate_activation(a, alloc.entries[slot].trunc);
  });
}

DenseMatrix forward_hard(const ToyModel& model, const DenseMatrix& x, const IntAllocation& alloc) {
  require_alloc_matches(model, alloc);
  return forward_truncated(model, x, [&](std::size_t slot, const DenseMatrix& a) {
    const index k = alloc.entries[slot].k;
    if (k >= std::min(a.rows(), a.cols())) return a;
    return truncated_reconstruct(svd_full(a), k);
  });
}

DenseMatrix forward_factored(const FactoredModel& fm, const DenseMatrix& x) {
  if (x.cols() != fm.base.input_dim) throw shape_error("forward_factored: input dim mismatch");
  if (fm.factors.size() != fm.base.layers.size())
    throw shape_error("forward_factored: factor list misaligned");
  DenseMatrix h = x;
  for (std::size_t i = 0; i < fm.base.layers.size(); ++i) {
    const auto& l = fm.base.layers[i];
    DenseMatrix a = fm.factors[i]
                        ? matmul(matmul(h, fm.factors[i]->w1), fm.factors[i]->w2)
                        : matmul(h, l.weight);
    h = apply_act(l.act, a);
  }
  return h;
}

FactoredModel factorize_exact(const ToyModel& model, const IntAllocation& alloc) {
  require_alloc_matches(model, alloc);
  FactoredModel fm;
  fm.base = model;
  fm.factors.assign(model.layers.size(), std::nullopt);
  std::size_t slot = 0;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    if (!model.layers[i].compressible) continue;
    const index k = alloc.entries[slot].k;
    ++slot;
    const SvdFactors f = svd_full(model.layers[i].weight);
    const index kk = std::min<index>(k, f.q());
    FactoredLayer fl;
    fl.w1 = DenseMatrix(f.u.rows(), kk);
    for (index r = 0; r < f.u.rows(); ++r)
      for (index c = 0; c < kk; ++c) fl.w1(r, c) = f.u(r, c) * f.s[static_cast<std::size_t>(c)];
    fl.w2 = DenseMatrix(kk, f.vt.cols());
    for (index r = 0; r < kk; ++r)
      for (index c = 0; c < f.vt.cols(); ++c) fl.w2(r, c) = f.vt(r, c);
    fm.factors[i] = std::move(fl);
  }
  return fm;
}

ToyModel truncate_weights_model(const ToyModel& model, const IntAllocation& alloc) {
  require_alloc_matches(model, alloc);
  ToyModel out = model;
  std::size_t slot = 0;
  for (auto& l : out.layers) {
    if (!l.compressible) continue;
    const index k = alloc.entries[slot].k;
    ++slot;
    if (k < std::min(l.weight.rows(), l.weight.cols()))
      l.weight = truncated_reconstruct(svd_full(l.weight), k);
  }
  return out;
}

double task_loss_output(const DenseMatrix& out, const Sample& s, DatasetKind kind) {
  if (kind == DatasetKind::teacher_student_regression) {
    if (out.rows() != s.target.rows() || out.cols() != s.target.cols())
      throw shape_error("task_loss_output: target shape mismatch");
    double acc = 0.0;
    for (index i = 0; i < out.size(); ++i) {
      const double d = out.data()[static_cast<std::size_t>(i)] - s.target.data()[static_cast<std::size_t>(i)];
      acc += d * d;
    }
    return acc / static_cast<double>(out.size());
  }

  if (static_cast<index>(s.classes.size()) != out.rows())
    throw shape_error("task_loss_output: class count mismatch");
  double ce = 0.0;
  for (index r = 0; r < out.rows(); ++r) {
    double mx = out(r, 0);
    for (index j = 1; j < out.cols(); ++j) mx = std::max(mx, out(r, j));
    double z = 0.0;
    for (index j = 0; j < out.cols(); ++j) z += std::exp(out(r, j) - mx);
    const double logit = out(r, static_cast<index>(s.classes[static_cast<std::size_t>(r)]));
    ce += std::log(z) + mx - logit;
  }
  return ce / static_cast<double>(out.rows());
}

double perplexity_from_loss(double mean_ce) { return std::exp(mean_ce); }

namespace {

template <typename Fwd>
double mean_loss(const Dataset& ds, Fwd&& fwd) {
  const index n = static_cast<index>(ds.samples.size());
  std::vector<double> per(static_cast<std::size_t>(n), 0.0);
#pragma omp parallel for schedule(dynamic)
  for (index i = 0; i < n; ++i) {
    const Sample& s = ds.samples[static_cast<std::size_t>(i)];
    per[static_cast<std::size_t>(i)] = task_loss_output(fwd(s.input), s, ds.kind);
  }
  double acc = 0.0;
  for (double v : per) acc += v;  // fixed order; independent of thread count
  return acc / static_cast<double>(n);
}

}  // namespace

double eval_dense(const ToyModel& model, const Dataset& ds) {
  return mean_loss(ds, [&](const DenseMatrix& x) { return forward(model, x); });
}

double eval_smooth(const ToyModel& model, const Dataset& ds, const RankAllocation& alloc) {
  return mean_loss(ds, [&](const DenseMatrix& x) { return forward_smooth(model, x, alloc); });
}

double eval_hard(const ToyModel& model, const Dataset& ds, const IntAllocation& alloc) {
  return mean_loss(ds, [&](const DenseMatrix& x) { return forward_hard(model, x, alloc); });
}

double eval_factored(const FactoredModel& fm, const Dataset& ds) {
  return mean_loss(ds, [&](const DenseMatrix& x) { return forward_factored(fm, x); });
}

TruncationComparison compare_truncation_modes(const ToyModel& model, const Dataset& ds,
                                              const IntAllocation& alloc) {
  require_alloc_matches(model, alloc);
  TruncationComparison cmp;
  cmp.dense_loss = eval_dense(model, ds);
  cmp.activation_loss = eval_hard(model, ds, alloc);
  cmp.weight_loss = eval_dense(truncate_weights_model(model, alloc), ds);
  cmp.activation_no_worse = cmp.activation_loss <= cmp.weight_loss;

  for (std::size_t target_slot = 0; target_slot < alloc.entries.size(); ++target_slot) {
    const auto& e = alloc.entries[target_slot];
    const index kmin = std::min(e.m, e.n);
    for (double frac : {0.25, 0.50, 0.75}) {
      IntAllocation single = full_rank_allocation(model);
      const index k = std::max<index>(1, static_cast<index>(std::llround(frac * static_cast<double>(kmin))));
      single.entries[target_slot].k = k;
      SweepRow row;
      row.layer = e.layer;
      row.k = k;
      row.activation_loss = eval_hard(model, ds, single);
      row.weight_loss = eval_dense(truncate_weights_model(model, single), ds);
      cmp.sweep.push_back(std::move(row));
    }
  }
  return cmp;
}

IntAllocation full_rank_allocation(const ToyModel& model) {
  IntAllocation a;
  for (const auto* l : model.compressible_layers())
    a.entries.push_back(IntRankEntry{l->name, std::min(l->weight.rows(), l->weight.cols()),
                                     l->weight.rows(), l->weight.cols()});
  return a;
}

IntAllocation uniform_allocation(const ToyModel& model, double r, RatioCounting counting) {
  IntAllocation a;
  for (const auto* l : model.compressible_layers()) {
    const index m = l->weight.rows(), n = l->weight.cols();
    const index kmin = std::min(m, n);
    const double denom = counting == RatioCounting::remapped
                             ? static_cast<double>(std::max(m, n))
                             : static_cast<double>(m + n);
    const double k = r * static_cast<double>(m) * static_cast<double>(n) / denom;
    a.entries.push_back(IntRankEntry{l->name,
                                     std::clamp<index>(static_cast<index>(std::llround(k)), 1, kmin),
                                     m, n});
  }
  return a;
}

}  // namespace dobi
