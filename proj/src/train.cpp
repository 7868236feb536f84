#include "dobi/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "dobi/kernels.hpp"
#include "dobi/rng.hpp"

namespace dobi {

namespace {

DenseMatrix activation_derivative(Activation act, const DenseMatrix& pre) {
  DenseMatrix d(pre.rows(), pre.cols(), 1.0);
  switch (act) {
    case Activation::identity: break;
    case Activation::relu:
      for (index i = 0; i < pre.size(); ++i)
        d.data()[static_cast<std::size_t>(i)] = pre.data()[static_cast<std::size_t>(i)] > 0.0 ? 1.0 : 0.0;
      break;
    case Activation::tanh_act:
      for (index i = 0; i < pre.size(); ++i) {
        const double t = std::tanh(pre.data()[static_cast<std::size_t>(i)]);
        d.data()[static_cast<std::size_t>(i)] = 1.0 - t * t;
      }
      break;
  }
  return d;
}

DenseMatrix apply_activation(Activation act, const DenseMatrix& pre) {
  DenseMatrix h = pre;
  switch (act) {
    case Activation::identity: break;
    case Activation::relu:
      for (double& v : h.data()) v = v > 0.0 ? v : 0.0;
      break;
    case Activation::tanh_act:
      for (double& v : h.data()) v = std::tanh(v);
      break;
  }
  return h;
}

struct LayerTape {
  DenseMatrix pre_act;          // Ã (post-truncation when compressible)
  bool compressible = false;
  // Only for compressible layers:
  SvdFactors factors;
  std::vector<double> mask;     // t_i = σ_i·gate_i
  std::vector<double> mask_dk;  // ∂t_i/∂k
  std::vector<double> gate;     // t_i/σ_i
};

// Loss gradient at the network output.
DenseMatrix output_gradient(const DenseMatrix& out, const Sample& s, DatasetKind kind) {
  if (kind == DatasetKind::teacher_student_regression) {
    DenseMatrix g = sub(out, s.target);
    return scale(g, 2.0 / static_cast<double>(out.size()));
  }
  DenseMatrix g(out.rows(), out.cols());
  for (index r = 0; r < out.rows(); ++r) {
    double mx = out(r, 0);
    for (index j = 1; j < out.cols(); ++j) mx = std::max(mx, out(r, j));
    double z = 0.0;
    for (index j = 0; j < out.cols(); ++j) z += std::exp(out(r, j) - mx);
    for (index j = 0; j < out.cols(); ++j) g(r, j) = std::exp(out(r, j) - mx) / z;
    g(r, static_cast<index>(s.classes[static_cast<std::size_t>(r)])) -= 1.0;
  }
  return scale(g, 1.0 / static_cast<double>(out.rows()));
}

// Forward with smooth truncation, backward through the SVD; returns the
// sample loss and accumulates dL/dk_l into dk.
double sample_loss_and_grad(const ToyModel& model, const Sample& sample, DatasetKind kind,
                            const RankAllocation& alloc, const BackwardConfig& cfg,
                            std::vector<double>& dk) {
  const std::size_t layer_count = model.layers.size();
  std::vector<LayerTape> tape(layer_count);
  std::vector<DenseMatrix> inputs(layer_count);

  DenseMatrix h = sample.input;
  std::size_t slot = 0;
  for (std::size_t li = 0; li < layer_count; ++li) {
    const auto& l = model.layers[li];
    inputs[li] = h;
    DenseMatrix a = matmul(h, l.weight);
    LayerTape& t = tape[li];
    t.compressible = l.compressible;
    if (l.compressible) {
      const auto& entry = alloc.entries[slot];
      ++slot;
      SmoothTruncation tr = entry.trunc;
      tr.k = std::clamp(tr.k, 0.0, static_cast<double>(std::min(entry.m, entry.n)));
      t.factors = svd_full(a);
      t.mask = smooth_mask(t.factors.s, tr);
      t.mask_dk = smooth_mask_dk(t.factors.s, tr);
      t.gate.resize(t.mask.size());
      for (std::size_t i = 0; i < t.mask.size(); ++i) {
        const double pos = static_cast<double>(i + 1);
        t.gate[i] = 0.5 * std::tanh(tr.beta * (tr.k - pos)) + 0.5;
      }
      t.pre_act = matmul(scale_cols(t.factors.u, t.mask), t.factors.vt);
    } else {
      t.pre_act = std::move(a);
    }
    h = apply_activation(l.act, t.pre_act);
  }

  const double loss = task_loss_output(h, sample, kind);

  DenseMatrix g = output_gradient(h, sample, kind);
  slot = alloc.entries.size();
  for (std::size_t li = layer_count; li-- > 0;) {
    const auto& l = model.layers[li];
    const LayerTape& t = tape[li];
    DenseMatrix g_pre = hadamard(g, activation_derivative(l.act, t.pre_act));

    DenseMatrix g_a;
    if (t.compressible) {
      --slot;
      const SvdFactors& f = t.factors;
      const DenseMatrix v = transpose(f.vt);
      // P = Uᵀ·g_pre·V carries every channel: its diagonal is dL/dt.
      const DenseMatrix p = matmul(matmul(transpose(f.u), g_pre), v);
      double dk_layer = 0.0;
      UpstreamGrads up;
      std::vector<double> gs(static_cast<std::size_t>(f.q()));
      for (index i = 0; i < f.q(); ++i) {
        const double g_t = p(i, i);
        dk_layer += g_t * t.mask_dk[static_cast<std::size_t>(i)];
        gs[static_cast<std::size_t>(i)] = g_t * t.gate[static_cast<std::size_t>(i)];
      }
      dk[slot] += dk_layer;
      up.g_s = std::move(gs);
      up.g_u = scale_cols(matmul(g_pre, v), t.mask);
      up.g_vt = scale_rows(matmul(transpose(f.u), g_pre), t.mask);
      g_a = svd_backward(f, up, cfg);
    } else {
      g_a = std::move(g_pre);
    }
    g = matmul(g_a, transpose(l.weight));
  }
  return loss;
}

}  // namespace

BatchGrad batch_task_gradient(const ToyModel& model, const Dataset& ds,
                              const std::vector<index>& sample_ids, const RankAllocation& alloc,
                              const BackwardConfig& cfg) {
  const auto comp = model.compressible_layers();
  if (comp.size() != alloc.entries.size())
    throw shape_error("batch_task_gradient: allocation does not match model");
  const index b = static_cast<index>(sample_ids.size());
  if (b == 0) throw value_error("batch_task_gradient: empty batch");

  std::vector<double> losses(static_cast<std::size_t>(b), 0.0);
  std::vector<std::vector<double>> grads(static_cast<std::size_t>(b),
                                         std::vector<double>(alloc.entries.size(), 0.0));
#pragma omp parallel for schedule(dynamic)
  for (index i = 0; i < b; ++i) {
    const Sample& s = ds.samples[static_cast<std::size_t>(sample_ids[static_cast<std::size_t>(i)])];
    losses[static_cast<std::size_t>(i)] =
        sample_loss_and_grad(model, s, ds.kind, alloc, cfg, grads[static_cast<std::size_t>(i)]);
  }

  BatchGrad out;
  out.dk.assign(alloc.entries.size(), 0.0);
  for (index i = 0; i < b; ++i) {
    out.task_loss += losses[static_cast<std::size_t>(i)];
    for (std::size_t l = 0; l < out.dk.size(); ++l) out.dk[l] += grads[static_cast<std::size_t>(i)][l];
  }
  const double inv = 1.0 / static_cast<double>(b);
  out.task_loss *= inv;
  for (double& v : out.dk) v *= inv;
  return out;
}

TrainResult train_ranks(const ToyModel& model, const Dataset& ds, const CompressionTarget& target,
                        const TrainHyper& hyper) {
  model.validate();
  target.validate();
  if (hyper.epochs < 1 || hyper.batch_size < 1) throw value_error("train_ranks: bad hyperparameters");
  hyper.backward.validate();

  // Trainable parameters: one k per compressible matrix, started at the
  // uniform position for the target ratio.
  RankAllocation alloc;
  for (const auto* l : model.compressible_layers()) {
    RankEntry e;
    e.layer = l->name;
    e.m = l->weight.rows();
    e.n = l->weight.cols();
    e.trunc.beta = hyper.beta;
    const double denom = hyper.counting == RatioCounting::remapped
                             ? static_cast<double>(std::max(e.m, e.n))
                             : static_cast<double>(e.m + e.n);
    e.trunc.k = std::clamp(target.r_target * static_cast<double>(e.m) * static_cast<double>(e.n) / denom,
                           0.0, static_cast<double>(std::min(e.m, e.n)));
    alloc.entries.push_back(std::move(e));
  }
  const std::size_t nparam = alloc.entries.size();
  if (nparam == 0) throw value_error("train_ranks: model has no compressible layers");

  std::ofstream csv;
  if (!hyper.trajectory_csv.empty()) {
    csv.open(hyper.trajectory_csv, std::ios::trunc);
    if (!csv) throw io_error(io_error::kind::open_failed,
                             "train_ranks: cannot open " + hyper.trajectory_csv);
    csv << "epoch,layer,k,task_loss,ratio\n";
    csv.precision(17);
  }

  const index nsamples = static_cast<index>(ds.samples.size());
  const index batches = (nsamples + hyper.batch_size - 1) / hyper.batch_size;
  const long total_steps = static_cast<long>(hyper.epochs) * static_cast<long>(batches);

  AdamOptimizer opt;
  opt.lr = hyper.lr;
  Pcg32 shuffle_rng(hyper.seed, 0x7368756646ULL);

  TrainResult res;
  res.alloc = alloc;
  long step = 0;

  std::vector<index> order(static_cast<std::size_t>(nsamples));
  std::iota(order.begin(), order.end(), index{0});

  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    // Fisher-Yates with the seeded stream, fixed draw order.
    for (index i = nsamples - 1; i > 0; --i) {
      const index j = static_cast<index>(shuffle_rng.next_u32() % static_cast<std::uint32_t>(i + 1));
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }

    double epoch_task = 0.0;
    bool finite = true;
    for (index bstart = 0; bstart < nsamples && finite; bstart += hyper.batch_size) {
      const index bend = std::min<index>(bstart + hyper.batch_size, nsamples);
      const std::vector<index> ids(order.begin() + bstart, order.begin() + bend);

      std::vector<double> k(nparam);
      for (std::size_t l = 0; l < nparam; ++l) k[l] = alloc.entries[l].trunc.k;

      BatchGrad bg = batch_task_gradient(model, ds, ids, alloc, hyper.backward);
      const std::vector<double> pg = penalty_grad(alloc, target, hyper.counting);
      std::vector<double> g(nparam);
      for (std::size_t l = 0; l < nparam; ++l) g[l] = bg.dk[l] + pg[l];

      if (!std::isfinite(bg.task_loss)) {
        finite = false;
        break;
      }
      epoch_task += bg.task_loss * static_cast<double>(bend - bstart);

      const double lr_scale =
          hyper.cosine_schedule ? cosine_lr(step, total_steps, 1.0) : 1.0;
      opt.step(k, g, lr_scale);
      ++step;

      for (std::size_t l = 0; l < nparam; ++l) {
        auto& e = alloc.entries[l];
        e.trunc.k = std::clamp(k[l], 0.0, static_cast<double>(std::min(e.m, e.n)));
      }
    }

    if (!finite) {
      res.diverged = true;
      break;  // res.alloc still holds the last finite epoch's state
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.task_loss = epoch_task / static_cast<double>(nsamples);
    rec.ratio = model_ratio(alloc, hyper.counting);
    rec.total = rec.task_loss + target.ratio_penalty_weight * std::abs(rec.ratio - target.r_target);
    for (const auto& e : alloc.entries) rec.k.push_back(e.trunc.k);
    if (csv.is_open()) {
      for (const auto& e : alloc.entries)
        csv << epoch << ',' << e.layer << ',' << e.trunc.k << ',' << rec.task_loss << ','
            << rec.ratio << '\n';
    }
    res.history.push_back(std::move(rec));
    res.alloc = alloc;  // checkpoint after a finite epoch
  }

  const double final_task =
      res.history.empty() ? 0.0 : res.history.back().task_loss;
  res.final_loss = multi_objective_loss(final_task, res.alloc, target, hyper.counting);
  return res;
}

}  // namespace dobi
