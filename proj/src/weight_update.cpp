#include "dobi/weight_update.hpp"

#include <algorithm>
#include <cmath>

#include "dobi/kernels.hpp"

namespace dobi {

namespace {

DenseMatrix leading_columns(const DenseMatrix& m, index k) {
  DenseMatrix out(m.rows(), k);
  for (index i = 0; i < m.rows(); ++i)
    for (index j = 0; j < k; ++j) out(i, j) = m(i, j);
  return out;
}

}  // namespace

ProjectedBasis collect_projected_basis(const ToyModel& model, const Sample& sample,
                                       index layer_index, index k) {
  if (layer_index < 0 || layer_index >= static_cast<index>(model.layers.size()))
    throw value_error("collect_projected_basis: layer index out of range");
  DenseMatrix h = sample.input;
  for (index i = 0; i < layer_index; ++i) {
    const auto& l = model.layers[static_cast<std::size_t>(i)];
    DenseMatrix a = matmul(h, l.weight);
    switch (l.act) {
      case Activation::identity: h = std::move(a); break;
      case Activation::relu:
        for (double& v : a.data()) v = v > 0.0 ? v : 0.0;
        h = std::move(a);
        break;
      case Activation::tanh_act:
        for (double& v : a.data()) v = std::tanh(v);
        h = std::move(a);
        break;
    }
  }
  const auto& l = model.layers[static_cast<std::size_t>(layer_index)];
  DenseMatrix a = matmul(h, l.weight);
  const index qmax = std::min(a.rows(), a.cols());
  if (k < 1 || k > qmax) throw value_error("collect_projected_basis: k out of range");
  SvdFactors f = svd_full(a);
  ProjectedBasis pb;
  pb.v = leading_columns(transpose(f.vt), k);
  pb.sample_index = 0;
  return pb;
}

IpcaState ipca_init(const DenseMatrix& first_basis, index k, bool centering) {
  if (k < 1 || k > first_basis.cols() || k > first_basis.rows())
    throw value_error("ipca_init: k out of range");
  IpcaState st;
  st.k = k;
  st.centering = centering;
  st.basis = leading_columns(first_basis, k);
  st.weights.assign(static_cast<std::size_t>(k), 1.0);
  st.mean.assign(static_cast<std::size_t>(first_basis.rows()), 0.0);
  st.count = 0;

  const index n = first_basis.rows();
  for (index j = 0; j < first_basis.cols(); ++j) {
    ++st.count;
    for (index i = 0; i < n; ++i) {
      const double x = first_basis(i, j);
      st.mean[static_cast<std::size_t>(i)] +=
          (x - st.mean[static_cast<std::size_t>(i)]) / static_cast<double>(st.count);
    }
  }
  return st;
}

void ipca_absorb(IpcaState& state, const DenseMatrix& incoming) {
  const index n = state.basis.rows();
  if (incoming.rows() != n) throw shape_error("ipca_absorb: dimension mismatch");
  const index k_in = incoming.cols();
  const index k = state.k;

  // Running mean over individual columns.
  for (index j = 0; j < k_in; ++j) {
    ++state.count;
    for (index i = 0; i < n; ++i) {
      const double x = incoming(i, j);
      state.mean[static_cast<std::size_t>(i)] +=
          (x - state.mean[static_cast<std::size_t>(i)]) / static_cast<double>(state.count);
    }
  }

  // [basis·diag(weights) | incoming], one SVD, keep the top-k left side.
  DenseMatrix concat(n, k + k_in);
  for (index i = 0; i < n; ++i) {
    for (index j = 0; j < k; ++j)
      concat(i, j) = state.basis(i, j) * state.weights[static_cast<std::size_t>(j)];
    for (index j = 0; j < k_in; ++j) {
      double x = incoming(i, j);
      if (state.centering) x -= state.mean[static_cast<std::size_t>(i)];
      concat(i, k + j) = x;
    }
  }
  SvdFactors f = svd_full(concat);
  state.basis = leading_columns(f.u, k);
  state.weights.assign(f.s.begin(), f.s.begin() + k);
}

double subspace_objective(const DenseMatrix& v, std::span<const DenseMatrix> bases) {
  double obj = 0.0;
  const DenseMatrix vt = transpose(v);
  for (const auto& b : bases) {
    obj += [&] {
      const DenseMatrix p = matmul(vt, b);
      double s = 0.0;
      for (double x : p.data()) s += x * x;
      return s;
    }();
  }
  return obj;
}

DenseMatrix batch_subspace_oracle(std::span<const DenseMatrix> bases, index k) {
  if (bases.empty()) throw value_error("batch_subspace_oracle: empty basis list");
  const index n = bases.front().rows();
  DenseMatrix m(n, n);
  for (const auto& b : bases) {
    if (b.rows() != n) throw shape_error("batch_subspace_oracle: dimension mismatch");
    const DenseMatrix p = matmul(b, transpose(b));
    m = add(m, p);
  }
  // m is symmetric PSD, so its singular vectors are its eigenvectors.
  SvdFactors f = svd_full(m);
  return leading_columns(f.u, k);
}

UpdatedWeight finalize_weight(const DenseMatrix& w, const DenseMatrix& basis, index k) {
  if (k < 0 || k > basis.cols()) throw value_error("finalize_weight: k out of range");
  if (basis.rows() != w.cols()) throw shape_error("finalize_weight: basis dimension mismatch");
  UpdatedWeight uw;
  uw.k = k;
  if (k == 0) {
    uw.w_tilde = DenseMatrix(w.rows(), w.cols());
    return uw;
  }
  const DenseMatrix vk = leading_columns(basis, k);
  uw.w_tilde = matmul(matmul(w, vk), transpose(vk));
  return uw;
}

ToyModel update_all_weights(const ToyModel& model, const Dataset& ds, const IntAllocation& alloc,
                            bool centering, std::vector<LayerObjectiveRow>* objective_rows) {
  model.validate();
  if (ds.samples.empty()) throw value_error("update_all_weights: empty dataset");
  ToyModel updated = model;
  if (objective_rows) objective_rows->clear();

  std::size_t slot = 0;
  for (index li = 0; li < static_cast<index>(updated.layers.size()); ++li) {
    auto& layer = updated.layers[static_cast<std::size_t>(li)];
    if (!layer.compressible) continue;
    if (slot >= alloc.entries.size() || alloc.entries[slot].layer != layer.name)
      throw shape_error("update_all_weights: allocation mismatch at layer " + layer.name);
    const index k = alloc.entries[slot].k;
    ++slot;
    const index kmin = std::min(layer.weight.rows(), layer.weight.cols());
    if (k >= kmin) continue;  // full-rank layers keep their weights

    try {
      IpcaState st;
      std::vector<DenseMatrix> oracle_bases;  // only kept when reporting
      bool first = true;
      for (index si = 0; si < static_cast<index>(ds.samples.size()); ++si) {
        ProjectedBasis pb =
            collect_projected_basis(updated, ds.samples[static_cast<std::size_t>(si)], li, k);
        if (objective_rows) oracle_bases.push_back(pb.v);
        if (first) {
          st = ipca_init(pb.v, k, centering);
          first = false;
        } else {
          ipca_absorb(st, pb.v);
        }
      }
      if (objective_rows) {
        LayerObjectiveRow row;
        row.layer = layer.name;
        row.ipca_objective = subspace_objective(st.basis, oracle_bases);
        const DenseMatrix vopt = batch_subspace_oracle(oracle_bases, k);
        row.oracle_objective = subspace_objective(vopt, oracle_bases);
        objective_rows->push_back(std::move(row));
      }
      layer.weight = finalize_weight(layer.weight, st.basis, k).w_tilde;
    } catch (const error& e) {
      throw numeric_error("update_all_weights: layer " + layer.name + ": " + e.what());
    }
  }
  return updated;
}

}  // namespace dobi
