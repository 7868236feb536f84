#ifndef DOBI_MODEL_HPP
#define DOBI_MODEL_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dobi/rank_learn.hpp"

namespace dobi {

enum class Activation { identity, relu, tanh_act };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

struct LayerSpec {
  std::string name;
  DenseMatrix weight;  // m×n, maps row vectors x -> x·W
  Activation act = Activation::identity;
  bool compressible = true;
};

// Plain feed-forward stack of weight matrices; the desk-scale stand-in
// for the layer grid of a large model.
struct ToyModel {
  std::vector<LayerSpec> layers;
  index input_dim = 0;
  index output_dim = 0;

  void validate() const;
  std::vector<const LayerSpec*> compressible_layers() const;
};

// Teacher/student MLP 16 -> 32 -> 32 -> 8, tanh hidden activations.
// All weights seeded, rounded to f32 so container round-trips are exact.
ToyModel make_teacher_student_mlp(std::uint64_t seed);

// Char-level next-token model over a 16-symbol alphabet: two blocks of
// (in-proj 16×24 tanh, out-proj 24×16 identity). Weights are built
// analytically around the seeded grammar's bigram log-probabilities, so
// the frozen model already fits its dataset.
ToyModel make_char_lm(std::uint64_t seed);

// Arbitrary seeded stack for tests: dims = {d0, d1, ..., dL}, layer i is
// d_{i-1}×d_i with the given activation, all compressible.
ToyModel make_random_model(const std::vector<index>& dims, Activation act, std::uint64_t seed);

enum class DatasetKind { teacher_student_regression, char_lm };

std::string dataset_kind_name(DatasetKind k);
DatasetKind dataset_kind_from_name(const std::string& name);

// One sample is a full (rows × features) matrix; rows play the token
// role and are kept >= every feature dimension so activation spectra are
// never rank-starved.
struct Sample {
  DenseMatrix input;
  DenseMatrix target;        // regression targets; empty for char_lm
  std::vector<int> classes;  // next-token ids for char_lm; empty otherwise
};

struct Dataset {
  DatasetKind kind = DatasetKind::teacher_student_regression;
  std::uint64_t seed = 0;
  index rows = 0;
  std::vector<Sample> samples;
};

// Bitwise-deterministic generation from (kind, seed, count[, rows]).
// rows = 0 picks the kind's default (40 for regression, 32 for char_lm).
// The regression teacher is make_teacher_student_mlp(seed), so the model
// with the same seed fits its dataset exactly.
Dataset make_dataset(DatasetKind kind, std::uint64_t seed, index count, index rows = 0);

// Dense forward pass. When linear_outputs is non-null it receives each
// layer's pre-activation x·W.
DenseMatrix forward(const ToyModel& model, const DenseMatrix& x,
                    std::vector<DenseMatrix>* linear_outputs = nullptr);

// Per-layer smooth / hard activation truncation during the forward pass.
DenseMatrix forward_smooth(const ToyModel& model, const DenseMatrix& x,
                           const RankAllocation& alloc);
DenseMatrix forward_hard(const ToyModel& model, const DenseMatrix& x, const IntAllocation& alloc);

// Factored inference y = (x·w1)·w2 for compressed layers.
struct FactoredLayer {
  DenseMatrix w1;  // m×k
  DenseMatrix w2;  // k×n
};

struct FactoredModel {
  ToyModel base;                                     // weights kept for uncompressed layers
  std::vector<std::optional<FactoredLayer>> factors;  // aligned with base.layers
};

DenseMatrix forward_factored(const FactoredModel& fm, const DenseMatrix& x);

// Exact (unquantized) factorization of each compressible layer's weight
// at the allocated rank: w1 = U_k Σ_k, w2 = V_kᵀ.
FactoredModel factorize_exact(const ToyModel& model, const IntAllocation& alloc);

// Baseline that truncates the weights themselves (rank-k weight SVD).
ToyModel truncate_weights_model(const ToyModel& model, const IntAllocation& alloc);

// Per-sample task loss: mean squared error for regression, mean
// cross-entropy (nats) for char_lm.
double task_loss_output(const DenseMatrix& out, const Sample& s, DatasetKind kind);

double perplexity_from_loss(double mean_ce) ;

// Mean per-sample loss over a dataset under each inference mode.
double eval_dense(const ToyModel& model, const Dataset& ds);
double eval_smooth(const ToyModel& model, const Dataset& ds, const RankAllocation& alloc);
double eval_hard(const ToyModel& model, const Dataset& ds, const IntAllocation& alloc);
double eval_factored(const FactoredModel& fm, const Dataset& ds);

struct SweepRow {
  std::string layer;
  index k = 0;
  double activation_loss = 0.0;
  double weight_loss = 0.0;
};

struct TruncationComparison {
  double dense_loss = 0.0;
  double activation_loss = 0.0;  // hard activation truncation at alloc
  double weight_loss = 0.0;      // rank-k weight SVD at the same alloc
  bool activation_no_worse = false;
  std::vector<SweepRow> sweep;   // single-layer probes at 25/50/75% rank
};

TruncationComparison compare_truncation_modes(const ToyModel& model, const Dataset& ds,
                                              const IntAllocation& alloc);

// Full-rank integer allocation (k = min(m,n) per compressible layer).
IntAllocation full_rank_allocation(const ToyModel& model);

// Uniform allocation at a remapped ratio target: k_l = round(r·min(m,n)).
IntAllocation uniform_allocation(const ToyModel& model, double r, RatioCounting counting);

}  // namespace dobi

#endif
