#ifndef DOBI_WEIGHT_UPDATE_HPP
#define DOBI_WEIGHT_UPDATE_HPP

#include <span>
#include <string>
#include <vector>

#include "dobi/model.hpp"

namespace dobi {

// Leading-k right-singular basis of one sample's activation at a layer.
struct ProjectedBasis {
  DenseMatrix v;  // n×k, orthonormal columns
  index sample_index = 0;
};

// Forward the sample through the (already updated) prefix of the model,
// take the activation at layer_index and keep the top-k right-singular
// directions.
ProjectedBasis collect_projected_basis(const ToyModel& model, const Sample& sample,
                                       index layer_index, index k);

// Running state of the incremental subspace accumulator. The retained
// basis is re-weighted by its singular values when new columns arrive so
// early samples keep their mass. Centering is tracked but off by default:
// the subspace objective the oracle certifies is uncentered.
struct IpcaState {
  std::vector<double> mean;     // n, running mean of incoming columns
  DenseMatrix basis;            // n×k, orthonormal
  std::vector<double> weights;  // k, retained singular values
  index count = 0;              // columns absorbed
  index k = 0;
  bool centering = false;
};

IpcaState ipca_init(const DenseMatrix& first_basis, index k, bool centering = false);

// Absorb the columns of `incoming` (n×k_in) as k_in observations:
// update the running mean, concatenate [basis·diag(weights), columns],
// factor, keep the top-k left directions. Peak transient memory is
// O(n·(k + k_in)) — never proportional to the number of samples.
void ipca_absorb(IpcaState& state, const DenseMatrix& incoming);

// Σ_i ‖VᵀV_i‖_F² — the subspace-alignment objective.
double subspace_objective(const DenseMatrix& v, std::span<const DenseMatrix> bases);

// Exact batch solution: top-k eigenvectors of M = Σ_i V_i V_iᵀ, via the
// symmetric PSD structure (eigenvectors = singular vectors). Test oracle;
// memory grows with n², which is what the incremental path avoids.
DenseMatrix batch_subspace_oracle(std::span<const DenseMatrix> bases, index k);

struct UpdatedWeight {
  DenseMatrix w_tilde;  // m×n
  index k = 0;
};

// W̃ = W·V·Vᵀ for the final n×k basis; rank ≤ k by construction.
UpdatedWeight finalize_weight(const DenseMatrix& w, const DenseMatrix& basis, index k);

struct LayerObjectiveRow {
  std::string layer;
  double ipca_objective = 0.0;
  double oracle_objective = 0.0;
};

// Front-to-back pass replacing every compressible layer's weight with its
// IPCA update at the allocated rank; activations for each layer reflect
// all upstream replacements. When objective_rows is non-null each layer's
// incremental objective is recorded next to the batch-oracle optimum.
ToyModel update_all_weights(const ToyModel& model, const Dataset& ds, const IntAllocation& alloc,
                            bool centering = false,
                            std::vector<LayerObjectiveRow>* objective_rows = nullptr);

}  // namespace dobi

#endif
