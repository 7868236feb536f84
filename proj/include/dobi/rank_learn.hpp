#ifndef DOBI_RANK_LEARN_HPP
#define DOBI_RANK_LEARN_HPP

#include <string>
#include <vector>

#include "dobi/svd.hpp"

namespace dobi {

// Learnable continuous truncation position with tanh smoothness beta.
// k is expressed in 1-based singular-value index units: the mask value at
// index i is σ_i (0.5 tanh(beta (k - i)) + 0.5), so index k sits exactly
// at half weight.
struct SmoothTruncation {
  double k = 0.0;
  double beta = 10.0;
};

// Global storage target: fraction r_target in (0,1] plus the weight of
// the |R_now - R_tar| penalty in the training loss.
struct CompressionTarget {
  double r_target = 1.0;
  double ratio_penalty_weight = 10.0;

  void validate() const;
};

enum class RatioCounting {
  remapped,     // stored slots k·max(m,n); bijective in k
  traditional,  // two-factor storage k·(m+n)
};

struct RankEntry {
  std::string layer;
  SmoothTruncation trunc;
  index m = 0;
  index n = 0;
};

struct RankAllocation {
  std::vector<RankEntry> entries;
};

struct IntRankEntry {
  std::string layer;
  index k = 0;
  index m = 0;
  index n = 0;
};

struct IntAllocation {
  std::vector<IntRankEntry> entries;
};

// Elementwise smooth mask T(σ_i) and its derivative in k.
std::vector<double> smooth_mask(const std::vector<double>& s, const SmoothTruncation& t);
std::vector<double> smooth_mask_dk(const std::vector<double>& s, const SmoothTruncation& t);

// Ã = U diag(T(σ)) Vᵀ for the activation's own SVD.
DenseMatrix truncate_activation(const DenseMatrix& a, const SmoothTruncation& t);

// Storage-fraction formulas for one m×n matrix at (possibly fractional)
// truncation position k ∈ [0, min(m,n)].
double ratio_traditional(index m, index n, double k);
double ratio_remapped(index m, index n, double k);

// Exact integer inverse of ratio_remapped (the bijection witness).
index invert_ratio_remapped(index m, index n, double r);

// Aggregate ratio over all entries: Σ cost(k_l) / Σ m_l n_l.
double model_ratio(const RankAllocation& alloc, RatioCounting counting = RatioCounting::remapped);
double model_ratio(const IntAllocation& alloc, RatioCounting counting = RatioCounting::remapped);

// ∂(model ratio)/∂k_l, constant in k for both countings.
std::vector<double> model_ratio_grad(const RankAllocation& alloc,
                                     RatioCounting counting = RatioCounting::remapped);

struct LossBreakdown {
  double task_loss = 0.0;
  double ratio_now = 0.0;
  double penalty = 0.0;
  double total = 0.0;
};

// L = task + weight·|R_now - R_tar|; the |·| subgradient is 0 at the kink.
LossBreakdown multi_objective_loss(double task_loss, const RankAllocation& alloc,
                                   const CompressionTarget& target,
                                   RatioCounting counting = RatioCounting::remapped);

// d(penalty)/dk_l for the breakdown above.
std::vector<double> penalty_grad(const RankAllocation& alloc, const CompressionTarget& target,
                                 RatioCounting counting = RatioCounting::remapped);

// Nearest-integer rounding into [1, min(m,n)] followed by greedy ±1
// repairs, candidates ordered by rounding residual, until the aggregate
// ratio is as close to the target as single steps allow.
IntAllocation round_ranks(const RankAllocation& alloc, const CompressionTarget& target,
                          RatioCounting counting = RatioCounting::remapped);

// Adam with optional cosine learning-rate decay; the k-trajectory
// optimizer. Step order is fixed, so trajectories are reproducible.
struct AdamOptimizer {
  double lr = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void step(std::vector<double>& params, const std::vector<double>& grads, double lr_scale = 1.0);

 private:
  std::vector<double> m_;
  std::vector<double> v_;
  long t_ = 0;
};

double cosine_lr(long step, long total_steps, double base_lr);

// JSON round-trip for learned allocations: {layer: {k, m, n}}.
std::string allocation_to_json(const RankAllocation& alloc);
std::string allocation_to_json(const IntAllocation& alloc);
RankAllocation allocation_from_json(const std::string& text);
IntAllocation int_allocation_from_json(const std::string& text);

}  // namespace dobi

#endif
