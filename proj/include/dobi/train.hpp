#ifndef DOBI_TRAIN_HPP
#define DOBI_TRAIN_HPP

#include <string>
#include <vector>

#include "dobi/model.hpp"
#include "dobi/svd_grad.hpp"

namespace dobi {

struct TrainHyper {
  int epochs = 200;
  int batch_size = 32;
  double lr = 0.1;
  bool cosine_schedule = true;
  double beta = 10.0;  // mask smoothness
  std::uint64_t seed = 0;
  RatioCounting counting = RatioCounting::remapped;
  BackwardConfig backward;
  std::string trajectory_csv;  // empty -> no CSV
};

struct EpochRecord {
  int epoch = 0;
  std::vector<double> k;
  double task_loss = 0.0;
  double ratio = 0.0;
  double total = 0.0;
};

struct TrainResult {
  RankAllocation alloc;
  std::vector<EpochRecord> history;
  LossBreakdown final_loss;
  bool diverged = false;
};

// Mean task loss over the samples with per-layer smooth truncation, plus
// its gradient in each truncation position. The chain runs through the
// mask, the stabilized SVD backward and every downstream layer. Samples
// are processed independently (parallel) and reduced in fixed order.
struct BatchGrad {
  double task_loss = 0.0;
  std::vector<double> dk;
};

BatchGrad batch_task_gradient(const ToyModel& model, const Dataset& ds,
                              const std::vector<index>& sample_ids, const RankAllocation& alloc,
                              const BackwardConfig& cfg);

// Learn the continuous truncation positions with frozen weights: Adam on
// k only, cosine schedule, multi-objective loss, hard projection of k
// into [0, min(m,n)] after every step. k starts at the uniform position
// for the target ratio. Non-finite loss aborts with the last finite
// epoch's allocation and diverged = true. Trajectories go to
// hyper.trajectory_csv as `epoch,layer,k,task_loss,ratio` rows.
TrainResult train_ranks(const ToyModel& model, const Dataset& ds, const CompressionTarget& target,
                        const TrainHyper& hyper);

}  // namespace dobi

#endif
