#pragma once

#include "damnet/config.hpp"
#include "damnet/data.hpp"
#include "damnet/metrics.hpp"
#include "damnet/model.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace damnet {

/// Learning rate in effect at `epoch`. Step mode multiplies by decay_factor
/// once per passed milestone. Linear mode holds the base rate until the first
/// milestone, then interpolates between the same milestone targets, reaching
/// the final target at the last epoch.
double lr_at(i64 epoch, const TrainConfig& cfg);

/// Thrown when a training batch produces a non-finite loss. Carries the
/// offending epoch/batch in the message.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Walks a ParamStore and applies either moment-based updates with decoupled
/// weight decay (beta1/beta2/eps) or heavy-ball SGD.
/// Parameters whose gradient was never touched in the backward pass are
/// skipped entirely (ablated submodules).
class Optimizer {
 public:
  Optimizer(ParamStore& ps, const TrainConfig& cfg);
  void step(double lr);
  i64 steps_taken() const { return t_; }

  static constexpr double kEps = 1e-8;

 private:
  ParamStore& ps_;
  TrainConfig cfg_;
  i64 t_ = 0;
  std::vector<Tensor> m_, v_;  // first/second moments, or momentum buffer in m_
};

struct EpochRecord {
  i64 epoch = 0;
  double train_loss = 0.0;  // sample-weighted mean over the epoch's batches
  double lr = 0.0;
  MetricsReport val;
  ConfusionCounts val_counts;
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> records;
  i64 best_epoch = -1;  // highest validation F1; ties resolve to the earliest

  void save(const std::string& path) const;  // columnar text log
};

/// Loads every sample of one split into memory (desk-scale datasets).
std::vector<Sample> load_split(const std::string& root, const DatasetManifest& manifest,
                               const std::string& split);

/// Confusion counts of thresholded predictions over a sample set.
ConfusionCounts evaluate_samples(const DamNet& model, const std::vector<Sample>& samples,
                                 double threshold, i64 batch_size);

/// Minibatch training per the configured recipe. Shuffling and augmentation
/// draw from cfg.seed only, so runs are bit-reproducible. On return the model
/// holds the parameters of the best-validation-F1 epoch. Throws
/// DivergenceError on a non-finite loss.
TrainHistory train(DamNet& model, const std::string& root, const DatasetManifest& manifest,
                   const TrainConfig& cfg);

}  // namespace damnet
