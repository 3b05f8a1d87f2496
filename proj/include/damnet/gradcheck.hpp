#pragma once

#include "damnet/config.hpp"

#include <string>
#include <vector>

namespace damnet {

struct GradCheckGroup {
  std::string group;
  i64 checked = 0;
  double max_rel_err = 0.0;
  std::string worst_param;
  i64 worst_index = -1;
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  i64 checked = 0;
  double max_rel_err = 0.0;
  bool pass(double tol) const { return max_rel_err <= tol; }
};

/// Compares analytic total_loss gradients against central finite differences
/// on a freshly built model with a random batch. Samples up to `per_group`
/// scalar parameters from every parameter group (all of them when the group
/// is smaller). Batch-norm statistics stay frozen so repeated evaluations are
/// pure. The relative error is |a - n| / max(|a|, |n|, 1e-6); entries where
/// both sides vanish below 1e-8 count as exact (parameters that are
/// analytically absent from the loss, like attention key biases, which cancel
/// inside the softmax).
GradCheckReport gradcheck_model(const ModelConfig& mc, const LossConfig& lc, i64 per_group,
                                double step, std::uint64_t seed);

std::string to_text(const GradCheckReport& report);

}  // namespace damnet
