#pragma once

#include "damnet/tensor.hpp"

#include <cstdint>
#include <string>

namespace damnet {

/// Pixel confusion counts. 64-bit so full-scene evaluations cannot overflow;
/// merges are associative and commutative, so batches can be accumulated in
/// any order or in parallel and reduced.
struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + tn + fp + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    tn += o.tn;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// A ratio that may be undefined (0/0). Undefined values carry the reason so
/// reports never smuggle a silent 0 or 1 into comparisons.
struct Ratio {
  bool defined = false;
  double value = 0.0;
  std::string reason;

  static Ratio of(double v) { return {true, v, {}}; }
  static Ratio undefined(std::string why) { return {false, 0.0, std::move(why)}; }
};

struct MetricsReport {
  Ratio precision, recall, f1, oa, iou;
};

/// Adds the pixel-wise confusion of one prediction/label pair (both binary
/// {0,1} maps of identical shape) onto `counts`.
ConfusionCounts accumulate(const Tensor& pred, const Tensor& label, ConfusionCounts counts = {});

/// Eq-style scores from accumulated counts. Throws on empty counts.
MetricsReport compute(const ConfusionCounts& counts);

std::string to_kv_text(const MetricsReport& r);
std::string to_json(const MetricsReport& r, const ConfusionCounts& counts);
/// Fixed-width percentage row: P R F1 OA IoU, undefined printed as "--".
std::string table_row(const MetricsReport& r);

}  // namespace damnet
