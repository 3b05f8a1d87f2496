#include "damnet/metrics.hpp"

#include <json.hpp>

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace damnet {

ConfusionCounts accumulate(const Tensor& pred, const Tensor& label, ConfusionCounts counts) {
  if (!pred.same_shape(label))
    throw std::invalid_argument("accumulate: pred " + pred.shape_str() + " vs label " +
                                label.shape_str());
  for (i64 i = 0; i < pred.numel(); ++i) {
    double p = pred[i];
    double y = label[i];
    if ((p != 0.0 && p != 1.0) || (y != 0.0 && y != 1.0))
      throw std::invalid_argument("accumulate: masks must be binary, found pred=" +
                                  std::to_string(p) + " label=" + std::to_string(y));
    if (p == 1.0)
      y == 1.0 ? ++counts.tp : ++counts.fp;
    else
      y == 1.0 ? ++counts.fn : ++counts.tn;
  }
  return counts;
}

MetricsReport compute(const ConfusionCounts& c) {
  if (c.total() == 0) throw std::invalid_argument("compute: no pixels accumulated");
  auto ratio = [](std::uint64_t num, std::uint64_t den, const char* why) {
    return den == 0 ? Ratio::undefined(why)
                    : Ratio::of(static_cast<double>(num) / static_cast<double>(den));
  };
  MetricsReport r;
  r.precision = ratio(c.tp, c.tp + c.fp, "no positive predictions (tp+fp = 0)");
  r.recall = ratio(c.tp, c.tp + c.fn, "no positive labels (tp+fn = 0)");
  r.f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn,
               "no positive pixels in prediction or label (tp+fp+fn = 0)");
  r.oa = Ratio::of(static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total()));
  r.iou = ratio(c.tp, c.tp + c.fn + c.fp,
                "no positive pixels in prediction or label (tp+fp+fn = 0)");
  return r;
}

namespace {

constexpr const char* kNames[5] = {"precision", "recall", "f1", "oa", "iou"};

const Ratio* fields(const MetricsReport& r, int i) {
  const Ratio* all[5] = {&r.precision, &r.recall, &r.f1, &r.oa, &r.iou};
  return all[i];
}

}  // namespace

std::string to_kv_text(const MetricsReport& r) {
  std::ostringstream out;
  out.precision(17);
  for (int i = 0; i < 5; ++i) {
    const Ratio* f = fields(r, i);
    if (f->defined)
      out << kNames[i] << " = " << f->value << "\n";
    else
      out << kNames[i] << " = undefined\n" << kNames[i] << "_reason = " << f->reason << "\n";
  }
  return out.str();
}

std::string to_json(const MetricsReport& r, const ConfusionCounts& c) {
  nlohmann::json j;
  j["counts"] = {{"tp", c.tp}, {"tn", c.tn}, {"fp", c.fp}, {"fn", c.fn}};
  for (int i = 0; i < 5; ++i) {
    const Ratio* f = fields(r, i);
    if (f->defined)
      j["metrics"][kNames[i]] = f->value;
    else {
      j["metrics"][kNames[i]] = nullptr;
      j["metrics"][std::string(kNames[i]) + "_reason"] = f->reason;
    }
  }
  return j.dump(2);
}

std::string table_row(const MetricsReport& r) {
  std::ostringstream out;
  char buf[16];
  for (int i = 0; i < 5; ++i) {
    const Ratio* f = fields(r, i);
    if (f->defined)
      std::snprintf(buf, sizeof buf, "%8.2f", 100.0 * f->value);
    else
      std::snprintf(buf, sizeof buf, "%8s", "--");
    out << buf;
  }
  return out.str();
}

}  // namespace damnet
