#include "damnet/train.hpp"

#include "damnet/fusion.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace damnet {

double lr_at(i64 epoch, const TrainConfig& cfg) {
  cfg.validate();
  if (epoch < 0 || epoch >= cfg.epochs)
    throw std::invalid_argument("lr_at: epoch " + std::to_string(epoch) + " outside [0, " +
                                std::to_string(cfg.epochs) + ")");
  const std::vector<i64>& ms = cfg.decay_epochs;
  if (cfg.schedule == LrSchedule::kStep) {
    double lr = cfg.lr;
    for (i64 m : ms)
      if (m <= epoch) lr *= cfg.decay_factor;
    return lr;
  }
  // linear: hold until the first milestone, then interpolate between the
  // step-mode targets, reaching the last target at the final epoch
  if (ms.empty() || epoch <= ms.front()) return cfg.lr;
  for (size_t k = 0; k < ms.size(); ++k) {
    i64 seg_start = ms[k];
    i64 seg_end = k + 1 < ms.size() ? ms[k + 1] : cfg.epochs - 1;
    if (epoch <= seg_end || k + 1 == ms.size()) {
      double v0 = cfg.lr * std::pow(cfg.decay_factor, static_cast<double>(k));
      double v1 = v0 * cfg.decay_factor;
      if (epoch >= seg_end) return v1;
      double frac = static_cast<double>(epoch - seg_start) /
                    static_cast<double>(seg_end - seg_start);
      return v0 + frac * (v1 - v0);
    }
  }
  return cfg.lr * std::pow(cfg.decay_factor, static_cast<double>(ms.size()));
}

Optimizer::Optimizer(ParamStore& ps, const TrainConfig& cfg) : ps_(ps), cfg_(cfg) {
  cfg.validate();
  for (const ParamStore::Entry& e : ps.params()) {
    m_.push_back(Tensor(e.var->value.shape()));
    v_.push_back(Tensor(e.var->value.shape()));
  }
}

void Optimizer::step(double lr) {
  if (ps_.params().size() != m_.size())
    throw std::logic_error("optimizer: parameter list changed after construction");
  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < m_.size(); ++i) {
    Node& p = *ps_.params()[i].var;
    if (p.grad.numel() == 0) continue;  // never reached in the backward pass
    double* val = p.value.data();
    const double* g = p.grad.data();
    double* m = m_[i].data();
    double* v = v_[i].data();
    if (cfg_.optimizer == OptimizerKind::kAdamW) {
      for (i64 j = 0; j < p.value.numel(); ++j) {
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
        double mhat = m[j] / bc1;
        double vhat = v[j] / bc2;
        val[j] -= lr * (mhat / (std::sqrt(vhat) + kEps) + cfg_.weight_decay * val[j]);
      }
    } else {
      for (i64 j = 0; j < p.value.numel(); ++j) {
        double gj = g[j] + cfg_.weight_decay * val[j];
        m[j] = cfg_.momentum * m[j] + gj;
        val[j] -= lr * m[j];
      }
    }
  }
}

std::vector<Sample> load_split(const std::string& root, const DatasetManifest& manifest,
                               const std::string& split) {
  std::vector<Sample> out;
  for (const ManifestEntry* e : manifest.split(split)) out.push_back(load_sample(root, *e));
  return out;
}

namespace {

struct Batch {
  Var pre, post;
  Tensor label;
  i64 n = 0;
};

Batch make_batch(const std::vector<Sample>& samples, const std::vector<size_t>& order, size_t from,
                 size_t to) {
  i64 n = static_cast<i64>(to - from);
  i64 h = samples[order[from]].pre.dim(0);
  i64 w = samples[order[from]].pre.dim(1);
  Tensor pre({n, 1, h, w}), post({n, 1, h, w}), label({n, 1, h, w});
  for (size_t k = from; k < to; ++k) {
    const Sample& s = samples[order[k]];
    if (s.pre.dim(0) != h || s.pre.dim(1) != w)
      throw std::invalid_argument("train: samples disagree on patch size");
    i64 off = static_cast<i64>(k - from) * h * w;
    std::copy(s.pre.data(), s.pre.data() + h * w, pre.data() + off);
    std::copy(s.post.data(), s.post.data() + h * w, post.data() + off);
    std::copy(s.label.data(), s.label.data() + h * w, label.data() + off);
  }
  return {constant(std::move(pre)), constant(std::move(post)), std::move(label), n};
}

}  // namespace

ConfusionCounts evaluate_samples(const DamNet& model, const std::vector<Sample>& samples,
                                 double threshold, i64 batch_size) {
  if (batch_size < 1) throw std::invalid_argument("evaluate_samples: batch_size must be positive");
  NoGradGuard ng;
  Ctx ctx;  // eval mode, frozen batch-norm statistics
  std::vector<size_t> order(samples.size());
  std::iota(order.begin(), order.end(), size_t{0});
  ConfusionCounts counts;
  for (size_t from = 0; from < samples.size(); from += static_cast<size_t>(batch_size)) {
    size_t to = std::min(samples.size(), from + static_cast<size_t>(batch_size));
    Batch b = make_batch(samples, order, from, to);
    Var probs = model.forward(b.pre, b.post, ctx);
    counts = accumulate(binarize(probs->value, threshold), b.label, counts);
  }
  return counts;
}

void TrainHistory::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("history: cannot open " + path);
  f << "# epoch train_loss lr val_precision val_recall val_f1 val_oa val_iou seconds\n";
  char line[512];
  auto num = [](const Ratio& r) { return r.defined ? r.value : std::nan(""); };
  for (const EpochRecord& r : records) {
    std::snprintf(line, sizeof line,
                  "%lld %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.3f\n",
                  static_cast<long long>(r.epoch), r.train_loss, r.lr, num(r.val.precision),
                  num(r.val.recall), num(r.val.f1), num(r.val.oa), num(r.val.iou), r.seconds);
    f << line;
  }
  f << "# best epoch: " << best_epoch << "\n";
}

TrainHistory train(DamNet& model, const std::string& root, const DatasetManifest& manifest,
                   const TrainConfig& cfg) {
  cfg.validate();
  TrainHistory hist;
  if (cfg.epochs == 0) return hist;

  std::vector<Sample> train_set = load_split(root, manifest, "train");
  std::vector<Sample> val_set = load_split(root, manifest, "val");
  if (train_set.empty()) throw std::invalid_argument("train: manifest has no train entries");
  if (val_set.empty()) throw std::invalid_argument("train: manifest has no val entries");

  Optimizer opt(model.params(), cfg);
  std::mt19937_64 rng(cfg.seed);
  std::vector<size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), size_t{0});

  double best_f1 = -2.0;  // below the undefined sentinel so epoch 0 always snapshots
  std::vector<Tensor> best_params;
  std::vector<Tensor> best_buffers;
  auto snapshot = [&]() {
    best_params.clear();
    best_buffers.clear();
    for (const ParamStore::Entry& e : model.params().params()) best_params.push_back(e.var->value);
    for (const auto& [name, buf] : model.params().buffers()) best_buffers.push_back(buf);
  };

  for (i64 epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    double lr = lr_at(epoch, cfg);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<Sample> scratch;  // augmented views for this epoch
    const std::vector<Sample>* epoch_set = &train_set;
    if (cfg.augment) {
      scratch.reserve(train_set.size());
      for (const Sample& s : train_set) scratch.push_back(augment(s, rng()));
      epoch_set = &scratch;
    }

    double loss_sum = 0.0;
    i64 n_seen = 0, batch_index = 0;
    for (size_t from = 0; from < epoch_set->size();
         from += static_cast<size_t>(cfg.batch_size), ++batch_index) {
      size_t to = std::min(epoch_set->size(), from + static_cast<size_t>(cfg.batch_size));
      Batch b = make_batch(*epoch_set, order, from, to);
      model.params().zero_grad();
      Var probs = model.forward(b.pre, b.post, Ctx{true, true});
      Var loss = total_loss(probs, b.label, cfg.loss);
      double lv = loss->value[0];
      if (!std::isfinite(lv))
        throw DivergenceError("training diverged: non-finite loss at epoch " +
                              std::to_string(epoch) + ", batch " + std::to_string(batch_index));
      backward(loss);
      opt.step(lr);
      loss_sum += lv * static_cast<double>(b.n);
      n_seen += b.n;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(n_seen);
    rec.lr = lr;
    rec.val_counts =
        evaluate_samples(model, val_set, cfg.loss.binarize_threshold, cfg.batch_size);
    rec.val = compute(rec.val_counts);
    rec.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    hist.records.push_back(rec);

    double f1 = rec.val.f1.defined ? rec.val.f1.value : -1.0;
    if (f1 > best_f1) {
      best_f1 = f1;
      hist.best_epoch = epoch;
      snapshot();
    }
  }

  // leave the model at its best-validation epoch
  size_t pi = 0;
  for (const ParamStore::Entry& e : model.params().params()) e.var->value = best_params[pi++];
  size_t bi = 0;
  for (auto& [name, buf] : model.params().buffers()) buf = best_buffers[bi++];
  return hist;
}

}  // namespace damnet
