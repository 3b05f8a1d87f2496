#include "damnet/gradcheck.hpp"

#include "damnet/fusion.hpp"
#include "damnet/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <random>
#include <set>

namespace damnet {

GradCheckReport gradcheck_model(const ModelConfig& mc, const LossConfig& lc, i64 per_group,
                                double step, std::uint64_t seed) {
  if (per_group < 1) throw std::invalid_argument("gradcheck: per_group must be positive");
  if (!(step > 0.0)) throw std::invalid_argument("gradcheck: step must be positive");
  mc.validate();
  lc.validate();

  DamNet model(mc);
  std::mt19937_64 rng(seed);
  i64 side = ModelConfig::kDownsample[ModelConfig::kStages - 1];  // smallest accepted extent
  Tensor pre = Tensor::uniform({1, mc.in_channels, side, side}, rng, 0.0, 1.0);
  Tensor post = Tensor::uniform({1, mc.in_channels, side, side}, rng, 0.0, 1.0);
  Tensor label({1, 1, side, side});
  std::bernoulli_distribution bd(0.5);
  for (i64 i = 0; i < label.numel(); ++i) label.data()[i] = bd(rng) ? 1.0 : 0.0;

  Var vpre = constant(pre), vpost = constant(post);
  Ctx ctx{true, false};  // batch statistics active, running buffers frozen

  model.params().zero_grad();
  Var loss = total_loss(model.forward(vpre, vpost, ctx), label, lc);
  backward(loss);

  auto loss_value = [&]() {
    NoGradGuard ng;
    return total_loss(model.forward(vpre, vpost, ctx), label, lc)->value[0];
  };

  std::map<std::string, std::vector<size_t>> members;  // group -> param entry indices
  const auto& entries = model.params().params();
  for (size_t i = 0; i < entries.size(); ++i) members[entries[i].group].push_back(i);

  GradCheckReport report;
  for (const std::string& group : model.params().groups()) {
    const std::vector<size_t>& idxs = members[group];
    i64 total = 0;
    for (size_t i : idxs) total += entries[i].var->value.numel();

    std::set<std::pair<size_t, i64>> picks;
    if (total <= per_group) {
      for (size_t i : idxs)
        for (i64 j = 0; j < entries[i].var->value.numel(); ++j) picks.emplace(i, j);
    } else {
      std::uniform_int_distribution<i64> dist(0, total - 1);
      while (static_cast<i64>(picks.size()) < per_group) {
        i64 flat = dist(rng);
        for (size_t i : idxs) {
          i64 n = entries[i].var->value.numel();
          if (flat < n) {
            picks.emplace(i, flat);
            break;
          }
          flat -= n;
        }
      }
    }

    GradCheckGroup gr;
    gr.group = group;
    for (const auto& [pi, j] : picks) {
      Node& node = *entries[pi].var;
      double analytic = node.grad.numel() ? node.grad[j] : 0.0;
      double saved = node.value[j];
      node.value.data()[j] = saved + step;
      double lp = loss_value();
      node.value.data()[j] = saved - step;
      double lm = loss_value();
      node.value.data()[j] = saved;
      double numeric = (lp - lm) / (2.0 * step);

      double rel = 0.0;
      if (std::abs(analytic) >= 1e-8 || std::abs(numeric) >= 1e-8)
        rel = std::abs(analytic - numeric) /
              std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      ++gr.checked;
      if (rel > gr.max_rel_err) {
        gr.max_rel_err = rel;
        gr.worst_param = entries[pi].name;
        gr.worst_index = j;
      }
    }
    report.checked += gr.checked;
    report.max_rel_err = std::max(report.max_rel_err, gr.max_rel_err);
    report.groups.push_back(std::move(gr));
  }
  return report;
}

std::string to_text(const GradCheckReport& report) {
  std::string out;
  char line[256];
  for (const GradCheckGroup& g : report.groups) {
    if (g.worst_index >= 0)
      std::snprintf(line, sizeof line, "group %-12s checked %4lld  max_rel %.3e  (%s[%lld])\n",
                    g.group.c_str(), static_cast<long long>(g.checked), g.max_rel_err,
                    g.worst_param.c_str(), static_cast<long long>(g.worst_index));
    else
      std::snprintf(line, sizeof line, "group %-12s checked %4lld  max_rel %.3e\n",
                    g.group.c_str(), static_cast<long long>(g.checked), g.max_rel_err);
    out += line;
  }
  std::snprintf(line, sizeof line, "total checked %lld  max_rel %.3e\n",
                static_cast<long long>(report.checked), report.max_rel_err);
  out += line;
  return out;
}

}  // namespace damnet
