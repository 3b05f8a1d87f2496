#include "damnet/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace damnet {

Var ParamStore::add(const std::string& name, const std::string& group, Tensor init) {
  if (find(name)) throw std::invalid_argument("ParamStore: duplicate parameter " + name);
  Var v = leaf(std::move(init), true);
  v->requires_grad = true;  // parameters stay trainable even if created under NoGradGuard
  params_.push_back({name, group, v});
  return v;
}

Tensor& ParamStore::add_buffer(const std::string& name, Tensor init) {
  for (const auto& [n, t] : buffers_)
    if (n == name) throw std::invalid_argument("ParamStore: duplicate buffer " + name);
  buffers_.emplace_back(name, std::move(init));
  return buffers_.back().second;
}

i64 ParamStore::total_parameters() const {
  i64 n = 0;
  for (const auto& e : params_) n += e.var->value.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& e : params_) e.var->grad = Tensor();
}

std::vector<std::string> ParamStore::groups() const {
  std::vector<std::string> out;
  for (const auto& e : params_)
    if (std::find(out.begin(), out.end(), e.group) == out.end()) out.push_back(e.group);
  return out;
}

const ParamStore::Entry* ParamStore::find(const std::string& name) const {
  for (const auto& e : params_)
    if (e.name == name) return &e;
  return nullptr;
}

Tensor kaiming_normal(const Shape& shape, i64 fan_in, std::mt19937_64& rng) {
  if (fan_in <= 0) throw std::invalid_argument("kaiming_normal: fan_in must be positive");
  return Tensor::randn(shape, rng, std::sqrt(2.0 / static_cast<double>(fan_in)));
}

Tensor xavier_uniform(const Shape& shape, i64 fan_in, i64 fan_out, std::mt19937_64& rng) {
  if (fan_in <= 0 || fan_out <= 0) throw std::invalid_argument("xavier_uniform: bad fans");
  double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return Tensor::uniform(shape, rng, -limit, limit);
}

namespace {

Tensor scaled(Tensor t, double s) {
  if (s != 1.0)
    for (i64 i = 0; i < t.numel(); ++i) t.data()[i] *= s;
  return t;
}

}  // namespace

Linear::Linear(ParamStore& ps, const std::string& prefix, const std::string& group, i64 in,
               i64 out, bool bias, std::mt19937_64& rng, double init_scale) {
  w_ = ps.add(prefix + ".weight", group, scaled(xavier_uniform({in, out}, in, out, rng),
                                                init_scale));
  if (bias) b_ = ps.add(prefix + ".bias", group, Tensor::zeros({out}));
}

Conv2d::Conv2d(ParamStore& ps, const std::string& prefix, const std::string& group, i64 in,
               i64 out, int kernel, int stride, int pad, int dilation, bool bias,
               std::mt19937_64& rng, double init_scale)
    : stride_(stride), pad_(pad), dilation_(dilation) {
  i64 fan_in = in * kernel * kernel;
  w_ = ps.add(prefix + ".weight", group,
              scaled(kaiming_normal({out, in, kernel, kernel}, fan_in, rng), init_scale));
  if (bias) b_ = ps.add(prefix + ".bias", group, Tensor::zeros({out}));
}

BatchNorm2d::BatchNorm2d(ParamStore& ps, const std::string& prefix, const std::string& group,
                         i64 channels)
    : gamma_(ps.add(prefix + ".gamma", group, Tensor::full({channels}, 1.0))),
      beta_(ps.add(prefix + ".beta", group, Tensor::zeros({channels}))),
      rm_(ps.add_buffer(prefix + ".running_mean", Tensor::zeros({channels}))),
      rv_(ps.add_buffer(prefix + ".running_var", Tensor::full({channels}, 1.0))) {}

Mha::Mha(ParamStore& ps, const std::string& prefix, const std::string& group, i64 dim, int heads,
         std::mt19937_64& rng)
    : heads_(heads) {
  if (heads < 1 || dim % heads != 0)
    throw std::invalid_argument("Mha: heads=" + std::to_string(heads) + " must divide dim=" +
                                std::to_string(dim));
  auto proj = [&](const char* n) {
    return ps.add(prefix + "." + n + ".weight", group, xavier_uniform({dim, dim}, dim, dim, rng));
  };
  auto bias = [&](const char* n) {
    return ps.add(prefix + "." + n + ".bias", group, Tensor::zeros({dim}));
  };
  wq_ = proj("q");
  bq_ = bias("q");
  wk_ = proj("k");
  bk_ = bias("k");
  wv_ = proj("v");
  bv_ = bias("v");
  wo_ = proj("out");
  bo_ = bias("out");
  for (i64 i = 0; i < wo_->value.numel(); ++i) wo_->value.data()[i] *= kResidualInitScale;
}

Mlp::Mlp(ParamStore& ps, const std::string& prefix, const std::string& group, i64 in, i64 hidden,
         i64 out, std::mt19937_64& rng)
    : fc1_(ps, prefix + ".fc1", group, in, hidden, true, rng),
      fc2_(ps, prefix + ".fc2", group, hidden, out, true, rng, kResidualInitScale) {}

Pcm::Pcm(ParamStore& ps, const std::string& prefix, const std::string& group, i64 in, i64 out,
         int s1, int s2, int s3, std::mt19937_64& rng)
    : c1_(ps, prefix + ".conv1", group, in, out, 3, s1, 1, 1, false, rng),
      c2_(ps, prefix + ".conv2", group, out, out, 3, s2, 1, 1, false, rng),
      c3_(ps, prefix + ".conv3", group, out, out, 3, s3, 1, 1, true, rng, kResidualInitScale),
      n1_(ps, prefix + ".bn1", group, out),
      n2_(ps, prefix + ".bn2", group, out) {}

Var Pcm::forward(const Var& x, const Ctx& ctx) const {
  Var h = silu(n1_.forward(c1_.forward(x), ctx));
  h = silu(n2_.forward(c2_.forward(h), ctx));
  return c3_.forward(h);
}

Prm::Prm(ParamStore& ps, const std::string& prefix, const std::string& group, i64 in, i64 out,
         const std::vector<int>& rates, int stride, std::mt19937_64& rng) {
  if (rates.empty() || out % static_cast<i64>(rates.size()) != 0)
    throw std::invalid_argument("Prm: output channels " + std::to_string(out) +
                                " must split evenly over " + std::to_string(rates.size()) +
                                " pyramid rates");
  i64 each = out / static_cast<i64>(rates.size());
  convs_.reserve(rates.size());
  for (size_t i = 0; i < rates.size(); ++i)
    convs_.emplace_back(ps, prefix + ".rate" + std::to_string(rates[i]), group, in, each, 3,
                        stride, rates[i], rates[i], true, rng);
}

Var Prm::forward(const Var& x) const {
  std::vector<Var> parts;
  parts.reserve(convs_.size());
  for (const auto& c : convs_) parts.push_back(c.forward(x));
  return concat_channels(parts);
}

Oel::Oel(ParamStore& ps, const std::string& prefix, const std::string& group, i64 in, i64 out,
         int kernel, int stride, int pad, bool overlap, std::mt19937_64& rng)
    : conv_(ps, prefix + ".proj", group, in, out, overlap ? kernel : stride, stride,
            overlap ? pad : 0, 1, true, rng) {}

}  // namespace damnet
