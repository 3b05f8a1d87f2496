#pragma once

#include "damnet/autograd.hpp"

#include <deque>
#include <random>
#include <string>
#include <vector>

namespace damnet {

/// Forward-pass context. update_bn=false keeps batch-norm running statistics
/// frozen so repeated evaluations of one batch are side-effect free (used by
/// the finite-difference gradient checker).
struct Ctx {
  bool training = false;
  bool update_bn = true;
};

/// Registry of named trainable parameters and persistent buffers. Layers
/// register at construction; optimizers, checkpoints and the gradient checker
/// all walk this flat list.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    std::string group;
    Var var;
  };

  Var add(const std::string& name, const std::string& group, Tensor init);
  Tensor& add_buffer(const std::string& name, Tensor init);

  const std::vector<Entry>& params() const { return params_; }
  const std::deque<std::pair<std::string, Tensor>>& buffers() const { return buffers_; }
  std::deque<std::pair<std::string, Tensor>>& buffers() { return buffers_; }

  i64 total_parameters() const;
  void zero_grad();
  std::vector<std::string> groups() const;  // distinct groups in first-appearance order
  const Entry* find(const std::string& name) const;

 private:
  std::vector<Entry> params_;
  std::deque<std::pair<std::string, Tensor>> buffers_;  // deque keeps references stable
};

Tensor kaiming_normal(const Shape& shape, i64 fan_in, std::mt19937_64& rng);
Tensor xavier_uniform(const Shape& shape, i64 fan_in, i64 fan_out, std::mt19937_64& rng);

/// Damping applied to the terminal projection of every residual branch (MHA
/// output projection, FFN second layer, PCM final conv). The token mixers have
/// no layer normalization, so undamped branches compound the activation scale
/// stage over stage and drive the head's sigmoid into saturation at init.
inline constexpr double kResidualInitScale = 0.2;

class Linear {
 public:
  Linear(ParamStore& ps, const std::string& prefix, const std::string& group, i64 in, i64 out,
         bool bias, std::mt19937_64& rng, double init_scale = 1.0);
  Var forward(const Var& x) const { return linear(x, w_, b_); }

 private:
  Var w_, b_;
};

class Conv2d {
 public:
  Conv2d(ParamStore& ps, const std::string& prefix, const std::string& group, i64 in, i64 out,
         int kernel, int stride, int pad, int dilation, bool bias, std::mt19937_64& rng,
         double init_scale = 1.0);
  Var forward(const Var& x) const { return conv2d(x, w_, b_, stride_, pad_, dilation_); }

 private:
  Var w_, b_;
  int stride_, pad_, dilation_;
};

class BatchNorm2d {
 public:
  BatchNorm2d(ParamStore& ps, const std::string& prefix, const std::string& group, i64 channels);
  Var forward(const Var& x, const Ctx& ctx) const {
    return batchnorm2d(x, gamma_, beta_, rm_, rv_, ctx.training, ctx.training && ctx.update_bn,
                       0.1, 1e-5);
  }

 private:
  Var gamma_, beta_;
  Tensor& rm_;
  Tensor& rv_;
};

/// Scaled-dot-product multi-head attention with an output projection.
class Mha {
 public:
  Mha(ParamStore& ps, const std::string& prefix, const std::string& group, i64 dim, int heads,
      std::mt19937_64& rng);
  Var forward(const Var& q, const Var& kv) const {
    return multihead_attention(q, kv, wq_, bq_, wk_, bk_, wv_, bv_, wo_, bo_, heads_);
  }

 private:
  Var wq_, bq_, wk_, bk_, wv_, bv_, wo_, bo_;
  int heads_;
};

/// Two-layer perceptron with GELU, used for transformer FFNs and token MLPs.
class Mlp {
 public:
  Mlp(ParamStore& ps, const std::string& prefix, const std::string& group, i64 in, i64 hidden,
      i64 out, std::mt19937_64& rng);
  Var forward(const Var& x) const { return fc2_.forward(gelu(fc1_.forward(x))); }

 private:
  Linear fc1_, fc2_;
};

/// Parallel convolution module: conv-BN-SiLU-conv-BN-SiLU-conv with 3x3
/// kernels; the stride triple is chosen by the caller to hit the target grid.
class Pcm {
 public:
  Pcm(ParamStore& ps, const std::string& prefix, const std::string& group, i64 in, i64 out,
      int s1, int s2, int s3, std::mt19937_64& rng);
  Var forward(const Var& x, const Ctx& ctx) const;

 private:
  Conv2d c1_, c2_, c3_;
  BatchNorm2d n1_, n2_;
};

/// Pyramid reduction: parallel 3x3 convolutions at several dilation rates,
/// concatenated along channels. Output channels = `out` (split evenly).
class Prm {
 public:
  Prm(ParamStore& ps, const std::string& prefix, const std::string& group, i64 in, i64 out,
      const std::vector<int>& rates, int stride, std::mt19937_64& rng);
  Var forward(const Var& x) const;

 private:
  std::vector<Conv2d> convs_;
};

/// Overlapping embedding layer; with overlap disabled it degrades to a
/// non-overlapping patch split (kernel = stride, no padding).
class Oel {
 public:
  Oel(ParamStore& ps, const std::string& prefix, const std::string& group, i64 in, i64 out,
      int kernel, int stride, int pad, bool overlap, std::mt19937_64& rng);
  Var forward(const Var& x) const { return conv_.forward(x); }

 private:
  Conv2d conv_;
};

}  // namespace damnet
