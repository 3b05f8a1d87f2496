#pragma once

#include "damnet/tensor.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace damnet {

/// One node of the dynamically recorded computation graph.
struct Node {
  Tensor value;
  Tensor grad;  // lazily allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;  // reads this->grad, accumulates into parents
};

using Var = std::shared_ptr<Node>;

Var leaf(Tensor value, bool requires_grad);
inline Var constant(Tensor value) { return leaf(std::move(value), false); }

/// Grad recording is on by default and thread-local, so frozen-model
/// inference from several threads stays independent.
bool grad_enabled();
void set_grad_enabled(bool on);
struct NoGradGuard {
  NoGradGuard() : prev_(grad_enabled()) { set_grad_enabled(false); }
  ~NoGradGuard() { set_grad_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
  bool prev_;
};

/// Reverse pass from a scalar root. Accumulates into .grad of every
/// reachable node with requires_grad (existing grads are added to).
void backward(const Var& root);

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // a and b may be the same node
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var neg(const Var& a);
Var abs(const Var& a);
Var relu(const Var& a);
Var silu(const Var& a);
Var gelu(const Var& a);
Var sigmoid(const Var& a);

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);
/// x: [..., Din] flattened to rows; w: [Din, Dout]; b: [Dout] or nullptr.
Var linear(const Var& x, const Var& w, const Var& b);

// ---- conv / spatial (NCHW) ----
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad, int dilation = 1);
Var replicate_pad2d(const Var& x, int pad);
Var batchnorm2d(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
                Tensor& running_var, bool training, bool update_running, double momentum,
                double eps);
Var upsample_nearest2x(const Var& x);
Var upsample_bilinear(const Var& x, i64 out_h, i64 out_w);

// ---- token <-> map reshapes ----
Var reshape(const Var& a, const Shape& shape);  // same element order
Var i2t(const Var& x);                        // [B,C,H,W] -> [B,H*W,C]
Var t2i(const Var& t, i64 h, i64 w);          // [B,N,C]   -> [B,C,h,w]
Var concat_channels(const std::vector<Var>& xs);
Var prepend_token(const Var& tokens, const Var& token);   // [B,N,D] + [D] -> [B,N+1,D]
Var tile_token(const Var& token, i64 batch);              // [D] -> [B,1,D]
Var slice_tokens(const Var& tokens, i64 from, i64 to);    // rows [from,to) of N
Var channel_gate(const Var& x, const Var& gate);          // [B,C,H,W] * [B,C]

// ---- attention ----
/// Standard multi-head scaled-dot-product attention with separate query
/// and key/value streams and an output projection.
Var multihead_attention(const Var& q_in, const Var& kv_in, const Var& wq, const Var& bq,
                        const Var& wk, const Var& bk, const Var& wv, const Var& bv, const Var& wo,
                        const Var& bo, int heads);
/// Subtraction attention with L2-normalized logits:
///   Q,K,V = q_in*Wq, kv_in*Wk, kv_in*Wv
///   CA    = Q - softmax(Q K^T / ((|Q|+eps)(|K|+eps)^T)) V
/// Norms are per token vector along the feature axis. Single head.
Var subtraction_attention(const Var& q_in, const Var& kv_in, const Var& wq, const Var& wk,
                          const Var& wv, double norm_eps);

// ---- reductions ----
Var sum_all(const Var& a);   // -> [1]
Var mean_all(const Var& a);  // -> [1]

namespace detail {
/// In-place row softmax over the last dimension of a [rows, cols] buffer.
void softmax_rows(double* x, i64 rows, i64 cols);
}  // namespace detail

}  // namespace damnet
