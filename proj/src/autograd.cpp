#include "damnet/autograd.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>
#include <utility>

namespace damnet {

namespace {

thread_local bool g_grad_enabled = true;

bool any_requires(const std::vector<Var>& vs) {
  for (const auto& v : vs)
    if (v && v->requires_grad) return true;
  return false;
}

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (g_grad_enabled && any_requires(parents)) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(fn);
  }
  return n;
}

Tensor& grad_buf(const Var& p) {
  if (p->grad.numel() == 0) p->grad = Tensor::zeros(p->value.shape());
  return p->grad;
}

void accum(const Var& p, const Tensor& delta) {
  if (!p || !p->requires_grad) return;
  Tensor& g = grad_buf(p);
  double* gd = g.data();
  const double* dd = delta.data();
  for (i64 i = 0; i < delta.numel(); ++i) gd[i] += dd[i];
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a->value.same_shape(b->value))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a->value.shape_str() +
                                " vs " + b->value.shape_str());
}

// y = f(x) elementwise, dx = g * dfdx(x, y)
Var unary_op(const Var& a, double (*f)(double), double (*dfdx)(double, double)) {
  const Tensor& x = a->value;
  Tensor y(x.shape());
  const double* xd = x.data();
  double* yd = y.data();
  for (i64 i = 0; i < x.numel(); ++i) yd[i] = f(xd[i]);
  return make_op(std::move(y), {a}, [a, dfdx](Node& n) {
    if (!a->requires_grad) return;
    Tensor& g = grad_buf(a);
    const double* xd = a->value.data();
    const double* yd = n.value.data();
    const double* nd = n.grad.data();
    double* gd = g.data();
    for (i64 i = 0; i < n.value.numel(); ++i) gd[i] += nd[i] * dfdx(xd[i], yd[i]);
  });
}

double sigmoid_scalar(double x) {
  // split on sign so exp never overflows
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

}  // namespace

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

Var leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad && g_grad_enabled;
  return n;
}

void backward(const Var& root) {
  if (!root) throw std::invalid_argument("backward: null root");
  if (root->value.numel() != 1)
    throw std::invalid_argument("backward: root must be a scalar, got shape " +
                                root->value.shape_str());
  if (!root->requires_grad) return;

  // iterative post-order over the requires_grad subgraph
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.push_back({root.get(), 0});
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (p && p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  Tensor& rg = grad_buf(root);
  rg.data()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor y(a->value.shape());
  const double* ad = a->value.data();
  const double* bd = b->value.data();
  double* yd = y.data();
  for (i64 i = 0; i < y.numel(); ++i) yd[i] = ad[i] + bd[i];
  return make_op(std::move(y), {a, b}, [a, b](Node& n) {
    accum(a, n.grad);
    accum(b, n.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor y(a->value.shape());
  const double* ad = a->value.data();
  const double* bd = b->value.data();
  double* yd = y.data();
  for (i64 i = 0; i < y.numel(); ++i) yd[i] = ad[i] - bd[i];
  return make_op(std::move(y), {a, b}, [a, b](Node& n) {
    accum(a, n.grad);
    if (!b->requires_grad) return;
    Tensor& g = grad_buf(b);
    double* gd = g.data();
    const double* nd = n.grad.data();
    for (i64 i = 0; i < n.grad.numel(); ++i) gd[i] -= nd[i];
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensor y(a->value.shape());
  const double* ad = a->value.data();
  const double* bd = b->value.data();
  double* yd = y.data();
  for (i64 i = 0; i < y.numel(); ++i) yd[i] = ad[i] * bd[i];
  return make_op(std::move(y), {a, b}, [a, b](Node& n) {
    const double* nd = n.grad.data();
    if (a->requires_grad) {
      double* gd = grad_buf(a).data();
      const double* bd = b->value.data();
      for (i64 i = 0; i < n.grad.numel(); ++i) gd[i] += nd[i] * bd[i];
    }
    if (b->requires_grad) {
      double* gd = grad_buf(b).data();
      const double* ad = a->value.data();
      for (i64 i = 0; i < n.grad.numel(); ++i) gd[i] += nd[i] * ad[i];
    }
  });
}

Var div(const Var& a, const Var& b) {
  check_same_shape(a, b, "div");
  Tensor y(a->value.shape());
  const double* ad = a->value.data();
  const double* bd = b->value.data();
  double* yd = y.data();
  for (i64 i = 0; i < y.numel(); ++i) yd[i] = ad[i] / bd[i];
  return make_op(std::move(y), {a, b}, [a, b](Node& n) {
    const double* nd = n.grad.data();
    const double* ad = a->value.data();
    const double* bd = b->value.data();
    if (a->requires_grad) {
      double* gd = grad_buf(a).data();
      for (i64 i = 0; i < n.grad.numel(); ++i) gd[i] += nd[i] / bd[i];
    }
    if (b->requires_grad) {
      double* gd = grad_buf(b).data();
      for (i64 i = 0; i < n.grad.numel(); ++i) gd[i] -= nd[i] * ad[i] / (bd[i] * bd[i]);
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor y(a->value.shape());
  const double* ad = a->value.data();
  double* yd = y.data();
  for (i64 i = 0; i < y.numel(); ++i) yd[i] = ad[i] * s;
  return make_op(std::move(y), {a}, [a, s](Node& n) {
    if (!a->requires_grad) return;
    double* gd = grad_buf(a).data();
    const double* nd = n.grad.data();
    for (i64 i = 0; i < n.grad.numel(); ++i) gd[i] += nd[i] * s;
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor y(a->value.shape());
  const double* ad = a->value.data();
  double* yd = y.data();
  for (i64 i = 0; i < y.numel(); ++i) yd[i] = ad[i] + s;
  return make_op(std::move(y), {a}, [a](Node& n) { accum(a, n.grad); });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var abs(const Var& a) {
  return unary_op(
      a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var relu(const Var& a) {
  return unary_op(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var silu(const Var& a) {
  return unary_op(
      a, [](double x) { return x * sigmoid_scalar(x); },
      [](double x, double) {
        double s = sigmoid_scalar(x);
        return s * (1.0 + x * (1.0 - s));
      });
}

Var gelu(const Var& a) {
  // exact erf form
  return unary_op(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x, double) {
        double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        return cdf + x * pdf;
      });
}

Var sigmoid(const Var& a) {
  return unary_op(
      a, [](double x) { return sigmoid_scalar(x); },
      [](double, double y) { return y * (1.0 - y); });
}

// ------------------------------------------------------------- linear algebra

Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  if (av.ndim() != 2 || bv.ndim() != 2 || av.dim(1) != bv.dim(0))
    throw std::invalid_argument("matmul: incompatible shapes " + av.shape_str() + " x " +
                                bv.shape_str());
  i64 m = av.dim(0), k = av.dim(1), nn = bv.dim(1);
  Tensor y({m, nn});
  gemm(false, false, m, nn, k, 1.0, av.data(), bv.data(), 0.0, y.data());
  return make_op(std::move(y), {a, b}, [a, b, m, k, nn](Node& n) {
    if (a->requires_grad)
      gemm(false, true, m, k, nn, 1.0, n.grad.data(), b->value.data(), 1.0, grad_buf(a).data());
    if (b->requires_grad)
      gemm(true, false, k, nn, m, 1.0, a->value.data(), n.grad.data(), 1.0, grad_buf(b).data());
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  if (xv.ndim() < 1 || wv.ndim() != 2)
    throw std::invalid_argument("linear: bad ranks " + xv.shape_str() + ", " + wv.shape_str());
  i64 din = xv.dim(xv.ndim() - 1);
  if (wv.dim(0) != din)
    throw std::invalid_argument("linear: weight rows " + std::to_string(wv.dim(0)) +
                                " != input features " + std::to_string(din));
  i64 dout = wv.dim(1);
  if (b && !(b->value.ndim() == 1 && b->value.dim(0) == dout))
    throw std::invalid_argument("linear: bias shape " + b->value.shape_str());
  i64 rows = xv.numel() / din;

  Shape out_shape = xv.shape();
  out_shape.back() = dout;
  Tensor y(out_shape);
  gemm(false, false, rows, dout, din, 1.0, xv.data(), wv.data(), 0.0, y.data());
  if (b) {
    double* yd = y.data();
    const double* bd = b->value.data();
    for (i64 r = 0; r < rows; ++r)
      for (i64 c = 0; c < dout; ++c) yd[r * dout + c] += bd[c];
  }
  return make_op(std::move(y), {x, w, b}, [x, w, b, rows, din, dout](Node& n) {
    const double* nd = n.grad.data();
    if (x->requires_grad)
      gemm(false, true, rows, din, dout, 1.0, nd, w->value.data(), 1.0, grad_buf(x).data());
    if (w->requires_grad)
      gemm(true, false, din, dout, rows, 1.0, x->value.data(), nd, 1.0, grad_buf(w).data());
    if (b && b->requires_grad) {
      double* gd = grad_buf(b).data();
      for (i64 r = 0; r < rows; ++r)
        for (i64 c = 0; c < dout; ++c) gd[c] += nd[r * dout + c];
    }
  });
}

// ------------------------------------------------------------- conv / spatial

namespace {

struct ConvDims {
  i64 B, Cin, H, W, Cout, kh, kw, Hout, Wout;
  int stride, pad, dilation;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad, int dilation) {
  if (x.ndim() != 4 || w.ndim() != 4)
    throw std::invalid_argument("conv2d: expected 4-d input and weight, got " + x.shape_str() +
                                ", " + w.shape_str());
  if (x.dim(1) != w.dim(1))
    throw std::invalid_argument("conv2d: input channels " + std::to_string(x.dim(1)) +
                                " != weight channels " + std::to_string(w.dim(1)));
  if (stride < 1 || pad < 0 || dilation < 1)
    throw std::invalid_argument("conv2d: bad stride/pad/dilation");
  ConvDims d;
  d.B = x.dim(0);
  d.Cin = x.dim(1);
  d.H = x.dim(2);
  d.W = x.dim(3);
  d.Cout = w.dim(0);
  d.kh = w.dim(2);
  d.kw = w.dim(3);
  d.stride = stride;
  d.pad = pad;
  d.dilation = dilation;
  d.Hout = (d.H + 2 * pad - dilation * (d.kh - 1) - 1) / stride + 1;
  d.Wout = (d.W + 2 * pad - dilation * (d.kw - 1) - 1) / stride + 1;
  if (d.Hout < 1 || d.Wout < 1)
    throw std::invalid_argument("conv2d: kernel does not fit input " + x.shape_str());
  return d;
}

// col is [Cin*kh*kw, Hout*Wout]
void im2col(const double* x, const ConvDims& d, double* col) {
  i64 hw = d.Hout * d.Wout;
  for (i64 c = 0; c < d.Cin; ++c) {
    const double* xc = x + c * d.H * d.W;
    for (i64 ki = 0; ki < d.kh; ++ki) {
      for (i64 kj = 0; kj < d.kw; ++kj) {
        double* row = col + ((c * d.kh + ki) * d.kw + kj) * hw;
        for (i64 oi = 0; oi < d.Hout; ++oi) {
          i64 si = oi * d.stride - d.pad + ki * d.dilation;
          for (i64 oj = 0; oj < d.Wout; ++oj) {
            i64 sj = oj * d.stride - d.pad + kj * d.dilation;
            row[oi * d.Wout + oj] =
                (si >= 0 && si < d.H && sj >= 0 && sj < d.W) ? xc[si * d.W + sj] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_accum(const double* col, const ConvDims& d, double* dx) {
  i64 hw = d.Hout * d.Wout;
  for (i64 c = 0; c < d.Cin; ++c) {
    double* xc = dx + c * d.H * d.W;
    for (i64 ki = 0; ki < d.kh; ++ki) {
      for (i64 kj = 0; kj < d.kw; ++kj) {
        const double* row = col + ((c * d.kh + ki) * d.kw + kj) * hw;
        for (i64 oi = 0; oi < d.Hout; ++oi) {
          i64 si = oi * d.stride - d.pad + ki * d.dilation;
          if (si < 0 || si >= d.H) continue;
          for (i64 oj = 0; oj < d.Wout; ++oj) {
            i64 sj = oj * d.stride - d.pad + kj * d.dilation;
            if (sj < 0 || sj >= d.W) continue;
            xc[si * d.W + sj] += row[oi * d.Wout + oj];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad, int dilation) {
  ConvDims d = conv_dims(x->value, w->value, stride, pad, dilation);
  if (b && !(b->value.ndim() == 1 && b->value.dim(0) == d.Cout))
    throw std::invalid_argument("conv2d: bias shape " + b->value.shape_str());

  i64 ckk = d.Cin * d.kh * d.kw;
  i64 hw = d.Hout * d.Wout;
  Tensor y({d.B, d.Cout, d.Hout, d.Wout});
  Tensor col({ckk, hw});
  for (i64 bi = 0; bi < d.B; ++bi) {
    im2col(x->value.data() + bi * d.Cin * d.H * d.W, d, col.data());
    gemm(false, false, d.Cout, hw, ckk, 1.0, w->value.data(), col.data(), 0.0,
         y.data() + bi * d.Cout * hw);
  }
  if (b) {
    const double* bd = b->value.data();
    for (i64 bi = 0; bi < d.B; ++bi)
      for (i64 c = 0; c < d.Cout; ++c) {
        double* yd = y.data() + (bi * d.Cout + c) * hw;
        for (i64 i = 0; i < hw; ++i) yd[i] += bd[c];
      }
  }
  // the col buffer is recomputed in backward instead of being captured
  return make_op(std::move(y), {x, w, b}, [x, w, b, d, ckk, hw](Node& n) {
    Tensor col({ckk, hw});
    Tensor dcol({ckk, hw});
    for (i64 bi = 0; bi < d.B; ++bi) {
      const double* dy = n.grad.data() + bi * d.Cout * hw;
      if (w->requires_grad) {
        im2col(x->value.data() + bi * d.Cin * d.H * d.W, d, col.data());
        gemm(false, true, d.Cout, ckk, hw, 1.0, dy, col.data(), 1.0, grad_buf(w).data());
      }
      if (x->requires_grad) {
        gemm(true, false, ckk, hw, d.Cout, 1.0, w->value.data(), dy, 0.0, dcol.data());
        col2im_accum(dcol.data(), d, grad_buf(x).data() + bi * d.Cin * d.H * d.W);
      }
    }
    if (b && b->requires_grad) {
      double* gd = grad_buf(b).data();
      for (i64 bi = 0; bi < d.B; ++bi)
        for (i64 c = 0; c < d.Cout; ++c) {
          const double* dy = n.grad.data() + (bi * d.Cout + c) * hw;
          double s = 0.0;
          for (i64 i = 0; i < hw; ++i) s += dy[i];
          gd[c] += s;
        }
    }
  });
}

Var replicate_pad2d(const Var& x, int pad) {
  const Tensor& xv = x->value;
  if (xv.ndim() != 4) throw std::invalid_argument("replicate_pad2d: expected 4-d input");
  if (pad < 0) throw std::invalid_argument("replicate_pad2d: negative pad");
  i64 B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  i64 Ho = H + 2 * pad, Wo = W + 2 * pad;
  Tensor y({B, C, Ho, Wo});
  const double* xd = xv.data();
  double* yd = y.data();
  for (i64 bc = 0; bc < B * C; ++bc) {
    const double* src = xd + bc * H * W;
    double* dst = yd + bc * Ho * Wo;
    for (i64 i = 0; i < Ho; ++i) {
      i64 si = std::clamp<i64>(i - pad, 0, H - 1);
      for (i64 j = 0; j < Wo; ++j) {
        i64 sj = std::clamp<i64>(j - pad, 0, W - 1);
        dst[i * Wo + j] = src[si * W + sj];
      }
    }
  }
  return make_op(std::move(y), {x}, [x, pad, B, C, H, W, Ho, Wo](Node& n) {
    if (!x->requires_grad) return;
    double* gd = grad_buf(x).data();
    const double* nd = n.grad.data();
    for (i64 bc = 0; bc < B * C; ++bc) {
      double* dst = gd + bc * H * W;
      const double* src = nd + bc * Ho * Wo;
      for (i64 i = 0; i < Ho; ++i) {
        i64 si = std::clamp<i64>(i - pad, 0, H - 1);
        for (i64 j = 0; j < Wo; ++j) {
          i64 sj = std::clamp<i64>(j - pad, 0, W - 1);
          dst[si * W + sj] += src[i * Wo + j];
        }
      }
    }
  });
}

Var batchnorm2d(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
                Tensor& running_var, bool training, bool update_running, double momentum,
                double eps) {
  const Tensor& xv = x->value;
  if (xv.ndim() != 4) throw std::invalid_argument("batchnorm2d: expected 4-d input");
  i64 B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  auto check_c = [C](const Tensor& t, const char* what) {
    if (!(t.ndim() == 1 && t.dim(0) == C))
      throw std::invalid_argument(std::string("batchnorm2d: ") + what + " shape " + t.shape_str() +
                                  " for C=" + std::to_string(C));
  };
  check_c(gamma->value, "gamma");
  check_c(beta->value, "beta");
  check_c(running_mean, "running_mean");
  check_c(running_var, "running_var");

  i64 hw = H * W;
  i64 cnt = B * hw;
  std::vector<double> mean(C), invstd(C);
  const double* xd = xv.data();
  if (training) {
    for (i64 c = 0; c < C; ++c) {
      double s = 0.0;
      for (i64 b = 0; b < B; ++b) {
        const double* p = xd + (b * C + c) * hw;
        for (i64 i = 0; i < hw; ++i) s += p[i];
      }
      double mu = s / static_cast<double>(cnt);
      double v = 0.0;
      for (i64 b = 0; b < B; ++b) {
        const double* p = xd + (b * C + c) * hw;
        for (i64 i = 0; i < hw; ++i) {
          double t = p[i] - mu;
          v += t * t;
        }
      }
      v /= static_cast<double>(cnt);  // biased, used for normalization
      mean[c] = mu;
      invstd[c] = 1.0 / std::sqrt(v + eps);
      if (update_running) {
        double unbiased = cnt > 1 ? v * static_cast<double>(cnt) / static_cast<double>(cnt - 1) : v;
        running_mean.data()[c] = (1.0 - momentum) * running_mean.data()[c] + momentum * mu;
        running_var.data()[c] = (1.0 - momentum) * running_var.data()[c] + momentum * unbiased;
      }
    }
  } else {
    for (i64 c = 0; c < C; ++c) {
      mean[c] = running_mean.data()[c];
      invstd[c] = 1.0 / std::sqrt(running_var.data()[c] + eps);
    }
  }

  Tensor y(xv.shape());
  double* yd = y.data();
  const double* gm = gamma->value.data();
  const double* bt = beta->value.data();
  for (i64 b = 0; b < B; ++b)
    for (i64 c = 0; c < C; ++c) {
      const double* p = xd + (b * C + c) * hw;
      double* q = yd + (b * C + c) * hw;
      double a = gm[c] * invstd[c];
      double o = bt[c] - a * mean[c];
      for (i64 i = 0; i < hw; ++i) q[i] = a * p[i] + o;
    }

  return make_op(std::move(y), {x, gamma, beta},
                 [x, gamma, beta, mean, invstd, training, B, C, hw, cnt](Node& n) {
                   const double* xd = x->value.data();
                   const double* nd = n.grad.data();
                   const double* gm = gamma->value.data();
                   double* dg = gamma->requires_grad ? grad_buf(gamma).data() : nullptr;
                   double* db = beta->requires_grad ? grad_buf(beta).data() : nullptr;
                   double* dx = x->requires_grad ? grad_buf(x).data() : nullptr;
                   double fn = static_cast<double>(cnt);
                   for (i64 c = 0; c < C; ++c) {
                     double mu = mean[c], is = invstd[c];
                     double sum_dy = 0.0, sum_dy_xhat = 0.0;
                     for (i64 b = 0; b < B; ++b) {
                       const double* p = xd + (b * C + c) * hw;
                       const double* g = nd + (b * C + c) * hw;
                       for (i64 i = 0; i < hw; ++i) {
                         sum_dy += g[i];
                         sum_dy_xhat += g[i] * (p[i] - mu) * is;
                       }
                     }
                     if (dg) dg[c] += sum_dy_xhat;
                     if (db) db[c] += sum_dy;
                     if (!dx) continue;
                     if (training) {
                       // dx = (gamma*invstd/n) * (n*dy - sum_dy - xhat*sum_dy_xhat)
                       double a = gm[c] * is / fn;
                       for (i64 b = 0; b < B; ++b) {
                         const double* p = xd + (b * C + c) * hw;
                         const double* g = nd + (b * C + c) * hw;
                         double* q = dx + (b * C + c) * hw;
                         for (i64 i = 0; i < hw; ++i) {
                           double xhat = (p[i] - mu) * is;
                           q[i] += a * (fn * g[i] - sum_dy - xhat * sum_dy_xhat);
                         }
                       }
                     } else {
                       double a = gm[c] * is;
                       for (i64 b = 0; b < B; ++b) {
                         const double* g = nd + (b * C + c) * hw;
                         double* q = dx + (b * C + c) * hw;
                         for (i64 i = 0; i < hw; ++i) q[i] += a * g[i];
                       }
                     }
                   }
                 });
}

Var upsample_nearest2x(const Var& x) {
  const Tensor& xv = x->value;
  if (xv.ndim() != 4) throw std::invalid_argument("upsample_nearest2x: expected 4-d input");
  i64 B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  Tensor y({B, C, 2 * H, 2 * W});
  const double* xd = xv.data();
  double* yd = y.data();
  for (i64 bc = 0; bc < B * C; ++bc) {
    const double* src = xd + bc * H * W;
    double* dst = yd + bc * 4 * H * W;
    for (i64 i = 0; i < H; ++i)
      for (i64 j = 0; j < W; ++j) {
        double v = src[i * W + j];
        dst[(2 * i) * 2 * W + 2 * j] = v;
        dst[(2 * i) * 2 * W + 2 * j + 1] = v;
        dst[(2 * i + 1) * 2 * W + 2 * j] = v;
        dst[(2 * i + 1) * 2 * W + 2 * j + 1] = v;
      }
  }
  return make_op(std::move(y), {x}, [x, B, C, H, W](Node& n) {
    if (!x->requires_grad) return;
    double* gd = grad_buf(x).data();
    const double* nd = n.grad.data();
    for (i64 bc = 0; bc < B * C; ++bc) {
      double* dst = gd + bc * H * W;
      const double* src = nd + bc * 4 * H * W;
      for (i64 i = 0; i < H; ++i)
        for (i64 j = 0; j < W; ++j)
          dst[i * W + j] += src[(2 * i) * 2 * W + 2 * j] + src[(2 * i) * 2 * W + 2 * j + 1] +
                            src[(2 * i + 1) * 2 * W + 2 * j] +
                            src[(2 * i + 1) * 2 * W + 2 * j + 1];
    }
  });
}

namespace {

struct LerpIdx {
  i64 lo, hi;
  double w_hi;  // weight of hi sample; lo gets 1 - w_hi
};

// half-pixel-center source coordinate, clamped to the valid range
LerpIdx lerp_index(i64 out, i64 in_size, double scale) {
  double src = (static_cast<double>(out) + 0.5) * scale - 0.5;
  if (src < 0.0) src = 0.0;
  double mx = static_cast<double>(in_size - 1);
  if (src > mx) src = mx;
  LerpIdx r;
  r.lo = static_cast<i64>(src);
  r.hi = std::min(r.lo + 1, in_size - 1);
  r.w_hi = src - static_cast<double>(r.lo);
  return r;
}

}  // namespace

Var upsample_bilinear(const Var& x, i64 out_h, i64 out_w) {
  const Tensor& xv = x->value;
  if (xv.ndim() != 4) throw std::invalid_argument("upsample_bilinear: expected 4-d input");
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("upsample_bilinear: bad output size");
  i64 B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  double sh = static_cast<double>(H) / static_cast<double>(out_h);
  double sw = static_cast<double>(W) / static_cast<double>(out_w);
  std::vector<LerpIdx> iy(out_h), ix(out_w);
  for (i64 i = 0; i < out_h; ++i) iy[i] = lerp_index(i, H, sh);
  for (i64 j = 0; j < out_w; ++j) ix[j] = lerp_index(j, W, sw);

  Tensor y({B, C, out_h, out_w});
  const double* xd = xv.data();
  double* yd = y.data();
  for (i64 bc = 0; bc < B * C; ++bc) {
    const double* src = xd + bc * H * W;
    double* dst = yd + bc * out_h * out_w;
    for (i64 i = 0; i < out_h; ++i)
      for (i64 j = 0; j < out_w; ++j) {
        const LerpIdx &a = iy[i], &b = ix[j];
        double top = src[a.lo * W + b.lo] * (1.0 - b.w_hi) + src[a.lo * W + b.hi] * b.w_hi;
        double bot = src[a.hi * W + b.lo] * (1.0 - b.w_hi) + src[a.hi * W + b.hi] * b.w_hi;
        dst[i * out_w + j] = top * (1.0 - a.w_hi) + bot * a.w_hi;
      }
  }
  return make_op(std::move(y), {x}, [x, B, C, H, W, out_h, out_w, iy, ix](Node& n) {
    if (!x->requires_grad) return;
    double* gd = grad_buf(x).data();
    const double* nd = n.grad.data();
    for (i64 bc = 0; bc < B * C; ++bc) {
      double* dst = gd + bc * H * W;
      const double* src = nd + bc * out_h * out_w;
      for (i64 i = 0; i < out_h; ++i)
        for (i64 j = 0; j < out_w; ++j) {
          const LerpIdx &a = iy[i], &b = ix[j];
          double g = src[i * out_w + j];
          dst[a.lo * W + b.lo] += g * (1.0 - a.w_hi) * (1.0 - b.w_hi);
          dst[a.lo * W + b.hi] += g * (1.0 - a.w_hi) * b.w_hi;
          dst[a.hi * W + b.lo] += g * a.w_hi * (1.0 - b.w_hi);
          dst[a.hi * W + b.hi] += g * a.w_hi * b.w_hi;
        }
    }
  });
}

// ------------------------------------------------------- token <-> map moves

Var reshape(const Var& a, const Shape& shape) {
  Tensor y = a->value.reshaped(shape);
  return make_op(std::move(y), {a}, [a](Node& n) {
    if (!a->requires_grad) return;
    double* gd = grad_buf(a).data();
    const double* nd = n.grad.data();
    for (i64 i = 0; i < n.grad.numel(); ++i) gd[i] += nd[i];
  });
}

Var i2t(const Var& x) {
  const Tensor& xv = x->value;
  if (xv.ndim() != 4) throw std::invalid_argument("i2t: expected 4-d input");
  i64 B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  Tensor y({B, H * W, C});
  const double* xd = xv.data();
  double* yd = y.data();
  for (i64 b = 0; b < B; ++b)
    for (i64 c = 0; c < C; ++c) {
      const double* src = xd + (b * C + c) * H * W;
      double* dst = yd + b * H * W * C + c;
      for (i64 i = 0; i < H * W; ++i) dst[i * C] = src[i];
    }
  return make_op(std::move(y), {x}, [x, B, C, H, W](Node& n) {
    if (!x->requires_grad) return;
    double* gd = grad_buf(x).data();
    const double* nd = n.grad.data();
    for (i64 b = 0; b < B; ++b)
      for (i64 c = 0; c < C; ++c) {
        double* dst = gd + (b * C + c) * H * W;
        const double* src = nd + b * H * W * C + c;
        for (i64 i = 0; i < H * W; ++i) dst[i] += src[i * C];
      }
  });
}

Var t2i(const Var& t, i64 h, i64 w) {
  const Tensor& tv = t->value;
  if (tv.ndim() != 3) throw std::invalid_argument("t2i: expected 3-d tokens");
  i64 B = tv.dim(0), N = tv.dim(1), C = tv.dim(2);
  if (N != h * w)
    throw std::invalid_argument("t2i: " + std::to_string(N) + " tokens cannot fill " +
                                std::to_string(h) + "x" + std::to_string(w));
  Tensor y({B, C, h, w});
  const double* td = tv.data();
  double* yd = y.data();
  for (i64 b = 0; b < B; ++b)
    for (i64 c = 0; c < C; ++c) {
      double* dst = yd + (b * C + c) * N;
      const double* src = td + b * N * C + c;
      for (i64 i = 0; i < N; ++i) dst[i] = src[i * C];
    }
  return make_op(std::move(y), {t}, [t, B, N, C](Node& n) {
    if (!t->requires_grad) return;
    double* gd = grad_buf(t).data();
    const double* nd = n.grad.data();
    for (i64 b = 0; b < B; ++b)
      for (i64 c = 0; c < C; ++c) {
        const double* src = nd + (b * C + c) * N;
        double* dst = gd + b * N * C + c;
        for (i64 i = 0; i < N; ++i) dst[i * C] += src[i];
      }
  });
}

Var concat_channels(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_channels: empty input list");
  const Tensor& first = xs[0]->value;
  if (first.ndim() != 4) throw std::invalid_argument("concat_channels: expected 4-d inputs");
  i64 B = first.dim(0), H = first.dim(2), W = first.dim(3);
  i64 ctotal = 0;
  for (const auto& v : xs) {
    const Tensor& t = v->value;
    if (t.ndim() != 4 || t.dim(0) != B || t.dim(2) != H || t.dim(3) != W)
      throw std::invalid_argument("concat_channels: mismatched shape " + t.shape_str());
    ctotal += t.dim(1);
  }
  Tensor y({B, ctotal, H, W});
  i64 hw = H * W;
  double* yd = y.data();
  i64 coff = 0;
  for (const auto& v : xs) {
    i64 C = v->value.dim(1);
    const double* src = v->value.data();
    for (i64 b = 0; b < B; ++b)
      std::copy(src + b * C * hw, src + (b + 1) * C * hw, yd + (b * ctotal + coff) * hw);
    coff += C;
  }
  return make_op(std::move(y), xs, [xs, B, ctotal, hw](Node& n) {
    const double* nd = n.grad.data();
    i64 coff = 0;
    for (const auto& v : xs) {
      i64 C = v->value.dim(1);
      if (v->requires_grad) {
        double* gd = grad_buf(v).data();
        for (i64 b = 0; b < B; ++b) {
          const double* src = nd + (b * ctotal + coff) * hw;
          double* dst = gd + b * C * hw;
          for (i64 i = 0; i < C * hw; ++i) dst[i] += src[i];
        }
      }
      coff += C;
    }
  });
}

Var tile_token(const Var& token, i64 batch) {
  const Tensor& cv = token->value;
  if (cv.ndim() != 1) throw std::invalid_argument("tile_token: expected a 1-d token");
  if (batch < 1) throw std::invalid_argument("tile_token: batch must be >= 1");
  i64 D = cv.dim(0);
  Tensor y({batch, 1, D});
  for (i64 b = 0; b < batch; ++b) std::copy(cv.data(), cv.data() + D, y.data() + b * D);
  return make_op(std::move(y), {token}, [token, batch, D](Node& n) {
    if (!token->requires_grad) return;
    const double* nd = n.grad.data();
    double* gd = grad_buf(token).data();
    for (i64 b = 0; b < batch; ++b)
      for (i64 k = 0; k < D; ++k) gd[k] += nd[b * D + k];
  });
}

Var prepend_token(const Var& tokens, const Var& token) {
  const Tensor& tv = tokens->value;
  const Tensor& cv = token->value;
  if (tv.ndim() != 3) throw std::invalid_argument("prepend_token: expected 3-d tokens");
  i64 B = tv.dim(0), N = tv.dim(1), D = tv.dim(2);
  if (!(cv.ndim() == 1 && cv.dim(0) == D))
    throw std::invalid_argument("prepend_token: token shape " + cv.shape_str() + " for D=" +
                                std::to_string(D));
  Tensor y({B, N + 1, D});
  const double* td = tv.data();
  const double* cd = cv.data();
  double* yd = y.data();
  for (i64 b = 0; b < B; ++b) {
    std::copy(cd, cd + D, yd + b * (N + 1) * D);
    std::copy(td + b * N * D, td + (b + 1) * N * D, yd + b * (N + 1) * D + D);
  }
  return make_op(std::move(y), {tokens, token}, [tokens, token, B, N, D](Node& n) {
    const double* nd = n.grad.data();
    if (token->requires_grad) {
      double* gd = grad_buf(token).data();
      for (i64 b = 0; b < B; ++b)
        for (i64 k = 0; k < D; ++k) gd[k] += nd[b * (N + 1) * D + k];
    }
    if (tokens->requires_grad) {
      double* gd = grad_buf(tokens).data();
      for (i64 b = 0; b < B; ++b) {
        const double* src = nd + b * (N + 1) * D + D;
        double* dst = gd + b * N * D;
        for (i64 i = 0; i < N * D; ++i) dst[i] += src[i];
      }
    }
  });
}

Var slice_tokens(const Var& tokens, i64 from, i64 to) {
  const Tensor& tv = tokens->value;
  if (tv.ndim() != 3) throw std::invalid_argument("slice_tokens: expected 3-d tokens");
  i64 B = tv.dim(0), N = tv.dim(1), D = tv.dim(2);
  if (from < 0 || to > N || from >= to)
    throw std::invalid_argument("slice_tokens: range [" + std::to_string(from) + "," +
                                std::to_string(to) + ") for N=" + std::to_string(N));
  i64 M = to - from;
  Tensor y({B, M, D});
  const double* td = tv.data();
  double* yd = y.data();
  for (i64 b = 0; b < B; ++b)
    std::copy(td + (b * N + from) * D, td + (b * N + to) * D, yd + b * M * D);
  return make_op(std::move(y), {tokens}, [tokens, B, N, D, from, M](Node& n) {
    if (!tokens->requires_grad) return;
    double* gd = grad_buf(tokens).data();
    const double* nd = n.grad.data();
    for (i64 b = 0; b < B; ++b) {
      const double* src = nd + b * M * D;
      double* dst = gd + (b * N + from) * D;
      for (i64 i = 0; i < M * D; ++i) dst[i] += src[i];
    }
  });
}

Var channel_gate(const Var& x, const Var& gate) {
  const Tensor& xv = x->value;
  const Tensor& gv = gate->value;
  if (xv.ndim() != 4) throw std::invalid_argument("channel_gate: expected 4-d input");
  i64 B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  if (!(gv.ndim() == 2 && gv.dim(0) == B && gv.dim(1) == C))
    throw std::invalid_argument("channel_gate: gate shape " + gv.shape_str() + " for input " +
                                xv.shape_str());
  i64 hw = H * W;
  Tensor y(xv.shape());
  const double* xd = xv.data();
  const double* gd0 = gv.data();
  double* yd = y.data();
  for (i64 b = 0; b < B; ++b)
    for (i64 c = 0; c < C; ++c) {
      double g = gd0[b * C + c];
      const double* src = xd + (b * C + c) * hw;
      double* dst = yd + (b * C + c) * hw;
      for (i64 i = 0; i < hw; ++i) dst[i] = src[i] * g;
    }
  return make_op(std::move(y), {x, gate}, [x, gate, B, C, hw](Node& n) {
    const double* nd = n.grad.data();
    const double* xd = x->value.data();
    const double* gv = gate->value.data();
    double* dx = x->requires_grad ? grad_buf(x).data() : nullptr;
    double* dgt = gate->requires_grad ? grad_buf(gate).data() : nullptr;
    for (i64 b = 0; b < B; ++b)
      for (i64 c = 0; c < C; ++c) {
        const double* g = nd + (b * C + c) * hw;
        if (dx) {
          double gg = gv[b * C + c];
          double* q = dx + (b * C + c) * hw;
          for (i64 i = 0; i < hw; ++i) q[i] += g[i] * gg;
        }
        if (dgt) {
          const double* src = xd + (b * C + c) * hw;
          double s = 0.0;
          for (i64 i = 0; i < hw; ++i) s += g[i] * src[i];
          dgt[b * C + c] += s;
        }
      }
  });
}

// ------------------------------------------------------------------ attention

namespace detail {

void softmax_rows(double* x, i64 rows, i64 cols) {
  for (i64 r = 0; r < rows; ++r) {
    double* row = x + r * cols;
    double mx = row[0];
    for (i64 c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
    double s = 0.0;
    for (i64 c = 0; c < cols; ++c) {
      row[c] = std::exp(row[c] - mx);
      s += row[c];
    }
    assert(std::isfinite(s) && s > 0.0);
    double inv = 1.0 / s;
    for (i64 c = 0; c < cols; ++c) row[c] *= inv;
  }
}

}  // namespace detail

namespace {

// dS = P * (dP - rowsum(dP * P)), written into dp in place
void softmax_backward_rows(const double* p, double* dp, i64 rows, i64 cols) {
  for (i64 r = 0; r < rows; ++r) {
    const double* pr = p + r * cols;
    double* dr = dp + r * cols;
    double dot = 0.0;
    for (i64 c = 0; c < cols; ++c) dot += dr[c] * pr[c];
    for (i64 c = 0; c < cols; ++c) dr[c] = pr[c] * (dr[c] - dot);
  }
}

void check_proj(const Var& w, i64 d, const char* what) {
  if (!(w->value.ndim() == 2 && w->value.dim(0) == d && w->value.dim(1) == d))
    throw std::invalid_argument(std::string(what) + ": projection shape " + w->value.shape_str() +
                                " for D=" + std::to_string(d));
}

// rows x dout = x(rows x din) * w(din x dout) [+ bias]
void project(const double* x, i64 rows, i64 din, const Tensor& w, const Tensor* b, double* out) {
  gemm(false, false, rows, w.dim(1), din, 1.0, x, w.data(), 0.0, out);
  if (b) {
    const double* bd = b->data();
    i64 dout = w.dim(1);
    for (i64 r = 0; r < rows; ++r)
      for (i64 c = 0; c < dout; ++c) out[r * dout + c] += bd[c];
  }
}

void copy_head(const double* full, i64 rows, i64 d, i64 off, i64 dh, double* out) {
  for (i64 r = 0; r < rows; ++r) std::copy(full + r * d + off, full + r * d + off + dh, out + r * dh);
}

void add_head(const double* part, i64 rows, i64 dh, i64 off, i64 d, double* full) {
  for (i64 r = 0; r < rows; ++r)
    for (i64 c = 0; c < dh; ++c) full[r * d + off + c] += part[r * dh + c];
}

}  // namespace

Var multihead_attention(const Var& q_in, const Var& kv_in, const Var& wq, const Var& bq,
                        const Var& wk, const Var& bk, const Var& wv, const Var& bv, const Var& wo,
                        const Var& bo, int heads) {
  const Tensor& qv = q_in->value;
  const Tensor& kvv = kv_in->value;
  if (qv.ndim() != 3 || kvv.ndim() != 3)
    throw std::invalid_argument("multihead_attention: expected 3-d token inputs");
  i64 B = qv.dim(0), Nq = qv.dim(1), D = qv.dim(2);
  i64 Nk = kvv.dim(1);
  if (kvv.dim(0) != B || kvv.dim(2) != D)
    throw std::invalid_argument("multihead_attention: query " + qv.shape_str() +
                                " vs key/value " + kvv.shape_str());
  check_proj(wq, D, "multihead_attention wq");
  check_proj(wk, D, "multihead_attention wk");
  check_proj(wv, D, "multihead_attention wv");
  check_proj(wo, D, "multihead_attention wo");
  if (heads < 1 || D % heads != 0)
    throw std::invalid_argument("multihead_attention: heads=" + std::to_string(heads) +
                                " must divide D=" + std::to_string(D));
  i64 dh = D / heads;
  double alpha = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor Q({B * Nq, D}), K({B * Nk, D}), V({B * Nk, D}), O({B * Nq, D});
  project(qv.data(), B * Nq, D, wq->value, &bq->value, Q.data());
  project(kvv.data(), B * Nk, D, wk->value, &bk->value, K.data());
  project(kvv.data(), B * Nk, D, wv->value, &bv->value, V.data());

  Tensor qh({Nq, dh}), kh({Nk, dh}), vh({Nk, dh}), s({Nq, Nk}), oh({Nq, dh});
  O.zero();
  for (i64 b = 0; b < B; ++b)
    for (int h = 0; h < heads; ++h) {
      i64 off = static_cast<i64>(h) * dh;
      copy_head(Q.data() + b * Nq * D, Nq, D, off, dh, qh.data());
      copy_head(K.data() + b * Nk * D, Nk, D, off, dh, kh.data());
      copy_head(V.data() + b * Nk * D, Nk, D, off, dh, vh.data());
      gemm(false, true, Nq, Nk, dh, alpha, qh.data(), kh.data(), 0.0, s.data());
      detail::softmax_rows(s.data(), Nq, Nk);
      gemm(false, false, Nq, dh, Nk, 1.0, s.data(), vh.data(), 0.0, oh.data());
      add_head(oh.data(), Nq, dh, off, D, O.data() + b * Nq * D);
    }

  Tensor y({B, Nq, D});
  project(O.data(), B * Nq, D, wo->value, &bo->value, y.data());

  // Q, K, V, O are kept; the per-head softmax is recomputed in backward
  auto fn = [q_in, kv_in, wq, bq, wk, bk, wv, bv, wo, bo, heads, dh, alpha, B, Nq, Nk, D,
             Q = std::move(Q), K = std::move(K), V = std::move(V), O = std::move(O)](Node& n) {
    const double* dy = n.grad.data();  // [B*Nq, D]

    Tensor dO({B * Nq, D});
    gemm(false, true, B * Nq, D, D, 1.0, dy, wo->value.data(), 0.0, dO.data());
    if (wo->requires_grad)
      gemm(true, false, D, D, B * Nq, 1.0, O.data(), dy, 1.0, grad_buf(wo).data());
    if (bo->requires_grad) {
      double* gd = grad_buf(bo).data();
      for (i64 r = 0; r < B * Nq; ++r)
        for (i64 c = 0; c < D; ++c) gd[c] += dy[r * D + c];
    }

    Tensor dQ({B * Nq, D}), dK({B * Nk, D}), dV({B * Nk, D});
    dQ.zero();
    dK.zero();
    dV.zero();
    Tensor qh({Nq, dh}), kh({Nk, dh}), vh({Nk, dh}), s({Nq, Nk}), dp({Nq, Nk});
    Tensor doh({Nq, dh}), dqh({Nq, dh}), dkh({Nk, dh}), dvh({Nk, dh});
    for (i64 b = 0; b < B; ++b)
      for (int h = 0; h < heads; ++h) {
        i64 off = static_cast<i64>(h) * dh;
        copy_head(Q.data() + b * Nq * D, Nq, D, off, dh, qh.data());
        copy_head(K.data() + b * Nk * D, Nk, D, off, dh, kh.data());
        copy_head(V.data() + b * Nk * D, Nk, D, off, dh, vh.data());
        copy_head(dO.data() + b * Nq * D, Nq, D, off, dh, doh.data());
        gemm(false, true, Nq, Nk, dh, alpha, qh.data(), kh.data(), 0.0, s.data());
        detail::softmax_rows(s.data(), Nq, Nk);
        gemm(false, true, Nq, Nk, dh, 1.0, doh.data(), vh.data(), 0.0, dp.data());
        gemm(true, false, Nk, dh, Nq, 1.0, s.data(), doh.data(), 0.0, dvh.data());
        softmax_backward_rows(s.data(), dp.data(), Nq, Nk);
        gemm(false, false, Nq, dh, Nk, alpha, dp.data(), kh.data(), 0.0, dqh.data());
        gemm(true, false, Nk, dh, Nq, alpha, dp.data(), qh.data(), 0.0, dkh.data());
        add_head(dqh.data(), Nq, dh, off, D, dQ.data() + b * Nq * D);
        add_head(dkh.data(), Nk, dh, off, D, dK.data() + b * Nk * D);
        add_head(dvh.data(), Nk, dh, off, D, dV.data() + b * Nk * D);
      }

    auto back_proj = [](const Var& inp, const Var& w, const Var& bias, const Tensor& dproj,
                        i64 rows, i64 d) {
      if (inp->requires_grad)
        gemm(false, true, rows, d, d, 1.0, dproj.data(), w->value.data(), 1.0,
             grad_buf(inp).data());
      if (w->requires_grad)
        gemm(true, false, d, d, rows, 1.0, inp->value.data(), dproj.data(), 1.0,
             grad_buf(w).data());
      if (bias->requires_grad) {
        double* gd = grad_buf(bias).data();
        const double* dp = dproj.data();
        for (i64 r = 0; r < rows; ++r)
          for (i64 c = 0; c < d; ++c) gd[c] += dp[r * d + c];
      }
    };
    back_proj(q_in, wq, bq, dQ, B * Nq, D);
    back_proj(kv_in, wk, bk, dK, B * Nk, D);
    back_proj(kv_in, wv, bv, dV, B * Nk, D);
  };
  return make_op(std::move(y), {q_in, kv_in, wq, bq, wk, bk, wv, bv, wo, bo}, std::move(fn));
}

Var subtraction_attention(const Var& q_in, const Var& kv_in, const Var& wq, const Var& wk,
                          const Var& wv, double norm_eps) {
  const Tensor& qv = q_in->value;
  const Tensor& kvv = kv_in->value;
  if (qv.ndim() != 3 || kvv.ndim() != 3)
    throw std::invalid_argument("subtraction_attention: expected 3-d token inputs");
  i64 B = qv.dim(0), Nq = qv.dim(1), D = qv.dim(2);
  i64 Nk = kvv.dim(1);
  if (kvv.dim(0) != B || kvv.dim(2) != D)
    throw std::invalid_argument("subtraction_attention: query " + qv.shape_str() +
                                " vs key/value " + kvv.shape_str());
  check_proj(wq, D, "subtraction_attention wq");
  check_proj(wk, D, "subtraction_attention wk");
  check_proj(wv, D, "subtraction_attention wv");
  if (!(norm_eps > 0.0)) throw std::invalid_argument("subtraction_attention: norm_eps must be > 0");

  Tensor Q({B * Nq, D}), K({B * Nk, D}), V({B * Nk, D});
  project(qv.data(), B * Nq, D, wq->value, nullptr, Q.data());
  project(kvv.data(), B * Nk, D, wk->value, nullptr, K.data());
  project(kvv.data(), B * Nk, D, wv->value, nullptr, V.data());

  auto row_norms = [D](const Tensor& m, i64 rows, std::vector<double>& out) {
    out.resize(static_cast<size_t>(rows));
    for (i64 r = 0; r < rows; ++r) {
      const double* p = m.data() + r * D;
      double s = 0.0;
      for (i64 c = 0; c < D; ++c) s += p[c] * p[c];
      out[static_cast<size_t>(r)] = std::sqrt(s);
    }
  };
  std::vector<double> nq, nk;
  row_norms(Q, B * Nq, nq);
  row_norms(K, B * Nk, nk);

  Tensor y({B, Nq, D});
  Tensor l({Nq, Nk});
  for (i64 b = 0; b < B; ++b) {
    const double* qb = Q.data() + b * Nq * D;
    const double* kb = K.data() + b * Nk * D;
    const double* vb = V.data() + b * Nk * D;
    gemm(false, true, Nq, Nk, D, 1.0, qb, kb, 0.0, l.data());
    for (i64 i = 0; i < Nq; ++i) {
      double ni = nq[static_cast<size_t>(b * Nq + i)] + norm_eps;
      for (i64 j = 0; j < Nk; ++j)
        l.data()[i * Nk + j] /= ni * (nk[static_cast<size_t>(b * Nk + j)] + norm_eps);
    }
    detail::softmax_rows(l.data(), Nq, Nk);
    double* yb = y.data() + b * Nq * D;
    gemm(false, false, Nq, D, Nk, -1.0, l.data(), vb, 0.0, yb);
    for (i64 i = 0; i < Nq * D; ++i) yb[i] += qb[i];
  }

  auto fn = [q_in, kv_in, wq, wk, wv, norm_eps, B, Nq, Nk, D, Q = std::move(Q), K = std::move(K),
             V = std::move(V), nq = std::move(nq), nk = std::move(nk)](Node& n) {
    Tensor dQ({B * Nq, D}), dK({B * Nk, D}), dV({B * Nk, D});
    dQ.zero();
    dK.zero();
    dV.zero();
    Tensor l({Nq, Nk}), p({Nq, Nk}), dl({Nq, Nk});
    for (i64 b = 0; b < B; ++b) {
      const double* qb = Q.data() + b * Nq * D;
      const double* kb = K.data() + b * Nk * D;
      const double* vb = V.data() + b * Nk * D;
      const double* dyb = n.grad.data() + b * Nq * D;
      double* dqb = dQ.data() + b * Nq * D;
      double* dkb = dK.data() + b * Nk * D;
      double* dvb = dV.data() + b * Nk * D;

      // rebuild L (pre-softmax) and P
      gemm(false, true, Nq, Nk, D, 1.0, qb, kb, 0.0, l.data());
      for (i64 i = 0; i < Nq; ++i) {
        double ni = nq[static_cast<size_t>(b * Nq + i)] + norm_eps;
        for (i64 j = 0; j < Nk; ++j)
          l.data()[i * Nk + j] /= ni * (nk[static_cast<size_t>(b * Nk + j)] + norm_eps);
      }
      std::copy(l.data(), l.data() + Nq * Nk, p.data());
      detail::softmax_rows(p.data(), Nq, Nk);

      // out = Q - P V
      for (i64 i = 0; i < Nq * D; ++i) dqb[i] += dyb[i];
      gemm(false, true, Nq, Nk, D, -1.0, dyb, vb, 0.0, dl.data());  // dP
      gemm(true, false, Nk, D, Nq, -1.0, p.data(), dyb, 1.0, dvb);
      softmax_backward_rows(p.data(), dl.data(), Nq, Nk);  // now dL

      // L_ij = s_ij / (ni * nj): split into the dot-product path and the norm path
      for (i64 i = 0; i < Nq; ++i) {
        double ni = nq[static_cast<size_t>(b * Nq + i)] + norm_eps;
        double dni = 0.0;
        for (i64 j = 0; j < Nk; ++j) {
          double lij = l.data()[i * Nk + j];
          double g = dl.data()[i * Nk + j];
          dni -= g * lij / ni;
          dl.data()[i * Nk + j] = g / (ni * (nk[static_cast<size_t>(b * Nk + j)] + norm_eps));
        }
        double raw = nq[static_cast<size_t>(b * Nq + i)];
        if (raw > 0.0) {
          double c = dni / raw;
          for (i64 d = 0; d < D; ++d) dqb[i * D + d] += c * qb[i * D + d];
        }
      }
      // dl now holds ds; recover dL_ij = ds_ij * ni * nj for the key-norm path
      for (i64 j = 0; j < Nk; ++j) {
        double nj = nk[static_cast<size_t>(b * Nk + j)] + norm_eps;
        double dnj = 0.0;
        for (i64 i = 0; i < Nq; ++i) {
          double ni = nq[static_cast<size_t>(b * Nq + i)] + norm_eps;
          double dlij = dl.data()[i * Nk + j] * ni * nj;
          dnj -= dlij * l.data()[i * Nk + j] / nj;
        }
        double raw = nk[static_cast<size_t>(b * Nk + j)];
        if (raw > 0.0) {
          double c = dnj / raw;
          for (i64 d = 0; d < D; ++d) dkb[j * D + d] += c * kb[j * D + d];
        }
      }
      gemm(false, false, Nq, D, Nk, 1.0, dl.data(), kb, 1.0, dqb);
      gemm(true, false, Nk, D, Nq, 1.0, dl.data(), qb, 1.0, dkb);
    }

    if (q_in->requires_grad)
      gemm(false, true, B * Nq, D, D, 1.0, dQ.data(), wq->value.data(), 1.0,
           grad_buf(q_in).data());
    if (wq->requires_grad)
      gemm(true, false, D, D, B * Nq, 1.0, q_in->value.data(), dQ.data(), 1.0,
           grad_buf(wq).data());
    if (kv_in->requires_grad) {
      gemm(false, true, B * Nk, D, D, 1.0, dK.data(), wk->value.data(), 1.0,
           grad_buf(kv_in).data());
      gemm(false, true, B * Nk, D, D, 1.0, dV.data(), wv->value.data(), 1.0,
           grad_buf(kv_in).data());
    }
    if (wk->requires_grad)
      gemm(true, false, D, D, B * Nk, 1.0, kv_in->value.data(), dK.data(), 1.0,
           grad_buf(wk).data());
    if (wv->requires_grad)
      gemm(true, false, D, D, B * Nk, 1.0, kv_in->value.data(), dV.data(), 1.0,
           grad_buf(wv).data());
  };
  return make_op(std::move(y), {q_in, kv_in, wq, wk, wv}, std::move(fn));
}

// ----------------------------------------------------------------- reductions

Var sum_all(const Var& a) {
  Tensor y({1});
  y.data()[0] = a->value.sum();
  return make_op(std::move(y), {a}, [a](Node& n) {
    if (!a->requires_grad) return;
    double g = n.grad.data()[0];
    double* gd = grad_buf(a).data();
    for (i64 i = 0; i < a->value.numel(); ++i) gd[i] += g;
  });
}

Var mean_all(const Var& a) {
  if (a->value.numel() == 0) throw std::invalid_argument("mean_all: empty tensor");
  Tensor y({1});
  y.data()[0] = a->value.sum() / static_cast<double>(a->value.numel());
  return make_op(std::move(y), {a}, [a](Node& n) {
    if (!a->requires_grad) return;
    double g = n.grad.data()[0] / static_cast<double>(a->value.numel());
    double* gd = grad_buf(a).data();
    for (i64 i = 0; i < a->value.numel(); ++i) gd[i] += g;
  });
}

}  // namespace damnet
