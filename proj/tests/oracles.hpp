#pragma once

// Scalar reference implementations used to cross-check the library. Everything
// here is written as plain loops over flat buffers and reads weights by name
// from the ParamStore; none of it calls the graph ops.

#include "damnet/nn.hpp"
#include "damnet/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace oracle {

using damnet::i64;
using damnet::ParamStore;
using damnet::Shape;
using damnet::Tensor;

inline const Tensor& P(const ParamStore& ps, const std::string& name) {
  const ParamStore::Entry* e = ps.find(name);
  if (!e) throw std::runtime_error("oracle: no parameter named " + name);
  return e->var->value;
}

inline const Tensor& B(const ParamStore& ps, const std::string& name) {
  for (const auto& [n, t] : ps.buffers())
    if (n == name) return t;
  throw std::runtime_error("oracle: no buffer named " + name);
}

inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}
inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }
inline double silu(double x) { return x * sigmoid(x); }
inline double relu(double x) { return x > 0.0 ? x : 0.0; }

inline void softmax_row(double* p, i64 n) {
  double m = p[0];
  for (i64 j = 1; j < n; ++j) m = std::max(m, p[j]);
  double s = 0.0;
  for (i64 j = 0; j < n; ++j) {
    p[j] = std::exp(p[j] - m);
    s += p[j];
  }
  for (i64 j = 0; j < n; ++j) p[j] /= s;
}

// y[r][o] = sum_i x[r][i] w[i][o] + b[o], rows = product of leading dims
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor* b) {
  i64 din = w.dim(0), dout = w.dim(1);
  i64 rows = x.numel() / din;
  Shape out_shape = x.shape();
  out_shape.back() = dout;
  Tensor y(out_shape);
  for (i64 r = 0; r < rows; ++r)
    for (i64 o = 0; o < dout; ++o) {
      double acc = b ? (*b)[o] : 0.0;
      for (i64 i = 0; i < din; ++i) acc += x[r * din + i] * w[i * dout + o];
      y.data()[r * dout + o] = acc;
    }
  return y;
}

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* b, int stride, int pad,
                     int dilation) {
  i64 Bn = x.dim(0), I = x.dim(1), H = x.dim(2), W = x.dim(3);
  i64 O = w.dim(0), K = w.dim(2);
  i64 span = dilation * (K - 1) + 1;
  i64 OH = (H + 2 * pad - span) / stride + 1;
  i64 OW = (W + 2 * pad - span) / stride + 1;
  Tensor y({Bn, O, OH, OW});
  for (i64 n = 0; n < Bn; ++n)
    for (i64 o = 0; o < O; ++o)
      for (i64 oy = 0; oy < OH; ++oy)
        for (i64 ox = 0; ox < OW; ++ox) {
          double acc = b ? (*b)[o] : 0.0;
          for (i64 i = 0; i < I; ++i)
            for (i64 ky = 0; ky < K; ++ky)
              for (i64 kx = 0; kx < K; ++kx) {
                i64 iy = oy * stride - pad + ky * dilation;
                i64 ix = ox * stride - pad + kx * dilation;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += x[((n * I + i) * H + iy) * W + ix] * w[((o * I + i) * K + ky) * K + kx];
              }
          y.data()[((n * O + o) * OH + oy) * OW + ox] = acc;
        }
  return y;
}

inline Tensor bn_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta, const Tensor& rm,
                      const Tensor& rv, double eps = 1e-5) {
  i64 Bn = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor y(x.shape());
  for (i64 n = 0; n < Bn; ++n)
    for (i64 c = 0; c < C; ++c) {
      double inv = 1.0 / std::sqrt(rv[c] + eps);
      for (i64 i = 0; i < HW; ++i) {
        i64 idx = (n * C + c) * HW + i;
        y.data()[idx] = (x[idx] - rm[c]) * inv * gamma[c] + beta[c];
      }
    }
  return y;
}

inline Tensor map_silu(Tensor t) {
  for (i64 i = 0; i < t.numel(); ++i) t.data()[i] = silu(t[i]);
  return t;
}

inline Tensor i2t(const Tensor& x) {
  i64 Bn = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor t({Bn, H * W, C});
  for (i64 n = 0; n < Bn; ++n)
    for (i64 c = 0; c < C; ++c)
      for (i64 p = 0; p < H * W; ++p)
        t.data()[(n * H * W + p) * C + c] = x[(n * C + c) * H * W + p];
  return t;
}

inline Tensor t2i(const Tensor& t, i64 h, i64 w) {
  i64 Bn = t.dim(0), N = t.dim(1), C = t.dim(2);
  Tensor x({Bn, C, h, w});
  for (i64 n = 0; n < Bn; ++n)
    for (i64 c = 0; c < C; ++c)
      for (i64 p = 0; p < N; ++p) x.data()[(n * C + c) * N + p] = t[(n * N + p) * C + c];
  return x;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  Tensor y(a.shape());
  for (i64 i = 0; i < a.numel(); ++i) y.data()[i] = a[i] + b[i];
  return y;
}

inline Tensor mha(const Tensor& q_in, const Tensor& kv_in, const Tensor& wq, const Tensor& bq,
                  const Tensor& wk, const Tensor& bk, const Tensor& wv, const Tensor& bv,
                  const Tensor& wo, const Tensor& bo, int heads) {
  i64 Bn = q_in.dim(0), Nq = q_in.dim(1), D = q_in.dim(2), Nk = kv_in.dim(1);
  i64 dh = D / heads;
  double alpha = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor Q = linear(q_in, wq, &bq), K = linear(kv_in, wk, &bk), V = linear(kv_in, wv, &bv);
  Tensor O({Bn, Nq, D});
  std::vector<double> row(static_cast<size_t>(Nk));
  for (i64 n = 0; n < Bn; ++n)
    for (int h = 0; h < heads; ++h) {
      i64 off = static_cast<i64>(h) * dh;
      for (i64 i = 0; i < Nq; ++i) {
        for (i64 j = 0; j < Nk; ++j) {
          double dot = 0.0;
          for (i64 c = 0; c < dh; ++c)
            dot += Q[(n * Nq + i) * D + off + c] * K[(n * Nk + j) * D + off + c];
          row[static_cast<size_t>(j)] = alpha * dot;
        }
        softmax_row(row.data(), Nk);
        for (i64 c = 0; c < dh; ++c) {
          double acc = 0.0;
          for (i64 j = 0; j < Nk; ++j)
            acc += row[static_cast<size_t>(j)] * V[(n * Nk + j) * D + off + c];
          O.data()[(n * Nq + i) * D + off + c] = acc;
        }
      }
    }
  return linear(O, wo, &bo);
}

inline Tensor subattn(const Tensor& q_in, const Tensor& kv_in, const Tensor& wq, const Tensor& wk,
                      const Tensor& wv, double eps) {
  i64 Bn = q_in.dim(0), Nq = q_in.dim(1), D = q_in.dim(2), Nk = kv_in.dim(1);
  Tensor Q = linear(q_in, wq, nullptr), K = linear(kv_in, wk, nullptr),
         V = linear(kv_in, wv, nullptr);
  auto norm = [&](const Tensor& m, i64 r) {
    double s = 0.0;
    for (i64 c = 0; c < D; ++c) s += m[r * D + c] * m[r * D + c];
    return std::sqrt(s);
  };
  Tensor y({Bn, Nq, D});
  std::vector<double> row(static_cast<size_t>(Nk));
  for (i64 n = 0; n < Bn; ++n)
    for (i64 i = 0; i < Nq; ++i) {
      double ni = norm(Q, n * Nq + i) + eps;
      for (i64 j = 0; j < Nk; ++j) {
        double dot = 0.0;
        for (i64 c = 0; c < D; ++c) dot += Q[(n * Nq + i) * D + c] * K[(n * Nk + j) * D + c];
        row[static_cast<size_t>(j)] = dot / (ni * (norm(K, n * Nk + j) + eps));
      }
      softmax_row(row.data(), Nk);
      for (i64 c = 0; c < D; ++c) {
        double acc = 0.0;
        for (i64 j = 0; j < Nk; ++j) acc += row[static_cast<size_t>(j)] * V[(n * Nk + j) * D + c];
        y.data()[(n * Nq + i) * D + c] = Q[(n * Nq + i) * D + c] - acc;
      }
    }
  return y;
}

inline Tensor mlp(const Tensor& x, const ParamStore& ps, const std::string& prefix) {
  Tensor h = linear(x, P(ps, prefix + ".fc1.weight"), &P(ps, prefix + ".fc1.bias"));
  for (i64 i = 0; i < h.numel(); ++i) h.data()[i] = gelu(h[i]);
  return linear(h, P(ps, prefix + ".fc2.weight"), &P(ps, prefix + ".fc2.bias"));
}

// eval-mode parallel conv module (batch norm on running statistics)
inline Tensor pcm(const Tensor& x, const ParamStore& ps, const std::string& prefix, int s1, int s2,
                  int s3) {
  Tensor h = conv2d(x, P(ps, prefix + ".conv1.weight"), nullptr, s1, 1, 1);
  h = map_silu(bn_eval(h, P(ps, prefix + ".bn1.gamma"), P(ps, prefix + ".bn1.beta"),
                       B(ps, prefix + ".bn1.running_mean"), B(ps, prefix + ".bn1.running_var")));
  h = conv2d(h, P(ps, prefix + ".conv2.weight"), nullptr, s2, 1, 1);
  h = map_silu(bn_eval(h, P(ps, prefix + ".bn2.gamma"), P(ps, prefix + ".bn2.beta"),
                       B(ps, prefix + ".bn2.running_mean"), B(ps, prefix + ".bn2.running_var")));
  return conv2d(h, P(ps, prefix + ".conv3.weight"), &P(ps, prefix + ".conv3.bias"), s3, 1, 1);
}

inline Tensor mha_named(const Tensor& q, const Tensor& kv, const ParamStore& ps,
                        const std::string& prefix, int heads) {
  return mha(q, kv, P(ps, prefix + ".q.weight"), P(ps, prefix + ".q.bias"),
             P(ps, prefix + ".k.weight"), P(ps, prefix + ".k.bias"), P(ps, prefix + ".v.weight"),
             P(ps, prefix + ".v.bias"), P(ps, prefix + ".out.weight"),
             P(ps, prefix + ".out.bias"), heads);
}

inline Tensor prm(const Tensor& x, const ParamStore& ps, const std::string& prefix,
                  const std::vector<i64>& rates, int stride, i64 out_ch) {
  i64 each = out_ch / static_cast<i64>(rates.size());
  std::vector<Tensor> branches;
  for (i64 r : rates)
    branches.push_back(conv2d(x, P(ps, prefix + ".rate" + std::to_string(r) + ".weight"),
                              &P(ps, prefix + ".rate" + std::to_string(r) + ".bias"),
                              stride, static_cast<int>(r), static_cast<int>(r)));
  i64 Bn = branches[0].dim(0), H = branches[0].dim(2), W = branches[0].dim(3);
  Tensor y({Bn, out_ch, H, W});
  for (size_t idx = 0; idx < branches.size(); ++idx)
    for (i64 n = 0; n < Bn; ++n)
      for (i64 c = 0; c < each; ++c)
        for (i64 p = 0; p < H * W; ++p)
          y.data()[((n * out_ch + static_cast<i64>(idx) * each + c) * H * W) + p] =
              branches[idx][((n * each + c) * H * W) + p];
  return y;
}

// full token-wise feature extractor for one stage (single block, eval mode)
inline Tensor twfe(const Tensor& x, const ParamStore& ps, const std::string& prefix, int stage,
                   int heads, const std::vector<i64>& rates, i64 dim, i64* out_h, i64* out_w) {
  const Tensor& ow = P(ps, prefix + ".oel.proj.weight");
  int k = static_cast<int>(ow.dim(2));
  int pad = stage == 0 ? (k == 7 ? 3 : 0) : (k == 3 ? 1 : 0);
  Tensor e = conv2d(x, ow, &P(ps, prefix + ".oel.proj.bias"), 2, pad, 1);
  Tensor fms = prm(e, ps, prefix + ".prm", rates, stage == 0 ? 2 : 1, dim);
  i64 h = fms.dim(2), w = fms.dim(3);
  Tensor p = pcm(stage == 0 ? e : x, ps, prefix + ".pcm", 2, 1, 1);
  Tensor tok = i2t(fms);
  Tensor t = add(add(mha_named(tok, tok, ps, prefix + ".mha", heads), i2t(p)), tok);
  Tensor r = add(mlp(t, ps, prefix + ".ffn"), t);
  if (out_h) *out_h = h;
  if (out_w) *out_w = w;
  return r;
}

// cross-temporal change attention: both directional passes with shared weights
inline std::pair<Tensor, Tensor> ctca(const Tensor& r_pre, const Tensor& r_post,
                                      const ParamStore& ps, const std::string& prefix,
                                      double eps) {
  Tensor ca_pre = subattn(r_pre, r_post, P(ps, prefix + ".q.weight"), P(ps, prefix + ".k.weight"),
                          P(ps, prefix + ".v.weight"), eps);
  Tensor ca_post = subattn(r_post, r_pre, P(ps, prefix + ".q.weight"), P(ps, prefix + ".k.weight"),
                           P(ps, prefix + ".v.weight"), eps);
  return {add(mlp(ca_pre, ps, prefix + ".mlp"), ca_pre),
          add(mlp(ca_post, ps, prefix + ".mlp"), ca_post)};
}

// temporal-aware channel enhancement; ct may be null (no semantic token)
inline std::pair<Tensor, Tensor> tace(const Tensor& r, const Tensor& f, i64 h, i64 w,
                                      const Tensor* ct, const ParamStore& ps,
                                      const std::string& prefix, int heads) {
  i64 Bn = r.dim(0), N = r.dim(1), D = r.dim(2);
  Tensor q = r;
  if (ct) {
    q = Tensor({Bn, N + 1, D});
    for (i64 n = 0; n < Bn; ++n) {
      for (i64 d = 0; d < D; ++d) q.data()[n * (N + 1) * D + d] = (*ct)[d];
      for (i64 p = 0; p < N; ++p)
        for (i64 d = 0; d < D; ++d)
          q.data()[(n * (N + 1) + p + 1) * D + d] = r[(n * N + p) * D + d];
    }
  }
  Tensor m = mha_named(q, f, ps, prefix + ".mha", heads);
  Tensor res = add(i2t(pcm(t2i(r, h, w), ps, prefix + ".pcm", 1, 1, 1)), r);
  Tensor t(m.shape());
  if (ct) {
    for (i64 n = 0; n < Bn; ++n) {
      for (i64 d = 0; d < D; ++d)
        t.data()[n * (N + 1) * D + d] = m[n * (N + 1) * D + d] + (*ct)[d];
      for (i64 p = 0; p < N; ++p)
        for (i64 d = 0; d < D; ++d)
          t.data()[(n * (N + 1) + p + 1) * D + d] =
              m[(n * (N + 1) + p + 1) * D + d] + res[(n * N + p) * D + d];
    }
  } else {
    t = add(m, res);
  }
  Tensor r2 = add(mlp(t, ps, prefix + ".ffn"), t);
  if (!ct) return {t2i(r2, h, w), Tensor()};
  Tensor t_sem({Bn, D});
  Tensor spatial({Bn, N, D});
  for (i64 n = 0; n < Bn; ++n) {
    for (i64 d = 0; d < D; ++d) t_sem.data()[n * D + d] = r2[n * (N + 1) * D + d];
    for (i64 p = 0; p < N; ++p)
      for (i64 d = 0; d < D; ++d)
        spatial.data()[(n * N + p) * D + d] = r2[(n * (N + 1) + p + 1) * D + d];
  }
  return {t2i(spatial, h, w), t_sem};
}

inline Tensor upsample_bilinear(const Tensor& x, i64 oh, i64 ow) {
  i64 Bn = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor y({Bn, C, oh, ow});
  auto src = [](i64 o, i64 in, i64 out, i64* lo, i64* hi, double* t) {
    double s = (static_cast<double>(o) + 0.5) * static_cast<double>(in) /
                   static_cast<double>(out) - 0.5;
    if (s < 0.0) s = 0.0;
    if (s > static_cast<double>(in - 1)) s = static_cast<double>(in - 1);
    *lo = static_cast<i64>(s);
    *hi = std::min(*lo + 1, in - 1);
    *t = s - static_cast<double>(*lo);
  };
  for (i64 oy = 0; oy < oh; ++oy) {
    i64 y0, y1;
    double ty;
    src(oy, H, oh, &y0, &y1, &ty);
    for (i64 ox = 0; ox < ow; ++ox) {
      i64 x0, x1;
      double tx;
      src(ox, W, ow, &x0, &x1, &tx);
      for (i64 n = 0; n < Bn; ++n)
        for (i64 c = 0; c < C; ++c) {
          const double* img = x.data() + (n * C + c) * H * W;
          double v = (1 - ty) * ((1 - tx) * img[y0 * W + x0] + tx * img[y0 * W + x1]) +
                     ty * ((1 - tx) * img[y1 * W + x0] + tx * img[y1 * W + x1]);
          y.data()[((n * C + c) * oh + oy) * ow + ox] = v;
        }
    }
  }
  return y;
}

inline Tensor upsample_nearest2x(const Tensor& x) {
  i64 Bn = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor y({Bn, C, 2 * H, 2 * W});
  for (i64 nc = 0; nc < Bn * C; ++nc)
    for (i64 oy = 0; oy < 2 * H; ++oy)
      for (i64 ox = 0; ox < 2 * W; ++ox)
        y.data()[(nc * 2 * H + oy) * 2 * W + ox] = x[(nc * H + oy / 2) * W + ox / 2];
  return y;
}

inline Tensor replicate_pad(const Tensor& x, int pad) {
  i64 Bn = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  i64 OH = H + 2 * pad, OW = W + 2 * pad;
  Tensor y({Bn, C, OH, OW});
  for (i64 nc = 0; nc < Bn * C; ++nc)
    for (i64 oy = 0; oy < OH; ++oy)
      for (i64 ox = 0; ox < OW; ++ox) {
        i64 iy = std::clamp(oy - pad, i64{0}, H - 1);
        i64 ix = std::clamp(ox - pad, i64{0}, W - 1);
        y.data()[(nc * OH + oy) * OW + ox] = x[(nc * H + iy) * W + ix];
      }
  return y;
}

// multi-scale differential fusion + upsampling head; t_sem may be null
inline std::pair<Tensor, Tensor> tdf(const Tensor* pre, const Tensor* post, const Tensor* t_sem,
                                     const ParamStore& ps, const damnet::ModelConfig& cfg) {
  i64 qh = pre[0].dim(2), qw = pre[0].dim(3);
  i64 fused_ch = 4 * cfg.tdf_channels;
  std::vector<Tensor> scaled;
  for (int i = 0; i < 4; ++i) {
    Tensor d(pre[i].shape());
    for (i64 j = 0; j < d.numel(); ++j) d.data()[j] = std::abs(pre[i][j] - post[i][j]);
    Tensor c = conv2d(d, P(ps, "tdf.diff" + std::to_string(i + 1) + ".weight"), nullptr, 1, 1, 1);
    if (c.dim(2) != qh || c.dim(3) != qw) c = upsample_bilinear(c, qh, qw);
    scaled.push_back(std::move(c));
  }
  i64 Bn = scaled[0].dim(0);
  Tensor fused({Bn, fused_ch, qh, qw});
  for (int i = 0; i < 4; ++i)
    for (i64 n = 0; n < Bn; ++n)
      for (i64 c = 0; c < cfg.tdf_channels; ++c)
        for (i64 p = 0; p < qh * qw; ++p)
          fused.data()[((n * fused_ch + i * cfg.tdf_channels + c) * qh * qw) + p] =
              scaled[static_cast<size_t>(i)][(n * cfg.tdf_channels + c) * qh * qw + p];
  Tensor mixed = conv2d(fused, P(ps, "tdf.mix.weight"), &P(ps, "tdf.mix.bias"), 1, 0, 1);
  if (cfg.use_semantic_token) {
    Tensor g = mlp(*t_sem, ps, "tdf.gate");
    for (i64 n = 0; n < Bn; ++n)
      for (i64 c = 0; c < fused_ch; ++c) {
        double gv = sigmoid(g[n * fused_ch + c]);
        for (i64 p = 0; p < qh * qw; ++p)
          mixed.data()[(n * fused_ch + c) * qh * qw + p] *= gv;
      }
  }
  Tensor h = conv2d(replicate_pad(upsample_nearest2x(mixed), 1), P(ps, "head.up1.weight"),
                    &P(ps, "head.up1.bias"), 1, 0, 1);
  for (i64 i = 0; i < h.numel(); ++i) h.data()[i] = relu(h[i]);
  Tensor prob = conv2d(replicate_pad(upsample_nearest2x(h), 1), P(ps, "head.up2.weight"),
                       &P(ps, "head.up2.bias"), 1, 0, 1);
  for (i64 i = 0; i < prob.numel(); ++i) prob.data()[i] = sigmoid(prob[i]);
  return {fused, prob};
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::runtime_error("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (i64 i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace oracle
