#include "damnet/backbone.hpp"

#include <stdexcept>

namespace damnet {

namespace {

// Stage 1 embeds the raw image with a 7x7 stride-2 kernel; later stages halve
// the previous enhanced feature with 3x3 stride-2.
struct OelSpec {
  int kernel, stride, pad;
};
OelSpec oel_spec(int stage) { return stage == 0 ? OelSpec{7, 2, 3} : OelSpec{3, 2, 1}; }

}  // namespace

Twfe::Twfe(ParamStore& ps, const std::string& prefix, int stage, i64 in_ch, i64 dim, int heads,
           double ffn_ratio, const std::vector<i64>& prm_rates, i64 blocks, bool use_oel,
           std::mt19937_64& rng)
    : stage_(stage),
      oel_(ps, prefix + ".oel", "oel", in_ch, dim, oel_spec(stage).kernel, oel_spec(stage).stride,
           oel_spec(stage).pad, use_oel, rng),
      prm_(ps, prefix + ".prm", "prm", dim, dim,
           std::vector<int>(prm_rates.begin(), prm_rates.end()), stage == 0 ? 2 : 1, rng),
      // stage 1 feeds the PCM from the OEL output (the raw image is too far
      // from the token grid for the fixed stride pattern), later stages from
      // the stage input itself
      pcm_(ps, prefix + ".pcm", "pcm", stage == 0 ? dim : in_ch, dim, 2, 1, 1, rng),
      mha_(ps, prefix + ".mha", "mha", dim, heads, rng),
      ffn_(ps, prefix + ".ffn", "ffn", dim, static_cast<i64>(ffn_ratio * dim), dim, rng) {
  for (i64 b = 1; b < blocks; ++b) {
    std::string bp = prefix + ".block" + std::to_string(b);
    extra_.push_back(std::unique_ptr<Mixer>(new Mixer{
        Mha(ps, bp + ".mha", "mha", dim, heads, rng),
        Pcm(ps, bp + ".pcm", "pcm", dim, dim, 1, 1, 1, rng),
        Mlp(ps, bp + ".ffn", "ffn", dim, static_cast<i64>(ffn_ratio * dim), dim, rng)}));
  }
}

Var Twfe::forward(const Var& inp, const Ctx& ctx, i64* out_h, i64* out_w) const {
  Var e = oel_.forward(inp);
  Var fms = prm_.forward(e);
  i64 h = fms->value.dim(2);
  i64 w = fms->value.dim(3);
  Var p = pcm_.forward(stage_ == 0 ? e : inp, ctx);
  if (p->value.dim(2) != h || p->value.dim(3) != w)
    throw std::invalid_argument("twfe: PCM grid " + std::to_string(p->value.dim(2)) + "x" +
                                std::to_string(p->value.dim(3)) + " does not match PRM grid " +
                                std::to_string(h) + "x" + std::to_string(w));
  Var tok = i2t(fms);
  Var t = add(add(mha_.forward(tok, tok), i2t(p)), tok);
  Var r = add(ffn_.forward(t), t);
  for (const auto& m : extra_) {
    Var pb = i2t(m->pcm.forward(t2i(r, h, w), ctx));
    Var tb = add(add(m->mha.forward(r, r), pb), r);
    r = add(m->ffn.forward(tb), tb);
  }
  if (out_h) *out_h = h;
  if (out_w) *out_w = w;
  return r;
}

Ctca::Ctca(ParamStore& ps, const std::string& prefix, i64 dim, double ffn_ratio, double norm_eps,
           std::mt19937_64& rng)
    : wq_(ps.add(prefix + ".q.weight", "ctca", xavier_uniform({dim, dim}, dim, dim, rng))),
      wk_(ps.add(prefix + ".k.weight", "ctca", xavier_uniform({dim, dim}, dim, dim, rng))),
      wv_(ps.add(prefix + ".v.weight", "ctca", xavier_uniform({dim, dim}, dim, dim, rng))),
      mlp_(ps, prefix + ".mlp", "ctca", dim, static_cast<i64>(ffn_ratio * dim), dim, rng),
      eps_(norm_eps) {}

std::pair<Var, Var> Ctca::forward(const Var& r_pre, const Var& r_post) const {
  Var ca_pre = subtraction_attention(r_pre, r_post, wq_, wk_, wv_, eps_);
  Var f_pre = add(mlp_.forward(ca_pre), ca_pre);
  Var ca_post = subtraction_attention(r_post, r_pre, wq_, wk_, wv_, eps_);
  Var f_post = add(mlp_.forward(ca_post), ca_post);
  return {f_pre, f_post};
}

Tace::Tace(ParamStore& ps, const std::string& prefix, i64 dim, int heads, double ffn_ratio,
           bool allow_class_token, std::mt19937_64& rng)
    : mha_(ps, prefix + ".mha", "tace", dim, heads, rng),
      pcm_(ps, prefix + ".pcm", "tace", dim, dim, 1, 1, 1, rng),
      ffn_(ps, prefix + ".ffn", "tace", dim, static_cast<i64>(ffn_ratio * dim), dim, rng),
      allow_class_token_(allow_class_token) {}

std::pair<Var, Var> Tace::forward(const Var& r, const Var& f, i64 h, i64 w,
                                  const Var& class_token, const Ctx& ctx) const {
  if (class_token && !allow_class_token_)
    throw std::invalid_argument("tace: class token is only valid on the final-stage pre branch");
  if (!r->value.same_shape(f->value))
    throw std::invalid_argument("tace: representation " + r->value.shape_str() +
                                " vs change feature " + f->value.shape_str());
  i64 batch = r->value.dim(0);
  i64 dim = r->value.dim(2);

  Var m = mha_.forward(r, f);
  Var res = add(i2t(pcm_.forward(t2i(r, h, w), ctx)), r);
  Var t = add(m, res);
  Var spatial = t2i(add(ffn_.forward(t), t), h, w);
  if (!class_token) return {spatial, nullptr};

  // the class token is one more attention query; query rows are independent,
  // so it runs as its own pass and the spatial rows stay bit-identical to the
  // token-free case. Its residual is the token itself (no conv path).
  Var ct = tile_token(class_token, batch);
  Var tt = add(mha_.forward(ct, f), ct);
  Var t_sem = reshape(add(ffn_.forward(tt), tt), {batch, dim});
  return {spatial, t_sem};
}

Backbone::Backbone(ParamStore& ps, const ModelConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  cfg.validate();
  for (int i = 0; i < ModelConfig::kStages; ++i) {
    i64 in_ch = i == 0 ? cfg.in_channels : cfg.dims[i - 1];
    std::string sp = "stage" + std::to_string(i + 1);
    twfe_.push_back(std::make_unique<Twfe>(ps, sp + ".twfe", i, in_ch, cfg.dims[i],
                                           static_cast<int>(cfg.heads[i]), cfg.ffn_ratio,
                                           cfg.prm_rates, cfg.blocks_per_stage, cfg.use_oel, rng));
    ctca_.push_back(nullptr);
    tace_.push_back(nullptr);
    if (cfg.use_ctca_tace) {
      ctca_[i] = std::make_unique<Ctca>(ps, sp + ".ctca", cfg.dims[i], cfg.ffn_ratio,
                                        cfg.norm_eps, rng);
      tace_[i] = std::make_unique<Tace>(ps, sp + ".tace", cfg.dims[i],
                                        static_cast<int>(cfg.heads[i]), cfg.ffn_ratio,
                                        i == ModelConfig::kStages - 1, rng);
    }
  }
  if (cfg.use_semantic_token) {
    if (!cfg.use_ctca_tace) {
      // semantic-token-only ablation still needs a final-stage extractor
      int last = ModelConfig::kStages - 1;
      tace_[last] = std::make_unique<Tace>(ps, "stage4.tace", cfg.dims[last],
                                           static_cast<int>(cfg.heads[last]), cfg.ffn_ratio, true,
                                           rng);
    }
    class_token_ = ps.add("class_token", "class_token",
                          Tensor::randn({cfg.dims[ModelConfig::kStages - 1]}, rng,
                                        cfg.class_token_std));
  }
}

BackboneFeatures Backbone::forward(const Var& pre, const Var& post, const Ctx& ctx) const {
  const Tensor& pv = pre->value;
  const Tensor& qv = post->value;
  if (!pv.same_shape(qv))
    throw std::invalid_argument("backbone: pre " + pv.shape_str() + " vs post " + qv.shape_str());
  if (pv.ndim() != 4 || pv.dim(1) != cfg_.in_channels)
    throw std::invalid_argument("backbone: expected [B," + std::to_string(cfg_.in_channels) +
                                ",H,W], got " + pv.shape_str());
  if (pv.dim(2) % 32 != 0 || pv.dim(3) % 32 != 0 || pv.dim(2) == 0 || pv.dim(3) == 0)
    throw std::invalid_argument("backbone: H and W must be positive multiples of 32, got " +
                                pv.shape_str());

  BackboneFeatures out;
  Var in_pre = pre;
  Var in_post = post;
  for (int i = 0; i < ModelConfig::kStages; ++i) {
    try {
      i64 h = 0, w = 0;
      Var r_pre = twfe_[i]->forward(in_pre, ctx, &h, &w);
      Var r_post = twfe_[i]->forward(in_post, ctx, nullptr, nullptr);
      bool last = i == ModelConfig::kStages - 1;
      Var ct = (last && cfg_.use_semantic_token) ? class_token_ : nullptr;
      if (cfg_.use_ctca_tace) {
        auto [f_pre, f_post] = ctca_[i]->forward(r_pre, r_post);
        auto [e_pre, t_sem] = tace_[i]->forward(r_pre, f_pre, h, w, ct, ctx);
        auto [e_post, ignored] = tace_[i]->forward(r_post, f_post, h, w, nullptr, ctx);
        out.pre[i] = e_pre;
        out.post[i] = e_post;
        if (t_sem) out.t_sem = t_sem;
      } else {
        out.pre[i] = t2i(r_pre, h, w);
        out.post[i] = t2i(r_post, h, w);
        if (ct) {
          auto [spatial_unused, t_sem] = tace_[i]->forward(r_pre, r_pre, h, w, ct, ctx);
          out.t_sem = t_sem;
        }
      }
      in_pre = out.pre[i];
      in_post = out.post[i];
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("stage " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace damnet
