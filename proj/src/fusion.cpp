#include "damnet/fusion.hpp"

#include <stdexcept>

namespace damnet {

TdfHead::TdfHead(ParamStore& ps, const ModelConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  i64 fused_ch = 4 * cfg.tdf_channels;
  diff_convs_.reserve(ModelConfig::kStages);
  for (int i = 0; i < ModelConfig::kStages; ++i)
    diff_convs_.emplace_back(ps, "tdf.diff" + std::to_string(i + 1), "tdf", cfg.dims[i],
                             cfg.tdf_channels, 3, 1, 1, 1, false, rng);
  mix_w_ = ps.add("tdf.mix.weight", "tdf",
                  kaiming_normal({fused_ch, fused_ch, 1, 1}, fused_ch, rng));
  mix_b_ = ps.add("tdf.mix.bias", "tdf", Tensor::zeros({fused_ch}));
  if (cfg.use_semantic_token)
    gate_ = std::make_unique<Mlp>(ps, "tdf.gate", "tdf", cfg.dims[ModelConfig::kStages - 1],
                                  fused_ch, fused_ch, rng);
  head1_w_ = ps.add("head.up1.weight", "head",
                    kaiming_normal({cfg.head_channels, fused_ch, 3, 3}, fused_ch * 9, rng));
  head1_b_ = ps.add("head.up1.bias", "head", Tensor::zeros({cfg.head_channels}));
  head2_w_ = ps.add("head.up2.weight", "head",
                    kaiming_normal({1, cfg.head_channels, 3, 3}, cfg.head_channels * 9, rng));
  head2_b_ = ps.add("head.up2.bias", "head", Tensor::zeros({1}));
}

TdfHead::Out TdfHead::forward(const BackboneFeatures& feats, const Ctx&) const {
  for (int i = 0; i < ModelConfig::kStages; ++i) {
    if (!feats.pre[i] || !feats.post[i])
      throw std::invalid_argument("tdf: missing stage " + std::to_string(i + 1) + " features");
    if (!feats.pre[i]->value.same_shape(feats.post[i]->value))
      throw std::invalid_argument("tdf: stage " + std::to_string(i + 1) + " branch shapes " +
                                  feats.pre[i]->value.shape_str() + " vs " +
                                  feats.post[i]->value.shape_str());
  }
  i64 qh = feats.pre[0]->value.dim(2);  // quarter resolution, the finest stage grid
  i64 qw = feats.pre[0]->value.dim(3);

  std::vector<Var> scaled;
  scaled.reserve(ModelConfig::kStages);
  for (int i = 0; i < ModelConfig::kStages; ++i) {
    Var d = damnet::abs(sub(feats.pre[i], feats.post[i]));
    Var c = diff_convs_[i].forward(d);
    if (c->value.dim(2) != qh || c->value.dim(3) != qw) c = upsample_bilinear(c, qh, qw);
    scaled.push_back(c);
  }
  Var fused = concat_channels(scaled);
  Var mixed = conv2d(fused, mix_w_, mix_b_, 1, 0, 1);
  if (gate_) {
    if (!feats.t_sem)
      throw std::invalid_argument(
          "tdf: semantic token gating enabled but the backbone produced no token");
    Var g = sigmoid(gate_->forward(feats.t_sem));  // [B, fused_ch]
    mixed = channel_gate(mixed, g);
  }

  // resize convolutions with replicated borders keep channel-constant inputs
  // exactly constant, which transposed convolutions would not
  Var h = upsample_nearest2x(mixed);
  h = relu(conv2d(replicate_pad2d(h, 1), head1_w_, head1_b_, 1, 0, 1));
  h = upsample_nearest2x(h);
  Var prob = sigmoid(conv2d(replicate_pad2d(h, 1), head2_w_, head2_b_, 1, 0, 1));
  return {fused, prob};
}

namespace {

void check_label(const Tensor& probs, const Tensor& label, const char* op) {
  if (!probs.same_shape(label))
    throw std::invalid_argument(std::string(op) + ": probs " + probs.shape_str() + " vs label " +
                                label.shape_str());
  for (i64 i = 0; i < label.numel(); ++i)
    if (label[i] != 0.0 && label[i] != 1.0)
      throw std::invalid_argument(std::string(op) + ": label values must be 0 or 1, found " +
                                  std::to_string(label[i]));
}

}  // namespace

Var contrastive_loss(const Var& probs, const Tensor& label, const LossConfig& cfg) {
  check_label(probs->value, label, "contrastive_loss");
  Var y = constant(label);
  Tensor inv(label.shape());
  for (i64 i = 0; i < label.numel(); ++i) inv.data()[i] = 1.0 - label[i];
  Var not_y = constant(std::move(inv));

  Var unchanged = mul(not_y, mul(probs, probs));
  Var hinge = cfg.contrastive_form == ContrastiveForm::kStandardHinge
                  ? relu(add_scalar(neg(probs), cfg.margin))   // max(m - p, 0)
                  : relu(add_scalar(probs, -cfg.margin));      // max(p - m, 0), as printed
  Var changed = mul(y, mul(hinge, hinge));
  return mean_all(scale(add(unchanged, changed), 0.5));
}

Var dice_loss(const Var& probs, const Tensor& label) {
  check_label(probs->value, label, "dice_loss");
  Var y = constant(label);
  Var inter = sum_all(mul(probs, y));
  Var sizes = add(sum_all(probs), sum_all(y));
  Var ratio = div(add_scalar(scale(inter, 2.0), 1.0), add_scalar(sizes, 1.0));
  return add_scalar(neg(ratio), 1.0);
}

Var total_loss(const Var& probs, const Tensor& label, const LossConfig& cfg) {
  return add(contrastive_loss(probs, label, cfg), scale(dice_loss(probs, label), cfg.lambda));
}

Tensor binarize(const Tensor& probs, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw std::invalid_argument("binarize: threshold must lie in (0,1)");
  Tensor mask(probs.shape());
  for (i64 i = 0; i < probs.numel(); ++i) mask.data()[i] = probs[i] >= threshold ? 1.0 : 0.0;
  return mask;
}

}  // namespace damnet
