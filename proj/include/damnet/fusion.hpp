#pragma once

#include "damnet/backbone.hpp"
#include "damnet/config.hpp"
#include "damnet/nn.hpp"

namespace damnet {

/// Multi-scale temporal-differential fusion and the upsampling prediction
/// head. Per stage the absolute branch difference is convolved (bias-free, so
/// identical branches collapse to exact zeros), aligned to quarter resolution
/// and concatenated; a 1x1 convolution mixes scales and the semantic token
/// gates channels multiplicatively before the head restores full resolution.
class TdfHead {
 public:
  TdfHead(ParamStore& ps, const ModelConfig& cfg, std::mt19937_64& rng);

  struct Out {
    Var fused;  // [B, 4*tdf_channels, H/4, W/4], zero when branches match
    Var prob;   // [B, 1, H, W], sigmoid probabilities
  };
  Out forward(const BackboneFeatures& feats, const Ctx& ctx) const;

 private:
  ModelConfig cfg_;
  std::vector<Conv2d> diff_convs_;
  Var mix_w_, mix_b_;  // 1x1 scale mixer
  std::unique_ptr<Mlp> gate_;
  Var head1_w_, head1_b_, head2_w_, head2_b_;
};

/// Eq-style pixel losses over a probability map. `label` must be binary.
Var contrastive_loss(const Var& probs, const Tensor& label, const LossConfig& cfg);
Var dice_loss(const Var& probs, const Tensor& label);
Var total_loss(const Var& probs, const Tensor& label, const LossConfig& cfg);

/// mask = 1 where probs >= threshold
Tensor binarize(const Tensor& probs, double threshold);

}  // namespace damnet
