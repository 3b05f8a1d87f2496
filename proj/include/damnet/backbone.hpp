#pragma once

#include "damnet/config.hpp"
#include "damnet/nn.hpp"

#include <array>
#include <memory>
#include <utility>

namespace damnet {

/// Per-stage enhanced change features for both temporal branches plus the
/// semantic token. Feature i has shape [B, D_i, H/S_i, W/S_i]; t_sem is
/// [B, D_4] (null when the semantic token is disabled).
struct BackboneFeatures {
  std::array<Var, ModelConfig::kStages> pre;
  std::array<Var, ModelConfig::kStages> post;
  Var t_sem;
};

/// Token-wise feature extractor: OEL -> PRM for the multi-scale map, then
/// attention + parallel-conv + FFN token mixing.
class Twfe {
 public:
  Twfe(ParamStore& ps, const std::string& prefix, int stage, i64 in_ch, i64 dim, int heads,
       double ffn_ratio, const std::vector<i64>& prm_rates, i64 blocks, bool use_oel,
       std::mt19937_64& rng);
  /// inp: [B, in_ch, h, w]; returns tokens [B, N, dim], writing the token grid.
  Var forward(const Var& inp, const Ctx& ctx, i64* out_h, i64* out_w) const;

 private:
  struct Mixer {
    Mha mha;
    Pcm pcm;
    Mlp ffn;
  };
  int stage_;
  Oel oel_;
  Prm prm_;
  Pcm pcm_;
  Mha mha_;
  Mlp ffn_;
  std::vector<std::unique_ptr<Mixer>> extra_;  // blocks beyond the first
};

/// Cross-temporal subtraction attention over the two branches with shared
/// projections, followed by a residual MLP on each branch.
class Ctca {
 public:
  Ctca(ParamStore& ps, const std::string& prefix, i64 dim, double ffn_ratio, double norm_eps,
       std::mt19937_64& rng);
  std::pair<Var, Var> forward(const Var& r_pre, const Var& r_post) const;

 private:
  Var wq_, wk_, wv_;
  Mlp mlp_;
  double eps_;
};

/// Temporal-aware channel enhancement: attention with the representation as
/// query and the change feature as key/value, plus conv and token residuals.
class Tace {
 public:
  Tace(ParamStore& ps, const std::string& prefix, i64 dim, int heads, double ffn_ratio,
       bool allow_class_token, std::mt19937_64& rng);
  /// r, f: [B, N, dim] token sequences on an h x w grid. Returns the enhanced
  /// feature map [B, dim, h, w] and, when class_token is given, the semantic
  /// token [B, dim].
  std::pair<Var, Var> forward(const Var& r, const Var& f, i64 h, i64 w, const Var& class_token,
                              const Ctx& ctx) const;

 private:
  Mha mha_;
  Pcm pcm_;
  Mlp ffn_;
  bool allow_class_token_;
};

class Backbone {
 public:
  Backbone(ParamStore& ps, const ModelConfig& cfg, std::mt19937_64& rng);
  /// pre, post: [B, C, H, W] with H, W divisible by 32.
  BackboneFeatures forward(const Var& pre, const Var& post, const Ctx& ctx) const;

  const Var& class_token() const { return class_token_; }

 private:
  ModelConfig cfg_;
  std::vector<std::unique_ptr<Twfe>> twfe_;
  std::vector<std::unique_ptr<Ctca>> ctca_;
  std::vector<std::unique_ptr<Tace>> tace_;  // indexed by stage; may hold only stage 4
  Var class_token_;
};

}  // namespace damnet
