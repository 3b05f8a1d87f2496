#pragma once

#include "damnet/backbone.hpp"
#include "damnet/fusion.hpp"

#include <memory>
#include <string>

namespace damnet {

class DamNet {
 public:
  explicit DamNet(const ModelConfig& cfg);
  DamNet(DamNet&&) = default;
  DamNet& operator=(DamNet&&) = delete;
  DamNet(const DamNet&) = delete;

  /// pre, post: [B, C, H, W] -> probability map [B, 1, H, W]
  Var forward(const Var& pre, const Var& post, const Ctx& ctx) const;
  TdfHead::Out forward_full(const Var& pre, const Var& post, const Ctx& ctx) const;
  BackboneFeatures backbone_forward(const Var& pre, const Var& post, const Ctx& ctx) const {
    return backbone_->forward(pre, post, ctx);
  }

  ParamStore& params() { return ps_; }
  const ParamStore& params() const { return ps_; }
  const ModelConfig& config() const { return cfg_; }

  /// Checkpoint archive: text config header plus named raw float64 arrays.
  /// Round-trips bit-exactly.
  void save(const std::string& path) const;
  static DamNet load(const std::string& path);

 private:
  ModelConfig cfg_;
  ParamStore ps_;
  std::unique_ptr<Backbone> backbone_;
  std::unique_ptr<TdfHead> head_;
};

}  // namespace damnet
