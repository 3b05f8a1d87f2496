#pragma once

#include "damnet/config.hpp"
#include "damnet/model.hpp"
#include "damnet/tensor.hpp"

#include <functional>
#include <string>

namespace damnet {

/// Probability inference over one co-registered tile pair; both inputs and
/// the output are [tile, tile].
using TilePredictor = std::function<Tensor(const Tensor& pre, const Tensor& post)>;

/// Wraps a frozen model as a TilePredictor (eval mode, no grad recording).
TilePredictor model_predictor(const DamNet& model);

/// Mirror padding without repeating the border sample, so padded SAR scenes
/// gain no fabricated dark rims. Works for pads larger than the image.
Tensor reflect_pad2d(const Tensor& img, i64 top, i64 bottom, i64 left, i64 right);

/// Sliding-window prediction over an arbitrarily large scene. Edges are
/// reflect-padded to tile alignment, per-tile probabilities are blended per
/// scheme, and the result is cropped back to the input extent. Feather
/// blending needs overlap <= tile/2 so no pixel is covered more than twice
/// per axis.
Tensor map_large_scene(const TilePredictor& predict, const Tensor& pre, const Tensor& post,
                       const TileScheme& scheme);

/// Accumulated feather weights on the output grid; 1 everywhere by
/// construction (seam ramps of neighboring tiles are exact complements).
Tensor feather_weight_field(i64 h, i64 w, const TileScheme& scheme);

struct AreaReport {
  i64 flooded_pixels = 0;
  double pixel_area_m2 = 100.0;
  double flooded_km2 = 0.0;  // flooded_pixels * pixel_area_m2 / 1e6
};

AreaReport area_stats(const Tensor& mask, double pixel_area_m2 = 100.0);
std::string to_kv_text(const AreaReport& report);

}  // namespace damnet
