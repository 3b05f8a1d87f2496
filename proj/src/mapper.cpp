#include "damnet/mapper.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <vector>

namespace damnet {

TilePredictor model_predictor(const DamNet& model) {
  return [&model](const Tensor& pre, const Tensor& post) {
    i64 t = pre.dim(0);
    Tensor bp({1, 1, t, t}), bq({1, 1, t, t});
    std::copy(pre.data(), pre.data() + pre.numel(), bp.data());
    std::copy(post.data(), post.data() + post.numel(), bq.data());
    NoGradGuard ng;
    Var probs = model.forward(constant(std::move(bp)), constant(std::move(bq)), Ctx{});
    return probs->value.reshaped({t, t});
  };
}

Tensor reflect_pad2d(const Tensor& img, i64 top, i64 bottom, i64 left, i64 right) {
  if (img.ndim() != 2) throw std::invalid_argument("reflect_pad2d: expected [H, W]");
  if (top < 0 || bottom < 0 || left < 0 || right < 0)
    throw std::invalid_argument("reflect_pad2d: negative padding");
  i64 h = img.dim(0), w = img.dim(1);
  auto fold = [](i64 i, i64 n) {
    if (n == 1) return i64{0};
    i64 period = 2 * (n - 1);  // triangle wave, border sample not repeated
    i64 m = ((i % period) + period) % period;
    return m < n ? m : period - m;
  };
  Tensor out({top + h + bottom, left + w + right});
  for (i64 y = 0; y < out.dim(0); ++y) {
    i64 sy = fold(y - top, h);
    for (i64 x = 0; x < out.dim(1); ++x)
      out.data()[y * out.dim(1) + x] = img[sy * w + fold(x - left, w)];
  }
  return out;
}

namespace {

// tiles start every `stride` pixels; the padded extent ends exactly on the
// last tile
i64 padded_extent(i64 n, i64 tile, i64 stride) {
  if (n <= tile) return tile;
  i64 span = n - tile;
  i64 steps = (span + stride - 1) / stride;
  return tile + steps * stride;
}

std::vector<i64> origins(i64 padded, i64 tile, i64 stride) {
  std::vector<i64> out;
  for (i64 r = 0; r + tile <= padded; r += stride) out.push_back(r);
  return out;
}

// per-axis blend profile: cosine ramps over the overlap band at edges that
// face a neighboring tile, flat 1 elsewhere. Facing ramps of adjacent tiles
// use the same index, so their values are exact complements.
std::vector<double> feather_profile(i64 tile, i64 overlap, bool low_nb, bool high_nb) {
  std::vector<double> w(static_cast<size_t>(tile), 1.0);
  auto ramp = [&](i64 i) {
    return 0.5 * (1.0 - std::cos(M_PI * (static_cast<double>(i) + 0.5) /
                                 static_cast<double>(overlap)));
  };
  if (overlap > 0 && low_nb)
    for (i64 i = 0; i < overlap; ++i) w[static_cast<size_t>(i)] = ramp(i);
  if (overlap > 0 && high_nb)
    for (i64 i = 0; i < overlap; ++i)
      w[static_cast<size_t>(tile - overlap + i)] = 1.0 - ramp(i);
  return w;
}

struct TileGrid {
  i64 hp, wp;
  std::vector<i64> rows, cols;
};

TileGrid make_grid(i64 h, i64 w, const TileScheme& scheme) {
  scheme.validate();
  i64 stride = scheme.tile - scheme.overlap;
  TileGrid g;
  g.hp = padded_extent(h, scheme.tile, stride);
  g.wp = padded_extent(w, scheme.tile, stride);
  g.rows = origins(g.hp, scheme.tile, stride);
  g.cols = origins(g.wp, scheme.tile, stride);
  if (scheme.blend == BlendMode::kFeather && 2 * scheme.overlap > scheme.tile)
    throw std::invalid_argument(
        "map_large_scene: feather blending requires overlap <= tile/2, got overlap " +
        std::to_string(scheme.overlap) + " at tile " + std::to_string(scheme.tile));
  return g;
}

}  // namespace

Tensor feather_weight_field(i64 h, i64 w, const TileScheme& scheme) {
  if (h < 1 || w < 1) throw std::invalid_argument("feather_weight_field: empty extent");
  TileGrid g = make_grid(h, w, scheme);
  Tensor acc({g.hp, g.wp});
  for (i64 r : g.rows)
    for (i64 c : g.cols) {
      std::vector<double> wy =
          feather_profile(scheme.tile, scheme.overlap, r > 0, r + scheme.tile < g.hp);
      std::vector<double> wx =
          feather_profile(scheme.tile, scheme.overlap, c > 0, c + scheme.tile < g.wp);
      for (i64 y = 0; y < scheme.tile; ++y)
        for (i64 x = 0; x < scheme.tile; ++x)
          acc.data()[(r + y) * g.wp + c + x] +=
              wy[static_cast<size_t>(y)] * wx[static_cast<size_t>(x)];
    }
  Tensor out({h, w});
  for (i64 y = 0; y < h; ++y)
    for (i64 x = 0; x < w; ++x) out.data()[y * w + x] = acc[y * g.wp + x];
  return out;
}

Tensor map_large_scene(const TilePredictor& predict, const Tensor& pre, const Tensor& post,
                       const TileScheme& scheme) {
  if (pre.ndim() != 2 || post.ndim() != 2)
    throw std::invalid_argument("map_large_scene: expected [H, W] scenes");
  if (!pre.same_shape(post))
    throw std::invalid_argument("map_large_scene: scenes are not co-registered: " +
                                pre.shape_str() + " vs " + post.shape_str());
  i64 h = pre.dim(0), w = pre.dim(1);
  if (h < 1 || w < 1) throw std::invalid_argument("map_large_scene: empty scene");
  TileGrid g = make_grid(h, w, scheme);

  Tensor ppre = reflect_pad2d(pre, 0, g.hp - h, 0, g.wp - w);
  Tensor ppost = reflect_pad2d(post, 0, g.hp - h, 0, g.wp - w);

  Tensor acc({g.hp, g.wp});
  if (scheme.blend == BlendMode::kMax)
    for (i64 i = 0; i < acc.numel(); ++i)
      acc.data()[i] = -std::numeric_limits<double>::infinity();

  i64 t = scheme.tile, ov = scheme.overlap;
  for (size_t ri = 0; ri < g.rows.size(); ++ri)
    for (size_t ci = 0; ci < g.cols.size(); ++ci) {
      i64 r = g.rows[ri], c = g.cols[ci];
      Tensor tp({t, t}), tq({t, t});
      for (i64 y = 0; y < t; ++y) {
        std::copy(ppre.data() + (r + y) * g.wp + c, ppre.data() + (r + y) * g.wp + c + t,
                  tp.data() + y * t);
        std::copy(ppost.data() + (r + y) * g.wp + c, ppost.data() + (r + y) * g.wp + c + t,
                  tq.data() + y * t);
      }
      Tensor prob = predict(tp, tq);
      if (prob.ndim() != 2 || prob.dim(0) != t || prob.dim(1) != t)
        throw std::runtime_error("map_large_scene: predictor returned " + prob.shape_str() +
                                 " for a " + std::to_string(t) + "-pixel tile");

      switch (scheme.blend) {
        case BlendMode::kFeather: {
          std::vector<double> wy = feather_profile(t, ov, r > 0, r + t < g.hp);
          std::vector<double> wx = feather_profile(t, ov, c > 0, c + t < g.wp);
          for (i64 y = 0; y < t; ++y)
            for (i64 x = 0; x < t; ++x)
              acc.data()[(r + y) * g.wp + c + x] +=
                  prob[y * t + x] * wy[static_cast<size_t>(y)] * wx[static_cast<size_t>(x)];
          break;
        }
        case BlendMode::kMax:
          for (i64 y = 0; y < t; ++y)
            for (i64 x = 0; x < t; ++x) {
              double& a = acc.data()[(r + y) * g.wp + c + x];
              a = std::max(a, prob[y * t + x]);
            }
          break;
        case BlendMode::kCenterCrop: {
          // later tiles yield the leading half of each shared band
          i64 lead_y = ri == 0 ? 0 : (ov + 1) / 2;
          i64 lead_x = ci == 0 ? 0 : (ov + 1) / 2;
          for (i64 y = lead_y; y < t; ++y)
            for (i64 x = lead_x; x < t; ++x)
              acc.data()[(r + y) * g.wp + c + x] = prob[y * t + x];
          break;
        }
      }
    }

  Tensor out({h, w});
  for (i64 y = 0; y < h; ++y)
    for (i64 x = 0; x < w; ++x) out.data()[y * w + x] = acc[y * g.wp + x];
  return out;
}

AreaReport area_stats(const Tensor& mask, double pixel_area_m2) {
  if (!(pixel_area_m2 > 0.0))
    throw std::invalid_argument("area_stats: pixel area must be positive");
  AreaReport rep;
  rep.pixel_area_m2 = pixel_area_m2;
  for (i64 i = 0; i < mask.numel(); ++i) {
    if (mask[i] != 0.0 && mask[i] != 1.0)
      throw std::invalid_argument("area_stats: mask must be binary, found " +
                                  std::to_string(mask[i]));
    rep.flooded_pixels += mask[i] == 1.0 ? 1 : 0;
  }
  rep.flooded_km2 = static_cast<double>(rep.flooded_pixels) * pixel_area_m2 / 1e6;
  return rep;
}

std::string to_kv_text(const AreaReport& report) {
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "flooded_pixels = %lld\npixel_area_m2 = %.17g\nflooded_km2 = %.17g\n",
                static_cast<long long>(report.flooded_pixels), report.pixel_area_m2,
                report.flooded_km2);
  return buf;
}

}  // namespace damnet
