#include "damnet/data.hpp"

#include "damnet/raster.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace damnet {

Tensor db_from_linear(const Tensor& power) {
  Tensor db(power.shape());
  for (i64 i = 0; i < power.numel(); ++i) {
    if (!(power[i] > 0.0))
      throw std::invalid_argument("db_from_linear: non-positive power at pixel " +
                                  std::to_string(i));
    db.data()[i] = 10.0 * std::log10(power[i]);
  }
  return db;
}

Tensor linear_from_db(const Tensor& db) {
  Tensor p(db.shape());
  for (i64 i = 0; i < db.numel(); ++i) p.data()[i] = std::pow(10.0, db[i] / 10.0);
  return p;
}

Tensor threshold_water_mask(const Tensor& sar_db, const LabelingConfig& cfg) {
  cfg.validate();
  i64 bad = 0;
  for (i64 i = 0; i < sar_db.numel(); ++i)
    if (!std::isfinite(sar_db[i])) ++bad;
  if (bad > 0)
    throw std::invalid_argument("threshold_water_mask: " + std::to_string(bad) +
                                " non-finite pixels");
  Tensor mask(sar_db.shape());
  for (i64 i = 0; i < sar_db.numel(); ++i)
    mask.data()[i] = sar_db[i] < cfg.threshold_db ? 1.0 : 0.0;
  return mask;
}

namespace {

std::vector<std::pair<i64, i64>> disk_offsets(i64 radius) {
  std::vector<std::pair<i64, i64>> out;
  for (i64 dy = -radius; dy <= radius; ++dy)
    for (i64 dx = -radius; dx <= radius; ++dx)
      if (dy * dy + dx * dx <= radius * radius) out.emplace_back(dy, dx);
  return out;
}

Tensor morph_pass(const Tensor& mask, const std::vector<std::pair<i64, i64>>& se, bool erode) {
  i64 h = mask.dim(0), w = mask.dim(1);
  Tensor out({h, w});
  for (i64 y = 0; y < h; ++y)
    for (i64 x = 0; x < w; ++x) {
      bool hit = erode;  // erosion: all inside; dilation: any inside
      for (const auto& [dy, dx] : se) {
        i64 yy = y + dy, xx = x + dx;
        bool v = yy >= 0 && yy < h && xx >= 0 && xx < w && mask[yy * w + xx] == 1.0;
        if (erode ? !v : v) {
          hit = !erode;
          break;
        }
      }
      out.data()[y * w + x] = hit ? 1.0 : 0.0;
    }
  return out;
}

void check_binary(const Tensor& mask, const char* op) {
  for (i64 i = 0; i < mask.numel(); ++i)
    if (mask[i] != 0.0 && mask[i] != 1.0)
      throw std::invalid_argument(std::string(op) + ": mask must be binary, found " +
                                  std::to_string(mask[i]));
}

}  // namespace

Tensor morphological_refine(const Tensor& mask, const LabelingConfig& cfg) {
  cfg.validate();
  if (mask.ndim() != 2) throw std::invalid_argument("morphological_refine: expected [H, W]");
  check_binary(mask, "morphological_refine");
  std::vector<std::pair<i64, i64>> se = disk_offsets(cfg.morph_radius);
  Tensor out = mask;
  for (MorphOp op : cfg.morph_ops) out = morph_pass(out, se, op == MorphOp::kErode);
  return out;
}

FloodLabel diff_flood_label(const Tensor& mask_pre, const Tensor& mask_post) {
  if (!mask_pre.same_shape(mask_post))
    throw std::invalid_argument("diff_flood_label: pre " + mask_pre.shape_str() + " vs post " +
                                mask_post.shape_str());
  check_binary(mask_pre, "diff_flood_label");
  check_binary(mask_post, "diff_flood_label");
  FloodLabel out;
  out.flood = Tensor(mask_pre.shape());
  out.permanent = Tensor(mask_pre.shape());
  for (i64 i = 0; i < mask_pre.numel(); ++i) {
    bool pre = mask_pre[i] == 1.0, post = mask_post[i] == 1.0;
    out.flood.data()[i] = (post && !pre) ? 1.0 : 0.0;
    out.permanent.data()[i] = (post && pre) ? 1.0 : 0.0;
  }
  return out;
}

std::vector<TileOrigin> tile_origins(i64 h, i64 w, i64 size) {
  if (size < 1) throw std::invalid_argument("tile_origins: size must be positive");
  if (h < size || w < size)
    throw std::invalid_argument("tile_origins: scene " + std::to_string(h) + "x" +
                                std::to_string(w) + " is smaller than one " +
                                std::to_string(size) + "-pixel tile");
  std::vector<TileOrigin> out;
  for (i64 r = 0; r + size <= h; r += size)
    for (i64 c = 0; c + size <= w; c += size) out.push_back({r, c});
  return out;
}

Tensor crop2d(const Tensor& img, i64 row, i64 col, i64 h, i64 w) {
  if (img.ndim() != 2) throw std::invalid_argument("crop2d: expected [H, W]");
  if (row < 0 || col < 0 || row + h > img.dim(0) || col + w > img.dim(1))
    throw std::invalid_argument("crop2d: window exceeds image bounds");
  Tensor out({h, w});
  for (i64 y = 0; y < h; ++y)
    for (i64 x = 0; x < w; ++x) out.data()[y * w + x] = img[(row + y) * img.dim(1) + col + x];
  return out;
}

void paste2d(Tensor& img, const Tensor& patch, i64 row, i64 col) {
  if (img.ndim() != 2 || patch.ndim() != 2)
    throw std::invalid_argument("paste2d: expected [H, W] tensors");
  if (row < 0 || col < 0 || row + patch.dim(0) > img.dim(0) || col + patch.dim(1) > img.dim(1))
    throw std::invalid_argument("paste2d: patch exceeds image bounds");
  for (i64 y = 0; y < patch.dim(0); ++y)
    for (i64 x = 0; x < patch.dim(1); ++x)
      img.data()[(row + y) * img.dim(1) + col + x] = patch[y * patch.dim(1) + x];
}

Tensor apply_augment(const Tensor& img, AugmentOp op) {
  if (img.ndim() != 2) throw std::invalid_argument("apply_augment: expected [H, W]");
  i64 h = img.dim(0), w = img.dim(1);
  if ((op == AugmentOp::kRot90 || op == AugmentOp::kRot270) && h != w)
    throw std::invalid_argument("apply_augment: quarter rotations need a square patch");
  Tensor out(img.shape());
  for (i64 y = 0; y < h; ++y)
    for (i64 x = 0; x < w; ++x) {
      double v;
      switch (op) {
        case AugmentOp::kIdentity: v = img[y * w + x]; break;
        case AugmentOp::kRot90: v = img[(h - 1 - x) * w + y]; break;
        case AugmentOp::kRot180: v = img[(h - 1 - y) * w + (w - 1 - x)]; break;
        case AugmentOp::kRot270: v = img[x * w + (w - 1 - y)]; break;
        case AugmentOp::kHFlip: v = img[y * w + (w - 1 - x)]; break;
        case AugmentOp::kVFlip: v = img[(h - 1 - y) * w + x]; break;
        default: throw std::invalid_argument("apply_augment: unknown op");
      }
      out.data()[y * w + x] = v;
    }
  return out;
}

AugmentOp draw_augment(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(0, kAugmentOps - 1);
  return static_cast<AugmentOp>(d(rng));
}

Sample augment(const Sample& s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  AugmentOp op = draw_augment(rng);
  return {apply_augment(s.pre, op), apply_augment(s.post, op), apply_augment(s.label, op)};
}

std::vector<const ManifestEntry*> DatasetManifest::split(const std::string& name) const {
  std::vector<const ManifestEntry*> out;
  for (const ManifestEntry& e : entries)
    if (e.split == name) out.push_back(&e);
  return out;
}

void DatasetManifest::validate() const {
  std::vector<std::pair<std::string, std::string>> seen;  // path -> split
  for (const ManifestEntry& e : entries) {
    if (e.split != "train" && e.split != "val" && e.split != "test")
      throw std::invalid_argument("manifest: unknown split " + e.split);
    for (const std::string* p : {&e.pre_path, &e.post_path, &e.label_path}) {
      for (const auto& [path, spl] : seen) {
        if (path != *p) continue;
        if (spl != e.split)
          throw std::invalid_argument("manifest: " + *p + " appears in splits " + spl + " and " +
                                      e.split);
        throw std::invalid_argument("manifest: duplicate path " + *p);
      }
      seen.emplace_back(*p, e.split);
    }
  }
}

void DatasetManifest::save(const std::string& path) const {
  nlohmann::json j;
  j["patch_size"] = patch_size;
  nlohmann::json jc = nlohmann::json::object();
  for (const auto& [k, v] : config.items()) jc[k] = v;
  j["config"] = jc;
  nlohmann::json je = nlohmann::json::array();
  for (const ManifestEntry& e : entries)
    je.push_back({{"pre", e.pre_path},
                  {"post", e.post_path},
                  {"label", e.label_path},
                  {"split", e.split},
                  {"event_id", e.event_id},
                  {"row", e.row},
                  {"col", e.col},
                  {"scale_min", e.scale_min},
                  {"scale_max", e.scale_max}});
  j["entries"] = je;
  std::ofstream f(path);
  if (!f) throw std::runtime_error("manifest: cannot open " + path);
  f << j.dump(2) << "\n";
}

DatasetManifest DatasetManifest::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("manifest: missing " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("manifest: " + path + " is not valid JSON: " + e.what());
  }
  DatasetManifest m;
  m.patch_size = j.at("patch_size").get<i64>();
  for (auto it = j.at("config").begin(); it != j.at("config").end(); ++it)
    m.config.set(it.key(), it.value().get<std::string>());
  for (const auto& je : j.at("entries")) {
    ManifestEntry e;
    e.pre_path = je.at("pre").get<std::string>();
    e.post_path = je.at("post").get<std::string>();
    e.label_path = je.at("label").get<std::string>();
    e.split = je.at("split").get<std::string>();
    e.event_id = je.at("event_id").get<std::string>();
    e.row = je.at("row").get<i64>();
    e.col = je.at("col").get<i64>();
    e.scale_min = je.at("scale_min").get<double>();
    e.scale_max = je.at("scale_max").get<double>();
    m.entries.push_back(std::move(e));
  }
  m.validate();
  return m;
}

namespace {

// smooth random field as a sum of gaussian bumps, clamped to [lo, hi]
Tensor bump_field(i64 size, double base, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> up(0.0, 1.0);
  constexpr int kBumps = 6;
  double cx[kBumps], cy[kBumps], amp[kBumps], s2[kBumps];
  for (int k = 0; k < kBumps; ++k) {
    cx[k] = up(rng) * static_cast<double>(size);
    cy[k] = up(rng) * static_cast<double>(size);
    amp[k] = (up(rng) * 2.0 - 1.0) * 1.5;
    double sigma = (0.15 + 0.15 * up(rng)) * static_cast<double>(size);
    s2[k] = 2.0 * sigma * sigma;
  }
  Tensor f({size, size});
  for (i64 y = 0; y < size; ++y)
    for (i64 x = 0; x < size; ++x) {
      double v = base;
      for (int k = 0; k < kBumps; ++k) {
        double dx = static_cast<double>(x) - cx[k];
        double dy = static_cast<double>(y) - cy[k];
        v += amp[k] * std::exp(-(dx * dx + dy * dy) / s2[k]);
      }
      f.data()[y * size + x] = std::clamp(v, lo, hi);
    }
  return f;
}

struct Blob {
  double cx, cy, rx, ry, cos_t, sin_t;
  bool contains(i64 y, i64 x) const {
    double dx = static_cast<double>(x) - cx;
    double dy = static_cast<double>(y) - cy;
    double u = (dx * cos_t + dy * sin_t) / rx;
    double v = (-dx * sin_t + dy * cos_t) / ry;
    return u * u + v * v <= 1.0;
  }
};

Blob draw_blob(i64 size, double scale, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> up(0.0, 1.0);
  Blob b;
  b.cx = (0.15 + 0.7 * up(rng)) * static_cast<double>(size);
  b.cy = (0.15 + 0.7 * up(rng)) * static_cast<double>(size);
  b.rx = (0.6 + 0.8 * up(rng)) * scale * static_cast<double>(size);
  b.ry = (0.6 + 0.8 * up(rng)) * scale * static_cast<double>(size);
  double t = up(rng) * 3.14159265358979323846;
  b.cos_t = std::cos(t);
  b.sin_t = std::sin(t);
  return b;
}

// multiplicative speckle applied in linear power, resampled per image
Tensor speckled(const Tensor& db, i64 looks, std::mt19937_64& rng) {
  if (looks == 0) return db;
  std::gamma_distribution<double> gamma(static_cast<double>(looks),
                                        1.0 / static_cast<double>(looks));
  Tensor out(db.shape());
  for (i64 i = 0; i < db.numel(); ++i) {
    double lin = std::pow(10.0, db[i] / 10.0) * gamma(rng);
    out.data()[i] = 10.0 * std::log10(lin);
  }
  return out;
}

std::string split_for(i64 index, i64 n_pairs) {
  if (n_pairs < 3) return "train";
  i64 n_val = std::max<i64>(1, n_pairs * 15 / 100);
  i64 n_test = std::max<i64>(1, n_pairs * 15 / 100);
  i64 n_train = n_pairs - n_val - n_test;
  if (index < n_train) return "train";
  return index < n_train + n_val ? "val" : "test";
}

}  // namespace

DatasetManifest synth_generate(const SynthConfig& cfg, const std::string& root) {
  cfg.validate();
  namespace fs = std::filesystem;
  for (const char* band : {"A", "B", "label"})
    for (const char* split : {"train", "val", "test"})
      fs::create_directories(fs::path(root) / band / split);

  std::mt19937_64 rng(cfg.seed);
  DatasetManifest manifest;
  manifest.patch_size = cfg.size;
  cfg.emit(manifest.config);

  i64 n_perm = static_cast<i64>(std::llround(static_cast<double>(cfg.n_blobs) *
                                             cfg.permanent_water_fraction));
  for (i64 pair = 0; pair < cfg.n_pairs; ++pair) {
    Tensor land = bump_field(cfg.size, -8.0, -12.0, -4.0, rng);
    Tensor water = bump_field(cfg.size, -24.0, -26.0, -21.0, rng);

    std::vector<Blob> perm, flood;
    for (i64 b = 0; b < n_perm; ++b) perm.push_back(draw_blob(cfg.size, cfg.blob_scale, rng));
    for (i64 b = 0; b < cfg.n_blobs; ++b) flood.push_back(draw_blob(cfg.size, cfg.blob_scale, rng));

    Tensor perm_mask({cfg.size, cfg.size}), flood_mask({cfg.size, cfg.size});
    for (i64 y = 0; y < cfg.size; ++y)
      for (i64 x = 0; x < cfg.size; ++x) {
        i64 i = y * cfg.size + x;
        perm_mask.data()[i] = std::any_of(perm.begin(), perm.end(),
                                          [&](const Blob& b) { return b.contains(y, x); })
                                  ? 1.0
                                  : 0.0;
        flood_mask.data()[i] = std::any_of(flood.begin(), flood.end(),
                                           [&](const Blob& b) { return b.contains(y, x); })
                                   ? 1.0
                                   : 0.0;
      }
    // regularize the rasterized blobs with an opening so the water regions are
    // fixed points of the labeling pipeline's morphology (opening is
    // idempotent and unions of open sets stay open)
    LabelingConfig smooth;
    smooth.morph_ops = {MorphOp::kErode, MorphOp::kDilate};
    perm_mask = morphological_refine(perm_mask, smooth);
    flood_mask = morphological_refine(flood_mask, smooth);

    Tensor pre_db({cfg.size, cfg.size}), post_db({cfg.size, cfg.size});
    Tensor label({cfg.size, cfg.size});
    for (i64 i = 0; i < perm_mask.numel(); ++i) {
      bool in_perm = perm_mask[i] == 1.0;
      bool in_flood = flood_mask[i] == 1.0;
      pre_db.data()[i] = in_perm ? water[i] : land[i];
      post_db.data()[i] = (in_perm || in_flood) ? water[i] : land[i];
      label.data()[i] = (in_flood && !in_perm) ? 1.0 : 0.0;
    }
    pre_db = speckled(pre_db, cfg.speckle_looks, rng);
    post_db = speckled(post_db, cfg.speckle_looks, rng);
    // quantize through the storage precision so the recorded scale range
    // matches the rasters exactly
    for (Tensor* t : {&pre_db, &post_db})
      for (i64 i = 0; i < t->numel(); ++i)
        t->data()[i] = static_cast<double>(static_cast<float>((*t)[i]));

    double smin = pre_db[0], smax = pre_db[0];
    for (const Tensor* t : {&pre_db, &post_db})
      for (i64 i = 0; i < t->numel(); ++i) {
        smin = std::min(smin, (*t)[i]);
        smax = std::max(smax, (*t)[i]);
      }

    char id[32];
    std::snprintf(id, sizeof id, "ev%04lld", static_cast<long long>(pair));
    std::string split = split_for(pair, cfg.n_pairs);
    std::string stem = std::string(id) + "_0_0";
    ManifestEntry e;
    e.pre_path = "A/" + split + "/" + stem + ".bin";
    e.post_path = "B/" + split + "/" + stem + ".bin";
    e.label_path = "label/" + split + "/" + stem + ".pgm";
    e.split = split;
    e.event_id = id;
    e.scale_min = smin;
    e.scale_max = smax;

    write_envi(root + "/" + e.pre_path, Raster{pre_db.reshaped({1, cfg.size, cfg.size}), ""});
    write_envi(root + "/" + e.post_path, Raster{post_db.reshaped({1, cfg.size, cfg.size}), ""});
    write_pgm_mask(root + "/" + e.label_path, label);
    manifest.entries.push_back(std::move(e));
  }
  manifest.validate();
  manifest.save(root + "/manifest.json");
  return manifest;
}

Sample load_sample(const std::string& root, const ManifestEntry& e) {
  Raster pre = read_envi(root + "/" + e.pre_path);
  Raster post = read_envi(root + "/" + e.post_path);
  Tensor label = read_pgm_mask(root + "/" + e.label_path);
  if (pre.bands() != 1 || post.bands() != 1)
    throw std::runtime_error("load_sample: expected single-band rasters for " + e.event_id);
  double range = std::max(e.scale_max - e.scale_min, 1e-12);
  auto scale = [&](const Raster& r) {
    Tensor out({r.height(), r.width()});
    for (i64 i = 0; i < out.numel(); ++i)
      out.data()[i] = std::clamp((r.data[i] - e.scale_min) / range, 0.0, 1.0);
    return out;
  };
  Sample s{scale(pre), scale(post), std::move(label)};
  if (!s.pre.same_shape(s.post) || !s.pre.same_shape(s.label))
    throw std::runtime_error("load_sample: band shapes disagree for " + e.event_id);
  return s;
}

}  // namespace damnet
