#pragma once

#include "damnet/config.hpp"
#include "damnet/tensor.hpp"

#include <random>
#include <string>
#include <vector>

namespace damnet {

/// dB <-> linear power conversion. Calibration itself is out of scope; inputs
/// are assumed calibrated backscatter.
Tensor db_from_linear(const Tensor& power);  // rejects non-positive pixels
Tensor linear_from_db(const Tensor& db);

/// mask = 1 where backscatter < threshold. Non-finite pixels are rejected
/// with their count in the message.
Tensor threshold_water_mask(const Tensor& sar_db, const LabelingConfig& cfg);

/// Applies cfg.morph_ops in order with a disk structuring element of
/// cfg.morph_radius. Pixels outside the image count as background.
Tensor morphological_refine(const Tensor& mask, const LabelingConfig& cfg);

struct FloodLabel {
  Tensor flood;      // post water that is not pre water
  Tensor permanent;  // water in both epochs
};
FloodLabel diff_flood_label(const Tensor& mask_pre, const Tensor& mask_post);

/// Non-overlapping tiling with right/bottom remainders dropped. Errors when
/// the scene is smaller than one tile.
struct TileOrigin {
  i64 row, col;
};
std::vector<TileOrigin> tile_origins(i64 h, i64 w, i64 size);
Tensor crop2d(const Tensor& img, i64 row, i64 col, i64 h, i64 w);
void paste2d(Tensor& img, const Tensor& patch, i64 row, i64 col);

enum class AugmentOp { kIdentity, kRot90, kRot180, kRot270, kHFlip, kVFlip };
constexpr int kAugmentOps = 6;
/// Rotations require a square input; flips work on any [H, W].
Tensor apply_augment(const Tensor& img, AugmentOp op);
AugmentOp draw_augment(std::mt19937_64& rng);

/// One training sample: pre/post scaled to [0,1], binary label. All [H, W].
struct Sample {
  Tensor pre, post, label;
};
/// Applies one seed-determined transform identically to all three maps.
Sample augment(const Sample& s, std::uint64_t seed);

struct ManifestEntry {
  std::string pre_path, post_path, label_path;  // relative to the dataset root
  std::string split;                            // train | val | test
  std::string event_id;
  i64 row = 0, col = 0;
  double scale_min = 0.0, scale_max = 0.0;  // dB range mapped onto [0,1]
};

struct DatasetManifest {
  i64 patch_size = 256;
  std::vector<ManifestEntry> entries;
  KvFile config;  // generation/labeling settings for provenance

  std::vector<const ManifestEntry*> split(const std::string& name) const;
  void validate() const;  // each path belongs to exactly one split
  void save(const std::string& path) const;
  static DatasetManifest load(const std::string& path);
};

/// Writes a synthetic flood-pair dataset under
/// `<root>/{A,B,label}/<split>/<event>_<row>_<col>.*` and returns (and saves)
/// its manifest. Bit-identical for identical configs.
DatasetManifest synth_generate(const SynthConfig& cfg, const std::string& root);

/// Reads one entry's rasters and applies the recorded dB-to-[0,1] scaling.
Sample load_sample(const std::string& root, const ManifestEntry& e);

}  // namespace damnet
