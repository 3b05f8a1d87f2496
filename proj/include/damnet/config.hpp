#pragma once

#include "damnet/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace damnet {

/// Ordered key=value document. One format serves config files, resolved-config
/// logging and the checkpoint header. Lines starting with '#' are comments.
class KvFile {
 public:
  static KvFile parse(const std::string& text);
  static KvFile load(const std::string& path);

  bool has(const std::string& key) const;
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  void set(const std::string& key, const std::string& value);

  double get_double(const std::string& key) const;
  i64 get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<i64> get_int_list(const std::string& key) const;  // comma separated

  void set_double(const std::string& key, double v);
  void set_int(const std::string& key, i64 v);
  void set_bool(const std::string& key, bool v);
  void set_int_list(const std::string& key, const std::vector<i64>& v);

  std::string to_string() const;
  void save(const std::string& path) const;
  const std::vector<std::pair<std::string, std::string>>& items() const { return items_; }

 private:
  std::vector<std::pair<std::string, std::string>> items_;
};

struct ModelConfig {
  static constexpr int kStages = 4;
  static constexpr int kDownsample[kStages] = {4, 8, 16, 32};

  i64 in_channels = 1;
  std::vector<i64> dims = {64, 128, 256, 512};
  std::vector<i64> heads = {1, 2, 4, 8};
  double ffn_ratio = 4.0;
  std::vector<i64> prm_rates = {1, 2, 3, 4};
  i64 blocks_per_stage = 1;
  bool use_oel = true;
  bool use_ctca_tace = true;
  bool use_semantic_token = true;
  double class_token_std = 0.02;
  double norm_eps = 1e-8;
  i64 tdf_channels = 64;   // per-stage differential conv width
  i64 head_channels = 64;  // intermediate width of the upsampling head
  std::uint64_t seed = 0;
  bool deterministic = true;

  static ModelConfig tiny();  // D=[8,16,32,64], heads=[1,1,2,2] for 32x32 inputs

  void validate() const;
  void emit(KvFile& kv) const;
  void apply(const KvFile& kv);  // keys not present keep their current value
};

enum class ContrastiveForm { kStandardHinge, kPaperLiteral };

struct LossConfig {
  double margin = 1.0;
  double lambda = 0.4;
  ContrastiveForm contrastive_form = ContrastiveForm::kStandardHinge;
  double binarize_threshold = 0.5;

  void validate() const;
  void emit(KvFile& kv) const;
  void apply(const KvFile& kv);
};

enum class LrSchedule { kStep, kLinear };
enum class OptimizerKind { kAdamW, kSgd };

struct TrainConfig {
  double lr = 1e-2;
  double weight_decay = 6e-5;
  double beta1 = 0.900;
  double beta2 = 0.999;
  i64 epochs = 100;
  i64 batch_size = 8;
  std::vector<i64> decay_epochs = {20, 50, 90};
  double decay_factor = 0.1;
  LrSchedule schedule = LrSchedule::kStep;
  OptimizerKind optimizer = OptimizerKind::kAdamW;
  double momentum = 0.99;  // sgd branch only
  std::uint64_t seed = 0;
  bool augment = true;
  LossConfig loss;

  void validate() const;
  void emit(KvFile& kv) const;
  void apply(const KvFile& kv);
};

struct SynthConfig {
  std::uint64_t seed = 0;
  i64 n_pairs = 16;
  i64 size = 64;
  i64 speckle_looks = 4;  // 0 disables speckle entirely
  i64 n_blobs = 3;
  double blob_scale = 0.16;  // blob radius as a fraction of the image side
  double permanent_water_fraction = 0.35;

  void validate() const;
  void emit(KvFile& kv) const;
  void apply(const KvFile& kv);
};

enum class MorphOp { kErode, kDilate };

struct LabelingConfig {
  double threshold_db = -18.0;
  i64 morph_radius = 2;
  std::vector<MorphOp> morph_ops = {MorphOp::kErode, MorphOp::kDilate};

  void validate() const;
  void emit(KvFile& kv) const;
  void apply(const KvFile& kv);
};

enum class BlendMode { kFeather, kMax, kCenterCrop };

struct TileScheme {
  i64 tile = 256;
  i64 overlap = 32;
  BlendMode blend = BlendMode::kFeather;

  void validate() const;
  void emit(KvFile& kv) const;
  void apply(const KvFile& kv);
};

std::string to_string(ContrastiveForm f);
std::string to_string(LrSchedule s);
std::string to_string(OptimizerKind o);
std::string to_string(MorphOp m);
std::string to_string(BlendMode b);

}  // namespace damnet
