#include "damnet/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace damnet {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

template <typename T>
T parse_enum(const std::string& key, const std::string& v,
             const std::vector<std::pair<std::string, T>>& table) {
  for (const auto& [name, val] : table)
    if (v == name) return val;
  std::string allowed;
  for (const auto& [name, _] : table) allowed += (allowed.empty() ? "" : "|") + name;
  throw std::invalid_argument(key + ": unknown value '" + v + "' (expected " + allowed + ")");
}

const std::vector<std::pair<std::string, ContrastiveForm>> kContrastiveTable = {
    {"standard_hinge", ContrastiveForm::kStandardHinge},
    {"paper_literal", ContrastiveForm::kPaperLiteral}};
const std::vector<std::pair<std::string, LrSchedule>> kScheduleTable = {
    {"step", LrSchedule::kStep}, {"linear", LrSchedule::kLinear}};
const std::vector<std::pair<std::string, OptimizerKind>> kOptimizerTable = {
    {"adamw", OptimizerKind::kAdamW}, {"sgd", OptimizerKind::kSgd}};
const std::vector<std::pair<std::string, MorphOp>> kMorphTable = {{"erode", MorphOp::kErode},
                                                                  {"dilate", MorphOp::kDilate}};
const std::vector<std::pair<std::string, BlendMode>> kBlendTable = {
    {"feather", BlendMode::kFeather},
    {"max", BlendMode::kMax},
    {"center_crop", BlendMode::kCenterCrop}};

}  // namespace

std::string to_string(ContrastiveForm f) {
  return f == ContrastiveForm::kStandardHinge ? "standard_hinge" : "paper_literal";
}
std::string to_string(LrSchedule s) { return s == LrSchedule::kStep ? "step" : "linear"; }
std::string to_string(OptimizerKind o) { return o == OptimizerKind::kAdamW ? "adamw" : "sgd"; }
std::string to_string(MorphOp m) { return m == MorphOp::kErode ? "erode" : "dilate"; }
std::string to_string(BlendMode b) {
  switch (b) {
    case BlendMode::kFeather: return "feather";
    case BlendMode::kMax: return "max";
    default: return "center_crop";
  }
}

KvFile KvFile::parse(const std::string& text) {
  KvFile kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key=value, got '" + t + "'");
    kv.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return kv;
}

KvFile KvFile::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

bool KvFile::has(const std::string& key) const {
  for (const auto& [k, v] : items_)
    if (k == key) return true;
  return false;
}

const std::string& KvFile::get(const std::string& key) const {
  for (const auto& [k, v] : items_)
    if (k == key) return v;
  throw std::invalid_argument("config key missing: " + key);
}

std::string KvFile::get_or(const std::string& key, const std::string& fallback) const {
  return has(key) ? get(key) : fallback;
}

void KvFile::set(const std::string& key, const std::string& value) {
  if (key.empty()) throw std::invalid_argument("config: empty key");
  for (auto& [k, v] : items_)
    if (k == key) {
      v = value;
      return;
    }
  items_.emplace_back(key, value);
}

double KvFile::get_double(const std::string& key) const {
  const std::string& v = get(key);
  size_t pos = 0;
  double d;
  try {
    d = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument(key + ": not a number: '" + v + "'");
  }
  if (pos != v.size()) throw std::invalid_argument(key + ": trailing characters in '" + v + "'");
  return d;
}

i64 KvFile::get_int(const std::string& key) const {
  const std::string& v = get(key);
  size_t pos = 0;
  long long n;
  try {
    n = std::stoll(v, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument(key + ": not an integer: '" + v + "'");
  }
  if (pos != v.size()) throw std::invalid_argument(key + ": trailing characters in '" + v + "'");
  return static_cast<i64>(n);
}

bool KvFile::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument(key + ": expected true/false, got '" + v + "'");
}

std::vector<i64> KvFile::get_int_list(const std::string& key) const {
  const std::string& v = get(key);
  std::vector<i64> out;
  std::string item;
  std::istringstream in(v);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty()) throw std::invalid_argument(key + ": empty list element in '" + v + "'");
    try {
      out.push_back(static_cast<i64>(std::stoll(item)));
    } catch (const std::exception&) {
      throw std::invalid_argument(key + ": not an integer list: '" + v + "'");
    }
  }
  return out;
}

void KvFile::set_double(const std::string& key, double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  set(key, ss.str());
}

void KvFile::set_int(const std::string& key, i64 v) { set(key, std::to_string(v)); }
void KvFile::set_bool(const std::string& key, bool v) { set(key, v ? "true" : "false"); }

void KvFile::set_int_list(const std::string& key, const std::vector<i64>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  set(key, s);
}

std::string KvFile::to_string() const {
  std::string out;
  for (const auto& [k, v] : items_) out += k + " = " + v + "\n";
  return out;
}

void KvFile::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("cannot write config file " + path);
  out << to_string();
}

// ------------------------------------------------------------------- model

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.dims = {8, 16, 32, 64};
  c.heads = {1, 1, 2, 2};
  c.tdf_channels = 8;
  c.head_channels = 8;
  return c;
}

void ModelConfig::validate() const {
  if (in_channels < 1) throw std::invalid_argument("model.in_channels must be >= 1");
  if (dims.size() != kStages) throw std::invalid_argument("model.dims must list 4 stages");
  if (heads.size() != kStages) throw std::invalid_argument("model.heads must list 4 stages");
  for (int i = 0; i < kStages; ++i) {
    if (dims[i] < 1 || (i > 0 && dims[i] <= dims[i - 1]))
      throw std::invalid_argument("model.dims must be strictly increasing and positive");
    if (heads[i] < 1 || dims[i] % heads[i] != 0)
      throw std::invalid_argument("model.dims[" + std::to_string(i) + "]=" +
                                  std::to_string(dims[i]) + " not divisible by heads " +
                                  std::to_string(heads[i]));
    if (prm_rates.empty() || dims[i] % static_cast<i64>(prm_rates.size()) != 0)
      throw std::invalid_argument("model.dims[" + std::to_string(i) +
                                  "] must split evenly over prm_rates");
  }
  for (i64 r : prm_rates)
    if (r < 1) throw std::invalid_argument("model.prm_rates must be positive");
  if (ffn_ratio <= 0.0) throw std::invalid_argument("model.ffn_ratio must be positive");
  if (blocks_per_stage < 1) throw std::invalid_argument("model.blocks_per_stage must be >= 1");
  if (class_token_std <= 0.0) throw std::invalid_argument("model.class_token_std must be > 0");
  if (norm_eps <= 0.0) throw std::invalid_argument("model.norm_eps must be > 0");
  if (tdf_channels < 1) throw std::invalid_argument("model.tdf_channels must be >= 1");
  if (head_channels < 1) throw std::invalid_argument("model.head_channels must be >= 1");
}

void ModelConfig::emit(KvFile& kv) const {
  kv.set_int("model.in_channels", in_channels);
  kv.set_int_list("model.dims", dims);
  kv.set_int_list("model.heads", heads);
  kv.set_double("model.ffn_ratio", ffn_ratio);
  kv.set_int_list("model.prm_rates", prm_rates);
  kv.set_int("model.blocks_per_stage", blocks_per_stage);
  kv.set_bool("model.use_oel", use_oel);
  kv.set_bool("model.use_ctca_tace", use_ctca_tace);
  kv.set_bool("model.use_semantic_token", use_semantic_token);
  kv.set_double("model.class_token_std", class_token_std);
  kv.set_double("model.norm_eps", norm_eps);
  kv.set_int("model.tdf_channels", tdf_channels);
  kv.set_int("model.head_channels", head_channels);
  kv.set_int("model.seed", static_cast<i64>(seed));
  kv.set_bool("model.deterministic", deterministic);
}

void ModelConfig::apply(const KvFile& kv) {
  if (kv.has("model.in_channels")) in_channels = kv.get_int("model.in_channels");
  if (kv.has("model.dims")) dims = kv.get_int_list("model.dims");
  if (kv.has("model.heads")) heads = kv.get_int_list("model.heads");
  if (kv.has("model.ffn_ratio")) ffn_ratio = kv.get_double("model.ffn_ratio");
  if (kv.has("model.prm_rates")) prm_rates = kv.get_int_list("model.prm_rates");
  if (kv.has("model.blocks_per_stage")) blocks_per_stage = kv.get_int("model.blocks_per_stage");
  if (kv.has("model.use_oel")) use_oel = kv.get_bool("model.use_oel");
  if (kv.has("model.use_ctca_tace")) use_ctca_tace = kv.get_bool("model.use_ctca_tace");
  if (kv.has("model.use_semantic_token"))
    use_semantic_token = kv.get_bool("model.use_semantic_token");
  if (kv.has("model.class_token_std")) class_token_std = kv.get_double("model.class_token_std");
  if (kv.has("model.norm_eps")) norm_eps = kv.get_double("model.norm_eps");
  if (kv.has("model.tdf_channels")) tdf_channels = kv.get_int("model.tdf_channels");
  if (kv.has("model.head_channels")) head_channels = kv.get_int("model.head_channels");
  if (kv.has("model.seed")) seed = static_cast<std::uint64_t>(kv.get_int("model.seed"));
  if (kv.has("model.deterministic")) deterministic = kv.get_bool("model.deterministic");
}

// -------------------------------------------------------------------- loss

void LossConfig::validate() const {
  if (!(margin > 0.0)) throw std::invalid_argument("loss.margin must be > 0");
  if (lambda < 0.0) throw std::invalid_argument("loss.lambda must be >= 0");
  if (!(binarize_threshold > 0.0 && binarize_threshold < 1.0))
    throw std::invalid_argument("loss.binarize_threshold must lie in (0,1)");
}

void LossConfig::emit(KvFile& kv) const {
  kv.set_double("loss.margin", margin);
  kv.set_double("loss.lambda", lambda);
  kv.set("loss.contrastive_form", to_string(contrastive_form));
  kv.set_double("loss.binarize_threshold", binarize_threshold);
}

void LossConfig::apply(const KvFile& kv) {
  if (kv.has("loss.margin")) margin = kv.get_double("loss.margin");
  if (kv.has("loss.lambda")) lambda = kv.get_double("loss.lambda");
  if (kv.has("loss.contrastive_form"))
    contrastive_form =
        parse_enum("loss.contrastive_form", kv.get("loss.contrastive_form"), kContrastiveTable);
  if (kv.has("loss.binarize_threshold"))
    binarize_threshold = kv.get_double("loss.binarize_threshold");
}

// ------------------------------------------------------------------- train

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("train.lr must be > 0");
  if (weight_decay < 0.0) throw std::invalid_argument("train.weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw std::invalid_argument("train.beta1/beta2 must lie in [0,1)");
  if (epochs < 0) throw std::invalid_argument("train.epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("train.batch_size must be >= 1");
  for (size_t i = 0; i < decay_epochs.size(); ++i) {
    if (decay_epochs[i] >= epochs && epochs > 0)
      throw std::invalid_argument("train.decay_epochs must stay below train.epochs");
    if (i > 0 && decay_epochs[i] <= decay_epochs[i - 1])
      throw std::invalid_argument("train.decay_epochs must be strictly increasing");
  }
  if (!(decay_factor > 0.0 && decay_factor <= 1.0))
    throw std::invalid_argument("train.decay_factor must lie in (0,1]");
  if (!(momentum >= 0.0 && momentum < 1.0))
    throw std::invalid_argument("train.momentum must lie in [0,1)");
  loss.validate();
}

void TrainConfig::emit(KvFile& kv) const {
  kv.set_double("train.lr", lr);
  kv.set_double("train.weight_decay", weight_decay);
  kv.set_double("train.beta1", beta1);
  kv.set_double("train.beta2", beta2);
  kv.set_int("train.epochs", epochs);
  kv.set_int("train.batch_size", batch_size);
  kv.set_int_list("train.decay_epochs", decay_epochs);
  kv.set_double("train.decay_factor", decay_factor);
  kv.set("train.schedule", to_string(schedule));
  kv.set("train.optimizer", to_string(optimizer));
  kv.set_double("train.momentum", momentum);
  kv.set_int("train.seed", static_cast<i64>(seed));
  kv.set_bool("train.augment", augment);
  loss.emit(kv);
}

void TrainConfig::apply(const KvFile& kv) {
  if (kv.has("train.lr")) lr = kv.get_double("train.lr");
  if (kv.has("train.weight_decay")) weight_decay = kv.get_double("train.weight_decay");
  if (kv.has("train.beta1")) beta1 = kv.get_double("train.beta1");
  if (kv.has("train.beta2")) beta2 = kv.get_double("train.beta2");
  if (kv.has("train.epochs")) epochs = kv.get_int("train.epochs");
  if (kv.has("train.batch_size")) batch_size = kv.get_int("train.batch_size");
  if (kv.has("train.decay_epochs")) decay_epochs = kv.get_int_list("train.decay_epochs");
  if (kv.has("train.decay_factor")) decay_factor = kv.get_double("train.decay_factor");
  if (kv.has("train.schedule"))
    schedule = parse_enum("train.schedule", kv.get("train.schedule"), kScheduleTable);
  if (kv.has("train.optimizer"))
    optimizer = parse_enum("train.optimizer", kv.get("train.optimizer"), kOptimizerTable);
  if (kv.has("train.momentum")) momentum = kv.get_double("train.momentum");
  if (kv.has("train.seed")) seed = static_cast<std::uint64_t>(kv.get_int("train.seed"));
  if (kv.has("train.augment")) augment = kv.get_bool("train.augment");
  loss.apply(kv);
}

// ------------------------------------------------------------------- synth

void SynthConfig::validate() const {
  if (n_pairs < 0) throw std::invalid_argument("synth.n_pairs must be >= 0");
  if (size < 32 || size % 32 != 0)
    throw std::invalid_argument("synth.size must be a positive multiple of 32");
  if (speckle_looks < 0)
    throw std::invalid_argument("synth.speckle_looks must be >= 0 (0 disables speckle)");
  if (n_blobs < 0) throw std::invalid_argument("synth.n_blobs must be >= 0");
  if (!(blob_scale > 0.0 && blob_scale < 0.5))
    throw std::invalid_argument("synth.blob_scale must lie in (0, 0.5)");
  if (!(permanent_water_fraction >= 0.0 && permanent_water_fraction <= 1.0))
    throw std::invalid_argument("synth.permanent_water_fraction must lie in [0,1]");
}

void SynthConfig::emit(KvFile& kv) const {
  kv.set_int("synth.seed", static_cast<i64>(seed));
  kv.set_int("synth.n_pairs", n_pairs);
  kv.set_int("synth.size", size);
  kv.set_int("synth.speckle_looks", speckle_looks);
  kv.set_int("synth.n_blobs", n_blobs);
  kv.set_double("synth.blob_scale", blob_scale);
  kv.set_double("synth.permanent_water_fraction", permanent_water_fraction);
}

void SynthConfig::apply(const KvFile& kv) {
  if (kv.has("synth.seed")) seed = static_cast<std::uint64_t>(kv.get_int("synth.seed"));
  if (kv.has("synth.n_pairs")) n_pairs = kv.get_int("synth.n_pairs");
  if (kv.has("synth.size")) size = kv.get_int("synth.size");
  if (kv.has("synth.speckle_looks")) speckle_looks = kv.get_int("synth.speckle_looks");
  if (kv.has("synth.n_blobs")) n_blobs = kv.get_int("synth.n_blobs");
  if (kv.has("synth.blob_scale")) blob_scale = kv.get_double("synth.blob_scale");
  if (kv.has("synth.permanent_water_fraction"))
    permanent_water_fraction = kv.get_double("synth.permanent_water_fraction");
}

// ---------------------------------------------------------------- labeling

void LabelingConfig::validate() const {
  if (!std::isfinite(threshold_db)) throw std::invalid_argument("label.threshold_db must be finite");
  if (morph_radius < 1) throw std::invalid_argument("label.morph_radius must be >= 1");
}

void LabelingConfig::emit(KvFile& kv) const {
  kv.set_double("label.threshold_db", threshold_db);
  kv.set_int("label.morph_radius", morph_radius);
  std::string ops;
  for (size_t i = 0; i < morph_ops.size(); ++i)
    ops += (i ? "," : "") + to_string(morph_ops[i]);
  kv.set("label.morph_ops", ops);
}

void LabelingConfig::apply(const KvFile& kv) {
  if (kv.has("label.threshold_db")) threshold_db = kv.get_double("label.threshold_db");
  if (kv.has("label.morph_radius")) morph_radius = kv.get_int("label.morph_radius");
  if (kv.has("label.morph_ops")) {
    morph_ops.clear();
    std::istringstream in(kv.get("label.morph_ops"));
    std::string item;
    while (std::getline(in, item, ','))
      morph_ops.push_back(parse_enum("label.morph_ops", trim(item), kMorphTable));
  }
}

// -------------------------------------------------------------------- tile

void TileScheme::validate() const {
  if (tile < 32 || tile % 32 != 0)
    throw std::invalid_argument("tile.tile must be a positive multiple of 32");
  if (overlap < 0 || overlap >= tile)
    throw std::invalid_argument("tile.overlap must satisfy 0 <= overlap < tile");
}

void TileScheme::emit(KvFile& kv) const {
  kv.set_int("tile.tile", tile);
  kv.set_int("tile.overlap", overlap);
  kv.set("tile.blend", to_string(blend));
}

void TileScheme::apply(const KvFile& kv) {
  if (kv.has("tile.tile")) tile = kv.get_int("tile.tile");
  if (kv.has("tile.overlap")) overlap = kv.get_int("tile.overlap");
  if (kv.has("tile.blend")) blend = parse_enum("tile.blend", kv.get("tile.blend"), kBlendTable);
}

}  // namespace damnet
