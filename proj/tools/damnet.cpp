#include <CLI11.hpp>

#include "damnet/data.hpp"
#include "damnet/gradcheck.hpp"
#include "damnet/mapper.hpp"
#include "damnet/metrics.hpp"
#include "damnet/model.hpp"
#include "damnet/raster.hpp"
#include "damnet/train.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace damnet;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitDiverged = 4;

std::string env_data_root() {
  const char* v = std::getenv("DAMNET_DATA_ROOT");
  return v ? v : "";
}

// flag overrides land in a KvFile so file keys and flags resolve identically
void bind(CLI::App* cmd, KvFile* kv, const std::string& flag, const std::string& key,
          const std::string& help) {
  cmd->add_option_function<std::string>(
      flag, [kv, key](const std::string& v) { kv->set(key, v); }, help + " [" + key + "]");
}

void bind_synth(CLI::App* cmd, KvFile* kv) {
  bind(cmd, kv, "--seed", "synth.seed", "generation seed");
  bind(cmd, kv, "--n-pairs", "synth.n_pairs", "number of scene pairs");
  bind(cmd, kv, "--size", "synth.size", "scene side in pixels, multiple of 32");
  bind(cmd, kv, "--speckle-looks", "synth.speckle_looks", "gamma looks, 0 disables speckle");
  bind(cmd, kv, "--n-blobs", "synth.n_blobs", "injected flood blobs per pair");
  bind(cmd, kv, "--blob-scale", "synth.blob_scale", "blob radius as a fraction of the side");
  bind(cmd, kv, "--permanent-water-fraction", "synth.permanent_water_fraction",
       "permanent blobs relative to flood blobs");
}

void bind_label(CLI::App* cmd, KvFile* kv) {
  bind(cmd, kv, "--threshold-db", "label.threshold_db", "water threshold in dB");
  bind(cmd, kv, "--morph-radius", "label.morph_radius", "disk structuring-element radius");
  bind(cmd, kv, "--morph-ops", "label.morph_ops", "comma list of erode,dilate");
}

void bind_model(CLI::App* cmd, KvFile* kv) {
  bind(cmd, kv, "--in-channels", "model.in_channels", "input bands per epoch image");
  bind(cmd, kv, "--dims", "model.dims", "stage widths, comma list");
  bind(cmd, kv, "--heads", "model.heads", "attention heads per stage, comma list");
  bind(cmd, kv, "--ffn-ratio", "model.ffn_ratio", "feed-forward expansion ratio");
  bind(cmd, kv, "--prm-rates", "model.prm_rates", "pyramid dilation rates, comma list");
  bind(cmd, kv, "--blocks-per-stage", "model.blocks_per_stage", "extra mixer blocks per stage");
  bind(cmd, kv, "--use-oel", "model.use_oel", "overlapping embedding on/off (true/false)");
  bind(cmd, kv, "--use-ctca-tace", "model.use_ctca_tace",
       "cross-temporal attention on/off (true/false)");
  bind(cmd, kv, "--use-semantic-token", "model.use_semantic_token",
       "semantic token on/off (true/false)");
  bind(cmd, kv, "--class-token-std", "model.class_token_std", "token init stddev");
  bind(cmd, kv, "--norm-eps", "model.norm_eps", "subtraction-attention norm epsilon");
  bind(cmd, kv, "--tdf-channels", "model.tdf_channels", "differential conv width");
  bind(cmd, kv, "--head-channels", "model.head_channels", "upsampling head width");
  bind(cmd, kv, "--model-seed", "model.seed", "parameter init seed");
}

void bind_train(CLI::App* cmd, KvFile* kv) {
  bind(cmd, kv, "--lr", "train.lr", "base learning rate");
  bind(cmd, kv, "--weight-decay", "train.weight_decay", "decoupled weight decay");
  bind(cmd, kv, "--beta1", "train.beta1", "first-moment coefficient");
  bind(cmd, kv, "--beta2", "train.beta2", "second-moment coefficient");
  bind(cmd, kv, "--epochs", "train.epochs", "training epochs");
  bind(cmd, kv, "--batch-size", "train.batch_size", "minibatch size");
  bind(cmd, kv, "--decay-epochs", "train.decay_epochs", "milestone epochs, comma list");
  bind(cmd, kv, "--decay-factor", "train.decay_factor", "per-milestone multiplier");
  bind(cmd, kv, "--schedule", "train.schedule", "step or linear");
  bind(cmd, kv, "--optimizer", "train.optimizer", "adamw or sgd");
  bind(cmd, kv, "--momentum", "train.momentum", "sgd momentum");
  bind(cmd, kv, "--seed", "train.seed", "shuffle/augment seed");
  bind(cmd, kv, "--augment", "train.augment", "rotation/mirror augmentation (true/false)");
}

void bind_loss(CLI::App* cmd, KvFile* kv) {
  bind(cmd, kv, "--margin", "loss.margin", "contrastive margin");
  bind(cmd, kv, "--lambda", "loss.lambda", "dice weight in the total loss");
  bind(cmd, kv, "--contrastive-form", "loss.contrastive_form",
       "standard_hinge or paper_literal");
  bind(cmd, kv, "--threshold", "loss.binarize_threshold", "probability binarization threshold");
}

void bind_tile_scheme(CLI::App* cmd, KvFile* kv) {
  bind(cmd, kv, "--tile", "tile.tile", "tile side, multiple of 32");
  bind(cmd, kv, "--overlap", "tile.overlap", "tile overlap in pixels");
  bind(cmd, kv, "--blend", "tile.blend", "feather, max, or center_crop");
}

KvFile resolved(const std::string& config_path, const KvFile& overrides) {
  KvFile kv;
  if (!config_path.empty()) kv = KvFile::load(config_path);
  for (const auto& [k, v] : overrides.items()) kv.set(k, v);
  return kv;
}

void log_config(const char* what, const KvFile& kv) {
  std::cout << "# resolved " << what << " config\n" << kv.to_string();
}

Tensor read_band(const std::string& path, const char* what) {
  Raster r = read_envi(path);
  if (r.bands() != 1)
    throw std::runtime_error(std::string(what) + ": expected a single-band raster, got " +
                             std::to_string(r.bands()) + " bands in " + path);
  return r.data.reshaped({r.height(), r.width()});
}

struct ScaledPair {
  Tensor pre, post;
  double lo, hi;
};

// the same per-scene min-max convention the dataset manifests record
ScaledPair scale_pair(const Tensor& pre_db, const Tensor& post_db) {
  ScaledPair out;
  out.lo = pre_db[0];
  out.hi = pre_db[0];
  for (const Tensor* t : {&pre_db, &post_db})
    for (i64 i = 0; i < t->numel(); ++i) {
      out.lo = std::min(out.lo, (*t)[i]);
      out.hi = std::max(out.hi, (*t)[i]);
    }
  double range = std::max(out.hi - out.lo, 1e-12);
  auto scale = [&](const Tensor& t) {
    Tensor s(t.shape());
    for (i64 i = 0; i < t.numel(); ++i)
      s.data()[i] = std::clamp((t[i] - out.lo) / range, 0.0, 1.0);
    return s;
  };
  out.pre = scale(pre_db);
  out.post = scale(post_db);
  return out;
}

int levenshtein(const std::string& a, const std::string& b) {
  std::vector<int> prev(b.size() + 1), cur(b.size() + 1);
  for (size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<int>(j);
  for (size_t i = 1; i <= a.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1,
                         prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

void collect_flags(const CLI::App* app, std::vector<std::string>& out) {
  for (const CLI::Option* opt : app->get_options())
    for (const std::string& name : opt->get_lnames()) out.push_back("--" + name);
  for (const CLI::App* sub : app->get_subcommands({})) collect_flags(sub, out);
}

void suggest_flags(const CLI::App& app, const std::string& message) {
  std::vector<std::string> flags;
  collect_flags(&app, flags);
  size_t pos = 0;
  while ((pos = message.find("--", pos)) != std::string::npos) {
    size_t end = message.find_first_of(" \n\t,", pos);
    std::string bad = message.substr(pos, end == std::string::npos ? end : end - pos);
    pos = end == std::string::npos ? message.size() : end;
    std::string best;
    int best_d = 4;  // suggest only near misses
    for (const std::string& f : flags) {
      int d = levenshtein(bad, f);
      if (d < best_d) {
        best_d = d;
        best = f;
      }
    }
    if (!best.empty()) std::cerr << "did you mean '" << best << "'?\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bi-temporal SAR flood change detection pipeline"};
  app.require_subcommand(1);

  bool deterministic = false;
  app.add_flag("--deterministic", deterministic, "force deterministic mode globally");

  // ---- synth ----
  auto* synth = app.add_subcommand("synth", "generate a synthetic flood-pair dataset");
  std::string synth_config, synth_out;
  KvFile synth_kv;
  synth->add_option("--config", synth_config, "key=value config file");
  synth->add_option("--out", synth_out, "dataset root (default $DAMNET_DATA_ROOT)");
  bind_synth(synth, &synth_kv);

  // ---- label ----
  auto* label = app.add_subcommand("label", "threshold + morphology + diff labeling of a pair");
  std::string label_config, label_pre, label_post, label_out;
  KvFile label_kv;
  label->add_option("--config", label_config, "key=value config file");
  label->add_option("--pre", label_pre, "pre-event raster")->required();
  label->add_option("--post", label_post, "post-event raster")->required();
  label->add_option("--out", label_out, "output directory")->required();
  bind_label(label, &label_kv);

  // ---- tile ----
  auto* tile = app.add_subcommand("tile", "cut a labeled scene pair into dataset patches");
  std::string tile_pre, tile_post, tile_label, tile_out, tile_event, tile_split = "train";
  i64 tile_size = 256;
  tile->add_option("--pre", tile_pre, "pre-event raster")->required();
  tile->add_option("--post", tile_post, "post-event raster")->required();
  tile->add_option("--label", tile_label, "full-scene label mask (pgm)")->required();
  tile->add_option("--out", tile_out, "dataset root (default $DAMNET_DATA_ROOT)");
  tile->add_option("--size", tile_size, "patch size, default 256");
  tile->add_option("--event", tile_event, "event id (default: pre-raster stem)");
  tile->add_option("--split", tile_split, "train, val, or test");

  // ---- train ----
  auto* train_cmd = app.add_subcommand("train", "train a model on a dataset manifest");
  std::string train_config, train_data, train_model_out, train_history;
  KvFile train_kv;
  train_cmd->add_option("--config", train_config, "key=value config file");
  train_cmd->add_option("--data", train_data, "dataset root (default $DAMNET_DATA_ROOT)");
  train_cmd->add_option("--model-out", train_model_out, "checkpoint path (default <data>/model.ckpt)");
  train_cmd->add_option("--history", train_history, "epoch log path (default <data>/history.txt)");
  bind_train(train_cmd, &train_kv);
  bind_loss(train_cmd, &train_kv);
  bind_model(train_cmd, &train_kv);

  // ---- eval ----
  auto* eval_cmd = app.add_subcommand("eval", "score predicted masks against labels");
  std::string eval_pred, eval_label;
  eval_cmd->add_option("--pred", eval_pred, "directory of predicted .pgm masks")->required();
  eval_cmd->add_option("--label", eval_label, "directory of reference .pgm masks")->required();

  // ---- predict ----
  auto* predict = app.add_subcommand("predict", "single-patch probability and mask");
  std::string pred_pre, pred_post, pred_model, pred_prob_out, pred_mask_out;
  double pred_threshold = 0.5;
  predict->add_option("--pre", pred_pre, "pre-event raster")->required();
  predict->add_option("--post", pred_post, "post-event raster")->required();
  predict->add_option("--model", pred_model, "checkpoint path")->required();
  predict->add_option("--out-prob", pred_prob_out, "probability raster path");
  predict->add_option("--out-mask", pred_mask_out, "binary mask path (pgm)");
  predict->add_option("--threshold", pred_threshold, "binarization threshold, default 0.5");

  // ---- map ----
  auto* map_cmd = app.add_subcommand("map", "tiled large-scene flood mapping");
  std::string map_config, map_pre, map_post, map_model, map_prob_out, map_mask_out, map_report;
  double map_threshold = 0.5;
  KvFile map_kv;
  map_cmd->add_option("--config", map_config, "key=value config file");
  map_cmd->add_option("--pre", map_pre, "pre-event raster")->required();
  map_cmd->add_option("--post", map_post, "post-event raster")->required();
  map_cmd->add_option("--model", map_model, "checkpoint path")->required();
  map_cmd->add_option("--out-prob", map_prob_out, "probability raster path");
  map_cmd->add_option("--out-mask", map_mask_out, "binary mask path (pgm)");
  map_cmd->add_option("--report", map_report, "area report path");
  map_cmd->add_option("--threshold", map_threshold, "binarization threshold, default 0.5");
  bind_tile_scheme(map_cmd, &map_kv);

  // ---- gradcheck ----
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  std::string gc_config = "tiny";
  i64 gc_per_group = 200;
  double gc_step = 1e-5, gc_tol = 1e-3;
  i64 gc_seed = 0;
  gc->add_option("--config", gc_config, "tiny, full, or a key=value config file");
  gc->add_option("--per-group", gc_per_group, "sampled parameters per group, default 200");
  gc->add_option("--step", gc_step, "finite-difference step, default 1e-5");
  gc->add_option("--tol", gc_tol, "max relative error to pass, default 1e-3");
  gc->add_option("--seed", gc_seed, "model/batch seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    suggest_flags(app, e.what());
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (synth->parsed()) {
      std::string out = synth_out.empty() ? env_data_root() : synth_out;
      if (out.empty())
        throw std::invalid_argument("synth: --out or DAMNET_DATA_ROOT is required");
      SynthConfig cfg;
      cfg.apply(resolved(synth_config, synth_kv));
      cfg.validate();
      KvFile log;
      cfg.emit(log);
      log.set("out", out);
      log_config("synth", log);
      DatasetManifest m = synth_generate(cfg, out);
      std::cout << "wrote " << m.entries.size() << " pairs under " << out << "\n";
      return 0;
    }

    if (label->parsed()) {
      LabelingConfig cfg;
      cfg.apply(resolved(label_config, label_kv));
      cfg.validate();
      KvFile log;
      cfg.emit(log);
      log_config("label", log);
      Tensor pre_db = read_band(label_pre, "label");
      Tensor post_db = read_band(label_post, "label");
      Tensor mask_pre = morphological_refine(threshold_water_mask(pre_db, cfg), cfg);
      Tensor mask_post = morphological_refine(threshold_water_mask(post_db, cfg), cfg);
      FloodLabel lab = diff_flood_label(mask_pre, mask_post);
      fs::create_directories(label_out);
      write_pgm_mask(label_out + "/water_pre.pgm", mask_pre);
      write_pgm_mask(label_out + "/water_post.pgm", mask_post);
      write_pgm_mask(label_out + "/flood.pgm", lab.flood);
      write_pgm_mask(label_out + "/permanent.pgm", lab.permanent);
      std::cout << "wrote water_pre/water_post/flood/permanent masks under " << label_out << "\n";
      return 0;
    }

    if (tile->parsed()) {
      std::string out = tile_out.empty() ? env_data_root() : tile_out;
      if (out.empty()) throw std::invalid_argument("tile: --out or DAMNET_DATA_ROOT is required");
      if (tile_split != "train" && tile_split != "val" && tile_split != "test")
        throw std::invalid_argument("tile: --split must be train, val, or test");
      Tensor pre_db = read_band(tile_pre, "tile");
      Tensor post_db = read_band(tile_post, "tile");
      Tensor lab = read_pgm_mask(tile_label);
      if (!pre_db.same_shape(post_db) || !pre_db.same_shape(lab))
        throw std::runtime_error("tile: pre/post/label shapes disagree");
      std::string event = tile_event;
      if (event.empty()) event = fs::path(tile_pre).stem().string();

      double lo = pre_db[0], hi = pre_db[0];
      for (const Tensor* t : {&pre_db, &post_db})
        for (i64 i = 0; i < t->numel(); ++i) {
          lo = std::min(lo, (*t)[i]);
          hi = std::max(hi, (*t)[i]);
        }

      DatasetManifest m;
      std::string manifest_path = out + "/manifest.json";
      if (fs::exists(manifest_path)) {
        m = DatasetManifest::load(manifest_path);
        if (m.patch_size != tile_size)
          throw std::runtime_error("tile: existing manifest uses patch size " +
                                   std::to_string(m.patch_size));
      } else {
        m.patch_size = tile_size;
      }
      for (const char* band : {"A", "B", "label"})
        fs::create_directories(fs::path(out) / band / tile_split);

      for (const TileOrigin& o : tile_origins(pre_db.dim(0), pre_db.dim(1), tile_size)) {
        std::string stem =
            event + "_" + std::to_string(o.row) + "_" + std::to_string(o.col);
        ManifestEntry e;
        for (const ManifestEntry& prev : m.entries)
          if (prev.event_id == event && prev.row == o.row && prev.col == o.col)
            throw std::runtime_error("tile: event " + event + " tile " + std::to_string(o.row) +
                                     "," + std::to_string(o.col) + " is already in the manifest");
        e.pre_path = "A/" + tile_split + "/" + stem + ".bin";
        e.post_path = "B/" + tile_split + "/" + stem + ".bin";
        e.label_path = "label/" + tile_split + "/" + stem + ".pgm";
        e.split = tile_split;
        e.event_id = event;
        e.row = o.row;
        e.col = o.col;
        e.scale_min = lo;
        e.scale_max = hi;
        Tensor pc = crop2d(pre_db, o.row, o.col, tile_size, tile_size);
        Tensor qc = crop2d(post_db, o.row, o.col, tile_size, tile_size);
        write_envi(out + "/" + e.pre_path, Raster{pc.reshaped({1, tile_size, tile_size}), ""});
        write_envi(out + "/" + e.post_path, Raster{qc.reshaped({1, tile_size, tile_size}), ""});
        write_pgm_mask(out + "/" + e.label_path,
                       crop2d(lab, o.row, o.col, tile_size, tile_size));
        m.entries.push_back(std::move(e));
      }
      m.validate();
      m.save(manifest_path);
      std::cout << "manifest now lists " << m.entries.size() << " patches\n";
      return 0;
    }

    if (train_cmd->parsed()) {
      std::string data = train_data.empty() ? env_data_root() : train_data;
      if (data.empty())
        throw std::invalid_argument("train: --data or DAMNET_DATA_ROOT is required");
      KvFile kv = resolved(train_config, train_kv);
      ModelConfig mc;
      mc.apply(kv);
      if (deterministic) mc.deterministic = true;
      TrainConfig tc;
      tc.apply(kv);
      mc.validate();
      tc.validate();
      KvFile log;
      mc.emit(log);
      tc.emit(log);
      log.set("data", data);
      log_config("train", log);

      DatasetManifest m = DatasetManifest::load(data + "/manifest.json");
      DamNet model(mc);
      TrainHistory hist = train(model, data, m, tc);
      std::string ckpt = train_model_out.empty() ? data + "/model.ckpt" : train_model_out;
      std::string histp = train_history.empty() ? data + "/history.txt" : train_history;
      model.save(ckpt);
      hist.save(histp);
      if (!hist.records.empty()) {
        const EpochRecord& best = hist.records[static_cast<size_t>(hist.best_epoch)];
        std::cout << "best epoch " << hist.best_epoch << ": val " << table_row(best.val) << "\n";
      }
      std::cout << "checkpoint " << ckpt << "\nhistory " << histp << "\n";
      return 0;
    }

    if (eval_cmd->parsed()) {
      std::vector<std::string> names;
      for (const auto& entry : fs::directory_iterator(eval_pred))
        if (entry.path().extension() == ".pgm") names.push_back(entry.path().filename().string());
      if (names.empty()) throw std::runtime_error("eval: no .pgm masks under " + eval_pred);
      std::sort(names.begin(), names.end());
      ConfusionCounts counts;
      for (const std::string& name : names) {
        Tensor pred = read_pgm_mask(eval_pred + "/" + name);
        Tensor truth = read_pgm_mask(eval_label + "/" + name);
        counts = accumulate(pred, truth, counts);
      }
      MetricsReport rep = compute(counts);
      std::cout << to_kv_text(rep) << table_row(rep) << "\n";
      return 0;
    }

    if (predict->parsed() || map_cmd->parsed()) {
      bool tiled = map_cmd->parsed();
      const std::string& in_pre = tiled ? map_pre : pred_pre;
      const std::string& in_post = tiled ? map_post : pred_post;
      const std::string& in_model = tiled ? map_model : pred_model;
      const std::string& out_prob = tiled ? map_prob_out : pred_prob_out;
      const std::string& out_mask = tiled ? map_mask_out : pred_mask_out;
      double threshold = tiled ? map_threshold : pred_threshold;

      DamNet model = DamNet::load(in_model);
      Raster pre_raster = read_envi(in_pre);
      Tensor pre_db = read_band(in_pre, "predict");
      Tensor post_db = read_band(in_post, "predict");
      if (!pre_db.same_shape(post_db))
        throw std::runtime_error("predict: scenes are not co-registered: " + pre_db.shape_str() +
                                 " vs " + post_db.shape_str());
      ScaledPair sp = scale_pair(pre_db, post_db);

      Tensor probs;
      if (tiled) {
        TileScheme scheme;
        scheme.apply(resolved(map_config, map_kv));
        scheme.validate();
        KvFile log;
        scheme.emit(log);
        log.set_double("scale_min", sp.lo);
        log.set_double("scale_max", sp.hi);
        log_config("map", log);
        probs = map_large_scene(model_predictor(model), sp.pre, sp.post, scheme);
      } else {
        i64 h = sp.pre.dim(0), w = sp.pre.dim(1);
        if (h % 32 != 0 || w % 32 != 0)
          throw std::runtime_error(
              "predict: scene extent must be a multiple of 32 (use `map` for arbitrary scenes)");
        std::cout << "# scale_min = " << sp.lo << "\n# scale_max = " << sp.hi << "\n";
        Tensor bp({1, 1, h, w}), bq({1, 1, h, w});
        std::copy(sp.pre.data(), sp.pre.data() + h * w, bp.data());
        std::copy(sp.post.data(), sp.post.data() + h * w, bq.data());
        NoGradGuard ng;
        probs = model.forward(constant(std::move(bp)), constant(std::move(bq)), Ctx{})
                    ->value.reshaped({h, w});
      }

      Tensor mask = binarize(probs, threshold);
      if (!out_prob.empty())
        write_envi(out_prob, Raster{probs.reshaped({1, probs.dim(0), probs.dim(1)}),
                                    pre_raster.map_info});
      if (!out_mask.empty()) write_pgm_mask(out_mask, mask);
      AreaReport area = area_stats(mask);
      std::cout << to_kv_text(area);
      if (tiled && !map_report.empty()) {
        std::ofstream f(map_report);
        if (!f) throw std::runtime_error("map: cannot open " + map_report);
        f << to_kv_text(area);
      }
      return 0;
    }

    if (gc->parsed()) {
      ModelConfig mc;
      LossConfig lc;
      if (gc_config == "tiny") {
        mc = ModelConfig::tiny();
      } else if (gc_config != "full") {
        KvFile kv = KvFile::load(gc_config);
        mc.apply(kv);
        lc.apply(kv);
      }
      mc.seed = static_cast<std::uint64_t>(gc_seed);
      KvFile log;
      mc.emit(log);
      lc.emit(log);
      log_config("gradcheck", log);
      GradCheckReport rep =
          gradcheck_model(mc, lc, gc_per_group, gc_step, static_cast<std::uint64_t>(gc_seed));
      std::cout << to_text(rep);
      bool ok = rep.pass(gc_tol);
      std::cout << (ok ? "PASS" : "FAIL") << " (tolerance " << gc_tol << ")\n";
      return ok ? 0 : 1;
    }
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}
