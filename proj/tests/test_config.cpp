#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "damnet/config.hpp"

using namespace damnet;

TEST_CASE("kv files parse and round-trip") {
  KvFile kv = KvFile::parse("# comment\nname = hello\ncount=3\n\nratio = 2.5\nflag=true\n");
  CHECK(kv.get("name") == "hello");
  CHECK(kv.get_int("count") == 3);
  CHECK(kv.get_double("ratio") == 2.5);
  CHECK(kv.get_bool("flag"));
  CHECK(kv.get_or("missing", "fallback") == "fallback");
  CHECK_FALSE(kv.has("missing"));
  CHECK_THROWS_AS(kv.get("missing"), std::invalid_argument);

  kv.set_int_list("dims", {8, 16, 32});
  CHECK(kv.get_int_list("dims") == std::vector<i64>{8, 16, 32});

  KvFile again = KvFile::parse(kv.to_string());
  CHECK(again.get("name") == "hello");
  CHECK(again.get_int_list("dims") == std::vector<i64>{8, 16, 32});
}

TEST_CASE("kv parse errors carry line numbers") {
  CHECK_THROWS_WITH_AS(KvFile::parse("a=1\nbroken line\n"),
                       doctest::Contains("line 2"), std::invalid_argument);
  KvFile kv = KvFile::parse("n=12x\nd=1.5.2\nb=maybe\n");
  CHECK_THROWS_AS(kv.get_int("n"), std::invalid_argument);
  CHECK_THROWS_AS(kv.get_double("d"), std::invalid_argument);
  CHECK_THROWS_AS(kv.get_bool("b"), std::invalid_argument);
}

TEST_CASE("set overwrites in place and doubles survive") {
  KvFile kv;
  kv.set("k", "a");
  kv.set("k", "b");
  CHECK(kv.items().size() == 1);
  CHECK(kv.get("k") == "b");
  kv.set_double("x", 0.1234567890123456789);
  CHECK(kv.get_double("x") == 0.1234567890123456789);
}

TEST_CASE("model config validation") {
  ModelConfig cfg = ModelConfig::tiny();
  CHECK_NOTHROW(cfg.validate());

  SUBCASE("dims must increase") {
    cfg.dims = {8, 8, 32, 64};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
  SUBCASE("heads must divide dims") {
    cfg.heads = {1, 3, 2, 2};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
  SUBCASE("dims must split over the pyramid rates") {
    cfg.dims = {9, 18, 36, 72};
    cfg.heads = {1, 1, 1, 1};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
  SUBCASE("defaults are the full-scale widths") {
    ModelConfig full;
    CHECK(full.dims == std::vector<i64>{64, 128, 256, 512});
    CHECK(full.heads == std::vector<i64>{1, 2, 4, 8});
    CHECK_NOTHROW(full.validate());
  }
}

TEST_CASE("model config emit/apply round trip") {
  ModelConfig cfg = ModelConfig::tiny();
  cfg.use_ctca_tace = false;
  cfg.blocks_per_stage = 2;
  cfg.seed = 99;
  KvFile kv;
  cfg.emit(kv);
  ModelConfig back;
  back.apply(kv);
  CHECK(back.dims == cfg.dims);
  CHECK(back.heads == cfg.heads);
  CHECK(back.blocks_per_stage == 2);
  CHECK_FALSE(back.use_ctca_tace);
  CHECK(back.seed == 99);

  // partial documents keep the untouched fields
  ModelConfig partial = ModelConfig::tiny();
  KvFile sparse = KvFile::parse("model.seed=3\n");
  partial.apply(sparse);
  CHECK(partial.seed == 3);
  CHECK(partial.dims == ModelConfig::tiny().dims);
}

TEST_CASE("train config validation and enums") {
  TrainConfig tc;
  CHECK_NOTHROW(tc.validate());
  CHECK(tc.lr == 1e-2);
  CHECK(tc.weight_decay == 6e-5);
  CHECK(tc.decay_epochs == std::vector<i64>{20, 50, 90});

  tc.decay_epochs = {50, 20};
  CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
  tc.decay_epochs = {20, 50, 200};
  CHECK_THROWS_AS(tc.validate(), std::invalid_argument);

  KvFile kv;
  TrainConfig out;
  out.optimizer = OptimizerKind::kSgd;
  out.schedule = LrSchedule::kLinear;
  out.emit(kv);
  TrainConfig in;
  in.apply(kv);
  CHECK(in.optimizer == OptimizerKind::kSgd);
  CHECK(in.schedule == LrSchedule::kLinear);
  CHECK_THROWS_AS(in.apply(KvFile::parse("train.optimizer=adagrad\n")), std::invalid_argument);
}

TEST_CASE("labeling and tiling configs") {
  LabelingConfig lc;
  CHECK(lc.threshold_db == -18.0);
  CHECK(lc.morph_ops == std::vector<MorphOp>{MorphOp::kErode, MorphOp::kDilate});
  lc.morph_radius = -1;
  CHECK_THROWS_AS(lc.validate(), std::invalid_argument);

  TileScheme ts;
  CHECK(ts.tile == 256);
  CHECK(ts.overlap == 32);
  CHECK(ts.blend == BlendMode::kFeather);
  ts.overlap = 256;
  CHECK_THROWS_AS(ts.validate(), std::invalid_argument);
  ts.overlap = -1;
  CHECK_THROWS_AS(ts.validate(), std::invalid_argument);

  KvFile kv;
  TileScheme out;
  out.blend = BlendMode::kCenterCrop;
  out.emit(kv);
  TileScheme in;
  in.apply(kv);
  CHECK(in.blend == BlendMode::kCenterCrop);
}

TEST_CASE("synth config validation") {
  SynthConfig sc;
  CHECK(sc.speckle_looks == 4);
  CHECK_NOTHROW(sc.validate());
  sc.speckle_looks = 0;  // disabled entirely
  CHECK_NOTHROW(sc.validate());
  sc.speckle_looks = -1;
  CHECK_THROWS_AS(sc.validate(), std::invalid_argument);
  sc = SynthConfig{};
  sc.permanent_water_fraction = 1.5;
  CHECK_THROWS_AS(sc.validate(), std::invalid_argument);
  sc = SynthConfig{};
  sc.size = 31;
  CHECK_THROWS_AS(sc.validate(), std::invalid_argument);
}
