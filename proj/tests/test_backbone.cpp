#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "damnet/backbone.hpp"
#include "oracles.hpp"

using namespace damnet;

namespace {

Tensor identity(i64 n) {
  Tensor t({n, n});
  for (i64 i = 0; i < n; ++i) t.data()[i * n + i] = 1.0;
  return t;
}

}  // namespace

TEST_CASE("twfe matches the scalar composition") {
  Ctx ctx;
  std::vector<i64> rates = {1, 2, 3, 4};

  SUBCASE("stage 1 embeds the raw image") {
    ParamStore ps;
    std::mt19937_64 rng(21);
    Twfe twfe(ps, "s", 0, 2, 8, 1, 4.0, rates, 1, true, rng);
    Var x = leaf(Tensor::randn({2, 2, 16, 16}, 0.0, 1.0, 22), false);
    i64 h = 0, w = 0;
    Var r = twfe.forward(x, ctx, &h, &w);
    CHECK(h == 4);
    CHECK(w == 4);
    REQUIRE(r->value.shape() == Shape{2, 16, 8});
    Tensor want = oracle::twfe(x->value, ps, "s", 0, 1, rates, 8, nullptr, nullptr);
    CHECK(oracle::max_abs_diff(r->value, want) < 1e-9);
  }

  SUBCASE("later stages halve the previous feature") {
    ParamStore ps;
    std::mt19937_64 rng(23);
    Twfe twfe(ps, "s", 1, 8, 16, 2, 4.0, rates, 1, true, rng);
    Var x = leaf(Tensor::randn({1, 8, 8, 8}, 0.0, 1.0, 24), false);
    i64 h = 0, w = 0;
    Var r = twfe.forward(x, ctx, &h, &w);
    REQUIRE(r->value.shape() == Shape{1, 16, 16});
    CHECK(h == 4);
    Tensor want = oracle::twfe(x->value, ps, "s", 1, 2, rates, 16, nullptr, nullptr);
    CHECK(oracle::max_abs_diff(r->value, want) < 1e-9);
  }

  SUBCASE("extra blocks keep the token shape") {
    ParamStore ps;
    std::mt19937_64 rng(25);
    Twfe twfe(ps, "s", 1, 8, 16, 2, 4.0, rates, 3, true, rng);
    Var x = leaf(Tensor::randn({1, 8, 8, 8}, 0.0, 1.0, 26), false);
    Var r = twfe.forward(x, ctx, nullptr, nullptr);
    CHECK(r->value.shape() == Shape{1, 16, 16});
    CHECK(ps.find("s.block2.mha.q.weight") != nullptr);
  }
}

TEST_CASE("ctca directional passes") {
  ParamStore ps;
  std::mt19937_64 rng(31);
  Ctca ctca(ps, "c", 4, 2.0, 1e-8, rng);

  SUBCASE("identical branches yield identical outputs") {
    Var r = leaf(Tensor::randn({2, 5, 4}, 0.0, 1.0, 32), false);
    auto [f_pre, f_post] = ctca.forward(r, r);
    CHECK(f_pre->value.equals(f_post->value));
  }

  SUBCASE("single token with identity projections reduces to the zero-input mlp") {
    ps.find("c.q.weight")->var->value = identity(4);
    ps.find("c.k.weight")->var->value = identity(4);
    ps.find("c.v.weight")->var->value = identity(4);
    Var r = leaf(Tensor::from({1, 1, 4}, {0.3, -1.2, 0.7, 2.0}), false);
    auto [f_pre, f_post] = ctca.forward(r, r);
    Tensor want = oracle::mlp(Tensor::zeros({1, 1, 4}), ps, "c.mlp");
    CHECK(oracle::max_abs_diff(f_pre->value, want) < 1e-12);
  }

  SUBCASE("matches the scalar oracle") {
    Var a = leaf(Tensor::randn({2, 3, 4}, 0.0, 1.0, 33), false);
    Var b = leaf(Tensor::randn({2, 3, 4}, 0.0, 1.0, 34), false);
    auto [f_pre, f_post] = ctca.forward(a, b);
    auto [w_pre, w_post] = oracle::ctca(a->value, b->value, ps, "c", 1e-8);
    CHECK(oracle::max_abs_diff(f_pre->value, w_pre) < 1e-9);
    CHECK(oracle::max_abs_diff(f_post->value, w_post) < 1e-9);
  }
}

TEST_CASE("tace enhancement") {
  Ctx ctx;
  ParamStore ps;
  std::mt19937_64 rng(41);
  Tace tace(ps, "t", 8, 2, 2.0, true, rng);
  Var r = leaf(Tensor::randn({2, 6, 8}, 0.0, 1.0, 42), false);
  Var f = leaf(Tensor::randn({2, 6, 8}, 0.0, 1.0, 43), false);
  Var ct = leaf(Tensor::randn({8}, 0.0, 0.02, 44), false);

  SUBCASE("matches the scalar oracle without a class token") {
    auto [enh, t_sem] = tace.forward(r, f, 2, 3, nullptr, ctx);
    CHECK(t_sem == nullptr);
    REQUIRE(enh->value.shape() == Shape{2, 8, 2, 3});
    auto [want, unused] = oracle::tace(r->value, f->value, 2, 3, nullptr, ps, "t", 2);
    CHECK(oracle::max_abs_diff(enh->value, want) < 1e-9);
  }

  SUBCASE("matches the scalar oracle with a class token") {
    auto [enh, t_sem] = tace.forward(r, f, 2, 3, ct, ctx);
    REQUIRE(t_sem != nullptr);
    REQUIRE(t_sem->value.shape() == Shape{2, 8});
    auto [want, want_sem] = oracle::tace(r->value, f->value, 2, 3, &ct->value, ps, "t", 2);
    CHECK(oracle::max_abs_diff(enh->value, want) < 1e-9);
    CHECK(oracle::max_abs_diff(t_sem->value, want_sem) < 1e-9);
  }

  SUBCASE("class token does not disturb the spatial rows") {
    auto [with_ct, t_sem] = tace.forward(r, f, 2, 3, ct, ctx);
    auto [without_ct, unused] = tace.forward(r, f, 2, 3, nullptr, ctx);
    CHECK(with_ct->value.equals(without_ct->value));
  }

  SUBCASE("rejects a class token when not allowed") {
    ParamStore ps2;
    std::mt19937_64 rng2(45);
    Tace plain(ps2, "t", 8, 2, 2.0, false, rng2);
    CHECK_THROWS_AS(plain.forward(r, f, 2, 3, ct, ctx), std::invalid_argument);
  }
}

TEST_CASE("backbone stage ladder and semantic token") {
  ModelConfig cfg = ModelConfig::tiny();
  ParamStore ps;
  std::mt19937_64 rng(cfg.seed);
  Backbone bb(ps, cfg, rng);
  Ctx ctx;
  Var pre = leaf(Tensor::randn({2, 1, 32, 32}, 0.0, 1.0, 51), false);
  Var post = leaf(Tensor::randn({2, 1, 32, 32}, 0.0, 1.0, 52), false);
  BackboneFeatures out = bb.forward(pre, post, ctx);

  for (int i = 0; i < ModelConfig::kStages; ++i) {
    i64 g = 32 / ModelConfig::kDownsample[i];
    CHECK(out.pre[i]->value.shape() == Shape{2, cfg.dims[i], g, g});
    CHECK(out.post[i]->value.shape() == Shape{2, cfg.dims[i], g, g});
  }
  REQUIRE(out.t_sem != nullptr);
  CHECK(out.t_sem->value.shape() == Shape{2, 64});
}

TEST_CASE("backbone matches a stage-by-stage scalar recomputation") {
  ModelConfig cfg = ModelConfig::tiny();
  ParamStore ps;
  std::mt19937_64 rng(7);
  Backbone bb(ps, cfg, rng);
  Ctx ctx;
  Var pre = leaf(Tensor::randn({1, 1, 32, 32}, 0.0, 0.5, 53), false);
  Var post = leaf(Tensor::randn({1, 1, 32, 32}, 0.0, 0.5, 54), false);
  BackboneFeatures out = bb.forward(pre, post, ctx);

  Tensor in_pre = pre->value, in_post = post->value;
  Tensor t_sem;
  for (int i = 0; i < ModelConfig::kStages; ++i) {
    std::string sp = "stage" + std::to_string(i + 1);
    int heads = static_cast<int>(cfg.heads[i]);
    i64 h = 0, w = 0;
    Tensor r_pre =
        oracle::twfe(in_pre, ps, sp + ".twfe", i, heads, cfg.prm_rates, cfg.dims[i], &h, &w);
    Tensor r_post =
        oracle::twfe(in_post, ps, sp + ".twfe", i, heads, cfg.prm_rates, cfg.dims[i], nullptr,
                     nullptr);
    auto [f_pre, f_post] = oracle::ctca(r_pre, r_post, ps, sp + ".ctca", cfg.norm_eps);
    bool last = i == ModelConfig::kStages - 1;
    const Tensor* ct = last ? &ps.find("class_token")->var->value : nullptr;
    auto [e_pre, sem] = oracle::tace(r_pre, f_pre, h, w, ct, ps, sp + ".tace", heads);
    auto [e_post, unused] = oracle::tace(r_post, f_post, h, w, nullptr, ps, sp + ".tace", heads);
    if (last) t_sem = sem;
    in_pre = e_pre;
    in_post = e_post;
    CHECK(oracle::max_abs_diff(out.pre[i]->value, e_pre) < 1e-8);
    CHECK(oracle::max_abs_diff(out.post[i]->value, e_post) < 1e-8);
  }
  CHECK(oracle::max_abs_diff(out.t_sem->value, t_sem) < 1e-8);
}

TEST_CASE("identical inputs produce identical branch features") {
  ModelConfig cfg = ModelConfig::tiny();
  ParamStore ps;
  std::mt19937_64 rng(cfg.seed);
  Backbone bb(ps, cfg, rng);
  Ctx ctx;
  Var x = leaf(Tensor::randn({1, 1, 32, 32}, 0.0, 1.0, 61), false);
  BackboneFeatures out = bb.forward(x, x, ctx);
  for (int i = 0; i < ModelConfig::kStages; ++i)
    CHECK(out.pre[i]->value.equals(out.post[i]->value));
}

TEST_CASE("backbone input validation") {
  ModelConfig cfg = ModelConfig::tiny();
  ParamStore ps;
  std::mt19937_64 rng(cfg.seed);
  Backbone bb(ps, cfg, rng);
  Ctx ctx;
  Var good = leaf(Tensor::zeros({1, 1, 32, 32}), false);
  CHECK_THROWS_AS(bb.forward(good, leaf(Tensor::zeros({1, 1, 32, 64}), false), ctx),
                  std::invalid_argument);
  Var two_ch = leaf(Tensor::zeros({1, 2, 32, 32}), false);
  CHECK_THROWS_AS(bb.forward(two_ch, two_ch, ctx), std::invalid_argument);
  Var odd = leaf(Tensor::zeros({1, 1, 48, 48}), false);
  CHECK_THROWS_AS(bb.forward(odd, odd, ctx), std::invalid_argument);
}

TEST_CASE("ablation switches") {
  Ctx ctx;
  Var pre = leaf(Tensor::randn({1, 1, 32, 32}, 0.0, 1.0, 71), false);
  Var post = leaf(Tensor::randn({1, 1, 32, 32}, 0.0, 1.0, 72), false);

  SUBCASE("plain siamese extractor") {
    ModelConfig cfg = ModelConfig::tiny();
    cfg.use_ctca_tace = false;
    cfg.use_semantic_token = false;
    ParamStore ps;
    std::mt19937_64 rng(1);
    Backbone bb(ps, cfg, rng);
    for (const std::string& g : ps.groups()) {
      CHECK(g != "ctca");
      CHECK(g != "tace");
    }
    BackboneFeatures out = bb.forward(pre, post, ctx);
    CHECK(out.t_sem == nullptr);
    CHECK(out.pre[3]->value.shape() == Shape{1, 64, 1, 1});
  }

  SUBCASE("semantic token without change attention") {
    ModelConfig cfg = ModelConfig::tiny();
    cfg.use_ctca_tace = false;
    ParamStore ps;
    std::mt19937_64 rng(1);
    Backbone bb(ps, cfg, rng);
    BackboneFeatures out = bb.forward(pre, post, ctx);
    REQUIRE(out.t_sem != nullptr);
    CHECK(out.t_sem->value.shape() == Shape{1, 64});
    for (const std::string& g : ps.groups()) CHECK(g != "ctca");
  }
}

TEST_CASE("construction is deterministic in the seed") {
  ModelConfig cfg = ModelConfig::tiny();
  ParamStore a, b;
  std::mt19937_64 ra(9), rb(9);
  Backbone ba(a, cfg, ra);
  Backbone bb(b, cfg, rb);
  REQUIRE(a.params().size() == b.params().size());
  for (size_t i = 0; i < a.params().size(); ++i) {
    CHECK(a.params()[i].name == b.params()[i].name);
    CHECK(a.params()[i].var->value.equals(b.params()[i].var->value));
  }
}
