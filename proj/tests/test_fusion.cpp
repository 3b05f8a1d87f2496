#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "damnet/fusion.hpp"
#include "oracles.hpp"

using namespace damnet;

namespace {

// random per-stage features on the tiny 32x32 ladder
BackboneFeatures random_features(const ModelConfig& cfg, i64 batch, std::uint64_t seed) {
  BackboneFeatures f;
  for (int i = 0; i < ModelConfig::kStages; ++i) {
    i64 g = 32 / ModelConfig::kDownsample[i];
    f.pre[i] = leaf(Tensor::randn({batch, cfg.dims[i], g, g}, 0.0, 1.0, seed + 2 * i), false);
    f.post[i] = leaf(Tensor::randn({batch, cfg.dims[i], g, g}, 0.0, 1.0, seed + 2 * i + 1), false);
  }
  if (cfg.use_semantic_token)
    f.t_sem = leaf(Tensor::randn({batch, cfg.dims[3]}, 0.0, 1.0, seed + 99), false);
  return f;
}

}  // namespace

TEST_CASE("tdf head on the tiny ladder") {
  ModelConfig cfg = ModelConfig::tiny();
  ParamStore ps;
  std::mt19937_64 rng(3);
  TdfHead head(ps, cfg, rng);
  Ctx ctx;

  SUBCASE("shapes and oracle agreement") {
    BackboneFeatures f = random_features(cfg, 2, 101);
    TdfHead::Out out = head.forward(f, ctx);
    REQUIRE(out.fused->value.shape() == Shape{2, 4 * cfg.tdf_channels, 8, 8});
    REQUIRE(out.prob->value.shape() == Shape{2, 1, 32, 32});
    for (i64 i = 0; i < out.prob->value.numel(); ++i) {
      CHECK(out.prob->value[i] > 0.0);
      CHECK(out.prob->value[i] < 1.0);
    }
    Tensor pre[4], post[4];
    for (int i = 0; i < 4; ++i) {
      pre[i] = f.pre[i]->value;
      post[i] = f.post[i]->value;
    }
    auto [fused, prob] = oracle::tdf(pre, post, &f.t_sem->value, ps, cfg);
    CHECK(oracle::max_abs_diff(out.fused->value, fused) < 1e-9);
    CHECK(oracle::max_abs_diff(out.prob->value, prob) < 1e-9);
  }

  SUBCASE("identical branches collapse to exact zeros and a flat map") {
    BackboneFeatures f = random_features(cfg, 1, 201);
    for (int i = 0; i < 4; ++i) f.post[i] = f.pre[i];
    TdfHead::Out out = head.forward(f, ctx);
    for (i64 i = 0; i < out.fused->value.numel(); ++i) CHECK(out.fused->value[i] == 0.0);
    double p0 = out.prob->value[0];
    for (i64 i = 0; i < out.prob->value.numel(); ++i) CHECK(out.prob->value[i] == p0);
  }

  SUBCASE("swapping the branches changes nothing") {
    BackboneFeatures f = random_features(cfg, 1, 301);
    BackboneFeatures swapped = f;
    std::swap(swapped.pre, swapped.post);
    TdfHead::Out a = head.forward(f, ctx);
    TdfHead::Out b = head.forward(swapped, ctx);
    CHECK(a.prob->value.equals(b.prob->value));
  }

  SUBCASE("missing semantic token is rejected") {
    BackboneFeatures f = random_features(cfg, 1, 401);
    f.t_sem = nullptr;
    CHECK_THROWS_AS(head.forward(f, ctx), std::invalid_argument);
  }

  SUBCASE("branch shape mismatch is rejected") {
    BackboneFeatures f = random_features(cfg, 1, 501);
    f.post[2] = leaf(Tensor::zeros({1, cfg.dims[2], 4, 4}), false);
    CHECK_THROWS_AS(head.forward(f, ctx), std::invalid_argument);
  }
}

TEST_CASE("tdf head without the semantic gate") {
  ModelConfig cfg = ModelConfig::tiny();
  cfg.use_semantic_token = false;
  ParamStore ps;
  std::mt19937_64 rng(5);
  TdfHead head(ps, cfg, rng);
  Ctx ctx;
  BackboneFeatures f = random_features(cfg, 1, 601);
  TdfHead::Out out = head.forward(f, ctx);
  CHECK(out.prob->value.shape() == Shape{1, 1, 32, 32});
  CHECK(ps.find("tdf.gate.fc1.weight") == nullptr);
}

TEST_CASE("contrastive loss fixed points") {
  LossConfig cfg;  // margin 1, standard hinge

  SUBCASE("changed pixel at p=0.3 costs 0.245") {
    Var p = leaf(Tensor::from({1}, {0.3}), false);
    Tensor y = Tensor::from({1}, {1.0});
    CHECK(contrastive_loss(p, y, cfg)->value[0] == doctest::Approx(0.245).epsilon(1e-12));
  }

  SUBCASE("unchanged pixel at p=0.3 costs 0.045") {
    Var p = leaf(Tensor::from({1}, {0.3}), false);
    Tensor y = Tensor::from({1}, {0.0});
    CHECK(contrastive_loss(p, y, cfg)->value[0] == doctest::Approx(0.045).epsilon(1e-12));
  }

  SUBCASE("perfect predictions cost exactly zero") {
    Var p = leaf(Tensor::from({2}, {0.0, 1.0}), false);
    Tensor y = Tensor::from({2}, {0.0, 1.0});
    CHECK(contrastive_loss(p, y, cfg)->value[0] == 0.0);
  }

  SUBCASE("the mean runs over all pixels") {
    Var p = leaf(Tensor::from({1, 1, 2, 2}, {0.3, 0.3, 0.0, 1.0}), false);
    Tensor y = Tensor::from({1, 1, 2, 2}, {1.0, 0.0, 0.0, 1.0});
    CHECK(contrastive_loss(p, y, cfg)->value[0] ==
          doctest::Approx((0.245 + 0.045) / 4.0).epsilon(1e-12));
  }

  SUBCASE("the printed hinge direction zeroes the changed term below the margin") {
    LossConfig lit = cfg;
    lit.contrastive_form = ContrastiveForm::kPaperLiteral;
    Var p = leaf(Tensor::from({1}, {0.3}), false);
    Tensor y = Tensor::from({1}, {1.0});
    CHECK(contrastive_loss(p, y, lit)->value[0] == 0.0);
  }

  SUBCASE("labels must be binary") {
    Var p = leaf(Tensor::from({1}, {0.3}), false);
    Tensor y = Tensor::from({1}, {0.5});
    CHECK_THROWS_AS(contrastive_loss(p, y, cfg), std::invalid_argument);
  }
}

TEST_CASE("dice loss") {
  SUBCASE("four-pixel example evaluates to 0.25") {
    Var p = leaf(Tensor::from({4}, {1.0, 1.0, 0.0, 0.0}), false);
    Tensor y = Tensor::from({4}, {1.0, 0.0, 0.0, 0.0});
    CHECK(dice_loss(p, y)->value[0] == doctest::Approx(0.25).epsilon(1e-12));
  }

  SUBCASE("a perfect prediction scores near zero") {
    Tensor y = Tensor::zeros({64 * 64});
    for (i64 i = 0; i < 150; ++i) y.data()[i * 7] = 1.0;
    Var p = leaf(y, false);
    CHECK(dice_loss(p, y)->value[0] == 0.0);  // (2F+1)/(2F+1)
  }

  SUBCASE("pixel order does not matter") {
    Var a = leaf(Tensor::from({4}, {0.9, 0.2, 0.7, 0.1}), false);
    Tensor ya = Tensor::from({4}, {1.0, 0.0, 1.0, 0.0});
    Var b = leaf(Tensor::from({4}, {0.1, 0.7, 0.2, 0.9}), false);
    Tensor yb = Tensor::from({4}, {0.0, 1.0, 0.0, 1.0});
    CHECK(dice_loss(a, ya)->value[0] == dice_loss(b, yb)->value[0]);
  }
}

TEST_CASE("total loss composition") {
  LossConfig cfg;  // lambda 0.4

  SUBCASE("matches the weighted sum of its parts") {
    Var p = leaf(Tensor::randn({16}, 0.5, 0.1, 701), false);
    for (i64 i = 0; i < 16; ++i)
      p->value.data()[i] = std::min(0.99, std::max(0.01, p->value[i]));
    Tensor y = Tensor::zeros({16});
    for (i64 i = 0; i < 16; i += 3) y.data()[i] = 1.0;
    double want = contrastive_loss(p, y, cfg)->value[0] + 0.4 * dice_loss(p, y)->value[0];
    CHECK(total_loss(p, y, cfg)->value[0] == doctest::Approx(want).epsilon(1e-15));
  }

  SUBCASE("hand-computed composite of the two reference fixtures") {
    Var pc = leaf(Tensor::from({1}, {0.3}), false);
    Tensor yc = Tensor::from({1}, {1.0});
    double con = contrastive_loss(pc, yc, cfg)->value[0];
    Var pd = leaf(Tensor::from({4}, {1.0, 1.0, 0.0, 0.0}), false);
    Tensor yd = Tensor::from({4}, {1.0, 0.0, 0.0, 0.0});
    double dice = dice_loss(pd, yd)->value[0];
    CHECK(con + cfg.lambda * dice == doctest::Approx(0.345).epsilon(1e-9));
  }

  SUBCASE("gradient agrees with central differences away from the hinge kink") {
    Tensor y = Tensor::from({6}, {1.0, 0.0, 1.0, 0.0, 0.0, 1.0});
    Tensor p0 = Tensor::from({6}, {0.3, 0.6, 0.8, 0.2, 0.5, 0.4});
    Var p = leaf(p0, true);
    Var loss = total_loss(p, y, cfg);
    backward(loss);
    const double h = 1e-6;
    for (i64 i = 0; i < 6; ++i) {
      NoGradGuard g;
      Tensor up = p0, dn = p0;
      up.data()[i] += h;
      dn.data()[i] -= h;
      double num = (total_loss(leaf(up, false), y, cfg)->value[0] -
                    total_loss(leaf(dn, false), y, cfg)->value[0]) /
                   (2 * h);
      CHECK(p->grad[i] == doctest::Approx(num).epsilon(1e-5));
    }
  }
}

TEST_CASE("binarize thresholding") {
  Tensor p = Tensor::from({5}, {0.1, 0.5, 0.49999, 0.9, 0.0});
  Tensor m = binarize(p, 0.5);
  CHECK(m[0] == 0.0);
  CHECK(m[1] == 1.0);  // threshold itself counts as flooded
  CHECK(m[2] == 0.0);
  CHECK(m[3] == 1.0);
  CHECK(m[4] == 0.0);
  CHECK_THROWS_AS(binarize(p, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(binarize(p, 1.0), std::invalid_argument);
}
