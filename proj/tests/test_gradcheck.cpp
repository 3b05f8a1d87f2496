#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "damnet/gradcheck.hpp"

#include <algorithm>
#include <string>
#include <vector>

using namespace damnet;

namespace {

// below-tiny widths keep the finite-difference loop cheap at unit-test scale
ModelConfig micro() {
  ModelConfig mc = ModelConfig::tiny();
  mc.dims = {4, 8, 16, 32};
  mc.heads = {1, 1, 2, 2};
  mc.tdf_channels = 4;
  mc.head_channels = 4;
  return mc;
}

}  // namespace

TEST_CASE("sampled analytic gradients agree with central differences") {
  ModelConfig mc = micro();
  mc.seed = 3;
  LossConfig lc;
  GradCheckReport rep = gradcheck_model(mc, lc, 8, 1e-5, 17);

  std::vector<std::string> groups;
  for (const GradCheckGroup& g : rep.groups) {
    groups.push_back(g.group);
    CHECK(g.checked >= 8);
    CHECK(g.max_rel_err <= 1e-3);
  }
  CHECK(rep.pass(1e-3));
  CHECK(rep.checked >= 8 * static_cast<i64>(rep.groups.size()));

  for (const char* want : {"oel", "prm", "pcm", "mha", "ffn", "ctca", "tace", "tdf", "head"})
    CHECK(std::find(groups.begin(), groups.end(), want) != groups.end());
}

TEST_CASE("small groups are checked exhaustively") {
  ModelConfig mc = micro();
  mc.seed = 1;
  GradCheckReport rep = gradcheck_model(mc, LossConfig{}, 32, 1e-5, 5);
  bool found = false;
  for (const GradCheckGroup& g : rep.groups)
    if (g.group == "class_token") {
      found = true;
      CHECK(g.checked == mc.dims.back());  // every scalar of the token
      CHECK(g.max_rel_err <= 1e-3);
    }
  CHECK(found);
}

TEST_CASE("gradcheck validates its knobs") {
  ModelConfig mc = micro();
  CHECK_THROWS_AS(gradcheck_model(mc, LossConfig{}, 0, 1e-5, 1), std::invalid_argument);
  CHECK_THROWS_AS(gradcheck_model(mc, LossConfig{}, 10, 0.0, 1), std::invalid_argument);
}

TEST_CASE("report text lists every group and the total") {
  ModelConfig mc = micro();
  mc.seed = 2;
  GradCheckReport rep = gradcheck_model(mc, LossConfig{}, 2, 1e-5, 3);
  std::string text = to_text(rep);
  CHECK(text.find("group") != std::string::npos);
  CHECK(text.find("total checked") != std::string::npos);
  CHECK(text.find("max_rel") != std::string::npos);
}
