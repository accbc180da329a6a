#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mint/ensemble.hpp"
#include "mint/rng.hpp"

using namespace mint;

namespace {

IntentToken intent_of(std::vector<double> emb, int index = 0) {
  IntentToken t;
  t.index = index;
  t.embedding = std::move(emb);
  return t;
}

ChunkPrediction make_pred(int origin, int horizon, Rng& rng, std::vector<double> emb) {
  ChunkPrediction p;
  p.origin_step = origin;
  p.actions.values = Mat(horizon, 3);
  for (double& v : p.actions.values.data) v = rng.uniform(-1.0, 1.0);
  p.actions.gripper_dims = {2};
  for (int t = 0; t < horizon; ++t)
    p.actions.values(t, 2) = rng.uniform01() < 0.5 ? 0.0 : 1.0;
  p.intent = intent_of(std::move(emb));
  return p;
}

void check_probability_vector(const std::vector<double>& w) {
  double sum = 0.0;
  for (double x : w) {
    CHECK(x >= 0.0);
    sum += x;
  }
  CHECK(std::abs(sum - 1.0) < 1e-12);
}

}  // namespace

TEST_CASE("identical intents give uniform weights") {
  IntentToken a = intent_of({0.5, 0.5});
  std::vector<IntentToken> hist = {a, a, a, a};
  auto w = intent_weights(a, hist, 5.0);
  check_probability_vector(w);
  for (double x : w) CHECK(x == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("beta zero ignores the intents") {
  std::vector<IntentToken> hist = {intent_of({1.0, 0.0}), intent_of({0.0, 1.0}),
                                   intent_of({-1.0, 0.0})};
  auto w = intent_weights(hist[0], hist, 0.0);
  check_probability_vector(w);
  for (double x : w) CHECK(x == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("two-entry case matches the closed form") {
  // cosines (1, 0) at beta 1 -> (e/(1+e), 1/(1+e))
  std::vector<IntentToken> hist = {intent_of({1.0, 0.0}), intent_of({0.0, 1.0})};
  auto w = intent_weights(hist[0], hist, 1.0);
  const double e = std::exp(1.0);
  CHECK(w[0] == doctest::Approx(e / (1.0 + e)).epsilon(1e-12));
  CHECK(w[1] == doctest::Approx(1.0 / (1.0 + e)).epsilon(1e-12));
}

TEST_CASE("zero-norm embeddings count as cosine zero") {
  IntentToken zero = intent_of({0.0, 0.0});
  IntentToken one = intent_of({1.0, 0.0});
  CHECK(cosine_similarity(zero.embedding, one.embedding) == 0.0);
  std::vector<IntentToken> hist = {one, zero};
  auto w = intent_weights(one, hist, 2.0);
  check_probability_vector(w);
  CHECK(w[0] > w[1]);
}

TEST_CASE("weight monotonicity in a history entry's similarity") {
  IntentToken cur = intent_of({1.0, 0.0});
  std::vector<IntentToken> hist = {cur, intent_of({0.2, 1.0}), intent_of({-0.3, 0.8})};
  auto w_low = intent_weights(cur, hist, 3.0);
  hist[1] = intent_of({0.8, 0.6});  // strictly higher cosine with cur
  auto w_high = intent_weights(cur, hist, 3.0);
  CHECK(w_high[1] > w_low[1]);
}

TEST_CASE("large beta concentrates on the argmax") {
  IntentToken cur = intent_of({1.0, 0.0});
  std::vector<IntentToken> hist = {cur, intent_of({0.7, 0.7}), intent_of({0.0, 1.0})};
  auto w = intent_weights(cur, hist, 1e3);
  check_probability_vector(w);
  CHECK(w[0] > 0.999);
}

TEST_CASE("temporal weights: zero decay is uniform, large decay picks the newest") {
  auto uniform = temporal_weights(5, 0.0);
  check_probability_vector(uniform);
  for (double x : uniform) CHECK(x == doctest::Approx(0.2).epsilon(1e-12));

  auto newest = temporal_weights(5, 1e3);
  CHECK(newest[0] > 0.999);
}

TEST_CASE("intent mode with identical intents equals temporal mode with zero decay") {
  Rng rng(70);
  std::vector<ChunkPrediction> preds;
  for (int h = 0; h < 4; ++h) preds.push_back(make_pred(10 - h, 16, rng, {0.3, -0.4}));

  EnsembleConfig intent_cfg;
  intent_cfg.mode = EnsembleMode::Intent;
  intent_cfg.beta = 5.0;
  EnsembleConfig temporal_cfg;
  temporal_cfg.mode = EnsembleMode::Temporal;
  temporal_cfg.temporal_decay = 0.0;

  auto wi = ensemble_weights(intent_cfg, preds, 12);
  auto wt = ensemble_weights(temporal_cfg, preds, 12);
  REQUIRE(wi.size() == wt.size());
  for (size_t i = 0; i < wi.size(); ++i) CHECK(wi[i] == wt[i]);
}

TEST_CASE("action mode with identical actions is uniform") {
  Rng rng(71);
  ChunkPrediction base = make_pred(0, 16, rng, {1.0, 0.0});
  std::vector<ChunkPrediction> preds;
  for (int h = 0; h < 3; ++h) {
    ChunkPrediction p = base;
    p.origin_step = 0;
    preds.push_back(p);
  }
  auto w = action_weights(preds, 4, 7.0);
  check_probability_vector(w);
  for (double x : w) CHECK(x == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("every mode yields a probability vector on random buffers") {
  Rng rng(72);
  std::vector<ChunkPrediction> preds;
  for (int h = 0; h < 6; ++h)
    preds.push_back(make_pred(20 - h, 16, rng, {rng.uniform(-1, 1), rng.uniform(-1, 1)}));
  for (EnsembleMode mode :
       {EnsembleMode::Intent, EnsembleMode::Temporal, EnsembleMode::Action, EnsembleMode::None}) {
    EnsembleConfig cfg;
    cfg.mode = mode;
    auto w = ensemble_weights(cfg, preds, 22);
    check_probability_vector(w);
  }
}

TEST_CASE("ensemble_action: selection, fixed point, and the arithmetic oracle") {
  Rng rng(73);
  std::vector<ChunkPrediction> preds;
  for (int h = 0; h < 3; ++h)
    preds.push_back(make_pred(8 - h, 16, rng, {rng.uniform(-1, 1), rng.uniform(-1, 1)}));
  const int step = 10;

  // Selection: weight 1 on the first prediction.
  auto sel = ensemble_action(preds, {1.0, 0.0, 0.0}, step);
  const int row0 = step - preds[0].origin_step;
  CHECK(sel[0] == preds[0].actions.values(row0, 0));
  CHECK(sel[1] == preds[0].actions.values(row0, 1));

  // Convexity fixed point: identical predictions return that action.
  std::vector<ChunkPrediction> same(3, preds[0]);
  auto fx = ensemble_action(same, {0.2, 0.5, 0.3}, step);
  CHECK(fx[0] == doctest::Approx(preds[0].actions.values(row0, 0)).epsilon(1e-12));

  // Independent weighted-sum oracle.
  const std::vector<double> w = {0.6, 0.3, 0.1};
  auto got = ensemble_action(preds, w, step);
  for (int d = 0; d < 2; ++d) {
    double expect = 0.0;
    for (size_t h = 0; h < preds.size(); ++h)
      expect += w[h] * preds[h].actions.values(step - preds[h].origin_step, d);
    CHECK(std::abs(got[static_cast<size_t>(d)] - expect) < 1e-12);
  }
  // Gripper mixes then thresholds at 0.5.
  double gmix = 0.0;
  for (size_t h = 0; h < preds.size(); ++h)
    gmix += w[h] * preds[h].actions.values(step - preds[h].origin_step, 2);
  CHECK(got[2] == (gmix >= 0.5 ? 1.0 : 0.0));
}

TEST_CASE("a prediction not covering the step is rejected") {
  Rng rng(74);
  std::vector<ChunkPrediction> preds = {make_pred(0, 16, rng, {1.0, 0.0})};
  CHECK_THROWS_AS(ensemble_action(preds, {1.0}, 16), ValidationError);
  CHECK_THROWS_AS(ensemble_action(preds, {1.0}, -1), ValidationError);
  CHECK_THROWS_AS(ensemble_action(preds, {0.5, 0.5}, 3), ValidationError);
}
