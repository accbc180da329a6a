#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mint/env.hpp"

using namespace mint;
using namespace mint::env;

TEST_CASE("gen_demos basics: empty count, determinism, success by construction") {
  TaskSpec spec;
  spec.primitive = Primitive::Reach;
  spec.region = LayoutRegion::Base;

  CHECK(gen_demos(spec, 0, 0.05, 1).empty());

  auto a = gen_demos(spec, 3, 0.05, 42);
  auto b = gen_demos(spec, 3, 0.05, 42);
  REQUIRE(a.size() == 3);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].states.data == b[i].states.data);
    CHECK(a[i].actions.data == b[i].actions.data);
    CHECK(a[i].seed == b[i].seed);
  }
  auto c = gen_demos(spec, 3, 0.05, 43);
  CHECK(a[0].actions.data != c[0].actions.data);
}

TEST_CASE("every primitive's script succeeds and replays open-loop") {
  for (int p = 0; p < kNumPrimitives; ++p) {
    TaskSpec spec;
    spec.primitive = static_cast<Primitive>(p);
    spec.region = LayoutRegion::Base;
    auto demos = gen_demos(spec, 2, 0.0, 100 + p);
    REQUIRE(demos.size() == 2);
    for (const auto& demo : demos) {
      Layout layout;
      layout.start = {demo.states(0, 0), demo.states(0, 1)};
      layout.obj0 = {demo.states(0, 5), demo.states(0, 6)};
      layout.obj1 = {demo.states(0, 7), demo.states(0, 8)};
      auto result = replay_actions(demo.actions, spec.primitive, layout, demo.actions.rows + 1);
      CHECK(result.success);
    }
  }
}

TEST_CASE("noiseless reach chunks concentrate energy in the lowest quartile") {
  TaskSpec spec;
  spec.primitive = Primitive::Reach;
  spec.region = LayoutRegion::Base;
  auto demos = gen_demos(spec, 3, 0.0, 7);
  for (const auto& demo : demos) {
    for (const auto& c : slide_chunks(demo, 16, 4)) {
      Spectrum s = dct_forward(c.chunk, DctMode::Orthonormal);
      CHECK(lowband_energy_fraction(s, 0.25) >= 0.8);
    }
  }
}

TEST_CASE("slide_chunks window arithmetic and padding") {
  Demonstration demo;
  demo.states = Mat(18, kStateDim);
  demo.actions = Mat(18, kActionDim);
  for (int t = 0; t < 18; ++t) {
    demo.actions(t, 0) = t;
    demo.states(t, 0) = 100 + t;
  }

  // T = H: exactly one chunk.
  Demonstration d16 = demo;
  d16.states = Mat(16, kStateDim);
  d16.actions = Mat(16, kActionDim);
  CHECK(slide_chunks(d16, 16, 1).size() == 1);

  // T = 18, stride 1: three full chunks at 0,1,2.
  auto chunks = slide_chunks(demo, 16, 1);
  REQUIRE(chunks.size() == 3);
  CHECK(chunks[0].start == 0);
  CHECK(chunks[2].start == 2);
  CHECK(chunks[2].chunk.values(0, 0) == 2.0);
  CHECK(chunks[2].context_state[0] == 102.0);

  // Padding: T = 17, stride 4 -> starts 0 and 4; the start-4 chunk repeats
  // the last action in its final 3 rows.
  Demonstration d17;
  d17.states = Mat(17, kStateDim);
  d17.actions = Mat(17, kActionDim);
  for (int t = 0; t < 17; ++t) d17.actions(t, 0) = t;
  auto padded = slide_chunks(d17, 16, 4);
  REQUIRE(padded.size() == 2);
  CHECK(padded[1].start == 4);
  CHECK(padded[1].chunk.values(12, 0) == 16.0);
  CHECK(padded[1].chunk.values(13, 0) == 16.0);
  CHECK(padded[1].chunk.values(14, 0) == 16.0);
  CHECK(padded[1].chunk.values(15, 0) == 16.0);

  // Coverage: every action index appears in at least one chunk.
  for (int stride : {1, 3, 16}) {
    auto cs = slide_chunks(demo, 16, stride);
    std::vector<bool> covered(18, false);
    for (const auto& c : cs)
      for (int r = 0; r < 16; ++r) covered[static_cast<size_t>(std::min(c.start + r, 17))] = true;
    for (bool x : covered) CHECK(x);
  }

  Demonstration too_short;
  too_short.states = Mat(8, kStateDim);
  too_short.actions = Mat(8, kActionDim);
  CHECK_THROWS_AS(slide_chunks(too_short, 16, 1), ValidationError);
}

TEST_CASE("success predicates are layout invariant") {
  TaskSpec spec;
  spec.primitive = Primitive::PickPlace;
  spec.region = LayoutRegion::Base;
  auto demos = gen_demos(spec, 1, 0.0, 9);
  const auto& demo = demos[0];
  Layout layout{{demo.states(0, 0), demo.states(0, 1)},
                {demo.states(0, 5), demo.states(0, 6)},
                {demo.states(0, 7), demo.states(0, 8)}};
  auto base = replay_actions(demo.actions, spec.primitive, layout, demo.actions.rows);
  // Translate everything; relative state is unchanged, so the verdict must be.
  const double dx = 0.03, dy = 0.04;
  Layout shifted{{layout.start.x + dx, layout.start.y + dy},
                 {layout.obj0.x + dx, layout.obj0.y + dy},
                 {layout.obj1.x + dx, layout.obj1.y + dy}};
  auto moved = replay_actions(demo.actions, spec.primitive, shifted, demo.actions.rows);
  CHECK(base.success == moved.success);
}

TEST_CASE("environment grasp rules: only a closing transition near the object grasps") {
  Environment e;
  // Start inside grasp range (0.06) but outside pushing contact (0.045).
  Layout layout{{0.5, 0.5}, {0.555, 0.5}, {0.8, 0.8}};
  e.reset(layout);
  e.step({0.0, 0.0, 1.0});  // closing transition next to the object
  CHECK(e.carried());
  // Carried object follows; release drops it.
  e.step({1.0, 0.0, 1.0});
  CHECK(e.obj0().x == e.pm().x);
  e.step({0.0, 0.0, 0.0});
  CHECK(!e.carried());

  // A gripper already closed far away does not grasp on approach.
  Environment e2;
  Layout far{{0.2, 0.5}, {0.555, 0.5}, {0.8, 0.8}};
  e2.reset(far);
  e2.step({0.0, 0.0, 1.0});  // close far from the object
  CHECK(!e2.carried());
  for (int t = 0; t < 40; ++t) e2.step({1.0, 0.0, 1.0});
  CHECK(!e2.carried());  // pushes instead of grasping
}

TEST_CASE("cluster purity: aligned, degenerate, and random cases") {
  CHECK(cluster_purity({3, 5, 3, 5}, {0, 1, 0, 1}) == 1.0);
  CHECK(cluster_purity({2, 2, 2, 2}, {0, 1, 2, 3}) == 0.25);

  Rng rng(77);
  std::vector<int> tokens(1000), labels(1000);
  for (int i = 0; i < 1000; ++i) {
    tokens[static_cast<size_t>(i)] = rng.uniform_int(16);
    labels[static_cast<size_t>(i)] = i % 4;
  }
  const double p = cluster_purity(tokens, labels);
  CHECK(p >= 0.25);
  CHECK(p <= 0.45);

  CHECK_THROWS_AS(cluster_purity({}, {}), ValidationError);
}

TEST_CASE("random policies almost never succeed") {
  // Monte Carlo with fixed seeds; deterministic, so this either always
  // passes or never does.
  int successes = 0;
  const int trials = 200;
  for (int s = 0; s < trials; ++s) {
    Rng rng(10000 + s);
    for (int p = 0; p < kNumPrimitives; ++p) {
      const Primitive prim = static_cast<Primitive>(p);
      Rng lrng(rng.substream(static_cast<uint64_t>(p)));
      Layout layout = sample_layout(LayoutRegion::Base, prim, lrng);
      Environment e;
      e.reset(layout);
      bool ok = false;
      for (int t = 0; t < 150 && !ok; ++t) {
        e.step({lrng.uniform(-1, 1), lrng.uniform(-1, 1), lrng.uniform01() < 0.5 ? 0.0 : 1.0});
        ok = e.success(prim);
      }
      successes += ok ? 1 : 0;
    }
  }
  CHECK(static_cast<double>(successes) / (trials * kNumPrimitives) < 0.02);
}

TEST_CASE("rollout with zero step budget fails with zero steps") {
  SdatConfig tok_cfg;
  tok_cfg.horizon = 16;
  Sdat tok = Sdat::init(tok_cfg, 1);
  PolicyConfig pcfg;
  pcfg.width = 32;
  pcfg.blocks = 1;
  pcfg.heads = 2;
  pcfg.mlp_dim = 64;
  pcfg.proprio_dim = kStateDim;
  Policy policy = Policy::init(pcfg, &tok, 2);

  Rng rng(5);
  Layout layout = sample_layout(LayoutRegion::Base, Primitive::Reach, rng);
  RolloutConfig cfg;
  cfg.max_steps = 0;
  auto result = rollout(policy, tok, Primitive::Reach, 0, layout, cfg, 3);
  CHECK(!result.success);
  CHECK(result.steps == 0);
}

TEST_CASE("untrained policy rollout runs and stays finite") {
  SdatConfig tok_cfg;
  Sdat tok = Sdat::init(tok_cfg, 11);
  PolicyConfig pcfg;
  pcfg.width = 32;
  pcfg.blocks = 1;
  pcfg.heads = 2;
  pcfg.mlp_dim = 64;
  pcfg.proprio_dim = kStateDim;
  Policy policy = Policy::init(pcfg, &tok, 12);

  Rng rng(6);
  Layout layout = sample_layout(LayoutRegion::Base, Primitive::Reach, rng);
  RolloutConfig cfg;
  cfg.max_steps = 20;
  cfg.record_trajectory = true;
  auto result = rollout(policy, tok, Primitive::Reach, 0, layout, cfg, 4);
  CHECK(result.steps == 20);
  CHECK(result.trajectory.size() == 20);
  for (const auto& s : result.trajectory)
    for (double v : s) CHECK(std::isfinite(v));

  // Same seed, same outcome.
  auto again = rollout(policy, tok, Primitive::Reach, 0, layout, cfg, 4);
  CHECK(again.trajectory == result.trajectory);
}
