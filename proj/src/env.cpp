#include "mint/env.hpp"

#include <algorithm>
#include <cmath>

namespace mint::env {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kGain = 8.0;                       // command per unit position error
constexpr double kStirTurnRate = 2.0 * kPi / 16.0;  // per step
constexpr int kStirSteps = 72;                      // 4.5 turns
constexpr double kStirGoalAngle = 6.0 * kPi;

double clamp(double v, double lo, double hi) { return std::max(lo, std::min(hi, v)); }

double dist(const Vec2& a, const Vec2& b) {
  const double dx = a.x - b.x, dy = a.y - b.y;
  return std::sqrt(dx * dx + dy * dy);
}

Vec2 unit_towards(const Vec2& from, const Vec2& to) {
  const double d = dist(from, to);
  if (d < 1e-12) return {1.0, 0.0};
  return {(to.x - from.x) / d, (to.y - from.y) / d};
}

double wrap_angle(double a) {
  while (a > kPi) a -= 2.0 * kPi;
  while (a < -kPi) a += 2.0 * kPi;
  return a;
}

}  // namespace

const char* primitive_name(Primitive p) {
  switch (p) {
    case Primitive::Reach: return "reach";
    case Primitive::Push: return "push";
    case Primitive::PickPlace: return "pick_place";
    case Primitive::Stir: return "stir";
  }
  return "?";
}

Primitive primitive_from_name(const std::string& name) {
  for (int i = 0; i < kNumPrimitives; ++i)
    if (name == primitive_name(static_cast<Primitive>(i))) return static_cast<Primitive>(i);
  throw ValidationError("unknown primitive '" + name + "'");
}

const char* layout_region_name(LayoutRegion r) {
  switch (r) {
    case LayoutRegion::Full: return "full";
    case LayoutRegion::Base: return "base";
    case LayoutRegion::Shifted: return "shifted";
    case LayoutRegion::Extended: return "extended";
  }
  return "?";
}

LayoutRegion layout_region_from_name(const std::string& name) {
  for (LayoutRegion r :
       {LayoutRegion::Full, LayoutRegion::Base, LayoutRegion::Shifted, LayoutRegion::Extended})
    if (name == layout_region_name(r)) return r;
  throw ValidationError("unknown layout region '" + name + "'");
}

// ---------------------------------------------------------------------------
// Environment
// ---------------------------------------------------------------------------

void Environment::reset(const Layout& layout) {
  pm_ = layout.start;
  vel_ = {0.0, 0.0};
  obj0_ = layout.obj0;
  obj1_ = layout.obj1;
  grip_ = 0.0;
  carried_ = false;
  diverged_ = false;
  swept_angle_ = 0.0;
  have_angle_ = false;
  last_angle_ = 0.0;
}

bool Environment::step(const std::vector<double>& action) {
  if (action.size() != kActionDim) throw ValidationError("env: action dimension mismatch");
  for (double a : action) {
    if (!std::isfinite(a)) {
      diverged_ = true;
      return false;
    }
  }
  const double ax = clamp(action[0], -1.0, 1.0);
  const double ay = clamp(action[1], -1.0, 1.0);
  const double g = action[2] >= 0.5 ? 1.0 : 0.0;

  // Grasping requires a closing transition next to the object.
  if (g == 1.0 && grip_ == 0.0 && dist(pm_, obj0_) < kGraspRadius) carried_ = true;
  if (g == 0.0) carried_ = false;
  grip_ = g;

  vel_ = {ax * kMaxSpeed, ay * kMaxSpeed};
  pm_.x = clamp(pm_.x + vel_.x * kDt, 0.0, 1.0);
  pm_.y = clamp(pm_.y + vel_.y * kDt, 0.0, 1.0);

  if (carried_) {
    obj0_ = pm_;
  } else if (dist(pm_, obj0_) < kContactRadius) {
    const Vec2 dir = unit_towards(pm_, obj0_);
    obj0_.x = clamp(pm_.x + dir.x * kContactRadius, 0.0, 1.0);
    obj0_.y = clamp(pm_.y + dir.y * kContactRadius, 0.0, 1.0);
  }

  // Swept-angle tracking around obj0 while inside the stir zone.
  const double rx = pm_.x - obj0_.x, ry = pm_.y - obj0_.y;
  const double r = std::sqrt(rx * rx + ry * ry);
  if (r > 1e-6 && r < 2.5 * kStirRadius) {
    const double ang = std::atan2(ry, rx);
    if (have_angle_) swept_angle_ += wrap_angle(ang - last_angle_);
    last_angle_ = ang;
    have_angle_ = true;
  } else {
    have_angle_ = false;
  }
  return true;
}

std::vector<double> Environment::state_vector() const {
  return {pm_.x, pm_.y, vel_.x, vel_.y, grip_, obj0_.x, obj0_.y, obj1_.x, obj1_.y};
}

bool Environment::success(Primitive task) const {
  switch (task) {
    case Primitive::Reach:
      return dist(pm_, obj1_) < kTolerance && grip_ == 0.0;
    case Primitive::Push:
      return dist(obj0_, obj1_) < kTolerance && grip_ == 0.0;
    case Primitive::PickPlace:
      return dist(obj0_, obj1_) < kTolerance && grip_ == 0.0 && !carried_;
    case Primitive::Stir:
      return std::abs(swept_angle_) >= kStirGoalAngle && grip_ == 1.0 &&
             dist(pm_, obj0_) <= 2.0 * kStirRadius;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Layout sampling
// ---------------------------------------------------------------------------

namespace {

struct Box {
  double x0, x1, y0, y1;
};

Box region_box(LayoutRegion r) {
  switch (r) {
    case LayoutRegion::Full: return {0.08, 0.92, 0.08, 0.92};
    case LayoutRegion::Base: return {0.08, 0.92, 0.08, 0.55};
    case LayoutRegion::Shifted: return {0.08, 0.92, 0.62, 0.92};
    case LayoutRegion::Extended: return {0.08, 0.92, 0.08, 0.55};
  }
  return {0.08, 0.92, 0.08, 0.92};
}

Vec2 sample_in(const Box& b, Rng& rng) {
  return {rng.uniform(b.x0, b.x1), rng.uniform(b.y0, b.y1)};
}

bool layout_feasible(const Layout& l, LayoutRegion region, Primitive primitive) {
  if (dist(l.obj0, l.obj1) < 0.22) return false;
  if (dist(l.start, l.obj0) < 0.12) return false;
  if (dist(l.start, l.obj1) < 0.15) return false;
  switch (primitive) {
    case Primitive::Reach: {
      const double d = dist(l.start, l.obj1);
      if (d < 0.25 || d > 0.8) return false;
      break;
    }
    case Primitive::Push: {
      if (dist(l.obj0, l.obj1) > 0.5) return false;
      const Vec2 dir = unit_towards(l.obj0, l.obj1);
      const Vec2 approach{l.obj0.x - 0.08 * dir.x, l.obj0.y - 0.08 * dir.y};
      if (approach.x < 0.05 || approach.x > 0.95 || approach.y < 0.05 || approach.y > 0.95)
        return false;
      break;
    }
    case Primitive::PickPlace: {
      const double d0 = dist(l.start, l.obj0);
      const double d1 = dist(l.obj0, l.obj1);
      if (region == LayoutRegion::Extended) {
        if (d0 < 0.5 || d1 < 0.5) return false;
      } else {
        if (d0 > 0.45 || d1 > 0.45) return false;
      }
      break;
    }
    case Primitive::Stir: {
      if (dist(l.start, l.obj0) < 0.2) return false;
      if (l.obj0.x < 0.15 || l.obj0.x > 0.85 || l.obj0.y < 0.15 || l.obj0.y > 0.85) return false;
      break;
    }
  }
  return true;
}

}  // namespace

Layout sample_layout(LayoutRegion region, Primitive primitive, Rng& rng) {
  // Stir needs obj0 clear of the walls; the shifted band is narrow, so the
  // feasibility check above does the filtering via rejection.
  const Box box = region_box(region);
  for (int attempt = 0; attempt < 200; ++attempt) {
    Layout l;
    l.start = sample_in(box, rng);
    l.obj0 = sample_in(box, rng);
    l.obj1 = sample_in(box, rng);
    if (layout_feasible(l, region, primitive)) return l;
  }
  throw ValidationError("layout sampling: no feasible layout after 200 attempts");
}

Layout sample_composite_layout(LayoutRegion region, const std::vector<Primitive>& stages,
                               Rng& rng) {
  const Box box = region_box(region);
  for (int attempt = 0; attempt < 500; ++attempt) {
    Layout l;
    l.start = sample_in(box, rng);
    l.obj0 = sample_in(box, rng);
    l.obj1 = sample_in(box, rng);
    bool ok = true;
    for (Primitive p : stages) ok = ok && layout_feasible(l, region, p);
    if (ok) return l;
  }
  throw ValidationError("layout sampling: no composite-feasible layout after 500 attempts");
}

// ---------------------------------------------------------------------------
// Scripted demonstrations
// ---------------------------------------------------------------------------

namespace {

int script_cap(Primitive p, LayoutRegion region) {
  switch (p) {
    case Primitive::Reach: return 140;
    case Primitive::Push: return 200;
    case Primitive::PickPlace: return region == LayoutRegion::Extended ? 280 : 220;
    case Primitive::Stir: return 160;
  }
  return 200;
}

// Proportional command toward a target point with soft saturation; the
// smooth magnitude profile keeps command spectra free of clamp corners,
// and the direction is preserved.
Vec2 go_to(const Vec2& pm, const Vec2& target) {
  const double dx = target.x - pm.x;
  const double dy = target.y - pm.y;
  const double d = std::sqrt(dx * dx + dy * dy);
  if (d < 1e-12) return {0.0, 0.0};
  const double mag = std::tanh(kGain * d);
  return {mag * dx / d, mag * dy / d};
}

bool run_script(Primitive primitive, const Layout& layout, double noise, int cap, Rng& rng,
                Mat* states, Mat* actions) {
  Environment e;
  e.reset(layout);
  std::vector<std::vector<double>> ss, aa;
  int phase = 0;
  int counter = 0;

  for (int t = 0; t < cap; ++t) {
    ss.push_back(e.state_vector());
    Vec2 cmd{0.0, 0.0};
    double g = 0.0;
    bool done = false;
    switch (primitive) {
      case Primitive::Reach: {
        cmd = go_to(e.pm(), e.obj1());
        if (dist(e.pm(), e.obj1()) < 0.02) ++counter;
        if (counter >= 16) done = true;
        break;
      }
      case Primitive::Push: {
        if (phase == 0) {
          const Vec2 dir = unit_towards(e.obj0(), e.obj1());
          const Vec2 approach{e.obj0().x - 0.08 * dir.x, e.obj0().y - 0.08 * dir.y};
          cmd = go_to(e.pm(), approach);
          if (dist(e.pm(), approach) < 0.015) phase = 1;
        } else if (phase == 1) {
          // Servo just behind the object so contact keeps pushing it and
          // lateral drift self-corrects.
          const Vec2 dir = unit_towards(e.obj0(), e.obj1());
          const Vec2 behind{e.obj0().x - 0.02 * dir.x, e.obj0().y - 0.02 * dir.y};
          cmd = go_to(e.pm(), behind);
          if (dist(e.obj0(), e.obj1()) < 0.035) phase = 2;
        } else {
          const Vec2 dir = unit_towards(e.obj0(), e.obj1());
          const Vec2 retreat{e.obj0().x - 0.15 * dir.x, e.obj0().y - 0.15 * dir.y};
          cmd = go_to(e.pm(), retreat);
          if (++counter >= 12) done = true;
        }
        break;
      }
      case Primitive::PickPlace: {
        if (phase == 0) {
          cmd = go_to(e.pm(), e.obj0());
          // Stop inside grasp range but outside the pushing contact zone.
          if (dist(e.pm(), e.obj0()) < kGraspRadius - 0.005) phase = 1;
        } else if (phase == 1) {
          g = 1.0;
          cmd = go_to(e.pm(), e.obj0());
          if (++counter >= 4) {
            phase = 2;
            counter = 0;
          }
        } else if (phase == 2) {
          g = 1.0;
          cmd = go_to(e.pm(), e.obj1());
          if (dist(e.pm(), e.obj1()) < 0.025) phase = 3;
        } else {
          // Release and back off so the dropped object is not shoved away.
          g = 0.0;
          const Vec2 dir = unit_towards(e.obj1(), e.pm());
          const Vec2 retreat{e.obj1().x + 0.15 * dir.x, e.obj1().y + 0.15 * dir.y};
          cmd = go_to(e.pm(), retreat);
          if (++counter >= 12) done = true;
        }
        break;
      }
      case Primitive::Stir: {
        g = 1.0;
        if (phase == 0) {
          cmd = go_to(e.pm(), e.obj0());
          if (dist(e.pm(), e.obj0()) < kStirRadius + 0.02) phase = 1;
        } else {
          // Circle the object: tangential feedforward at the stir rate plus
          // a radial correction, giving a clean single-frequency command.
          const double rx = e.pm().x - e.obj0().x;
          const double ry = e.pm().y - e.obj0().y;
          const double r = std::max(std::sqrt(rx * rx + ry * ry), 1e-9);
          const double tangential = kStirRadius * kStirTurnRate / (kMaxSpeed * kDt);
          const double radial = kGain * (kStirRadius - r);
          cmd.x = tangential * (-ry / r) + radial * (rx / r);
          cmd.y = tangential * (rx / r) + radial * (ry / r);
          const double m = std::sqrt(cmd.x * cmd.x + cmd.y * cmd.y);
          if (m > 1.0) {
            cmd.x /= m;
            cmd.y /= m;
          }
          if (++counter >= kStirSteps) done = true;
        }
        break;
      }
    }
    std::vector<double> action = {clamp(cmd.x + noise * rng.uniform(-1.0, 1.0), -1.0, 1.0),
                                  clamp(cmd.y + noise * rng.uniform(-1.0, 1.0), -1.0, 1.0), g};
    aa.push_back(action);
    e.step(action);
    if (done) break;
  }

  const int t_len = static_cast<int>(ss.size());
  *states = Mat(t_len, kStateDim);
  *actions = Mat(t_len, kActionDim);
  for (int t = 0; t < t_len; ++t) {
    for (int i = 0; i < kStateDim; ++i) (*states)(t, i) = ss[static_cast<size_t>(t)][static_cast<size_t>(i)];
    for (int i = 0; i < kActionDim; ++i) (*actions)(t, i) = aa[static_cast<size_t>(t)][static_cast<size_t>(i)];
  }
  return e.success(primitive);
}

}  // namespace

Demonstration gen_demo_on_layout(Primitive primitive, const Layout& layout, double noise_level,
                                 uint64_t seed) {
  Rng rng(seed);
  Demonstration demo;
  if (!run_script(primitive, layout, noise_level, script_cap(primitive, LayoutRegion::Full), rng,
                  &demo.states, &demo.actions))
    throw ValidationError("demo script failed on the given layout");
  demo.behavior_label = static_cast<int>(primitive);
  demo.layout_id = layout.id;
  demo.seed = seed;
  return demo;
}

std::vector<Demonstration> gen_demos(const TaskSpec& spec, int count, double noise_level,
                                     uint64_t seed) {
  if (count < 0) throw ValidationError("gen_demos: negative count");
  std::vector<Demonstration> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    const uint64_t demo_seed = derive_seed(seed, static_cast<uint64_t>(i) * 2654435761ULL + 17);
    Rng rng(demo_seed);
    bool ok = false;
    for (int attempt = 0; attempt < 40 && !ok; ++attempt) {
      Layout layout = sample_layout(spec.region, spec.primitive, rng);
      layout.id = i;
      Demonstration demo;
      if (run_script(spec.primitive, layout, noise_level, script_cap(spec.primitive, spec.region),
                     rng, &demo.states, &demo.actions)) {
        demo.behavior_label = static_cast<int>(spec.primitive);
        demo.layout_id = i;
        demo.seed = demo_seed;
        out.push_back(std::move(demo));
        ok = true;
      }
    }
    if (!ok) throw ValidationError("gen_demos: no successful script after 40 layouts");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Chunking
// ---------------------------------------------------------------------------

std::vector<ChunkWithContext> slide_chunks(const Demonstration& demo, int horizon, int stride) {
  const int t_len = demo.actions.rows;
  if (horizon <= 0 || stride <= 0) throw ValidationError("slide_chunks: bad horizon or stride");
  if (t_len < horizon)
    throw ValidationError("slide_chunks: demonstration shorter than the horizon");
  std::vector<int> starts;
  for (int s = 0; s <= t_len - horizon; s += stride) starts.push_back(s);
  if ((t_len - horizon) % stride != 0) starts.push_back(starts.back() + stride);

  std::vector<ChunkWithContext> out;
  out.reserve(starts.size());
  for (int s : starts) {
    ChunkWithContext c;
    c.chunk.values = Mat(horizon, kActionDim);
    c.chunk.gripper_dims = {2};
    for (int r = 0; r < horizon; ++r) {
      const int src = std::min(s + r, t_len - 1);  // pad by repeating the last action
      for (int d = 0; d < kActionDim; ++d) c.chunk.values(r, d) = demo.actions(src, d);
    }
    c.context_state.assign(demo.states.row(s), demo.states.row(s) + kStateDim);
    c.start = s;
    c.behavior_label = demo.behavior_label;
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<PolicyTrainExample> build_policy_examples(const std::vector<ChunkWithContext>& chunks,
                                                      const Sdat& tokenizer, bool with_task_ids) {
  std::vector<PolicyTrainExample> out;
  out.reserve(chunks.size());
  for (const ChunkWithContext& c : chunks) {
    PolicyTrainExample ex;
    ex.ctx.proprio = c.context_state;
    ex.ctx.task_id = with_task_ids ? c.behavior_label : -1;
    ex.pyramid = tokenizer.tokenize(c.chunk);
    out.push_back(std::move(ex));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rollouts
// ---------------------------------------------------------------------------

namespace {

IntentToken intent_of_pyramid(const TokenPyramid& pyramid, const Sdat& tokenizer) {
  IntentToken intent;
  intent.index = pyramid.maps.front().front();
  const Mat& cb = tokenizer.codebook().vectors;
  intent.embedding.assign(cb.row(intent.index), cb.row(intent.index) + cb.cols);
  return intent;
}

}  // namespace

EpisodeResult rollout(const Policy& policy, const Sdat& tokenizer, Primitive task, int task_id,
                      const Layout& layout, const RolloutConfig& cfg, uint64_t seed,
                      const std::vector<int>* intent_by_step) {
  cfg.ensemble.validate();
  EpisodeResult result;
  Environment e;
  e.reset(layout);
  const int horizon = tokenizer.config().horizon;
  std::vector<ChunkPrediction> buffer;

  for (int t = 0; t < cfg.max_steps; ++t) {
    PolicyContext ctx;
    ctx.proprio = e.state_vector();
    ctx.task_id = task_id;
    std::optional<int> fixed;
    if (intent_by_step && !intent_by_step->empty())
      fixed = (*intent_by_step)[std::min<size_t>(static_cast<size_t>(t), intent_by_step->size() - 1)];

    const TokenPyramid pyramid =
        policy.sample(ctx, cfg.temperature, derive_seed(seed, 1000 + static_cast<uint64_t>(t)), fixed);
    ChunkPrediction pred;
    pred.origin_step = t;
    pred.actions = tokenizer.detokenize(pyramid);
    pred.intent = intent_of_pyramid(pyramid, tokenizer);
    buffer.insert(buffer.begin(), std::move(pred));
    while (static_cast<int>(buffer.size()) > cfg.ensemble.window + 1 ||
           (!buffer.empty() && buffer.back().origin_step + horizon <= t))
      buffer.pop_back();

    const auto weights = ensemble_weights(cfg.ensemble, buffer, t);
    const auto action = ensemble_action(buffer, weights, t);
    if (cfg.record_trajectory) result.trajectory.push_back(e.state_vector());
    if (!e.step(action)) {
      result.steps = t + 1;
      result.diagnostic = "environment divergence (non-finite action)";
      return result;
    }
    if (e.success(task)) {
      result.success = true;
      result.steps = t + 1;
      return result;
    }
  }
  result.steps = cfg.max_steps;
  return result;
}

EpisodeResult replay_actions(const Mat& actions, Primitive task, const Layout& layout,
                             int max_steps) {
  EpisodeResult result;
  Environment e;
  e.reset(layout);
  const int t_len = std::min(actions.rows, max_steps);
  for (int t = 0; t < t_len; ++t) {
    std::vector<double> a(actions.row(t), actions.row(t) + actions.cols);
    if (!e.step(a)) {
      result.steps = t + 1;
      result.diagnostic = "environment divergence";
      return result;
    }
    if (e.success(task)) {
      result.success = true;
      result.steps = t + 1;
      return result;
    }
  }
  result.steps = t_len;
  return result;
}

CompositeResult rollout_composite(const Policy& policy, const Sdat& tokenizer,
                                  const std::vector<Primitive>& stages, const Layout& layout,
                                  const RolloutConfig& cfg, uint64_t seed) {
  if (stages.empty()) throw ValidationError("composite rollout: no stages");
  CompositeResult result;
  Environment e;
  e.reset(layout);
  const int horizon = tokenizer.config().horizon;
  std::vector<ChunkPrediction> buffer;
  size_t stage = 0;
  e.reset_stir_progress();

  for (int t = 0; t < cfg.max_steps; ++t) {
    PolicyContext ctx;
    ctx.proprio = e.state_vector();
    ctx.task_id = static_cast<int>(stages[stage]);
    const TokenPyramid pyramid =
        policy.sample(ctx, cfg.temperature, derive_seed(seed, 1000 + static_cast<uint64_t>(t)));
    ChunkPrediction pred;
    pred.origin_step = t;
    pred.actions = tokenizer.detokenize(pyramid);
    pred.intent = intent_of_pyramid(pyramid, tokenizer);
    buffer.insert(buffer.begin(), std::move(pred));
    while (static_cast<int>(buffer.size()) > cfg.ensemble.window + 1 ||
           (!buffer.empty() && buffer.back().origin_step + horizon <= t))
      buffer.pop_back();

    const auto weights = ensemble_weights(cfg.ensemble, buffer, t);
    const auto action = ensemble_action(buffer, weights, t);
    if (!e.step(action)) {
      result.steps = t + 1;
      return result;
    }
    if (e.success(stages[stage])) {
      ++stage;
      result.stages_done = static_cast<int>(stage);
      if (stage == stages.size()) {
        result.success = true;
        result.steps = t + 1;
        return result;
      }
      if (stages[stage] == Primitive::Stir) e.reset_stir_progress();
    }
  }
  result.steps = cfg.max_steps;
  return result;
}

double cluster_purity(const std::vector<int>& intent_tokens, const std::vector<int>& labels) {
  if (intent_tokens.empty() || intent_tokens.size() != labels.size())
    throw ValidationError("cluster_purity: empty or mismatched inputs");
  int max_token = 0, max_label = 0;
  for (int t : intent_tokens) max_token = std::max(max_token, t);
  for (int l : labels) max_label = std::max(max_label, l);
  std::vector<std::vector<int>> counts(static_cast<size_t>(max_token) + 1,
                                       std::vector<int>(static_cast<size_t>(max_label) + 1, 0));
  for (size_t i = 0; i < intent_tokens.size(); ++i)
    ++counts[static_cast<size_t>(intent_tokens[i])][static_cast<size_t>(labels[i])];
  long majority = 0;
  for (const auto& row : counts) {
    int best = 0;
    for (int c : row) best = std::max(best, c);
    majority += best;
  }
  return static_cast<double>(majority) / static_cast<double>(intent_tokens.size());
}

// ---------------------------------------------------------------------------
// One-shot transfer
// ---------------------------------------------------------------------------

const char* transfer_mode_name(TransferMode m) {
  switch (m) {
    case TransferMode::Replay: return "replay";
    case TransferMode::Finetune: return "finetune";
    case TransferMode::IntentInjection: return "intent_injection";
  }
  return "?";
}

const char* transfer_split_name(TransferSplit s) {
  switch (s) {
    case TransferSplit::NewTask: return "new_task";
    case TransferSplit::NewLayout: return "new_layout";
    case TransferSplit::ExtendHorizon: return "extend_horizon";
  }
  return "?";
}

namespace {

struct SplitSpec {
  Primitive primitive;
  LayoutRegion region;
};

SplitSpec split_spec(TransferSplit split) {
  switch (split) {
    case TransferSplit::NewTask: return {Primitive::Push, LayoutRegion::Base};
    case TransferSplit::NewLayout: return {Primitive::Reach, LayoutRegion::Shifted};
    case TransferSplit::ExtendHorizon: return {Primitive::PickPlace, LayoutRegion::Extended};
  }
  return {Primitive::Reach, LayoutRegion::Base};
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

TransferTable transfer_eval(const Sdat& tokenizer, const Policy& mint, const Policy& mint_zero,
                            const TransferConfig& cfg, uint64_t seed) {
  TransferTable table;
  for (TransferSplit split :
       {TransferSplit::NewTask, TransferSplit::NewLayout, TransferSplit::ExtendHorizon}) {
    const SplitSpec spec = split_spec(split);
    const int split_idx = static_cast<int>(split);
    RolloutConfig roll = cfg.rollout;
    if (split == TransferSplit::ExtendHorizon) roll.max_steps = cfg.extended_max_steps;

    // The single demonstration for this split.
    const uint64_t demo_seed = derive_seed(seed, 0xd500 + static_cast<uint64_t>(split_idx));
    Rng demo_rng(demo_seed);
    Layout source = sample_layout(spec.region, spec.primitive, demo_rng);
    source.id = -1;
    const Demonstration demo =
        gen_demo_on_layout(spec.primitive, source, cfg.noise_level, derive_seed(demo_seed, 1));

    // Per-step intent indices extracted from the demo, time-aligned.
    const auto demo_chunks = slide_chunks(demo, cfg.horizon, 1);
    std::vector<int> intents;
    intents.reserve(demo_chunks.size());
    for (const auto& c : demo_chunks) intents.push_back(extract_intent(c.chunk, tokenizer).index);

    // Evaluation layouts.
    std::vector<Layout> layouts(static_cast<size_t>(cfg.seeds_per_split));
    for (int s = 0; s < cfg.seeds_per_split; ++s) {
      Rng lr(derive_seed(seed, 0xe000 + static_cast<uint64_t>(split_idx * 1000 + s)));
      layouts[static_cast<size_t>(s)] = sample_layout(spec.region, spec.primitive, lr);
      layouts[static_cast<size_t>(s)].id = s;
    }

    // Replay.
    {
      std::vector<double> ok(static_cast<size_t>(cfg.seeds_per_split), 0.0);
#pragma omp parallel for schedule(dynamic)
      for (int s = 0; s < cfg.seeds_per_split; ++s)
        ok[static_cast<size_t>(s)] =
            replay_actions(demo.actions, spec.primitive, layouts[static_cast<size_t>(s)], roll.max_steps)
                .success
                ? 1.0
                : 0.0;
      table.at(split, TransferMode::Replay) = mean(ok);
    }

    // One-demo finetuning of the task-conditioned policy; the step budget is
    // swept and the best result reported.
    {
      const auto examples = build_policy_examples(demo_chunks, tokenizer, true);
      double best = 0.0;
      for (int target_steps : cfg.finetune_steps) {
        Policy tuned = mint.clone();
        PolicyTrainConfig tc;
        tc.opt.learning_rate = cfg.finetune_lr;
        tc.opt.batch_size = std::min<int>(cfg.finetune_batch, static_cast<int>(examples.size()));
        const int steps_per_epoch =
            (static_cast<int>(examples.size()) + tc.opt.batch_size - 1) / tc.opt.batch_size;
        tc.epochs = std::max(1, (target_steps + steps_per_epoch - 1) / steps_per_epoch);
        tc.seed = derive_seed(seed, 0xf17e + static_cast<uint64_t>(split_idx * 10 + target_steps));
        tuned.train(examples, tc);

        std::vector<double> ok(static_cast<size_t>(cfg.seeds_per_split), 0.0);
#pragma omp parallel for schedule(dynamic)
        for (int s = 0; s < cfg.seeds_per_split; ++s)
          ok[static_cast<size_t>(s)] =
              rollout(tuned, tokenizer, spec.primitive, static_cast<int>(spec.primitive),
                      layouts[static_cast<size_t>(s)], roll,
                      derive_seed(seed, 0xf200 + static_cast<uint64_t>(split_idx * 1000 + s)))
                      .success
                  ? 1.0
                  : 0.0;
        best = std::max(best, mean(ok));
      }
      table.at(split, TransferMode::Finetune) = best;
    }

    // Intent injection into the language-free policy.
    {
      std::vector<double> ok(static_cast<size_t>(cfg.seeds_per_split), 0.0);
#pragma omp parallel for schedule(dynamic)
      for (int s = 0; s < cfg.seeds_per_split; ++s)
        ok[static_cast<size_t>(s)] =
            rollout(mint_zero, tokenizer, spec.primitive, -1, layouts[static_cast<size_t>(s)], roll,
                    derive_seed(seed, 0xf300 + static_cast<uint64_t>(split_idx * 1000 + s)), &intents)
                    .success
                ? 1.0
                : 0.0;
      table.at(split, TransferMode::IntentInjection) = mean(ok);
    }
  }
  return table;
}

}  // namespace mint::env
