#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mint/ensemble.hpp"

namespace mint::env {

// 2D point-mass arena: unit square, velocity control at 20 steps/s, a
// scalar gripper, and two objects (obj0 is manipulable, obj1 marks the
// goal). State layout: pm(2) vel(2) grip(1) obj0(2) obj1(2).
constexpr int kStateDim = 9;
constexpr int kActionDim = 3;
constexpr double kDt = 0.05;
constexpr double kMaxSpeed = 0.5;
constexpr double kTolerance = 0.05;
constexpr double kGraspRadius = 0.06;
constexpr double kContactRadius = 0.03;
constexpr double kStirRadius = 0.055;

enum class Primitive { Reach = 0, Push = 1, PickPlace = 2, Stir = 3 };
constexpr int kNumPrimitives = 4;
const char* primitive_name(Primitive p);
Primitive primitive_from_name(const std::string& name);

struct Vec2 {
  double x = 0.0, y = 0.0;
};

struct Layout {
  Vec2 start, obj0, obj1;
  int id = 0;
};

// Where layouts are sampled from. Base keeps everything in the lower band
// of the arena with bounded travel distances; Shifted moves to the upper
// band (unseen region); Extended stays in the training band but forces
// long travel distances.
enum class LayoutRegion { Full, Base, Shifted, Extended };
LayoutRegion layout_region_from_name(const std::string& name);
const char* layout_region_name(LayoutRegion r);

Layout sample_layout(LayoutRegion region, Primitive primitive, Rng& rng);
// Layout feasible for every stage of a composite task.
Layout sample_composite_layout(LayoutRegion region, const std::vector<Primitive>& stages, Rng& rng);

struct TaskSpec {
  Primitive primitive = Primitive::Reach;
  LayoutRegion region = LayoutRegion::Base;
  double noise_level = 0.05;
};

struct Demonstration {
  Mat states;   // T x kStateDim
  Mat actions;  // T x kActionDim
  int behavior_label = 0;
  int layout_id = 0;
  uint64_t seed = 0;
};

class Environment {
 public:
  void reset(const Layout& layout);
  // Executes one clamped velocity command; returns false on divergence.
  bool step(const std::vector<double>& action);

  std::vector<double> state_vector() const;
  bool success(Primitive task) const;
  bool diverged() const { return diverged_; }
  void reset_stir_progress() { swept_angle_ = 0.0; }

  Vec2 pm() const { return pm_; }
  Vec2 obj0() const { return obj0_; }
  Vec2 obj1() const { return obj1_; }
  double grip() const { return grip_; }
  bool carried() const { return carried_; }
  double swept_angle() const { return swept_angle_; }

 private:
  Vec2 pm_, vel_, obj0_, obj1_;
  double grip_ = 0.0;
  bool carried_ = false;
  bool diverged_ = false;
  double swept_angle_ = 0.0;
  bool have_angle_ = false;
  double last_angle_ = 0.0;
};

// Scripted demonstrations: smooth proportional-control motion plus
// per-step actuation jitter of the given amplitude.
std::vector<Demonstration> gen_demos(const TaskSpec& spec, int count, double noise_level,
                                     uint64_t seed);
// Single demo on a fixed layout (used by the transfer protocol).
Demonstration gen_demo_on_layout(Primitive primitive, const Layout& layout, double noise_level,
                                 uint64_t seed);

struct ChunkWithContext {
  ActionChunk chunk;
  std::vector<double> context_state;
  int start = 0;
  int behavior_label = 0;
};

std::vector<ChunkWithContext> slide_chunks(const Demonstration& demo, int horizon, int stride);

// Tokenize chunks into policy training examples; task ids come from the
// behavior labels (or stay -1 for the language-free variant).
std::vector<PolicyTrainExample> build_policy_examples(const std::vector<ChunkWithContext>& chunks,
                                                      const Sdat& tokenizer, bool with_task_ids);

struct EpisodeResult {
  bool success = false;
  int steps = 0;
  std::vector<std::vector<double>> trajectory;
  std::string diagnostic;
};

struct RolloutConfig {
  EnsembleConfig ensemble;
  double temperature = 1.0;
  int max_steps = 150;
  bool record_trajectory = false;
};

// Closed-loop execution: every control step samples a pyramid, detokenizes
// it, pushes the chunk into the ensemble buffer and executes the ensembled
// action. `intent_by_step` pins s_1 per control step (clamped to its last
// entry) for intent injection.
EpisodeResult rollout(const Policy& policy, const Sdat& tokenizer, Primitive task, int task_id,
                      const Layout& layout, const RolloutConfig& cfg, uint64_t seed,
                      const std::vector<int>* intent_by_step = nullptr);

// Open-loop replay of a recorded action sequence on a (possibly different)
// layout.
EpisodeResult replay_actions(const Mat& actions, Primitive task, const Layout& layout,
                             int max_steps);

// Staged long-horizon task; the task id switches when a stage's goal
// predicate fires. Success means all stages completed within max_steps.
struct CompositeResult {
  bool success = false;
  int stages_done = 0;
  int steps = 0;
};
CompositeResult rollout_composite(const Policy& policy, const Sdat& tokenizer,
                                  const std::vector<Primitive>& stages, const Layout& layout,
                                  const RolloutConfig& cfg, uint64_t seed);

// Fraction of samples whose intent-token group majority label matches
// their own label.
double cluster_purity(const std::vector<int>& intent_tokens, const std::vector<int>& labels);

// ---------------------------------------------------------------------------
// One-shot transfer protocol
// ---------------------------------------------------------------------------

enum class TransferMode { Replay, Finetune, IntentInjection };
enum class TransferSplit { NewTask, NewLayout, ExtendHorizon };
const char* transfer_mode_name(TransferMode m);
const char* transfer_split_name(TransferSplit s);

struct TransferConfig {
  int seeds_per_split = 50;
  std::vector<int> finetune_steps = {10, 50, 200};
  double finetune_lr = 3e-4;
  int finetune_batch = 16;
  double noise_level = 0.05;
  int horizon = 16;
  int chunk_stride = 1;
  int extended_max_steps = 240;
  RolloutConfig rollout;
};

struct TransferTable {
  // rates[split][mode]
  double rates[3][3] = {{0.0}};
  double& at(TransferSplit s, TransferMode m) { return rates[static_cast<int>(s)][static_cast<int>(m)]; }
  double at(TransferSplit s, TransferMode m) const {
    return rates[static_cast<int>(s)][static_cast<int>(m)];
  }
};

// Evaluates the three one-shot transfer modes on the three held-out splits.
// `mint` is the task-conditioned policy, `mint_zero` the language-free one;
// both must have been trained with the held-out data excluded.
TransferTable transfer_eval(const Sdat& tokenizer, const Policy& mint, const Policy& mint_zero,
                            const TransferConfig& cfg, uint64_t seed);

}  // namespace mint::env
