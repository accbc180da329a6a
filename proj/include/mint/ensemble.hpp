#pragma once

#include <vector>

#include "mint/policy.hpp"

namespace mint {

// One policy output retained in the rollout buffer: the chunk, the step it
// was generated at, and its intent token.
struct ChunkPrediction {
  int origin_step = 0;
  ActionChunk actions;
  IntentToken intent;
};

enum class EnsembleMode { Intent, Temporal, Action, None };

struct EnsembleConfig {
  EnsembleMode mode = EnsembleMode::Intent;
  // Maximum number of retained past chunks still covering the current
  // step; the buffer holds at most window + 1 predictions.
  int window = 15;
  double beta = 5.0;
  double temporal_decay = 0.2;

  void validate() const;
};

// Cosine of two embeddings; zero-norm vectors count as orthogonal.
double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

// Softmax over beta-scaled intent similarities. history[0] is the current
// chunk (h = 0), ordered newest to oldest.
std::vector<double> intent_weights(const IntentToken& current,
                                   const std::vector<IntentToken>& history, double beta);

// exp(-decay * h) over positions h = 0..count-1, normalized.
std::vector<double> temporal_weights(int count, double decay);

// Softmax over beta-scaled similarities between the newest prediction's
// action at `step` and each buffered prediction's action at `step`.
std::vector<double> action_weights(const std::vector<ChunkPrediction>& predictions, int step,
                                   double beta);

// Mode dispatch; predictions ordered newest to oldest.
std::vector<double> ensemble_weights(const EnsembleConfig& cfg,
                                     const std::vector<ChunkPrediction>& predictions, int step);

// Weighted action at `step`; gripper coordinates are thresholded at 0.5
// after mixing. Every prediction must cover the step.
std::vector<double> ensemble_action(const std::vector<ChunkPrediction>& predictions,
                                    const std::vector<double>& weights, int step);

}  // namespace mint
