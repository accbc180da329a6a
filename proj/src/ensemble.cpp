#include "mint/ensemble.hpp"

#include <cmath>

namespace mint {

void EnsembleConfig::validate() const {
  if (window < 0) throw ValidationError("ensemble: window must be nonnegative");
  if (beta < 0.0) throw ValidationError("ensemble: beta must be nonnegative");
  if (temporal_decay < 0.0) throw ValidationError("ensemble: temporal decay must be nonnegative");
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ValidationError("cosine: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

namespace {

std::vector<double> softmax_scores(const std::vector<double>& scores) {
  double mx = scores.front();
  for (double s : scores) mx = std::max(mx, s);
  std::vector<double> w(scores.size());
  double denom = 0.0;
  for (size_t i = 0; i < scores.size(); ++i) {
    w[i] = std::exp(scores[i] - mx);
    denom += w[i];
  }
  for (double& x : w) x /= denom;
  return w;
}

int chunk_row(const ChunkPrediction& p, int step) {
  const int row = step - p.origin_step;
  if (row < 0 || row >= p.actions.horizon())
    throw ValidationError("ensemble: prediction does not cover step " + std::to_string(step));
  return row;
}

}  // namespace

std::vector<double> intent_weights(const IntentToken& current,
                                   const std::vector<IntentToken>& history, double beta) {
  if (history.empty()) throw ValidationError("ensemble: empty intent history");
  if (beta < 0.0) throw ValidationError("ensemble: beta must be nonnegative");
  std::vector<double> scores(history.size());
  for (size_t h = 0; h < history.size(); ++h)
    scores[h] = beta * cosine_similarity(current.embedding, history[h].embedding);
  return softmax_scores(scores);
}

std::vector<double> temporal_weights(int count, double decay) {
  if (count <= 0) throw ValidationError("ensemble: empty history");
  std::vector<double> scores(static_cast<size_t>(count));
  for (int h = 0; h < count; ++h) scores[static_cast<size_t>(h)] = -decay * h;
  return softmax_scores(scores);
}

std::vector<double> action_weights(const std::vector<ChunkPrediction>& predictions, int step,
                                   double beta) {
  if (predictions.empty()) throw ValidationError("ensemble: empty prediction buffer");
  const ChunkPrediction& current = predictions.front();
  const int row0 = chunk_row(current, step);
  std::vector<double> ref(current.actions.values.row(row0),
                          current.actions.values.row(row0) + current.actions.dim());
  std::vector<double> scores(predictions.size());
  for (size_t h = 0; h < predictions.size(); ++h) {
    const int row = chunk_row(predictions[h], step);
    std::vector<double> a(predictions[h].actions.values.row(row),
                          predictions[h].actions.values.row(row) + predictions[h].actions.dim());
    scores[h] = beta * cosine_similarity(ref, a);
  }
  return softmax_scores(scores);
}

std::vector<double> ensemble_weights(const EnsembleConfig& cfg,
                                     const std::vector<ChunkPrediction>& predictions, int step) {
  cfg.validate();
  if (predictions.empty()) throw ValidationError("ensemble: empty prediction buffer");
  switch (cfg.mode) {
    case EnsembleMode::None: {
      std::vector<double> w(predictions.size(), 0.0);
      w.front() = 1.0;
      return w;
    }
    case EnsembleMode::Temporal:
      return temporal_weights(static_cast<int>(predictions.size()), cfg.temporal_decay);
    case EnsembleMode::Action:
      return action_weights(predictions, step, cfg.beta);
    case EnsembleMode::Intent: {
      std::vector<IntentToken> history;
      history.reserve(predictions.size());
      for (const auto& p : predictions) history.push_back(p.intent);
      return intent_weights(history.front(), history, cfg.beta);
    }
  }
  throw ValidationError("ensemble: unknown mode");
}

std::vector<double> ensemble_action(const std::vector<ChunkPrediction>& predictions,
                                    const std::vector<double>& weights, int step) {
  if (predictions.empty()) throw ValidationError("ensemble: empty prediction buffer");
  if (weights.size() != predictions.size())
    throw ValidationError("ensemble: weight count does not match prediction count");
  double sum = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw ValidationError("ensemble: negative weight");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("ensemble: weights must sum to 1");

  const int dim = predictions.front().actions.dim();
  std::vector<double> action(static_cast<size_t>(dim), 0.0);
  for (size_t h = 0; h < predictions.size(); ++h) {
    const int row = chunk_row(predictions[h], step);
    for (int d = 0; d < dim; ++d)
      action[static_cast<size_t>(d)] += weights[h] * predictions[h].actions.values(row, d);
  }
  for (int d : predictions.front().actions.gripper_dims)
    action[static_cast<size_t>(d)] = action[static_cast<size_t>(d)] >= 0.5 ? 1.0 : 0.0;
  return action;
}

}  // namespace mint
