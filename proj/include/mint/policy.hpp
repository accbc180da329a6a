#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mint/tokenizer.hpp"

namespace mint {

// Inputs conditioning the policy: proprioceptive state projected into a
// context position, plus an optional learned task embedding applied by
// feature-wise modulation inside every block.
struct PolicyContext {
  std::vector<double> proprio;
  int task_id = -1;
};

// The intent-scale token with its codebook embedding.
struct IntentToken {
  int index = 0;
  std::vector<double> embedding;
};

IntentToken extract_intent(const ActionChunk& chunk, const Sdat& tokenizer);

struct PolicyConfig {
  int width = 128;
  int blocks = 4;
  int heads = 4;
  int mlp_dim = 512;
  int proprio_dim = 9;
  int num_tasks = 4;
  int task_embed_dim = 32;
  bool task_conditioned = true;  // false => the language-free variant

  void validate() const;
};

struct PolicyTrainConfig {
  nn::OptimizerConfig opt;
  int epochs = 6;
  uint64_t seed = 0;
};

struct PolicyTrainLog {
  std::vector<double> epoch_ce;
};

struct PolicyTrainExample {
  PolicyContext ctx;
  TokenPyramid pyramid;
};

// Next-scale autoregressive policy over token pyramids. Scales are decoded
// coarse to fine; all positions within a scale are predicted in parallel
// under a hybrid attention mask.
class Policy {
 public:
  static Policy init(const PolicyConfig& cfg, const Sdat* tokenizer, uint64_t seed);

  const PolicyConfig& config() const { return cfg_; }
  const Sdat& tokenizer() const { return *tokenizer_; }
  nn::ParameterStore& params() { return store_; }
  const nn::ParameterStore& params() const { return store_; }
  int context_len() const { return 1; }
  int total_positions() const;

  // Position i of scale k sees every context position and every position
  // in scales <= k; context positions see only context.
  static nn::BoolMat build_scale_mask(const std::vector<int>& schedule, int context_len);

  // Teacher-forced logits for every pyramid position, grouped by scale.
  Mat forward_all(const PolicyContext& ctx, const TokenPyramid& pyramid) const;
  // Logits for scale prefix.size()+1 given the coarser maps.
  Mat forward_next(const PolicyContext& ctx, const std::vector<std::vector<int>>& prefix) const;
  // Sum of -log p over all pyramid positions.
  double teacher_forced_nll(const PolicyContext& ctx, const TokenPyramid& pyramid) const;

  // One forward/backward pass accumulating gradients of the mean
  // cross-entropy over every pyramid position in the batch.
  double loss_and_gradients(const std::vector<PolicyTrainExample>& batch);

  PolicyTrainLog train(const std::vector<PolicyTrainExample>& dataset,
                       const PolicyTrainConfig& train_cfg);

  // Coarse-to-fine sampling with cached attention state. temperature 0 is
  // greedy argmax with ties to the lowest index. fixed_intent pins s_1.
  // `trace` receives one line per scale with the chosen indices and logits.
  TokenPyramid sample(const PolicyContext& ctx, double temperature, uint64_t seed,
                      std::optional<int> fixed_intent = std::nullopt,
                      std::string* trace = nullptr) const;
  // Oracle path recomputing the full prefix at every scale.
  TokenPyramid sample_uncached(const PolicyContext& ctx, double temperature, uint64_t seed,
                               std::optional<int> fixed_intent = std::nullopt) const;

  void save(const std::string& path);
  static Policy load_checkpoint(const PolicyConfig& cfg, const Sdat* tokenizer,
                                const std::string& path);
  Policy clone() const;

 private:
  Policy() = default;
  void build(uint64_t seed);

  struct Block {
    nn::LayerNorm ln1, ln2;
    nn::MultiHeadAttention attn;
    nn::Dense mlp1, mlp2;
    nn::Film film;
  };

  struct BatchCaches;
  // Stacked forward over a batch; fills logits for all scale positions.
  Mat batch_forward(const std::vector<const PolicyTrainExample*>& batch, BatchCaches* caches) const;
  void batch_backward(const Mat& dlogits, const BatchCaches& caches) const;

  Mat input_rows(const PolicyContext& ctx, const std::vector<std::vector<int>>& prefix,
                 int upto_scale) const;  // embedding rows for positions < end of upto_scale
  Mat cond_row(const PolicyContext& ctx) const;
  Mat full_logits(const PolicyContext& ctx, const std::vector<std::vector<int>>& maps,
                  int upto_scale) const;  // recompute path, logits of scale upto_scale

  TokenPyramid sample_impl(const PolicyContext& ctx, double temperature, uint64_t seed,
                           std::optional<int> fixed_intent, std::string* trace, bool cached) const;

  PolicyConfig cfg_;
  const Sdat* tokenizer_ = nullptr;
  nn::ParameterStore store_;
  nn::BoolMat mask_;

  nn::Dense proprio_proj_;
  nn::Dense in_proj_;  // codebook-space prefix features -> width
  nn::Param* start_emb_ = nullptr;
  nn::Param* pos_emb_ = nullptr;
  std::vector<Block> blocks_;
  nn::LayerNorm ln_f_;
  nn::Dense head_;
  nn::Embedding task_table_;
};

}  // namespace mint
