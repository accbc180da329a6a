#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mint/nn.hpp"
#include "mint/spectral.hpp"

namespace mint {

// Increasing token-map resolutions l_1..l_K; l_1 = 1 holds the intent
// token and l_K is the latent length L.
struct ScaleSchedule {
  std::vector<int> resolutions;

  int scales() const { return static_cast<int>(resolutions.size()); }
  int latent_len() const { return resolutions.back(); }
  void validate() const;
};

// Shared code table with EMA statistics. Vectors are refreshed from the
// running sums; codes with no accumulated evidence keep their current value.
struct Codebook {
  Mat vectors;   // V x C
  Mat ema_sums;  // V x C
  std::vector<double> ema_counts;
  double decay = 0.99;
  double eps = 1e-9;

  int size() const { return vectors.rows; }
  int dim() const { return vectors.cols; }
  static Codebook init(int vocab, int dim, double decay, Rng& rng);
  void validate() const;
};

struct CodeAssignment {
  int code = 0;
  std::vector<double> row;
};

void ema_update(Codebook& cb, const std::vector<CodeAssignment>& assignments);

struct TokenPyramid {
  std::vector<std::vector<int>> maps;  // maps[k] has schedule[k] entries
  std::vector<int> schedule;

  void validate(int vocab) const;
  std::string to_line() const;
  static TokenPyramid from_line(const std::string& line);
};

struct LossWeights {
  std::vector<double> lambda;  // per-scale recon weights
  double alpha = 1.0;
  double commitment_weight = 0.25;

  void validate() const;
  static LossWeights uniform(int scales);
};

struct LossBreakdown {
  std::vector<double> freq_per_scale;
  double codebook_term = 0.0;
  double commitment_term = 0.0;
  double aux_term = 0.0;
  double total = 0.0;
};

// Domain of the per-scale reconstruction term; Spectral is the method,
// Time is the ablation baseline.
enum class ReconDomain { Spectral, Time };

struct SdatConfig {
  int horizon = 16;
  int action_dim = 3;
  std::vector<int> gripper_dims = {2};
  std::vector<int> scales = {1, 2, 4};
  int codebook_size = 512;
  int code_dim = 32;
  double ema_decay = 0.99;
  int stem_channels = 16;
  DctMode dct_mode = DctMode::Orthonormal;
  ReconDomain recon_domain = ReconDomain::Spectral;
  LossWeights weights;  // empty lambda -> uniform 1/K
  // Diagnostic: bypass quantization with the identity so the whole loss is
  // differentiable (used by gradient checks only).
  bool identity_quantizer = false;

  void validate() const;
  ScaleSchedule schedule() const { return ScaleSchedule{scales}; }
};

struct QuantizeResult {
  TokenPyramid pyramid;
  std::vector<Mat> cumulative;  // f-hat after scales 1..K
  std::vector<Mat> residuals;   // residual after scales 1..K
};

struct SdatTrainConfig {
  nn::OptimizerConfig opt;
  int epochs = 30;
  uint64_t seed = 0;
};

struct SdatEpochMetrics {
  LossBreakdown mean_loss;
  double codebook_entropy = 0.0;
  int revived_codes = 0;
};

struct SdatTrainLog {
  std::vector<SdatEpochMetrics> epochs;
};

// The action tokenizer: encoder, multi-scale residual quantizer over a
// shared EMA codebook, and action/spectrum decoders.
class Sdat {
 public:
  static Sdat init(const SdatConfig& cfg, uint64_t seed);

  const SdatConfig& config() const { return cfg_; }
  const Codebook& codebook() const { return codebook_; }
  // Replace the code table (shape-checked); EMA statistics are reset.
  void set_codebook_vectors(const Mat& vectors);
  nn::ParameterStore& params() { return store_; }
  const nn::ParameterStore& params() const { return store_; }

  Mat encode(const ActionChunk& chunk) const;  // L x C latent
  QuantizeResult quantize_pyramid(const Mat& f0) const;
  ActionChunk decode_actions(const Mat& fhat) const;
  Spectrum decode_spectrum(const Mat& fhat) const;

  TokenPyramid tokenize(const ActionChunk& chunk) const;
  ActionChunk detokenize(const TokenPyramid& pyramid) const;

  // Cumulative quantized latent rebuilt from token indices alone, through
  // the first `upto` scales (all when upto < 0).
  Mat rebuild_cumulative(const TokenPyramid& pyramid, int upto = -1) const;
  // Same, from a prefix of token maps (maps.size() coarsest scales).
  Mat rebuild_prefix(const std::vector<std::vector<int>>& maps) const;

  LossBreakdown sdat_loss(const ActionChunk& chunk, const LossWeights& weights) const;

  // One forward/backward pass accumulating parameter gradients (scaled by
  // `grad_scale`) and appending EMA assignments; returns the breakdown.
  LossBreakdown loss_and_gradients(const ActionChunk& chunk, const LossWeights& weights,
                                   double grad_scale, std::vector<CodeAssignment>* assignments,
                                   std::vector<std::vector<double>>* latent_pool = nullptr);

  SdatTrainLog train(const std::vector<ActionChunk>& dataset, const SdatTrainConfig& train_cfg);

  void save(const std::string& path);
  static Sdat load_checkpoint(const SdatConfig& cfg, const std::string& path);

 private:
  Sdat() = default;
  void build(uint64_t seed);
  void sync_codebook_to_store();
  void sync_codebook_from_store();

  struct EncoderCache;
  struct DecoderCache;
  struct QuantCache;

  Mat encode_fwd(const Mat& values, EncoderCache* cache) const;
  void encode_bwd(const Mat& df0, const EncoderCache& cache) const;
  Mat decode_fwd(const Mat& fhat, DecoderCache* cache) const;
  Mat decode_bwd(const Mat& dactions, const DecoderCache& cache) const;
  void quantize_fwd(const Mat& f0, QuantCache* cache) const;

  SdatConfig cfg_;
  nn::ParameterStore store_;
  Codebook codebook_;

  // encoder
  std::vector<std::vector<int>> modality_cols_;
  std::vector<nn::Dense> stems_;
  nn::Conv1d group_conv_;
  nn::Conv1d fuse_conv_;
  std::vector<nn::Conv1d> down_convs_;
  nn::Dense enc_head_;
  // quantizer
  std::vector<nn::Conv1d> phi_;
  // decoder
  nn::Dense dec_in_;
  std::vector<nn::Conv1d> up_convs_;
  nn::Dense motion_head_;
  nn::Dense gripper_head_;
};

}  // namespace mint
