#pragma once

#include <string>
#include <vector>

#include "mint/ensemble.hpp"
#include "mint/env.hpp"
#include "mint/policy.hpp"
#include "mint/tokenizer.hpp"

namespace mint {

// Run configuration: sectioned key = value text. Unknown sections or keys
// are rejected; parsing then re-serializing is byte-stable.
struct RunConfig {
  // [tokenizer]
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
  std::vector<double> lambda;  // empty = uniform
  double alpha = 1.0;
  double commitment_weight = 0.25;

  // [policy]
  int policy_blocks = 4;
  int policy_width = 128;
  int policy_heads = 4;
  int policy_mlp_dim = 512;
  int task_embed_dim = 32;
  double temperature = 1.0;

  // [ensemble]
  EnsembleMode ensemble_mode = EnsembleMode::Intent;
  double beta = 5.0;
  int window = -1;  // -1 = horizon - 1
  double temporal_decay = 0.2;

  // [env]
  double noise_level = 0.05;
  int demos_per_primitive = 30;
  std::vector<env::Primitive> primitives = {env::Primitive::Reach, env::Primitive::Push,
                                            env::Primitive::PickPlace, env::Primitive::Stir};
  env::LayoutRegion region = env::LayoutRegion::Base;
  int chunk_stride = 1;
  int max_steps = 150;

  // [train]
  double tokenizer_lr = 3e-4;
  int tokenizer_epochs = 30;
  int tokenizer_batch = 64;
  double policy_lr = 3e-4;
  int policy_epochs = 8;
  int policy_batch = 64;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.95;
  std::vector<int> finetune_steps = {10, 50, 200};
  int transfer_seeds = 50;
  int rollout_episodes = 100;
  int ablate_seeds = 3;

  bool operator==(const RunConfig&) const = default;

  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::string& path);
  std::string canonical_text() const;
  void validate() const;

  SdatConfig sdat_config() const;
  PolicyConfig policy_config(bool task_conditioned) const;
  EnsembleConfig ensemble_config() const;
  SdatTrainConfig sdat_train_config(uint64_t seed) const;
  PolicyTrainConfig policy_train_config(uint64_t seed) const;
  env::RolloutConfig rollout_config() const;
};

// Shortest round-trip decimal formatting (used for canonical config and
// CSV output).
std::string format_double(double v);

// FNV-1a over bytes; manifests use it to fingerprint configs and inputs.
uint64_t fnv1a(const std::string& bytes);

}  // namespace mint
