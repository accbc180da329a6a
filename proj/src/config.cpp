#include "mint/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace mint {

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

uint64_t fnv1a(const std::string& bytes) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

namespace {

std::string trim(const std::string& s) {
  const size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const int out = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument("");
    return out;
  } catch (...) {
    throw ConfigError("key '" + key + "': expected integer, got '" + v + "'");
  }
}

double parse_dbl(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("");
    return out;
  } catch (...) {
    throw ConfigError("key '" + key + "': expected number, got '" + v + "'");
  }
}

std::vector<std::string> split_csv(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (const auto& item : split_csv(v)) out.push_back(parse_int(key, item));
  return out;
}

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format_double(v[i]);
  return out;
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  // value setters keyed by "section.key"
  std::map<std::string, std::function<void(const std::string&, const std::string&)>> setters;
  auto set_int = [](int& field) {
    return [&field](const std::string& k, const std::string& v) { field = parse_int(k, v); };
  };
  auto set_dbl = [](double& field) {
    return [&field](const std::string& k, const std::string& v) { field = parse_dbl(k, v); };
  };

  setters["tokenizer.horizon"] = set_int(cfg.horizon);
  setters["tokenizer.action_dim"] = set_int(cfg.action_dim);
  setters["tokenizer.gripper_dims"] = [&cfg](const std::string& k, const std::string& v) {
    cfg.gripper_dims = v == "none" ? std::vector<int>{} : parse_int_list(k, v);
  };
  setters["tokenizer.scales"] = [&cfg](const std::string& k, const std::string& v) {
    cfg.scales = parse_int_list(k, v);
  };
  setters["tokenizer.codebook_size"] = set_int(cfg.codebook_size);
  setters["tokenizer.code_dim"] = set_int(cfg.code_dim);
  setters["tokenizer.ema_decay"] = set_dbl(cfg.ema_decay);
  setters["tokenizer.stem_channels"] = set_int(cfg.stem_channels);
  setters["tokenizer.dct_mode"] = [&cfg](const std::string& k, const std::string& v) {
    if (v == "orthonormal")
      cfg.dct_mode = DctMode::Orthonormal;
    else if (v == "paper")
      cfg.dct_mode = DctMode::PaperUnnormalized;
    else
      throw ConfigError("key '" + k + "': expected orthonormal|paper");
  };
  setters["tokenizer.recon_domain"] = [&cfg](const std::string& k, const std::string& v) {
    if (v == "spectral")
      cfg.recon_domain = ReconDomain::Spectral;
    else if (v == "time")
      cfg.recon_domain = ReconDomain::Time;
    else
      throw ConfigError("key '" + k + "': expected spectral|time");
  };
  setters["tokenizer.lambda"] = [&cfg](const std::string& k, const std::string& v) {
    cfg.lambda.clear();
    if (v == "uniform") return;
    for (const auto& item : split_csv(v)) cfg.lambda.push_back(parse_dbl(k, item));
  };
  setters["tokenizer.alpha"] = set_dbl(cfg.alpha);
  setters["tokenizer.commitment_weight"] = set_dbl(cfg.commitment_weight);

  setters["policy.blocks"] = set_int(cfg.policy_blocks);
  setters["policy.width"] = set_int(cfg.policy_width);
  setters["policy.heads"] = set_int(cfg.policy_heads);
  setters["policy.mlp_dim"] = set_int(cfg.policy_mlp_dim);
  setters["policy.task_embed_dim"] = set_int(cfg.task_embed_dim);
  setters["policy.temperature"] = set_dbl(cfg.temperature);

  setters["ensemble.mode"] = [&cfg](const std::string& k, const std::string& v) {
    if (v == "intent")
      cfg.ensemble_mode = EnsembleMode::Intent;
    else if (v == "temporal")
      cfg.ensemble_mode = EnsembleMode::Temporal;
    else if (v == "action")
      cfg.ensemble_mode = EnsembleMode::Action;
    else if (v == "none")
      cfg.ensemble_mode = EnsembleMode::None;
    else
      throw ConfigError("key '" + k + "': expected intent|temporal|action|none");
  };
  setters["ensemble.beta"] = set_dbl(cfg.beta);
  setters["ensemble.window"] = set_int(cfg.window);
  setters["ensemble.temporal_decay"] = set_dbl(cfg.temporal_decay);

  setters["env.noise_level"] = set_dbl(cfg.noise_level);
  setters["env.demos_per_primitive"] = set_int(cfg.demos_per_primitive);
  setters["env.primitives"] = [&cfg](const std::string& k, const std::string& v) {
    cfg.primitives.clear();
    try {
      for (const auto& item : split_csv(v)) cfg.primitives.push_back(env::primitive_from_name(item));
    } catch (const ValidationError& e) {
      throw ConfigError("key '" + k + "': " + e.what());
    }
  };
  setters["env.region"] = [&cfg](const std::string& k, const std::string& v) {
    try {
      cfg.region = env::layout_region_from_name(v);
    } catch (const ValidationError& e) {
      throw ConfigError("key '" + k + "': " + e.what());
    }
  };
  setters["env.chunk_stride"] = set_int(cfg.chunk_stride);
  setters["env.max_steps"] = set_int(cfg.max_steps);

  setters["train.tokenizer_lr"] = set_dbl(cfg.tokenizer_lr);
  setters["train.tokenizer_epochs"] = set_int(cfg.tokenizer_epochs);
  setters["train.tokenizer_batch"] = set_int(cfg.tokenizer_batch);
  setters["train.policy_lr"] = set_dbl(cfg.policy_lr);
  setters["train.policy_epochs"] = set_int(cfg.policy_epochs);
  setters["train.policy_batch"] = set_int(cfg.policy_batch);
  setters["train.weight_decay"] = set_dbl(cfg.weight_decay);
  setters["train.beta1"] = set_dbl(cfg.beta1);
  setters["train.beta2"] = set_dbl(cfg.beta2);
  setters["train.finetune_steps"] = [&cfg](const std::string& k, const std::string& v) {
    cfg.finetune_steps = parse_int_list(k, v);
  };
  setters["train.transfer_seeds"] = set_int(cfg.transfer_seeds);
  setters["train.rollout_episodes"] = set_int(cfg.rollout_episodes);
  setters["train.ablate_seeds"] = set_int(cfg.ablate_seeds);

  std::istringstream is(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": bad section");
      section = line.substr(1, line.size() - 2);
      if (section != "tokenizer" && section != "policy" && section != "ensemble" &&
          section != "env" && section != "train")
        throw ConfigError("unknown section '" + section + "'");
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty()) throw ConfigError("key '" + key + "' outside any section");
    const std::string full = section + "." + key;
    auto it = setters.find(full);
    if (it == setters.end()) throw ConfigError("unknown key '" + full + "'");
    it->second(full, value);
  }
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

std::string RunConfig::canonical_text() const {
  std::ostringstream os;
  os << "[tokenizer]\n";
  os << "horizon = " << horizon << "\n";
  os << "action_dim = " << action_dim << "\n";
  os << "gripper_dims = " << (gripper_dims.empty() ? "none" : join_ints(gripper_dims)) << "\n";
  os << "scales = " << join_ints(scales) << "\n";
  os << "codebook_size = " << codebook_size << "\n";
  os << "code_dim = " << code_dim << "\n";
  os << "ema_decay = " << format_double(ema_decay) << "\n";
  os << "stem_channels = " << stem_channels << "\n";
  os << "dct_mode = " << (dct_mode == DctMode::Orthonormal ? "orthonormal" : "paper") << "\n";
  os << "recon_domain = " << (recon_domain == ReconDomain::Spectral ? "spectral" : "time") << "\n";
  os << "lambda = " << (lambda.empty() ? "uniform" : join_doubles(lambda)) << "\n";
  os << "alpha = " << format_double(alpha) << "\n";
  os << "commitment_weight = " << format_double(commitment_weight) << "\n";
  os << "\n[policy]\n";
  os << "blocks = " << policy_blocks << "\n";
  os << "width = " << policy_width << "\n";
  os << "heads = " << policy_heads << "\n";
  os << "mlp_dim = " << policy_mlp_dim << "\n";
  os << "task_embed_dim = " << task_embed_dim << "\n";
  os << "temperature = " << format_double(temperature) << "\n";
  os << "\n[ensemble]\n";
  const char* mode_name = ensemble_mode == EnsembleMode::Intent     ? "intent"
                          : ensemble_mode == EnsembleMode::Temporal ? "temporal"
                          : ensemble_mode == EnsembleMode::Action   ? "action"
                                                                    : "none";
  os << "mode = " << mode_name << "\n";
  os << "beta = " << format_double(beta) << "\n";
  os << "window = " << window << "\n";
  os << "temporal_decay = " << format_double(temporal_decay) << "\n";
  os << "\n[env]\n";
  os << "noise_level = " << format_double(noise_level) << "\n";
  os << "demos_per_primitive = " << demos_per_primitive << "\n";
  std::string prims;
  for (size_t i = 0; i < primitives.size(); ++i)
    prims += std::string(i ? "," : "") + env::primitive_name(primitives[i]);
  os << "primitives = " << prims << "\n";
  os << "region = " << env::layout_region_name(region) << "\n";
  os << "chunk_stride = " << chunk_stride << "\n";
  os << "max_steps = " << max_steps << "\n";
  os << "\n[train]\n";
  os << "tokenizer_lr = " << format_double(tokenizer_lr) << "\n";
  os << "tokenizer_epochs = " << tokenizer_epochs << "\n";
  os << "tokenizer_batch = " << tokenizer_batch << "\n";
  os << "policy_lr = " << format_double(policy_lr) << "\n";
  os << "policy_epochs = " << policy_epochs << "\n";
  os << "policy_batch = " << policy_batch << "\n";
  os << "weight_decay = " << format_double(weight_decay) << "\n";
  os << "beta1 = " << format_double(beta1) << "\n";
  os << "beta2 = " << format_double(beta2) << "\n";
  os << "finetune_steps = " << join_ints(finetune_steps) << "\n";
  os << "transfer_seeds = " << transfer_seeds << "\n";
  os << "rollout_episodes = " << rollout_episodes << "\n";
  os << "ablate_seeds = " << ablate_seeds << "\n";
  return os.str();
}

void RunConfig::validate() const {
  sdat_config().validate();
  policy_config(true).validate();
  ensemble_config().validate();
  if (noise_level < 0) throw ConfigError("env.noise_level must be nonnegative");
  if (demos_per_primitive < 0) throw ConfigError("env.demos_per_primitive must be nonnegative");
  if (primitives.empty()) throw ConfigError("env.primitives must not be empty");
  if (chunk_stride <= 0) throw ConfigError("env.chunk_stride must be positive");
  if (max_steps < 0) throw ConfigError("env.max_steps must be nonnegative");
  if (temperature < 0) throw ConfigError("policy.temperature must be nonnegative");
  sdat_train_config(0).opt.validate();
  policy_train_config(0).opt.validate();
  if (transfer_seeds <= 0 || rollout_episodes <= 0 || ablate_seeds <= 0)
    throw ConfigError("train: evaluation seed counts must be positive");
  for (int s : finetune_steps)
    if (s <= 0) throw ConfigError("train.finetune_steps must be positive");
}

SdatConfig RunConfig::sdat_config() const {
  SdatConfig c;
  c.horizon = horizon;
  c.action_dim = action_dim;
  c.gripper_dims = gripper_dims;
  c.scales = scales;
  c.codebook_size = codebook_size;
  c.code_dim = code_dim;
  c.ema_decay = ema_decay;
  c.stem_channels = stem_channels;
  c.dct_mode = dct_mode;
  c.recon_domain = recon_domain;
  c.weights.lambda = lambda;
  c.weights.alpha = alpha;
  c.weights.commitment_weight = commitment_weight;
  if (c.weights.lambda.empty())
    c.weights.lambda = LossWeights::uniform(static_cast<int>(scales.size())).lambda;
  return c;
}

PolicyConfig RunConfig::policy_config(bool task_conditioned) const {
  PolicyConfig c;
  c.width = policy_width;
  c.blocks = policy_blocks;
  c.heads = policy_heads;
  c.mlp_dim = policy_mlp_dim;
  c.proprio_dim = env::kStateDim;
  c.num_tasks = env::kNumPrimitives;
  c.task_embed_dim = task_embed_dim;
  c.task_conditioned = task_conditioned;
  return c;
}

EnsembleConfig RunConfig::ensemble_config() const {
  EnsembleConfig c;
  c.mode = ensemble_mode;
  c.window = window < 0 ? horizon - 1 : window;
  c.beta = beta;
  c.temporal_decay = temporal_decay;
  return c;
}

SdatTrainConfig RunConfig::sdat_train_config(uint64_t seed) const {
  SdatTrainConfig c;
  c.opt.learning_rate = tokenizer_lr;
  c.opt.weight_decay = weight_decay;
  c.opt.beta1 = beta1;
  c.opt.beta2 = beta2;
  c.opt.batch_size = tokenizer_batch;
  c.epochs = tokenizer_epochs;
  c.seed = seed;
  return c;
}

PolicyTrainConfig RunConfig::policy_train_config(uint64_t seed) const {
  PolicyTrainConfig c;
  c.opt.learning_rate = policy_lr;
  c.opt.weight_decay = weight_decay;
  c.opt.beta1 = beta1;
  c.opt.beta2 = beta2;
  c.opt.batch_size = policy_batch;
  c.epochs = policy_epochs;
  c.seed = seed;
  return c;
}

env::RolloutConfig RunConfig::rollout_config() const {
  env::RolloutConfig c;
  c.ensemble = ensemble_config();
  c.temperature = temperature;
  c.max_steps = max_steps;
  return c;
}

}  // namespace mint
