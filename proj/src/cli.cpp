#include "mint/cli.hpp"

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "mint/config.hpp"
#include "mint/dataset.hpp"

namespace mint {

namespace fs = std::filesystem;

namespace {

std::string read_file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open input: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open output for writing: " + path);
  os.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!os) throw IoError("write failed: " + path);
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct RunPaths {
  std::string config_path;
  uint64_t seed = 0;
  std::string out;
};

void prepare_out(const RunPaths& rp) {
  std::error_code ec;
  fs::create_directories(rp.out, ec);
  if (ec) throw IoError("cannot create output directory: " + rp.out);
}

void write_manifest(const RunPaths& rp, const std::string& command, const RunConfig& cfg,
                    const std::vector<std::string>& input_paths) {
  std::ostringstream os;
  os << "command=" << command << "\n";
  os << "seed=" << rp.seed << "\n";
  os << "config_hash=" << hex64(fnv1a(cfg.canonical_text())) << "\n";
  os << "format_versions=MNTC1,MINTD1\n";
  for (const std::string& p : input_paths)
    os << "input=" << fs::path(p).filename().string() << ":" << hex64(fnv1a(read_file_bytes(p)))
       << "\n";
  write_file((fs::path(rp.out) / "manifest.txt").string(), os.str());
}

RunConfig load_config_or_default(const std::string& path) {
  if (path.empty()) return RunConfig{};
  RunConfig cfg = RunConfig::load(path);
  return cfg;
}

std::vector<env::ChunkWithContext> chunk_dataset(const DatasetFile& data, const RunConfig& cfg) {
  std::vector<env::ChunkWithContext> chunks;
  for (const auto& demo : data.demos) {
    if (demo.actions.rows < cfg.horizon) continue;
    auto cs = env::slide_chunks(demo, cfg.horizon, cfg.chunk_stride);
    chunks.insert(chunks.end(), cs.begin(), cs.end());
  }
  if (chunks.empty()) throw ValidationError("dataset yields no chunks at this horizon");
  return chunks;
}

std::string tokenizer_metrics_csv(const SdatTrainLog& log, int scales) {
  std::ostringstream os;
  os << "epoch,loss_total";
  for (int k = 1; k <= scales; ++k) os << ",loss_freq_" << k;
  os << ",loss_codebook,loss_commit,loss_aux,codebook_entropy,revived_codes\n";
  for (size_t e = 0; e < log.epochs.size(); ++e) {
    const auto& m = log.epochs[e];
    os << e << "," << format_double(m.mean_loss.total);
    for (int k = 0; k < scales; ++k)
      os << "," << format_double(m.mean_loss.freq_per_scale[static_cast<size_t>(k)]);
    os << "," << format_double(m.mean_loss.codebook_term) << ","
       << format_double(m.mean_loss.commitment_term) << "," << format_double(m.mean_loss.aux_term)
       << "," << format_double(m.codebook_entropy) << "," << m.revived_codes << "\n";
  }
  return os.str();
}

// Per-scale spectral errors computed from public tokenizer operations
// (independent of the configured training domain).
std::vector<double> spectral_errors(const Sdat& tok, const ActionChunk& chunk) {
  const Mat f0 = tok.encode(chunk);
  const auto qr = tok.quantize_pyramid(f0);
  const Mat target = dct_forward(chunk, tok.config().dct_mode).coeffs;
  std::vector<double> errs;
  for (const Mat& fhat : qr.cumulative) {
    Mat spec = tok.decode_spectrum(fhat).coeffs;
    spec -= target;
    errs.push_back(frobenius_norm(spec));
  }
  return errs;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_gen_data(const RunPaths& rp) {
  RunConfig cfg = load_config_or_default(rp.config_path);
  prepare_out(rp);
  std::vector<env::Demonstration> demos;
  for (size_t p = 0; p < cfg.primitives.size(); ++p) {
    env::TaskSpec spec;
    spec.primitive = cfg.primitives[p];
    spec.region = cfg.region;
    spec.noise_level = cfg.noise_level;
    auto batch = env::gen_demos(spec, cfg.demos_per_primitive, cfg.noise_level,
                                derive_seed(rp.seed, 100 + p));
    demos.insert(demos.end(), batch.begin(), batch.end());
  }
  save_dataset((fs::path(rp.out) / "dataset.mintd").string(), demos, cfg.horizon);
  write_manifest(rp, "gen-data", cfg, {});
  std::cout << "demos=" << demos.size() << "\n";
  return 0;
}

int cmd_train_tokenizer(const RunPaths& rp, const std::string& data_path) {
  RunConfig cfg = load_config_or_default(rp.config_path);
  prepare_out(rp);
  const DatasetFile data = load_dataset(data_path);
  const auto chunks = chunk_dataset(data, cfg);
  std::vector<ActionChunk> train_chunks;
  train_chunks.reserve(chunks.size());
  for (const auto& c : chunks) train_chunks.push_back(c.chunk);

  Sdat tok = Sdat::init(cfg.sdat_config(), derive_seed(rp.seed, 1));
  const auto log = tok.train(train_chunks, cfg.sdat_train_config(derive_seed(rp.seed, 2)));
  tok.save((fs::path(rp.out) / "tokenizer.mntc").string());
  write_file((fs::path(rp.out) / "tokenizer_metrics.csv").string(),
             tokenizer_metrics_csv(log, static_cast<int>(cfg.scales.size())));
  write_manifest(rp, "train-tokenizer", cfg, {data_path});
  std::cout << "chunks=" << train_chunks.size()
            << " final_loss=" << format_double(log.epochs.back().mean_loss.total) << "\n";
  return 0;
}

int cmd_analyze_tokens(const RunPaths& rp, const std::string& data_path,
                       const std::string& tok_path) {
  RunConfig cfg = load_config_or_default(rp.config_path);
  prepare_out(rp);
  const DatasetFile data = load_dataset(data_path);
  const auto chunks = chunk_dataset(data, cfg);
  Sdat tok = Sdat::load_checkpoint(cfg.sdat_config(), tok_path);

  std::ostringstream os;
  os << "chunk,intent_index,behavior_label";
  for (int c = 0; c < cfg.code_dim; ++c) os << ",emb_" << c;
  for (size_t k = 1; k <= cfg.scales.size(); ++k) os << ",spec_err_" << k;
  os << "\n";

  std::vector<int> intents, labels;
  for (size_t i = 0; i < chunks.size(); ++i) {
    const IntentToken intent = extract_intent(chunks[i].chunk, tok);
    intents.push_back(intent.index);
    labels.push_back(chunks[i].behavior_label);
    os << i << "," << intent.index << "," << chunks[i].behavior_label;
    for (double v : intent.embedding) os << "," << format_double(v);
    for (double e : spectral_errors(tok, chunks[i].chunk)) os << "," << format_double(e);
    os << "\n";
  }
  write_file((fs::path(rp.out) / "tokens.csv").string(), os.str());
  const double purity = env::cluster_purity(intents, labels);
  write_file((fs::path(rp.out) / "analysis.txt").string(),
             "cluster_purity=" + format_double(purity) + "\nchunks=" + std::to_string(chunks.size()) +
                 "\n");
  write_manifest(rp, "analyze-tokens", cfg, {data_path, tok_path});
  std::cout << "cluster_purity=" << format_double(purity) << "\n";
  return 0;
}

int cmd_train_policy(const RunPaths& rp, const std::string& data_path, const std::string& tok_path,
                     bool zero_variant) {
  RunConfig cfg = load_config_or_default(rp.config_path);
  prepare_out(rp);
  const DatasetFile data = load_dataset(data_path);
  const auto chunks = chunk_dataset(data, cfg);
  Sdat tok = Sdat::load_checkpoint(cfg.sdat_config(), tok_path);
  const auto examples = env::build_policy_examples(chunks, tok, !zero_variant);

  Policy policy = Policy::init(cfg.policy_config(!zero_variant), &tok, derive_seed(rp.seed, 3));
  const auto log = policy.train(examples, cfg.policy_train_config(derive_seed(rp.seed, 4)));
  policy.save((fs::path(rp.out) / "policy.mntc").string());
  std::ostringstream os;
  os << "epoch,cross_entropy\n";
  for (size_t e = 0; e < log.epoch_ce.size(); ++e)
    os << e << "," << format_double(log.epoch_ce[e]) << "\n";
  write_file((fs::path(rp.out) / "policy_metrics.csv").string(), os.str());
  write_manifest(rp, zero_variant ? "train-policy-zero" : "train-policy", cfg,
                 {data_path, tok_path});
  std::cout << "examples=" << examples.size() << " final_ce=" << format_double(log.epoch_ce.back())
            << "\n";
  return 0;
}

int cmd_rollout(const RunPaths& rp, const std::string& tok_path, const std::string& policy_path,
                bool zero_variant, const std::string& task_name, int episodes_override) {
  RunConfig cfg = load_config_or_default(rp.config_path);
  prepare_out(rp);
  Sdat tok = Sdat::load_checkpoint(cfg.sdat_config(), tok_path);
  Policy policy = Policy::load_checkpoint(cfg.policy_config(!zero_variant), &tok, policy_path);
  const env::Primitive task = env::primitive_from_name(task_name);
  const int episodes = episodes_override > 0 ? episodes_override : cfg.rollout_episodes;
  const env::RolloutConfig rollout_cfg = cfg.rollout_config();

  std::vector<env::EpisodeResult> results(static_cast<size_t>(episodes));
#pragma omp parallel for schedule(dynamic)
  for (int s = 0; s < episodes; ++s) {
    Rng lr(derive_seed(rp.seed, 0xab00 + static_cast<uint64_t>(s)));
    const env::Layout layout = env::sample_layout(cfg.region, task, lr);
    results[static_cast<size_t>(s)] =
        env::rollout(policy, tok, task, zero_variant ? -1 : static_cast<int>(task), layout,
                     rollout_cfg, derive_seed(rp.seed, 0xac00 + static_cast<uint64_t>(s)));
  }
  std::ostringstream os;
  os << "seed,success,steps\n";
  double rate = 0.0;
  for (int s = 0; s < episodes; ++s) {
    os << s << "," << (results[static_cast<size_t>(s)].success ? 1 : 0) << ","
       << results[static_cast<size_t>(s)].steps << "\n";
    rate += results[static_cast<size_t>(s)].success ? 1.0 : 0.0;
  }
  rate /= episodes;
  write_file((fs::path(rp.out) / "rollout.csv").string(), os.str());
  write_file((fs::path(rp.out) / "summary.txt").string(),
             "task=" + task_name + "\nsuccess_rate=" + format_double(rate) +
                 "\nepisodes=" + std::to_string(episodes) + "\n");
  write_manifest(rp, "rollout", cfg, {tok_path, policy_path});
  std::cout << "success_rate=" << format_double(rate) << " episodes=" << episodes << "\n";
  return 0;
}

int cmd_transfer(const RunPaths& rp, const std::string& tok_path, const std::string& policy_path,
                 const std::string& zero_path) {
  RunConfig cfg = load_config_or_default(rp.config_path);
  prepare_out(rp);
  Sdat tok = Sdat::load_checkpoint(cfg.sdat_config(), tok_path);
  Policy mint = Policy::load_checkpoint(cfg.policy_config(true), &tok, policy_path);
  Policy zero = Policy::load_checkpoint(cfg.policy_config(false), &tok, zero_path);

  env::TransferConfig tc;
  tc.seeds_per_split = cfg.transfer_seeds;
  tc.finetune_steps = cfg.finetune_steps;
  tc.finetune_lr = cfg.policy_lr;
  tc.noise_level = cfg.noise_level;
  tc.horizon = cfg.horizon;
  tc.chunk_stride = 1;
  tc.rollout = cfg.rollout_config();
  tc.rollout.max_steps = std::max(tc.rollout.max_steps, 160);

  const env::TransferTable table = env::transfer_eval(tok, mint, zero, tc, rp.seed);

  std::ostringstream os;
  os << "split,mode,success_rate\n";
  for (env::TransferSplit split : {env::TransferSplit::NewTask, env::TransferSplit::NewLayout,
                                   env::TransferSplit::ExtendHorizon})
    for (env::TransferMode mode : {env::TransferMode::Replay, env::TransferMode::Finetune,
                                   env::TransferMode::IntentInjection})
      os << env::transfer_split_name(split) << "," << env::transfer_mode_name(mode) << ","
         << format_double(table.at(split, mode)) << "\n";
  write_file((fs::path(rp.out) / "transfer.csv").string(), os.str());
  write_manifest(rp, "transfer", cfg, {tok_path, policy_path, zero_path});
  std::cout << os.str();
  return 0;
}

int cmd_ablate(const RunPaths& rp, const std::string& data_path, const std::string& study) {
  RunConfig cfg = load_config_or_default(rp.config_path);
  prepare_out(rp);
  const DatasetFile data = load_dataset(data_path);

  if (study == "objectives") {
    const auto chunks = chunk_dataset(data, cfg);
    std::vector<ActionChunk> train_chunks;
    for (const auto& c : chunks) train_chunks.push_back(c.chunk);
    std::vector<int> labels;
    for (const auto& c : chunks) labels.push_back(c.behavior_label);

    std::ostringstream os;
    os << "variant,seed,purity,final_recon\n";
    struct Variant {
      const char* name;
      ReconDomain domain;
      bool scalewise;
    };
    const Variant variants[] = {{"terminal_time", ReconDomain::Time, false},
                                {"terminal_spectral", ReconDomain::Spectral, false},
                                {"scalewise_time", ReconDomain::Time, true},
                                {"scalewise_spectral", ReconDomain::Spectral, true}};
    for (const Variant& v : variants) {
      for (int s = 0; s < cfg.ablate_seeds; ++s) {
        SdatConfig sc = cfg.sdat_config();
        sc.recon_domain = v.domain;
        sc.weights.lambda.assign(cfg.scales.size(), 0.0);
        if (v.scalewise)
          sc.weights.lambda = LossWeights::uniform(static_cast<int>(cfg.scales.size())).lambda;
        else
          sc.weights.lambda.back() = 1.0;
        Sdat tok = Sdat::init(sc, derive_seed(rp.seed, 0x0b1 + static_cast<uint64_t>(s)));
        const auto log =
            tok.train(train_chunks, cfg.sdat_train_config(derive_seed(rp.seed, 0x0c1 + static_cast<uint64_t>(s))));
        std::vector<int> intents;
        for (const auto& c : chunks) intents.push_back(extract_intent(c.chunk, tok).index);
        os << v.name << "," << s << "," << format_double(env::cluster_purity(intents, labels))
           << "," << format_double(log.epochs.back().mean_loss.aux_term) << "\n";
      }
    }
    write_file((fs::path(rp.out) / "ablate_objectives.csv").string(), os.str());
    write_manifest(rp, "ablate", cfg, {data_path});
    std::cout << "study=objectives done\n";
    return 0;
  }

  if (study == "ensemble") {
    const auto chunks = chunk_dataset(data, cfg);
    std::vector<ActionChunk> train_chunks;
    for (const auto& c : chunks) train_chunks.push_back(c.chunk);
    Sdat tok = Sdat::init(cfg.sdat_config(), derive_seed(rp.seed, 1));
    tok.train(train_chunks, cfg.sdat_train_config(derive_seed(rp.seed, 2)));
    Policy policy = Policy::init(cfg.policy_config(true), &tok, derive_seed(rp.seed, 3));
    policy.train(env::build_policy_examples(chunks, tok, true),
                 cfg.policy_train_config(derive_seed(rp.seed, 4)));

    const std::vector<env::Primitive> stages = {env::Primitive::Reach, env::Primitive::Stir,
                                                env::Primitive::PickPlace};
    std::ostringstream os;
    os << "mode,success_rate,mean_stages\n";
    for (EnsembleMode mode :
         {EnsembleMode::None, EnsembleMode::Temporal, EnsembleMode::Action, EnsembleMode::Intent}) {
      env::RolloutConfig rc = cfg.rollout_config();
      rc.ensemble.mode = mode;
      rc.max_steps = std::max(cfg.max_steps, 320);
      std::vector<env::CompositeResult> results(static_cast<size_t>(cfg.rollout_episodes));
#pragma omp parallel for schedule(dynamic)
      for (int s = 0; s < cfg.rollout_episodes; ++s) {
        Rng lr(derive_seed(rp.seed, 0xce00 + static_cast<uint64_t>(s)));
        const env::Layout layout = env::sample_composite_layout(cfg.region, stages, lr);
        results[static_cast<size_t>(s)] = env::rollout_composite(
            policy, tok, stages, layout, rc, derive_seed(rp.seed, 0xcf00 + static_cast<uint64_t>(s)));
      }
      double rate = 0.0, stages_mean = 0.0;
      for (const auto& r : results) {
        rate += r.success ? 1.0 : 0.0;
        stages_mean += r.stages_done;
      }
      os << (mode == EnsembleMode::None       ? "none"
             : mode == EnsembleMode::Temporal ? "temporal"
             : mode == EnsembleMode::Action   ? "action"
                                              : "intent")
         << "," << format_double(rate / cfg.rollout_episodes) << ","
         << format_double(stages_mean / cfg.rollout_episodes) << "\n";
    }
    write_file((fs::path(rp.out) / "ablate_ensemble.csv").string(), os.str());
    write_manifest(rp, "ablate", cfg, {data_path});
    std::cout << "study=ensemble done\n";
    return 0;
  }

  if (study == "scales") {
    const std::vector<std::vector<int>> schedules = {{1}, {1, 4}, {1, 2, 4}, {1, 2, 3, 4},
                                                     {1, 2, 4, 6, 8}};
    std::ostringstream os;
    os << "scales,recon_rmse,purity\n";
    for (const auto& schedule : schedules) {
      RunConfig variant = cfg;
      variant.scales = schedule;
      variant.lambda.clear();
      const auto chunks = chunk_dataset(data, variant);
      std::vector<ActionChunk> train_chunks;
      std::vector<int> labels;
      for (const auto& c : chunks) {
        train_chunks.push_back(c.chunk);
        labels.push_back(c.behavior_label);
      }
      Sdat tok = Sdat::init(variant.sdat_config(), derive_seed(rp.seed, 0x51));
      tok.train(train_chunks, variant.sdat_train_config(derive_seed(rp.seed, 0x52)));
      double se = 0.0;
      std::vector<int> intents;
      for (const auto& c : chunks) {
        const ActionChunk rec = tok.detokenize(tok.tokenize(c.chunk));
        Mat diff = rec.values;
        diff -= c.chunk.values;
        se += frobenius_sq(diff) / static_cast<double>(diff.size());
        intents.push_back(extract_intent(c.chunk, tok).index);
      }
      std::string name;
      for (size_t i = 0; i < schedule.size(); ++i)
        name += (i ? " " : "") + std::to_string(schedule[i]);
      os << name << "," << format_double(std::sqrt(se / static_cast<double>(train_chunks.size())))
         << "," << format_double(env::cluster_purity(intents, labels)) << "\n";
    }
    write_file((fs::path(rp.out) / "ablate_scales.csv").string(), os.str());
    write_manifest(rp, "ablate", cfg, {data_path});
    std::cout << "study=scales done\n";
    return 0;
  }

  if (study == "horizon") {
    std::ostringstream os;
    os << "horizon,recon_rmse,purity,chunks\n";
    for (int h : {8, 16, 32, 64}) {
      RunConfig variant = cfg;
      variant.horizon = h;
      std::vector<env::ChunkWithContext> chunks;
      for (const auto& demo : data.demos) {
        if (demo.actions.rows < h) continue;
        auto cs = env::slide_chunks(demo, h, variant.chunk_stride);
        chunks.insert(chunks.end(), cs.begin(), cs.end());
      }
      if (chunks.empty()) {
        os << h << ",,,0\n";
        continue;
      }
      std::vector<ActionChunk> train_chunks;
      std::vector<int> labels;
      for (const auto& c : chunks) {
        train_chunks.push_back(c.chunk);
        labels.push_back(c.behavior_label);
      }
      Sdat tok = Sdat::init(variant.sdat_config(), derive_seed(rp.seed, 0x61));
      tok.train(train_chunks, variant.sdat_train_config(derive_seed(rp.seed, 0x62)));
      double se = 0.0;
      std::vector<int> intents;
      for (const auto& c : chunks) {
        const ActionChunk rec = tok.detokenize(tok.tokenize(c.chunk));
        Mat diff = rec.values;
        diff -= c.chunk.values;
        se += frobenius_sq(diff) / static_cast<double>(diff.size());
        intents.push_back(extract_intent(c.chunk, tok).index);
      }
      os << h << "," << format_double(std::sqrt(se / static_cast<double>(train_chunks.size())))
         << "," << format_double(env::cluster_purity(intents, labels)) << "," << chunks.size()
         << "\n";
    }
    write_file((fs::path(rp.out) / "ablate_horizon.csv").string(), os.str());
    write_manifest(rp, "ablate", cfg, {data_path});
    std::cout << "study=horizon done\n";
    return 0;
  }

  throw UsageError("unknown ablate study '" + study + "'");
}

// Markdown tables assembled from run outputs found in --input.
int cmd_report(const RunPaths& rp, const std::string& input_dir) {
  RunConfig cfg = load_config_or_default(rp.config_path);
  prepare_out(rp);
  std::ostringstream md;
  md << "# Run report\n";
  bool found = false;

  const auto read_csv = [](const std::string& path) {
    std::vector<std::vector<std::string>> rows;
    std::ifstream is(path);
    std::string line;
    while (std::getline(is, line)) {
      std::vector<std::string> cells;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) cells.push_back(cell);
      if (!cells.empty()) rows.push_back(cells);
    }
    return rows;
  };

  const fs::path transfer_csv = fs::path(input_dir) / "transfer.csv";
  if (fs::exists(transfer_csv)) {
    found = true;
    auto rows = read_csv(transfer_csv.string());
    std::map<std::string, std::map<std::string, double>> table;  // mode -> split -> rate
    for (size_t i = 1; i < rows.size(); ++i)
      if (rows[i].size() == 3) table[rows[i][1]][rows[i][0]] = std::stod(rows[i][2]);
    md << "\n## One-shot transfer\n\n";
    md << "| Method | New Task | New Layout | Extend Horizon | Avg. |\n";
    md << "|---|---|---|---|---|\n";
    for (const char* mode : {"replay", "finetune", "intent_injection"}) {
      auto it = table.find(mode);
      if (it == table.end()) continue;
      const double a = it->second["new_task"], b = it->second["new_layout"],
                   c = it->second["extend_horizon"];
      md << "| " << mode << " | " << format_double(a) << " | " << format_double(b) << " | "
         << format_double(c) << " | " << format_double((a + b + c) / 3.0) << " |\n";
    }
  }

  const fs::path obj_csv = fs::path(input_dir) / "ablate_objectives.csv";
  if (fs::exists(obj_csv)) {
    found = true;
    auto rows = read_csv(obj_csv.string());
    std::map<std::string, std::pair<double, int>> acc;
    for (size_t i = 1; i < rows.size(); ++i)
      if (rows[i].size() >= 3) {
        acc[rows[i][0]].first += std::stod(rows[i][2]);
        acc[rows[i][0]].second += 1;
      }
    md << "\n## Reconstruction objectives\n\n| Objective | Intent cluster purity |\n|---|---|\n";
    for (const char* v : {"terminal_time", "terminal_spectral", "scalewise_time",
                          "scalewise_spectral"}) {
      auto it = acc.find(v);
      if (it == acc.end()) continue;
      md << "| " << v << " | " << format_double(it->second.first / it->second.second) << " |\n";
    }
  }

  const fs::path ens_csv = fs::path(input_dir) / "ablate_ensemble.csv";
  if (fs::exists(ens_csv)) {
    found = true;
    auto rows = read_csv(ens_csv.string());
    md << "\n## Action ensemble\n\n| Mode | Composite success | Mean stages |\n|---|---|---|\n";
    for (size_t i = 1; i < rows.size(); ++i)
      if (rows[i].size() == 3)
        md << "| " << rows[i][0] << " | " << rows[i][1] << " | " << rows[i][2] << " |\n";
  }

  for (const char* name : {"ablate_scales.csv", "ablate_horizon.csv"}) {
    const fs::path p = fs::path(input_dir) / name;
    if (!fs::exists(p)) continue;
    found = true;
    auto rows = read_csv(p.string());
    md << "\n## " << (std::string(name) == "ablate_scales.csv" ? "Scale schedules" : "Chunk horizons")
       << "\n\n|";
    for (const auto& h : rows[0]) md << " " << h << " |";
    md << "\n|";
    for (size_t c = 0; c < rows[0].size(); ++c) md << "---|";
    md << "\n";
    for (size_t i = 1; i < rows.size(); ++i) {
      md << "|";
      for (const auto& cell : rows[i]) md << " " << cell << " |";
      md << "\n";
    }
  }

  if (!found) throw ValidationError("no recognized result files in " + input_dir);
  write_file((fs::path(rp.out) / "report.md").string(), md.str());
  write_manifest(rp, "report", cfg, {});
  std::cout << "report written\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"MINT desk-scale pipeline"};
  app.require_subcommand(1);

  RunPaths rp;
  std::string data_path, tok_path, policy_path, zero_path, task_name = "reach";
  std::string study = "objectives", input_dir;
  bool zero_variant = false;
  int episodes = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", rp.config_path, "run configuration file");
    sub->add_option("--seed", rp.seed, "run seed")->default_val(0);
    sub->add_option("--out", rp.out, "output directory")->required();
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate scripted demonstrations");
  add_common(gen);

  CLI::App* ttok = app.add_subcommand("train-tokenizer", "train the action tokenizer");
  add_common(ttok);
  ttok->add_option("--data", data_path, "MINTD dataset")->required();

  CLI::App* analyze = app.add_subcommand("analyze-tokens", "export intent tokens and errors");
  add_common(analyze);
  analyze->add_option("--data", data_path, "MINTD dataset")->required();
  analyze->add_option("--tokenizer", tok_path, "tokenizer checkpoint")->required();

  CLI::App* tpol = app.add_subcommand("train-policy", "train the next-scale policy");
  add_common(tpol);
  tpol->add_option("--data", data_path, "MINTD dataset")->required();
  tpol->add_option("--tokenizer", tok_path, "tokenizer checkpoint")->required();
  tpol->add_flag("--zero", zero_variant, "train the language-free variant");

  CLI::App* roll = app.add_subcommand("rollout", "closed-loop evaluation");
  add_common(roll);
  roll->add_option("--tokenizer", tok_path, "tokenizer checkpoint")->required();
  roll->add_option("--policy", policy_path, "policy checkpoint")->required();
  roll->add_flag("--zero", zero_variant, "policy is the language-free variant");
  roll->add_option("--task", task_name, "primitive to evaluate");
  roll->add_option("--episodes", episodes, "episode count override");

  CLI::App* trans = app.add_subcommand("transfer", "one-shot transfer evaluation");
  add_common(trans);
  trans->add_option("--tokenizer", tok_path, "tokenizer checkpoint")->required();
  trans->add_option("--policy", policy_path, "task-conditioned policy checkpoint")->required();
  trans->add_option("--zero-policy", zero_path, "language-free policy checkpoint")->required();

  CLI::App* abl = app.add_subcommand("ablate", "run an ablation study");
  add_common(abl);
  abl->add_option("--data", data_path, "MINTD dataset")->required();
  abl->add_option("--study", study, "objectives|ensemble|scales|horizon");

  CLI::App* rep = app.add_subcommand("report", "render markdown tables from run outputs");
  add_common(rep);
  rep->add_option("--input", input_dir, "directory with result CSVs")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help
      std::cout << app.help();
      return 0;
    }
    std::cerr << "error: usage: " << e.what() << "\n";
    return 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(rp);
    if (ttok->parsed()) return cmd_train_tokenizer(rp, data_path);
    if (analyze->parsed()) return cmd_analyze_tokens(rp, data_path, tok_path);
    if (tpol->parsed()) return cmd_train_policy(rp, data_path, tok_path, zero_variant);
    if (roll->parsed())
      return cmd_rollout(rp, tok_path, policy_path, zero_variant, task_name, episodes);
    if (trans->parsed()) return cmd_transfer(rp, tok_path, policy_path, zero_path);
    if (abl->parsed()) return cmd_ablate(rp, data_path, study);
    if (rep->parsed()) return cmd_report(rp, input_dir);
    throw UsageError("no subcommand given");
  } catch (const IoError& e) {
    std::cerr << "error: " << e.category() << ": " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.category() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace mint
