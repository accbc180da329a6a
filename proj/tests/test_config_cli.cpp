#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mint/cli.hpp"
#include "mint/config.hpp"
#include "mint/dataset.hpp"

using namespace mint;
namespace fs = std::filesystem;

namespace {

std::string read_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv = {"mint"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Small config so CLI smoke runs stay fast.
std::string tiny_config_text() {
  RunConfig cfg;
  cfg.codebook_size = 32;
  cfg.code_dim = 8;
  cfg.stem_channels = 4;
  cfg.policy_blocks = 1;
  cfg.policy_width = 32;
  cfg.policy_heads = 2;
  cfg.policy_mlp_dim = 64;
  cfg.demos_per_primitive = 2;
  cfg.chunk_stride = 4;
  cfg.tokenizer_epochs = 2;
  cfg.policy_epochs = 1;
  cfg.rollout_episodes = 2;
  cfg.max_steps = 10;
  cfg.temperature = 0.0;
  return cfg.canonical_text();
}

}  // namespace

TEST_CASE("config canonical text round trips byte-identically") {
  RunConfig defaults;
  const std::string text = defaults.canonical_text();
  RunConfig parsed = RunConfig::parse(text);
  CHECK(parsed == defaults);
  CHECK(parsed.canonical_text() == text);

  RunConfig modified;
  modified.scales = {1, 2, 3, 4};
  modified.lambda = {0.5, 0.25, 0.125, 0.125};
  modified.ensemble_mode = EnsembleMode::Temporal;
  modified.noise_level = 0.075;
  modified.primitives = {env::Primitive::Reach, env::Primitive::Stir};
  modified.finetune_steps = {5, 25};
  const std::string text2 = modified.canonical_text();
  RunConfig parsed2 = RunConfig::parse(text2);
  CHECK(parsed2 == modified);
  CHECK(parsed2.canonical_text() == text2);
}

TEST_CASE("config parser rejects unknown keys, sections and bad values") {
  CHECK_THROWS_AS(RunConfig::parse("[tokenizer]\nmystery = 1\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("[surprise]\nhorizon = 16\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("horizon = 16\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("[tokenizer]\nhorizon = banana\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("[tokenizer]\nhorizon\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("[env]\nregion = moon\n"), ConfigError);
  // Comments and blank lines are fine.
  RunConfig ok = RunConfig::parse("# comment\n\n[tokenizer]\nhorizon = 16\n");
  CHECK(ok.horizon == 16);
}

TEST_CASE("checkpoint format matches the golden file bit for bit") {
  nn::ParameterStore ps;
  auto& p = ps.create("w", {2, 2});
  p.value(0, 0) = 1.5;
  p.value(0, 1) = -2.0;
  p.value(1, 0) = 0.25;
  p.value(1, 1) = 8.0;
  const fs::path tmp = fs::temp_directory_path() / "mint_golden_check.mntc";
  ps.save(tmp.string());
  CHECK(read_bytes(tmp.string()) == read_bytes(std::string(MINT_SOURCE_DIR) + "/tests/golden/checkpoint_v1.mntc"));

  nn::ParameterStore loaded;
  loaded.load(std::string(MINT_SOURCE_DIR) + "/tests/golden/checkpoint_v1.mntc");
  CHECK(loaded.get("w").value(0, 0) == 1.5);
  CHECK(loaded.get("w").value(1, 1) == 8.0);
  fs::remove(tmp);
}

TEST_CASE("dataset format matches the golden file bit for bit") {
  env::Demonstration d;
  d.states = Mat(2, env::kStateDim);
  d.actions = Mat(2, env::kActionDim);
  for (int t = 0; t < 2; ++t) {
    for (int i = 0; i < env::kStateDim; ++i) d.states(t, i) = 0.125 * (t * env::kStateDim + i);
    for (int i = 0; i < env::kActionDim; ++i)
      d.actions(t, i) = -0.5 + 0.25 * (t * env::kActionDim + i);
  }
  d.behavior_label = 3;
  d.layout_id = 7;
  d.seed = 0x0102030405060708ULL;
  CHECK(serialize_dataset({d}, 16) == read_bytes(std::string(MINT_SOURCE_DIR) + "/tests/golden/dataset_v1.mintd"));

  DatasetFile parsed = parse_dataset(read_bytes(std::string(MINT_SOURCE_DIR) + "/tests/golden/dataset_v1.mintd"));
  CHECK(parsed.horizon == 16);
  REQUIRE(parsed.demos.size() == 1);
  CHECK(parsed.demos[0].behavior_label == 3);
  CHECK(parsed.demos[0].layout_id == 7);
  CHECK(parsed.demos[0].seed == 0x0102030405060708ULL);
  CHECK(parsed.demos[0].actions(0, 0) == -0.5);
}

TEST_CASE("dataset round trip preserves generated demos at f32 precision") {
  env::TaskSpec spec;
  spec.primitive = env::Primitive::Reach;
  auto demos = env::gen_demos(spec, 2, 0.05, 5);
  const std::string bytes = serialize_dataset(demos, 16);
  DatasetFile parsed = parse_dataset(bytes);
  REQUIRE(parsed.demos.size() == demos.size());
  for (size_t i = 0; i < demos.size(); ++i) {
    for (size_t j = 0; j < demos[i].actions.data.size(); ++j)
      CHECK(parsed.demos[i].actions.data[j] ==
            static_cast<double>(static_cast<float>(demos[i].actions.data[j])));
  }
  CHECK_THROWS_AS(parse_dataset("BOGUS header\n"), ValidationError);
}

TEST_CASE("gen-data is byte deterministic and the full pipeline wires together") {
  const fs::path root = fresh_dir("mint_cli_smoke");
  const std::string cfg_path = (root / "config.ini").string();
  {
    std::ofstream os(cfg_path);
    os << tiny_config_text();
  }

  const std::string d1 = (root / "data1").string();
  const std::string d2 = (root / "data2").string();
  CHECK(run({"gen-data", "--config", cfg_path, "--seed", "7", "--out", d1}) == 0);
  CHECK(run({"gen-data", "--config", cfg_path, "--seed", "7", "--out", d2}) == 0);
  CHECK(read_bytes(d1 + "/dataset.mintd") == read_bytes(d2 + "/dataset.mintd"));
  CHECK(read_bytes(d1 + "/manifest.txt") == read_bytes(d2 + "/manifest.txt"));

  const std::string tok_dir = (root / "tok").string();
  CHECK(run({"train-tokenizer", "--config", cfg_path, "--seed", "7", "--out", tok_dir, "--data",
             d1 + "/dataset.mintd"}) == 0);
  CHECK(fs::exists(tok_dir + "/tokenizer.mntc"));
  const std::string metrics = read_bytes(tok_dir + "/tokenizer_metrics.csv");
  CHECK(metrics.rfind("epoch,loss_total,loss_freq_1,loss_freq_2,loss_freq_3,loss_codebook", 0) == 0);

  const std::string an_dir = (root / "analysis").string();
  CHECK(run({"analyze-tokens", "--config", cfg_path, "--seed", "7", "--out", an_dir, "--data",
             d1 + "/dataset.mintd", "--tokenizer", tok_dir + "/tokenizer.mntc"}) == 0);
  const std::string tokens_csv = read_bytes(an_dir + "/tokens.csv");
  CHECK(tokens_csv.rfind("chunk,intent_index,behavior_label,emb_0", 0) == 0);
  CHECK(tokens_csv.find("spec_err_3") != std::string::npos);

  const std::string pol_dir = (root / "policy").string();
  CHECK(run({"train-policy", "--config", cfg_path, "--seed", "7", "--out", pol_dir, "--data",
             d1 + "/dataset.mintd", "--tokenizer", tok_dir + "/tokenizer.mntc"}) == 0);
  CHECK(fs::exists(pol_dir + "/policy.mntc"));

  const std::string roll_dir = (root / "rollout").string();
  CHECK(run({"rollout", "--config", cfg_path, "--seed", "7", "--out", roll_dir, "--tokenizer",
             tok_dir + "/tokenizer.mntc", "--policy", pol_dir + "/policy.mntc", "--task", "reach",
             "--episodes", "2"}) == 0);
  const std::string roll_csv = read_bytes(roll_dir + "/rollout.csv");
  CHECK(roll_csv.rfind("seed,success,steps", 0) == 0);

  fs::remove_all(root);
}

TEST_CASE("cli error contract: exit codes and single-line errors") {
  const fs::path root = fresh_dir("mint_cli_errors");
  // Missing input file -> io failure, exit 2.
  CHECK(run({"train-tokenizer", "--out", (root / "x").string(), "--data",
             (root / "missing.mintd").string()}) == 2);
  // Bad config -> exit 1.
  const std::string bad_cfg = (root / "bad.ini").string();
  {
    std::ofstream os(bad_cfg);
    os << "[tokenizer]\nmystery = 1\n";
  }
  CHECK(run({"gen-data", "--config", bad_cfg, "--out", (root / "y").string()}) == 1);
  // Unknown flag -> usage, exit 1.
  CHECK(run({"gen-data", "--out", (root / "z").string(), "--nonsense"}) == 1);
  fs::remove_all(root);
}

TEST_CASE("manifest hash tracks config and inputs") {
  const fs::path root = fresh_dir("mint_cli_manifest");
  const std::string cfg_path = (root / "config.ini").string();
  {
    std::ofstream os(cfg_path);
    os << tiny_config_text();
  }
  const std::string a = (root / "a").string();
  const std::string b = (root / "b").string();
  CHECK(run({"gen-data", "--config", cfg_path, "--seed", "1", "--out", a}) == 0);
  // Change one config key; the manifest hash must change.
  {
    std::ofstream os(cfg_path);
    std::string text = tiny_config_text();
    const size_t pos = text.find("noise_level = ");
    text.replace(pos, std::string("noise_level = 0.05").size(), "noise_level = 0.06");
    os << text;
  }
  CHECK(run({"gen-data", "--config", cfg_path, "--seed", "1", "--out", b}) == 0);
  const std::string ma = read_bytes(a + "/manifest.txt");
  const std::string mb = read_bytes(b + "/manifest.txt");
  CHECK(ma != mb);
  CHECK(ma.find("config_hash=") != std::string::npos);
  fs::remove_all(root);
}
