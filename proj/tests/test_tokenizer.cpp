#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "mint/kernels.hpp"
#include "mint/tokenizer.hpp"

using namespace mint;

namespace {

ActionChunk random_chunk(int h, int d, std::vector<int> gripper, Rng& rng) {
  ActionChunk c;
  c.values = Mat(h, d);
  for (double& v : c.values.data) v = rng.uniform(-1.0, 1.0);
  c.gripper_dims = std::move(gripper);
  for (int g : c.gripper_dims)
    for (int t = 0; t < h; ++t) c.values(t, g) = rng.uniform01() < 0.5 ? 0.0 : 1.0;
  return c;
}

SdatConfig small_config() {
  SdatConfig cfg;
  cfg.horizon = 8;
  cfg.action_dim = 3;
  cfg.gripper_dims = {2};
  cfg.scales = {1, 2};
  cfg.codebook_size = 16;
  cfg.code_dim = 8;
  cfg.stem_channels = 4;
  return cfg;
}

// Conv view over a stored phi parameter so the replay can run the
// projector without touching Sdat internals.
nn::Conv1d phi_view(const nn::ParameterStore& store, int k, int channels) {
  nn::Conv1d conv;
  conv.k = 3;
  conv.cin = conv.cout = channels;
  conv.stride = 1;
  conv.groups = 1;
  auto& st = const_cast<nn::ParameterStore&>(store);
  conv.w = &st.get("quant.phi" + std::to_string(k) + ".w");
  conv.b = &st.get("quant.phi" + std::to_string(k) + ".b");
  return conv;
}

// Independent step-by-step replay of the multi-scale residual quantization
// loop, used as the fidelity oracle.
struct ReplayResult {
  std::vector<std::vector<int>> tokens;
  std::vector<Mat> fhat, resid;
};

ReplayResult replay_quantize(const Sdat& tok, const Mat& f0) {
  const auto& cfg = tok.config();
  const int latent = cfg.scales.back();
  ReplayResult out;
  Mat f = f0;
  Mat fhat(latent, cfg.code_dim);
  for (size_t k = 0; k < cfg.scales.size(); ++k) {
    Mat x = nn::interpolate_temporal(f, cfg.scales[k]);
    std::vector<int> s;
    kernels::nearest_codes_serial(x, tok.codebook().vectors, s);
    Mat z(cfg.scales[k], cfg.code_dim);
    for (int r = 0; r < cfg.scales[k]; ++r)
      std::copy(tok.codebook().vectors.row(s[static_cast<size_t>(r)]),
                tok.codebook().vectors.row(s[static_cast<size_t>(r)]) + cfg.code_dim, z.row(r));
    Mat u = nn::interpolate_temporal(z, latent);
    nn::Conv1d phi = phi_view(tok.params(), static_cast<int>(k), cfg.code_dim);
    Mat p = phi.forward(u);
    f -= p;
    fhat += p;
    out.tokens.push_back(s);
    out.fhat.push_back(fhat);
    out.resid.push_back(f);
  }
  return out;
}

bool bitwise_equal(const Mat& a, const Mat& b) {
  if (!a.same_shape(b)) return false;
  for (size_t i = 0; i < a.data.size(); ++i)
    if (a.data[i] != b.data[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("schedule validation") {
  const ScaleSchedule no_intent{{2, 4}};
  const ScaleSchedule not_increasing{{1, 4, 4}};
  const ScaleSchedule empty{{}};
  CHECK_THROWS_AS(no_intent.validate(), ValidationError);
  CHECK_THROWS_AS(not_increasing.validate(), ValidationError);
  CHECK_THROWS_AS(empty.validate(), ValidationError);
  ScaleSchedule ok{{1, 2, 4}};
  ok.validate();
  CHECK(ok.latent_len() == 4);
}

TEST_CASE("ema update: empty assignments leave fresh vectors unchanged") {
  Rng rng(31);
  Codebook cb = Codebook::init(4, 3, 0.99, rng);
  const Mat before = cb.vectors;
  ema_update(cb, {});
  CHECK(bitwise_equal(cb.vectors, before));
}

TEST_CASE("ema update: decay 0 jumps to the assigned mean") {
  Rng rng(32);
  Codebook cb = Codebook::init(4, 2, 0.5, rng);
  cb.decay = 1e-300;  // effectively zero while staying in (0,1)
  std::vector<CodeAssignment> a;
  a.push_back({1, {1.0, 3.0}});
  a.push_back({1, {3.0, 5.0}});
  ema_update(cb, a);
  CHECK(cb.vectors(1, 0) == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(cb.vectors(1, 1) == doctest::Approx(4.0).epsilon(1e-8));
}

TEST_CASE("ema update matches the hand-evaluated recurrence at decay 0.99") {
  Rng rng(33);
  Codebook cb = Codebook::init(2, 2, 0.99, rng);
  // Pre-load statistics so the recurrence is non-trivial.
  cb.ema_counts = {2.0, 0.0};
  cb.ema_sums(0, 0) = 0.4;
  cb.ema_sums(0, 1) = -0.2;
  std::vector<CodeAssignment> a;
  a.push_back({0, {1.0, 2.0}});
  a.push_back({0, {2.0, 2.0}});
  ema_update(cb, a);

  const double g = 0.99;
  const double counts = g * 2.0 + (1 - g) * 2.0;
  const double sum0 = g * 0.4 + (1 - g) * 3.0;
  const double sum1 = g * (-0.2) + (1 - g) * 4.0;
  CHECK(cb.ema_counts[0] == doctest::Approx(counts).epsilon(1e-12));
  CHECK(cb.vectors(0, 0) == doctest::Approx(sum0 / (counts + cb.eps)).epsilon(1e-12));
  CHECK(cb.vectors(0, 1) == doctest::Approx(sum1 / (counts + cb.eps)).epsilon(1e-12));
  // Unassigned code: counts stay zero, vector untouched.
  CHECK(cb.ema_counts[1] == 0.0);
}

TEST_CASE("pyramid line format round trips") {
  TokenPyramid p;
  p.schedule = {1, 2, 4};
  p.maps = {{5}, {1, 2}, {0, 1, 2, 3}};
  const std::string line = p.to_line();
  CHECK(line == "schedule=1,2,4; s1=5; s2=1,2; s3=0,1,2,3");
  TokenPyramid q = TokenPyramid::from_line(line);
  CHECK(q.schedule == p.schedule);
  CHECK(q.maps == p.maps);
  CHECK_THROWS_AS(TokenPyramid::from_line("s1=3"), ValidationError);
}

TEST_CASE("encode produces the configured latent shape deterministically") {
  SdatConfig cfg;  // defaults: H=16, scales (1,2,4), C=32
  Sdat tok = Sdat::init(cfg, 42);
  Rng rng(34);
  ActionChunk chunk = random_chunk(16, 3, {2}, rng);
  Mat f = tok.encode(chunk);
  CHECK(f.rows == 4);
  CHECK(f.cols == 32);
  Mat f2 = tok.encode(chunk);
  CHECK(bitwise_equal(f, f2));

  ActionChunk bad = random_chunk(8, 3, {2}, rng);
  CHECK_THROWS_AS(tok.encode(bad), ValidationError);

  auto qr = tok.quantize_pyramid(f);
  REQUIRE(qr.pyramid.maps.size() == 3);
  CHECK(qr.pyramid.maps[0].size() == 1);
  CHECK(qr.pyramid.maps[1].size() == 2);
  CHECK(qr.pyramid.maps[2].size() == 4);
}

TEST_CASE("nearest-neighbor selection is forced by a two-code codebook") {
  SdatConfig cfg = small_config();
  cfg.scales = {1};
  cfg.horizon = 8;
  cfg.codebook_size = 2;
  Sdat tok = Sdat::init(cfg, 7);
  Mat cb(2, cfg.code_dim);
  for (int c = 0; c < cfg.code_dim; ++c) cb(1, c) = 1.0;  // row 0 zeros, row 1 ones
  tok.set_codebook_vectors(cb);

  Mat f0(1, cfg.code_dim, 1.0);
  auto qr = tok.quantize_pyramid(f0);
  CHECK(qr.pyramid.maps[0][0] == 1);
  // Identity-initialized projector: residual collapses to zero.
  CHECK(frobenius_norm(qr.residuals.back()) < 1e-12);
}

TEST_CASE("quantize matches the step-by-step replay exactly") {
  SdatConfig cfg;  // H=16, scales (1,2,4)
  Sdat tok = Sdat::init(cfg, 1);
  Rng rng(35);
  for (int trial = 0; trial < 25; ++trial) {
    Mat f0(4, 32);
    for (double& v : f0.data) v = rng.uniform(-1.0, 1.0);
    auto qr = tok.quantize_pyramid(f0);
    auto ref = replay_quantize(tok, f0);
    REQUIRE(qr.pyramid.maps == ref.tokens);
    for (size_t k = 0; k < ref.fhat.size(); ++k) {
      CHECK(bitwise_equal(qr.cumulative[k], ref.fhat[k]));
      CHECK(bitwise_equal(qr.residuals[k], ref.resid[k]));
    }
    // Telescoping identity.
    Mat sum = qr.cumulative.back();
    sum += qr.residuals.back();
    CHECK(max_abs_diff(sum, f0) < 1e-9);
  }
}

TEST_CASE("capacity is monotone when the codebook contains the zero code") {
  SdatConfig cfg = small_config();
  cfg.scales = {1, 2};
  Sdat tok = Sdat::init(cfg, 3);
  Rng rng(36);
  Mat cb(cfg.codebook_size, cfg.code_dim);
  for (int v = 1; v < cfg.codebook_size; ++v)
    for (int c = 0; c < cfg.code_dim; ++c) cb(v, c) = rng.uniform(-1.0, 1.0);
  tok.set_codebook_vectors(cb);  // row 0 stays all-zero

  for (int trial = 0; trial < 10; ++trial) {
    Mat f0(2, cfg.code_dim);
    for (double& v : f0.data) v = rng.uniform(-1.0, 1.0);
    auto qr = tok.quantize_pyramid(f0);
    double prev = frobenius_norm(f0);
    for (size_t k = 0; k < qr.cumulative.size(); ++k) {
      Mat diff = f0;
      diff -= qr.cumulative[k];
      const double err = frobenius_norm(diff);
      CHECK(err <= prev + 1e-9);
      prev = err;
    }
  }
}

TEST_CASE("decode_spectrum is exactly the transform of decode_actions") {
  SdatConfig cfg = small_config();
  Sdat tok = Sdat::init(cfg, 4);
  Rng rng(37);
  Mat fhat(2, cfg.code_dim);
  for (double& v : fhat.data) v = rng.uniform(-1.0, 1.0);
  Spectrum a = tok.decode_spectrum(fhat);
  Spectrum b = dct_forward(tok.decode_actions(fhat), cfg.dct_mode);
  CHECK(bitwise_equal(a.coeffs, b.coeffs));

  ActionChunk chunk = tok.decode_actions(fhat);
  CHECK(chunk.values.rows == cfg.horizon);
  CHECK(chunk.values.cols == cfg.action_dim);
  for (int t = 0; t < cfg.horizon; ++t) {
    CHECK(chunk.values(t, 2) >= 0.0);
    CHECK(chunk.values(t, 2) <= 1.0);
  }
}

TEST_CASE("detokenize equals the internal full-scale reconstruction") {
  SdatConfig cfg = small_config();
  Sdat tok = Sdat::init(cfg, 5);
  Rng rng(38);
  for (int trial = 0; trial < 20; ++trial) {
    ActionChunk chunk = random_chunk(cfg.horizon, cfg.action_dim, cfg.gripper_dims, rng);
    const Mat f0 = tok.encode(chunk);
    auto qr = tok.quantize_pyramid(f0);
    ActionChunk via_tokens = tok.detokenize(qr.pyramid);
    ActionChunk internal = tok.decode_actions(qr.cumulative.back());
    CHECK(bitwise_equal(via_tokens.values, internal.values));
  }

  TokenPyramid bad;
  bad.schedule = cfg.scales;
  bad.maps = {{cfg.codebook_size}, {0, 0}};
  CHECK_THROWS_AS(tok.detokenize(bad), ValidationError);
}

TEST_CASE("loss breakdown satisfies its composition invariant") {
  SdatConfig cfg = small_config();
  Sdat tok = Sdat::init(cfg, 6);
  Rng rng(39);
  ActionChunk chunk = random_chunk(cfg.horizon, cfg.action_dim, cfg.gripper_dims, rng);
  LossWeights w;
  w.lambda = {0.7, 0.3};
  w.alpha = 1.3;
  w.commitment_weight = 0.25;
  LossBreakdown bd = tok.sdat_loss(chunk, w);

  double expect = bd.codebook_term + w.commitment_weight * bd.commitment_term + w.alpha * bd.aux_term;
  for (size_t k = 0; k < bd.freq_per_scale.size(); ++k) expect += w.lambda[k] * bd.freq_per_scale[k];
  CHECK(std::abs(bd.total - expect) < 1e-9);

  // Term-by-term oracle from raw definitions.
  const Mat f0 = tok.encode(chunk);
  auto qr = tok.quantize_pyramid(f0);
  for (size_t k = 0; k < qr.cumulative.size(); ++k) {
    ActionChunk rec = tok.decode_actions(qr.cumulative[k]);
    Mat target = dct_forward(chunk, cfg.dct_mode).coeffs;
    Mat got = dct_forward(rec, cfg.dct_mode).coeffs;
    got -= target;
    CHECK(std::abs(bd.freq_per_scale[k] - frobenius_norm(got)) < 1e-9);
  }
  Mat ldiff = f0;
  ldiff -= qr.cumulative.back();
  CHECK(std::abs(bd.codebook_term - frobenius_sq(ldiff)) < 1e-9);
  ActionChunk rec = tok.decode_actions(qr.cumulative.back());
  double mae = 0.0;
  for (size_t i = 0; i < rec.values.data.size(); ++i)
    mae += std::abs(rec.values.data[i] - chunk.values.data[i]);
  mae /= static_cast<double>(rec.values.data.size());
  CHECK(std::abs(bd.aux_term - mae) < 1e-9);
}

TEST_CASE("identity quantizer collapses VQ terms to zero") {
  SdatConfig cfg = small_config();
  cfg.identity_quantizer = true;
  Sdat tok = Sdat::init(cfg, 8);
  Rng rng(40);
  ActionChunk chunk = random_chunk(cfg.horizon, cfg.action_dim, cfg.gripper_dims, rng);
  LossBreakdown bd = tok.sdat_loss(chunk, cfg.weights);
  // f-hat telescopes back to f up to floating-point rounding.
  CHECK(bd.codebook_term < 1e-30);
  CHECK(bd.commitment_term < 1e-30);
}

TEST_CASE("straight-through contract: full loss gradient matches finite differences") {
  SdatConfig cfg = small_config();
  cfg.identity_quantizer = true;  // quantizer replaced by identity on the same latents
  Sdat tok = Sdat::init(cfg, 9);
  Rng rng(41);
  ActionChunk chunk = random_chunk(cfg.horizon, cfg.action_dim, cfg.gripper_dims, rng);
  LossWeights w;
  w.lambda = {0.6, 0.4};
  w.alpha = 0.0;  // the L1 term is not differentiable at zero crossings
  w.commitment_weight = 0.25;

  auto loss_only = [&]() { return tok.sdat_loss(chunk, w).total; };
  auto loss_with_grad = [&]() { return tok.loss_and_gradients(chunk, w, 1.0, nullptr, nullptr).total; };
  auto report = nn::grad_check(tok.params(), loss_with_grad, loss_only, 1e-4, rng, 300);
  INFO("worst: ", report.worst_param, " rel ", report.max_rel_error);
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("gradients stay finite with the real quantizer and aux term") {
  SdatConfig cfg = small_config();
  Sdat tok = Sdat::init(cfg, 10);
  Rng rng(42);
  ActionChunk chunk = random_chunk(cfg.horizon, cfg.action_dim, cfg.gripper_dims, rng);
  tok.params().zero_grads();
  auto bd = tok.loss_and_gradients(chunk, cfg.weights, 1.0, nullptr, nullptr);
  CHECK(std::isfinite(bd.total));
  for (const auto& name : tok.params().names()) {
    for (double g : tok.params().get(name).grad.data) CHECK(std::isfinite(g));
  }
}

TEST_CASE("one-chunk overfit drives the loss near zero and training is deterministic") {
  SdatConfig cfg = small_config();
  cfg.codebook_size = 8;
  Sdat tok = Sdat::init(cfg, 11);
  ActionChunk chunk;
  chunk.values = Mat(cfg.horizon, cfg.action_dim);
  chunk.gripper_dims = cfg.gripper_dims;
  for (int t = 0; t < cfg.horizon; ++t) {
    chunk.values(t, 0) = 0.6 * std::cos(0.4 * t);
    chunk.values(t, 1) = -0.4 + 0.08 * t;
    chunk.values(t, 2) = t >= 5 ? 1.0 : 0.0;
  }
  std::vector<ActionChunk> data = {chunk};

  SdatTrainConfig tc;
  tc.opt.learning_rate = 1e-3;
  tc.opt.batch_size = 1;
  tc.opt.weight_decay = 0.0;
  tc.epochs = 4000;
  tc.seed = 77;
  auto log = tok.train(data, tc);
  CHECK(log.epochs.back().mean_loss.total < 1e-2);

  Sdat tok2 = Sdat::init(cfg, 11);
  auto log2 = tok2.train(data, tc);
  REQUIRE(log2.epochs.size() == log.epochs.size());
  for (size_t e = 0; e < log.epochs.size(); e += 100) {
    CHECK(log.epochs[e].mean_loss.total == log2.epochs[e].mean_loss.total);
    CHECK(log.epochs[e].codebook_entropy == log2.epochs[e].codebook_entropy);
  }
}

TEST_CASE("checkpoint round trip preserves tokenization") {
  namespace fs = std::filesystem;
  SdatConfig cfg = small_config();
  Sdat tok = Sdat::init(cfg, 12);
  Rng rng(44);
  // Perturb the codebook so the save path carries non-initial EMA state.
  std::vector<CodeAssignment> a;
  a.push_back({3, std::vector<double>(static_cast<size_t>(cfg.code_dim), 0.25)});
  Codebook cb = tok.codebook();
  ema_update(cb, a);
  tok.set_codebook_vectors(cb.vectors);

  const std::string path = (fs::temp_directory_path() / "mint_tok_test.mntc").string();
  tok.save(path);
  Sdat loaded = Sdat::load_checkpoint(cfg, path);
  ActionChunk chunk = random_chunk(cfg.horizon, cfg.action_dim, cfg.gripper_dims, rng);
  // f32 serialization perturbs weights, so compare tokens from the loaded
  // model against itself for determinism and shapes.
  TokenPyramid p1 = loaded.tokenize(chunk);
  TokenPyramid p2 = loaded.tokenize(chunk);
  CHECK(p1.maps == p2.maps);
  fs::remove(path);
}
