#include "mint/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mint/kernels.hpp"

namespace mint {

namespace {

nn::Gelu gelu;

bool is_power_of_two(int x) { return x > 0 && (x & (x - 1)) == 0; }

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) throw ValidationError("pyramid record: empty index");
    out.push_back(std::stoi(item));
  }
  return out;
}

Mat sign_mat(const Mat& a, const Mat& b) {  // sign(a - b)
  Mat s(a.rows, a.cols);
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    s.data[i] = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
  }
  return s;
}

Mat motion_submatrix(const Mat& values, const std::vector<int>& motion_cols) {
  Mat sub(values.rows, static_cast<int>(motion_cols.size()));
  for (int t = 0; t < values.rows; ++t)
    for (size_t j = 0; j < motion_cols.size(); ++j)
      sub(t, static_cast<int>(j)) = values(t, motion_cols[j]);
  return sub;
}

}  // namespace

// ---------------------------------------------------------------------------
// Schedule / codebook / pyramid
// ---------------------------------------------------------------------------

void ScaleSchedule::validate() const {
  if (resolutions.empty()) throw ValidationError("schedule: no scales");
  if (resolutions.front() != 1) throw ValidationError("schedule: l_1 must be 1");
  for (size_t i = 0; i < resolutions.size(); ++i) {
    if (resolutions[i] <= 0) throw ValidationError("schedule: non-positive resolution");
    if (i > 0 && resolutions[i] <= resolutions[i - 1])
      throw ValidationError("schedule: resolutions must be strictly increasing");
  }
}

Codebook Codebook::init(int vocab, int dim, double decay, Rng& rng) {
  if (vocab <= 0 || dim <= 0) throw ValidationError("codebook: sizes must be positive");
  if (!(decay > 0.0 && decay < 1.0)) throw ValidationError("codebook: decay must be in (0,1)");
  Codebook cb;
  cb.vectors = Mat(vocab, dim);
  const double s = 1.0 / std::sqrt(static_cast<double>(dim));
  for (double& v : cb.vectors.data) v = rng.uniform(-s, s);
  cb.ema_sums = Mat(vocab, dim);
  cb.ema_counts.assign(static_cast<size_t>(vocab), 0.0);
  cb.decay = decay;
  return cb;
}

void Codebook::validate() const {
  if (vectors.rows == 0) throw ValidationError("codebook: empty");
  if (!all_finite(vectors)) throw ValidationError("codebook: non-finite code vector");
  for (double c : ema_counts)
    if (c < 0.0) throw ValidationError("codebook: negative EMA count");
}

void ema_update(Codebook& cb, const std::vector<CodeAssignment>& assignments) {
  const int vocab = cb.size();
  const int dim = cb.dim();
  std::vector<double> n(static_cast<size_t>(vocab), 0.0);
  Mat sums(vocab, dim);
  for (const CodeAssignment& a : assignments) {
    if (a.code < 0 || a.code >= vocab) throw ValidationError("ema_update: code index out of range");
    if (static_cast<int>(a.row.size()) != dim)
      throw ValidationError("ema_update: latent row dimension mismatch");
    n[static_cast<size_t>(a.code)] += 1.0;
    for (int c = 0; c < dim; ++c) sums(a.code, c) += a.row[static_cast<size_t>(c)];
  }
  const double g = cb.decay;
  for (int v = 0; v < vocab; ++v) {
    cb.ema_counts[static_cast<size_t>(v)] =
        g * cb.ema_counts[static_cast<size_t>(v)] + (1.0 - g) * n[static_cast<size_t>(v)];
    for (int c = 0; c < dim; ++c) cb.ema_sums(v, c) = g * cb.ema_sums(v, c) + (1.0 - g) * sums(v, c);
    if (cb.ema_counts[static_cast<size_t>(v)] > 0.0) {
      const double denom = cb.ema_counts[static_cast<size_t>(v)] + cb.eps;
      for (int c = 0; c < dim; ++c) cb.vectors(v, c) = cb.ema_sums(v, c) / denom;
    }
  }
}

void TokenPyramid::validate(int vocab) const {
  if (maps.size() != schedule.size()) throw ValidationError("pyramid: scale count mismatch");
  for (size_t k = 0; k < maps.size(); ++k) {
    if (static_cast<int>(maps[k].size()) != schedule[k])
      throw ValidationError("pyramid: map length does not match schedule");
    for (int idx : maps[k])
      if (idx < 0 || idx >= vocab)
        throw ValidationError("pyramid: token index " + std::to_string(idx) + " out of range");
  }
}

std::string TokenPyramid::to_line() const {
  std::ostringstream os;
  os << "schedule=";
  for (size_t i = 0; i < schedule.size(); ++i) os << (i ? "," : "") << schedule[i];
  for (size_t k = 0; k < maps.size(); ++k) {
    os << "; s" << (k + 1) << "=";
    for (size_t i = 0; i < maps[k].size(); ++i) os << (i ? "," : "") << maps[k][i];
  }
  return os.str();
}

TokenPyramid TokenPyramid::from_line(const std::string& line) {
  TokenPyramid p;
  std::stringstream ss(line);
  std::string field;
  bool first = true;
  while (std::getline(ss, field, ';')) {
    const size_t start = field.find_first_not_of(' ');
    if (start == std::string::npos) throw ValidationError("pyramid record: empty field");
    field = field.substr(start);
    const size_t eq = field.find('=');
    if (eq == std::string::npos) throw ValidationError("pyramid record: missing '='");
    const std::string key = field.substr(0, eq);
    const std::string value = field.substr(eq + 1);
    if (first) {
      if (key != "schedule") throw ValidationError("pyramid record: must start with schedule");
      p.schedule = parse_int_list(value);
      first = false;
    } else {
      const std::string expect = "s" + std::to_string(p.maps.size() + 1);
      if (key != expect) throw ValidationError("pyramid record: expected field " + expect);
      p.maps.push_back(parse_int_list(value));
    }
  }
  if (p.maps.size() != p.schedule.size())
    throw ValidationError("pyramid record: scale count mismatch");
  return p;
}

void LossWeights::validate() const {
  bool any = false;
  for (double l : lambda) {
    if (l < 0.0) throw ValidationError("loss weights: lambda must be nonnegative");
    if (l > 0.0) any = true;
  }
  if (!any) throw ValidationError("loss weights: at least one lambda must be positive");
  if (alpha < 0.0) throw ValidationError("loss weights: alpha must be nonnegative");
  if (commitment_weight < 0.0)
    throw ValidationError("loss weights: commitment weight must be nonnegative");
}

LossWeights LossWeights::uniform(int scales) {
  LossWeights w;
  w.lambda.assign(static_cast<size_t>(scales), 1.0 / scales);
  return w;
}

void SdatConfig::validate() const {
  if (horizon <= 0) throw ValidationError("sdat: horizon must be positive");
  if (action_dim <= 0) throw ValidationError("sdat: action_dim must be positive");
  for (size_t i = 0; i < gripper_dims.size(); ++i) {
    if (gripper_dims[i] < 0 || gripper_dims[i] >= action_dim)
      throw ValidationError("sdat: gripper dim out of range");
    if (i > 0 && gripper_dims[i - 1] >= gripper_dims[i])
      throw ValidationError("sdat: gripper dims must be sorted and unique");
  }
  if (static_cast<int>(gripper_dims.size()) >= action_dim)
    throw ValidationError("sdat: at least one motion dimension required");
  schedule().validate();
  const int latent = scales.back();
  if (horizon % latent != 0 || !is_power_of_two(horizon / latent))
    throw ValidationError("sdat: horizon / latent length must be a power of two");
  if (codebook_size <= 0 || code_dim <= 0) throw ValidationError("sdat: codebook sizes");
  if (!(ema_decay > 0.0 && ema_decay < 1.0)) throw ValidationError("sdat: ema decay in (0,1)");
  if (stem_channels <= 0) throw ValidationError("sdat: stem channels");
}

// ---------------------------------------------------------------------------
// Model construction
// ---------------------------------------------------------------------------

Sdat Sdat::init(const SdatConfig& cfg, uint64_t seed) {
  cfg.validate();
  Sdat m;
  m.cfg_ = cfg;
  if (m.cfg_.weights.lambda.empty())
    m.cfg_.weights.lambda = LossWeights::uniform(static_cast<int>(cfg.scales.size())).lambda;
  m.cfg_.weights.validate();
  if (m.cfg_.weights.lambda.size() != cfg.scales.size())
    throw ValidationError("sdat: lambda count must match scale count");
  m.build(seed);
  return m;
}

void Sdat::build(uint64_t seed) {
  Rng rng(derive_seed(seed, 0xda7a));
  const int code = cfg_.code_dim;
  const int latent = cfg_.scales.back();
  const int downs = static_cast<int>(std::round(std::log2(double(cfg_.horizon) / latent)));

  // Modality groups: motion columns, then gripper columns when present.
  modality_cols_.clear();
  std::vector<int> motion;
  for (int d = 0; d < cfg_.action_dim; ++d) {
    if (std::find(cfg_.gripper_dims.begin(), cfg_.gripper_dims.end(), d) == cfg_.gripper_dims.end())
      motion.push_back(d);
  }
  modality_cols_.push_back(motion);
  if (!cfg_.gripper_dims.empty()) modality_cols_.push_back(cfg_.gripper_dims);

  const int n_mod = static_cast<int>(modality_cols_.size());
  const int stem_out = cfg_.stem_channels;
  const int early = stem_out * n_mod;

  stems_.resize(static_cast<size_t>(n_mod));
  for (int mdx = 0; mdx < n_mod; ++mdx)
    stems_[static_cast<size_t>(mdx)].init(
        store_, "enc.stem" + std::to_string(mdx),
        static_cast<int>(modality_cols_[static_cast<size_t>(mdx)].size()), stem_out, rng);
  group_conv_.init(store_, "enc.group", 3, early, early, rng, 1, n_mod);
  fuse_conv_.init(store_, "enc.fuse", 3, early, code, rng);
  down_convs_.resize(static_cast<size_t>(downs));
  for (int i = 0; i < downs; ++i)
    down_convs_[static_cast<size_t>(i)].init(store_, "enc.down" + std::to_string(i), 3, code, code,
                                             rng, 2);
  enc_head_.init(store_, "enc.head", code, code, rng);

  phi_.resize(cfg_.scales.size());
  for (size_t k = 0; k < cfg_.scales.size(); ++k)
    phi_[k].init_identity(store_, "quant.phi" + std::to_string(k), 3, code);

  dec_in_.init(store_, "dec.in", code, code, rng);
  up_convs_.resize(static_cast<size_t>(downs));
  for (int i = 0; i < downs; ++i)
    up_convs_[static_cast<size_t>(i)].init(store_, "dec.up" + std::to_string(i), 3, code, code, rng);
  motion_head_.init(store_, "dec.motion", code, static_cast<int>(motion.size()), rng);
  if (!cfg_.gripper_dims.empty())
    gripper_head_.init(store_, "dec.gripper", code, static_cast<int>(cfg_.gripper_dims.size()), rng);

  codebook_ = Codebook::init(cfg_.codebook_size, code, cfg_.ema_decay, rng);
  store_.create("codebook.vectors", {cfg_.codebook_size, code}, false);
  store_.create("codebook.ema_sums", {cfg_.codebook_size, code}, false);
  store_.create("codebook.ema_counts", {cfg_.codebook_size}, false);
  sync_codebook_to_store();
}

void Sdat::sync_codebook_to_store() {
  store_.get("codebook.vectors").value = codebook_.vectors;
  store_.get("codebook.ema_sums").value = codebook_.ema_sums;
  Mat& counts = store_.get("codebook.ema_counts").value;
  for (int v = 0; v < codebook_.size(); ++v)
    counts(0, v) = codebook_.ema_counts[static_cast<size_t>(v)];
}

void Sdat::sync_codebook_from_store() {
  codebook_.vectors = store_.get("codebook.vectors").value;
  codebook_.ema_sums = store_.get("codebook.ema_sums").value;
  const Mat& counts = store_.get("codebook.ema_counts").value;
  for (int v = 0; v < codebook_.size(); ++v)
    codebook_.ema_counts[static_cast<size_t>(v)] = counts(0, v);
}

void Sdat::set_codebook_vectors(const Mat& vectors) {
  if (vectors.rows != cfg_.codebook_size || vectors.cols != cfg_.code_dim)
    throw ValidationError("codebook: replacement shape mismatch");
  codebook_.vectors = vectors;
  codebook_.ema_sums = Mat(vectors.rows, vectors.cols);
  codebook_.ema_counts.assign(static_cast<size_t>(vectors.rows), 0.0);
  sync_codebook_to_store();
}

void Sdat::save(const std::string& path) {
  sync_codebook_to_store();
  store_.save(path);
}

Sdat Sdat::load_checkpoint(const SdatConfig& cfg, const std::string& path) {
  Sdat m = init(cfg, 0);
  m.store_.load(path);
  m.sync_codebook_from_store();
  return m;
}

// ---------------------------------------------------------------------------
// Encoder / decoder
// ---------------------------------------------------------------------------

struct Sdat::EncoderCache {
  std::vector<Mat> stem_x, stem_pre;
  Mat gc_in, gc_pre;
  Mat fuse_in, fuse_pre;
  std::vector<Mat> down_in, down_pre;
  Mat head_in;
};

Mat Sdat::encode_fwd(const Mat& values, EncoderCache* cache) const {
  const int n_mod = static_cast<int>(modality_cols_.size());
  const int stem_out = cfg_.stem_channels;
  Mat concat(values.rows, stem_out * n_mod);
  if (cache) {
    cache->stem_x.resize(static_cast<size_t>(n_mod));
    cache->stem_pre.resize(static_cast<size_t>(n_mod));
  }
  for (int mdx = 0; mdx < n_mod; ++mdx) {
    const auto& cols = modality_cols_[static_cast<size_t>(mdx)];
    Mat sub = motion_submatrix(values, cols);
    Mat lin = stems_[static_cast<size_t>(mdx)].forward(
        sub, cache ? &cache->stem_x[static_cast<size_t>(mdx)] : nullptr);
    Mat act = gelu.forward(lin, cache ? &cache->stem_pre[static_cast<size_t>(mdx)] : nullptr);
    for (int t = 0; t < values.rows; ++t)
      for (int c = 0; c < stem_out; ++c) concat(t, mdx * stem_out + c) = act(t, c);
  }
  Mat g = group_conv_.forward(concat, cache ? &cache->gc_in : nullptr);
  Mat ga = gelu.forward(g, cache ? &cache->gc_pre : nullptr);
  Mat f = fuse_conv_.forward(ga, cache ? &cache->fuse_in : nullptr);
  Mat cur = gelu.forward(f, cache ? &cache->fuse_pre : nullptr);
  if (cache) {
    cache->down_in.resize(down_convs_.size());
    cache->down_pre.resize(down_convs_.size());
  }
  for (size_t i = 0; i < down_convs_.size(); ++i) {
    Mat d = down_convs_[i].forward(cur, cache ? &cache->down_in[i] : nullptr);
    cur = gelu.forward(d, cache ? &cache->down_pre[i] : nullptr);
  }
  return enc_head_.forward(cur, cache ? &cache->head_in : nullptr);
}

void Sdat::encode_bwd(const Mat& df0, const EncoderCache& cache) const {
  Mat dcur = enc_head_.backward(df0, cache.head_in);
  for (size_t i = down_convs_.size(); i-- > 0;) {
    Mat dd = gelu.backward(dcur, cache.down_pre[i]);
    dcur = down_convs_[i].backward(dd, cache.down_in[i]);
  }
  Mat df = gelu.backward(dcur, cache.fuse_pre);
  Mat dga = fuse_conv_.backward(df, cache.fuse_in);
  Mat dg = gelu.backward(dga, cache.gc_pre);
  Mat dconcat = group_conv_.backward(dg, cache.gc_in);
  const int stem_out = cfg_.stem_channels;
  for (size_t mdx = 0; mdx < modality_cols_.size(); ++mdx) {
    Mat dact(dconcat.rows, stem_out);
    for (int t = 0; t < dconcat.rows; ++t)
      for (int c = 0; c < stem_out; ++c)
        dact(t, c) = dconcat(t, static_cast<int>(mdx) * stem_out + c);
    Mat dlin = gelu.backward(dact, cache.stem_pre[mdx]);
    stems_[mdx].backward(dlin, cache.stem_x[mdx]);
  }
}

struct Sdat::DecoderCache {
  Mat in_x, in_pre;
  std::vector<Mat> up_in, up_pre;
  std::vector<int> up_src_len;
  Mat mh_in, gh_in;
  Mat grip_sig;  // post-sigmoid values
};

Mat Sdat::decode_fwd(const Mat& fhat, DecoderCache* cache) const {
  Mat h = dec_in_.forward(fhat, cache ? &cache->in_x : nullptr);
  Mat cur = gelu.forward(h, cache ? &cache->in_pre : nullptr);
  if (cache) {
    cache->up_in.resize(up_convs_.size());
    cache->up_pre.resize(up_convs_.size());
    cache->up_src_len.resize(up_convs_.size());
  }
  for (size_t i = 0; i < up_convs_.size(); ++i) {
    if (cache) cache->up_src_len[i] = cur.rows;
    Mat up = nn::interpolate_temporal(cur, cur.rows * 2);
    Mat u = up_convs_[i].forward(up, cache ? &cache->up_in[i] : nullptr);
    cur = gelu.forward(u, cache ? &cache->up_pre[i] : nullptr);
  }
  Mat motion = motion_head_.forward(cur, cache ? &cache->mh_in : nullptr);
  Mat out(cur.rows, cfg_.action_dim);
  const auto& motion_cols = modality_cols_.front();
  for (int t = 0; t < cur.rows; ++t)
    for (size_t j = 0; j < motion_cols.size(); ++j)
      out(t, motion_cols[j]) = motion(t, static_cast<int>(j));
  if (!cfg_.gripper_dims.empty()) {
    Mat glin = gripper_head_.forward(cur, cache ? &cache->gh_in : nullptr);
    Mat gsig(glin.rows, glin.cols);
    for (size_t i = 0; i < glin.data.size(); ++i)
      gsig.data[i] = 1.0 / (1.0 + std::exp(-glin.data[i]));
    for (int t = 0; t < cur.rows; ++t)
      for (size_t j = 0; j < cfg_.gripper_dims.size(); ++j)
        out(t, cfg_.gripper_dims[j]) = gsig(t, static_cast<int>(j));
    if (cache) cache->grip_sig = std::move(gsig);
  }
  return out;
}

Mat Sdat::decode_bwd(const Mat& dactions, const DecoderCache& cache) const {
  const auto& motion_cols = modality_cols_.front();
  Mat dmotion = motion_submatrix(dactions, motion_cols);
  Mat dcur = motion_head_.backward(dmotion, cache.mh_in);
  if (!cfg_.gripper_dims.empty()) {
    Mat dglin(dactions.rows, static_cast<int>(cfg_.gripper_dims.size()));
    for (int t = 0; t < dactions.rows; ++t)
      for (size_t j = 0; j < cfg_.gripper_dims.size(); ++j) {
        const double s = cache.grip_sig(t, static_cast<int>(j));
        dglin(t, static_cast<int>(j)) = dactions(t, cfg_.gripper_dims[j]) * s * (1.0 - s);
      }
    dcur += gripper_head_.backward(dglin, cache.gh_in);
  }
  for (size_t i = up_convs_.size(); i-- > 0;) {
    Mat du = gelu.backward(dcur, cache.up_pre[i]);
    Mat dup = up_convs_[i].backward(du, cache.up_in[i]);
    dcur = nn::interpolate_temporal_backward(dup, cache.up_src_len[i]);
  }
  Mat dh = gelu.backward(dcur, cache.in_pre);
  return dec_in_.backward(dh, cache.in_x);
}

// ---------------------------------------------------------------------------
// Quantizer
// ---------------------------------------------------------------------------

struct Sdat::QuantCache {
  Mat f0;
  std::vector<std::vector<int>> tokens;
  std::vector<Mat> x;       // residual interpolated to l_k
  std::vector<Mat> phi_in;  // projector input u_k (length L)
  std::vector<Mat> p;       // phi_k(u_k)
  std::vector<Mat> fhat;    // cumulative
  std::vector<Mat> resid;   // residual after scale k
};

void Sdat::quantize_fwd(const Mat& f0, QuantCache* cache) const {
  codebook_.validate();
  const int latent = cfg_.scales.back();
  const int code = cfg_.code_dim;
  if (f0.rows != latent || f0.cols != code)
    throw ValidationError("quantize: latent shape mismatch");
  const int n_scales = static_cast<int>(cfg_.scales.size());
  cache->f0 = f0;
  cache->tokens.resize(static_cast<size_t>(n_scales));
  cache->x.resize(static_cast<size_t>(n_scales));
  cache->phi_in.resize(static_cast<size_t>(n_scales));
  cache->p.resize(static_cast<size_t>(n_scales));
  cache->fhat.resize(static_cast<size_t>(n_scales));
  cache->resid.resize(static_cast<size_t>(n_scales));

  Mat resid = f0;
  Mat fhat(latent, code);
  for (int k = 0; k < n_scales; ++k) {
    const int lk = cfg_.scales[static_cast<size_t>(k)];
    Mat x = nn::interpolate_temporal(resid, lk);
    std::vector<int> tokens;
    kernels::nearest_codes(x, codebook_.vectors, tokens);
    Mat z;
    if (cfg_.identity_quantizer) {
      z = x;
    } else {
      z = Mat(lk, code);
      for (int r = 0; r < lk; ++r)
        std::copy(codebook_.vectors.row(tokens[static_cast<size_t>(r)]),
                  codebook_.vectors.row(tokens[static_cast<size_t>(r)]) + code, z.row(r));
    }
    Mat u = nn::interpolate_temporal(z, latent);
    Mat p = phi_[static_cast<size_t>(k)].forward(u, &cache->phi_in[static_cast<size_t>(k)]);
    resid -= p;
    fhat += p;
    cache->tokens[static_cast<size_t>(k)] = std::move(tokens);
    cache->x[static_cast<size_t>(k)] = std::move(x);
    cache->p[static_cast<size_t>(k)] = p;
    cache->fhat[static_cast<size_t>(k)] = fhat;
    cache->resid[static_cast<size_t>(k)] = resid;
  }
}

QuantizeResult Sdat::quantize_pyramid(const Mat& f0) const {
  QuantCache qc;
  quantize_fwd(f0, &qc);
  QuantizeResult out;
  out.pyramid.maps = qc.tokens;
  out.pyramid.schedule = cfg_.scales;
  out.cumulative = qc.fhat;
  out.residuals = qc.resid;
  return out;
}

Mat Sdat::rebuild_cumulative(const TokenPyramid& pyramid, int upto) const {
  pyramid.validate(cfg_.codebook_size);
  if (pyramid.schedule != cfg_.scales)
    throw ValidationError("pyramid schedule does not match tokenizer configuration");
  const int latent = cfg_.scales.back();
  const int code = cfg_.code_dim;
  const int n_scales = upto < 0 ? static_cast<int>(cfg_.scales.size())
                                : std::min<int>(upto, static_cast<int>(cfg_.scales.size()));
  Mat fhat(latent, code);
  for (int k = 0; k < n_scales; ++k) {
    const int lk = cfg_.scales[static_cast<size_t>(k)];
    Mat z(lk, code);
    for (int r = 0; r < lk; ++r) {
      const int idx = pyramid.maps[static_cast<size_t>(k)][static_cast<size_t>(r)];
      std::copy(codebook_.vectors.row(idx), codebook_.vectors.row(idx) + code, z.row(r));
    }
    Mat u = nn::interpolate_temporal(z, latent);
    fhat += phi_[static_cast<size_t>(k)].forward(u);
  }
  return fhat;
}

Mat Sdat::rebuild_prefix(const std::vector<std::vector<int>>& maps) const {
  if (maps.size() > cfg_.scales.size())
    throw ValidationError("rebuild_prefix: more maps than scales");
  const int latent = cfg_.scales.back();
  const int code = cfg_.code_dim;
  Mat fhat(latent, code);
  for (size_t k = 0; k < maps.size(); ++k) {
    const int lk = cfg_.scales[k];
    if (static_cast<int>(maps[k].size()) != lk)
      throw ValidationError("rebuild_prefix: map length does not match schedule");
    Mat z(lk, code);
    for (int r = 0; r < lk; ++r) {
      const int idx = maps[k][static_cast<size_t>(r)];
      if (idx < 0 || idx >= cfg_.codebook_size)
        throw ValidationError("rebuild_prefix: token index out of range");
      std::copy(codebook_.vectors.row(idx), codebook_.vectors.row(idx) + code, z.row(r));
    }
    Mat u = nn::interpolate_temporal(z, latent);
    fhat += phi_[k].forward(u);
  }
  return fhat;
}

// ---------------------------------------------------------------------------
// Public inference surface
// ---------------------------------------------------------------------------

Mat Sdat::encode(const ActionChunk& chunk) const {
  chunk.validate();
  if (chunk.horizon() != cfg_.horizon)
    throw ValidationError("encode: chunk horizon " + std::to_string(chunk.horizon()) +
                          " does not match configured " + std::to_string(cfg_.horizon));
  if (chunk.dim() != cfg_.action_dim) throw ValidationError("encode: action dim mismatch");
  return encode_fwd(chunk.values, nullptr);
}

ActionChunk Sdat::decode_actions(const Mat& fhat) const {
  if (!all_finite(fhat)) throw ValidationError("decode: non-finite latent");
  ActionChunk chunk;
  chunk.values = decode_fwd(fhat, nullptr);
  chunk.gripper_dims = cfg_.gripper_dims;
  return chunk;
}

Spectrum Sdat::decode_spectrum(const Mat& fhat) const {
  return dct_forward(decode_actions(fhat), cfg_.dct_mode);
}

TokenPyramid Sdat::tokenize(const ActionChunk& chunk) const {
  return quantize_pyramid(encode(chunk)).pyramid;
}

ActionChunk Sdat::detokenize(const TokenPyramid& pyramid) const {
  return decode_actions(rebuild_cumulative(pyramid));
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

LossBreakdown Sdat::sdat_loss(const ActionChunk& chunk, const LossWeights& weights) const {
  LossWeights w = weights;
  if (w.lambda.empty()) w.lambda = LossWeights::uniform(static_cast<int>(cfg_.scales.size())).lambda;
  w.validate();
  const Mat f0 = encode(chunk);
  QuantCache qc;
  quantize_fwd(f0, &qc);

  const auto motion_cols = chunk.motion_dims();
  const Mat target_spec = dct_forward_mat(motion_submatrix(chunk.values, motion_cols), cfg_.dct_mode);

  LossBreakdown out;
  out.freq_per_scale.resize(cfg_.scales.size());
  Mat last_actions;
  for (size_t k = 0; k < cfg_.scales.size(); ++k) {
    const Mat actions = decode_fwd(qc.fhat[k], nullptr);
    if (k + 1 == cfg_.scales.size()) last_actions = actions;
    if (cfg_.recon_domain == ReconDomain::Spectral) {
      Mat diff = dct_forward_mat(motion_submatrix(actions, motion_cols), cfg_.dct_mode);
      diff -= target_spec;
      out.freq_per_scale[k] = frobenius_norm(diff);
    } else {
      Mat diff = actions;
      diff -= chunk.values;
      out.freq_per_scale[k] = frobenius_norm(diff);
    }
  }
  Mat latent_diff = f0;
  latent_diff -= qc.fhat.back();
  out.codebook_term = frobenius_sq(latent_diff);
  out.commitment_term = out.codebook_term;
  double mae = 0.0;
  for (size_t i = 0; i < last_actions.data.size(); ++i)
    mae += std::abs(chunk.values.data[i] - last_actions.data[i]);
  out.aux_term = mae / static_cast<double>(last_actions.data.size());
  out.total = out.codebook_term + w.commitment_weight * out.commitment_term + w.alpha * out.aux_term;
  for (size_t k = 0; k < cfg_.scales.size(); ++k) out.total += w.lambda[k] * out.freq_per_scale[k];
  return out;
}

LossBreakdown Sdat::loss_and_gradients(const ActionChunk& chunk, const LossWeights& weights,
                                       double grad_scale, std::vector<CodeAssignment>* assignments,
                                       std::vector<std::vector<double>>* latent_pool) {
  LossWeights w = weights;
  if (w.lambda.empty()) w.lambda = LossWeights::uniform(static_cast<int>(cfg_.scales.size())).lambda;
  w.validate();
  chunk.validate();

  EncoderCache ec;
  const Mat f0 = encode_fwd(chunk.values, &ec);
  QuantCache qc;
  quantize_fwd(f0, &qc);

  const int n_scales = static_cast<int>(cfg_.scales.size());
  const auto motion_cols = chunk.motion_dims();
  const Mat target_spec = dct_forward_mat(motion_submatrix(chunk.values, motion_cols), cfg_.dct_mode);

  LossBreakdown out;
  out.freq_per_scale.resize(static_cast<size_t>(n_scales));

  // Per-scale decoder passes; G_k is the gradient reaching the cumulative
  // latent f-hat^(k).
  std::vector<Mat> g_up(static_cast<size_t>(n_scales));
  for (int k = 0; k < n_scales; ++k) {
    DecoderCache dc;
    const Mat actions = decode_fwd(qc.fhat[static_cast<size_t>(k)], &dc);
    Mat dactions(actions.rows, actions.cols);

    if (cfg_.recon_domain == ReconDomain::Spectral) {
      Mat diff = dct_forward_mat(motion_submatrix(actions, motion_cols), cfg_.dct_mode);
      diff -= target_spec;
      const double err = frobenius_norm(diff);
      out.freq_per_scale[static_cast<size_t>(k)] = err;
      if (w.lambda[static_cast<size_t>(k)] > 0.0 && err > 0.0) {
        Mat dspec = diff;
        dspec *= w.lambda[static_cast<size_t>(k)] * grad_scale / err;
        const Mat dmotion = dct_transpose_mat(dspec, cfg_.dct_mode);
        for (int t = 0; t < dactions.rows; ++t)
          for (size_t j = 0; j < motion_cols.size(); ++j)
            dactions(t, motion_cols[j]) += dmotion(t, static_cast<int>(j));
      }
    } else {
      Mat diff = actions;
      diff -= chunk.values;
      const double err = frobenius_norm(diff);
      out.freq_per_scale[static_cast<size_t>(k)] = err;
      if (w.lambda[static_cast<size_t>(k)] > 0.0 && err > 0.0) {
        Mat d = diff;
        d *= w.lambda[static_cast<size_t>(k)] * grad_scale / err;
        dactions += d;
      }
    }

    if (k + 1 == n_scales) {
      double mae = 0.0;
      for (size_t i = 0; i < actions.data.size(); ++i)
        mae += std::abs(chunk.values.data[i] - actions.data[i]);
      out.aux_term = mae / static_cast<double>(actions.data.size());
      if (w.alpha > 0.0) {
        Mat daux = sign_mat(actions, chunk.values);
        daux *= w.alpha * grad_scale / static_cast<double>(actions.data.size());
        dactions += daux;
      }
    }
    g_up[static_cast<size_t>(k)] = decode_bwd(dactions, dc);
  }

  Mat latent_diff = f0;
  latent_diff -= qc.fhat.back();
  out.codebook_term = frobenius_sq(latent_diff);
  out.commitment_term = out.codebook_term;

  // The codebook loss trains the scale projectors only: code vectors are
  // EMA-updated and f is stop-gradiented on this term.
  Mat cb_up = latent_diff;
  cb_up *= -2.0 * grad_scale;
  for (int k = 0; k < n_scales; ++k)
    phi_[static_cast<size_t>(k)].backward(cb_up, qc.phi_in[static_cast<size_t>(k)]);

  // Reconstruction gradients through the quantizer chain; gradients copy
  // straight through the quantization step.
  const int latent = cfg_.scales.back();
  Mat a_acc(latent, cfg_.code_dim);
  Mat b(latent, cfg_.code_dim);
  for (int k = n_scales - 1; k >= 0; --k) {
    a_acc += g_up[static_cast<size_t>(k)];
    Mat up_phi = a_acc;
    up_phi -= b;
    const Mat du = phi_[static_cast<size_t>(k)].backward(up_phi, qc.phi_in[static_cast<size_t>(k)]);
    const Mat dz = nn::interpolate_temporal_backward(du, cfg_.scales[static_cast<size_t>(k)]);
    const Mat& dx = dz;  // straight-through
    b += nn::interpolate_temporal_backward(dx, latent);
  }

  Mat df0 = latent_diff;
  df0 *= 2.0 * w.commitment_weight * grad_scale;
  df0 += b;
  encode_bwd(df0, ec);

  out.total = out.codebook_term + w.commitment_weight * out.commitment_term + w.alpha * out.aux_term;
  for (int k = 0; k < n_scales; ++k)
    out.total += w.lambda[static_cast<size_t>(k)] * out.freq_per_scale[static_cast<size_t>(k)];

  if (assignments) {
    for (int k = 0; k < n_scales; ++k) {
      const Mat& x = qc.x[static_cast<size_t>(k)];
      for (int r = 0; r < x.rows; ++r) {
        CodeAssignment a;
        a.code = qc.tokens[static_cast<size_t>(k)][static_cast<size_t>(r)];
        a.row.assign(x.row(r), x.row(r) + x.cols);
        assignments->push_back(std::move(a));
      }
    }
  }
  if (latent_pool) {
    for (int r = 0; r < f0.rows; ++r) latent_pool->emplace_back(f0.row(r), f0.row(r) + f0.cols);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

SdatTrainLog Sdat::train(const std::vector<ActionChunk>& dataset, const SdatTrainConfig& train_cfg) {
  if (dataset.empty()) throw ValidationError("train: empty dataset");
  train_cfg.opt.validate();
  Rng rng(derive_seed(train_cfg.seed, 0x7ca1));

  std::vector<size_t> order(dataset.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  SdatTrainLog log;
  int64_t step = 0;
  const int n_scales = static_cast<int>(cfg_.scales.size());
  for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<size_t>(rng.uniform_int(static_cast<int>(i)))]);

    std::vector<double> usage(static_cast<size_t>(cfg_.codebook_size), 0.0);
    std::vector<std::vector<double>> pool;
    LossBreakdown sum;
    sum.freq_per_scale.assign(static_cast<size_t>(n_scales), 0.0);
    int batches = 0;

    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(train_cfg.opt.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(train_cfg.opt.batch_size));
      const double inv = 1.0 / static_cast<double>(end - start);
      store_.zero_grads();
      std::vector<CodeAssignment> assignments;
      for (size_t i = start; i < end; ++i) {
        auto bd = loss_and_gradients(dataset[order[i]], cfg_.weights, inv, &assignments,
                                     pool.size() < 4096 ? &pool : nullptr);
        if (!std::isfinite(bd.total))
          throw ValidationError("train: loss diverged at step " + std::to_string(step));
        sum.total += bd.total * inv;
        sum.codebook_term += bd.codebook_term * inv;
        sum.commitment_term += bd.commitment_term * inv;
        sum.aux_term += bd.aux_term * inv;
        for (int k = 0; k < n_scales; ++k)
          sum.freq_per_scale[static_cast<size_t>(k)] += bd.freq_per_scale[static_cast<size_t>(k)] * inv;
      }
      ++step;
      nn::adamw_step(store_, train_cfg.opt, step);
      ema_update(codebook_, assignments);
      for (const CodeAssignment& a : assignments) usage[static_cast<size_t>(a.code)] += 1.0;
      ++batches;
    }

    SdatEpochMetrics metrics;
    metrics.mean_loss = sum;
    metrics.mean_loss.total /= batches;
    metrics.mean_loss.codebook_term /= batches;
    metrics.mean_loss.commitment_term /= batches;
    metrics.mean_loss.aux_term /= batches;
    for (int k = 0; k < n_scales; ++k)
      metrics.mean_loss.freq_per_scale[static_cast<size_t>(k)] /= batches;

    double total_usage = 0.0;
    for (double u : usage) total_usage += u;
    double entropy = 0.0;
    for (double u : usage) {
      if (u > 0.0) {
        const double p = u / total_usage;
        entropy -= p * std::log(p);
      }
    }
    metrics.codebook_entropy = entropy;

    // Reseed codes unused for the whole epoch (skipped after the final
    // epoch so the checkpoint reflects the trained state).
    if (epoch + 1 < train_cfg.epochs && !pool.empty()) {
      for (int v = 0; v < cfg_.codebook_size; ++v) {
        if (usage[static_cast<size_t>(v)] > 0.0) continue;
        const auto& row = pool[static_cast<size_t>(rng.uniform_int(static_cast<int>(pool.size())))];
        for (int c = 0; c < cfg_.code_dim; ++c) codebook_.vectors(v, c) = row[static_cast<size_t>(c)];
        codebook_.ema_counts[static_cast<size_t>(v)] = 0.0;
        for (int c = 0; c < cfg_.code_dim; ++c) codebook_.ema_sums(v, c) = 0.0;
        ++metrics.revived_codes;
      }
    }
    log.epochs.push_back(std::move(metrics));
  }
  sync_codebook_to_store();
  return log;
}

}  // namespace mint
