#include "mint/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "mint/errors.hpp"
#include "mint/kernels.hpp"

namespace mint::nn {

namespace {

int64_t shape_count(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

}  // namespace

Param& ParameterStore::create(const std::string& name, std::vector<int> shape, bool trainable) {
  if (params_.count(name)) throw ValidationError("parameter '" + name + "' already exists");
  if (shape.empty()) throw ValidationError("parameter '" + name + "' has empty shape");
  for (int d : shape)
    if (d <= 0) throw ValidationError("parameter '" + name + "' has non-positive dim");
  Param p;
  p.shape = std::move(shape);
  const int cols = p.shape.back();
  const int rows = static_cast<int>(shape_count(p.shape) / cols);
  p.value = Mat(rows, cols);
  p.grad = Mat(rows, cols);
  p.m = Mat(rows, cols);
  p.v = Mat(rows, cols);
  p.trainable = trainable;
  return params_[name] = std::move(p);
}

Param& ParameterStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ValidationError("unknown parameter '" + name + "'");
  return it->second;
}

const Param& ParameterStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ValidationError("unknown parameter '" + name + "'");
  return it->second;
}

void ParameterStore::zero_grads() {
  for (auto& [name, p] : params_) std::fill(p.grad.data.begin(), p.grad.data.end(), 0.0);
}

int64_t ParameterStore::total_count() const {
  int64_t n = 0;
  for (const auto& [name, p] : params_) n += p.count();
  return n;
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, p] : params_) out.push_back(name);
  return out;
}

namespace {

void put_u16(std::string& buf, uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& buf, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(buf, bits);
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;

  void need(size_t n) const {
    if (pos + n > buf.size()) throw ValidationError("checkpoint: truncated data");
  }
  uint8_t u8() {
    need(1);
    return static_cast<uint8_t>(buf[pos++]);
  }
  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint8_t>(buf[pos]) | (static_cast<uint16_t>(static_cast<uint8_t>(buf[pos + 1])) << 8);
    pos += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  float f32() {
    uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

constexpr uint32_t kCheckpointVersion = 1;

}  // namespace

void ParameterStore::save(const std::string& path) const {
  std::string buf;
  buf += "MNTC";
  put_u32(buf, kCheckpointVersion);
  put_u32(buf, static_cast<uint32_t>(params_.size()));
  for (const auto& [name, p] : params_) {
    put_u16(buf, static_cast<uint16_t>(name.size()));
    buf += name;
    buf.push_back(static_cast<char>(p.shape.size()));
    for (int d : p.shape) put_u32(buf, static_cast<uint32_t>(d));
    for (double v : p.value.data) put_f32(buf, static_cast<float>(v));
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw IoError("checkpoint write failed: " + path);
}

void ParameterStore::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  const std::string buf = ss.str();

  Reader r{buf};
  if (r.bytes(4) != "MNTC") throw ValidationError("checkpoint: bad magic");
  const uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw ValidationError("checkpoint: unknown format version " + std::to_string(version));
  const uint32_t count = r.u32();
  std::vector<std::string> loaded;
  for (uint32_t e = 0; e < count; ++e) {
    const uint16_t name_len = r.u16();
    const std::string name = r.bytes(name_len);
    const int rank = r.u8();
    if (rank == 0 || rank > 8) throw ValidationError("checkpoint: bad rank for '" + name + "'");
    std::vector<int> shape(rank);
    for (int i = 0; i < rank; ++i) shape[i] = static_cast<int>(r.u32());
    const int64_t n = shape_count(shape);
    Param* p;
    if (contains(name)) {
      p = &get(name);
      if (p->shape != shape)
        throw ValidationError("checkpoint: shape mismatch for '" + name + "': file " + shape_str(shape) +
                              " vs store " + shape_str(p->shape));
    } else {
      p = &create(name, shape);
    }
    for (int64_t i = 0; i < n; ++i) p->value.data[static_cast<size_t>(i)] = r.f32();
    std::fill(p->m.data.begin(), p->m.data.end(), 0.0);
    std::fill(p->v.data.begin(), p->v.data.end(), 0.0);
    loaded.push_back(name);
  }
  // Entries in the store but absent from the file indicate an
  // architecture/checkpoint mismatch.
  std::sort(loaded.begin(), loaded.end());
  for (const auto& [name, p] : params_) {
    (void)p;
    if (!std::binary_search(loaded.begin(), loaded.end(), name))
      throw ValidationError("checkpoint: file is missing parameter '" + name + "'");
  }
}

void ParameterStore::copy_values_from(const ParameterStore& other) {
  if (names() != other.names())
    throw ValidationError("copy_values_from: parameter sets differ");
  for (auto& [name, p] : params_) {
    const Param& src = other.get(name);
    if (src.shape != p.shape)
      throw ValidationError("copy_values_from: shape mismatch for '" + name + "'");
    p.value = src.value;
    std::fill(p.m.data.begin(), p.m.data.end(), 0.0);
    std::fill(p.v.data.begin(), p.v.data.end(), 0.0);
  }
}

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0)) throw ValidationError("optimizer: learning_rate must be positive");
  if (weight_decay < 0) throw ValidationError("optimizer: weight_decay must be nonnegative");
  if (!(beta1 > 0 && beta1 < 1)) throw ValidationError("optimizer: beta1 must be in (0,1)");
  if (!(beta2 > 0 && beta2 < 1)) throw ValidationError("optimizer: beta2 must be in (0,1)");
  if (!(epsilon > 0)) throw ValidationError("optimizer: epsilon must be positive");
  if (batch_size < 1) throw ValidationError("optimizer: batch_size must be positive");
}

void adamw_step(ParameterStore& store, const OptimizerConfig& cfg, int64_t step_index) {
  cfg.validate();
  if (step_index < 1) throw ValidationError("optimizer: step_index must be >= 1");
  for (const auto& [name, p] : store.entries()) {
    if (!p.trainable) continue;
    for (double g : p.grad.data)
      if (!std::isfinite(g)) throw ValidationError("optimizer: non-finite gradient in '" + name + "'");
  }
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_index));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_index));
  for (auto& [name, p] : store.entries()) {
    if (!p.trainable) continue;
    for (size_t i = 0; i < p.value.data.size(); ++i) {
      const double g = p.grad.data[i];
      p.m.data[i] = cfg.beta1 * p.m.data[i] + (1.0 - cfg.beta1) * g;
      p.v.data[i] = cfg.beta2 * p.v.data[i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = p.m.data[i] / bc1;
      const double vhat = p.v.data[i] / bc2;
      p.value.data[i] -=
          cfg.learning_rate * (mhat / (std::sqrt(vhat) + cfg.epsilon) + cfg.weight_decay * p.value.data[i]);
    }
  }
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

void Dense::init(ParameterStore& ps, const std::string& name, int in, int out, Rng& rng, bool bias,
                 double init_scale) {
  in_dim = in;
  out_dim = out;
  w = &ps.create(name + ".w", {in, out});
  const double s = init_scale >= 0.0 ? init_scale : 1.0 / std::sqrt(static_cast<double>(in));
  for (double& v : w->value.data) v = rng.uniform(-s, s);
  if (bias) b = &ps.create(name + ".b", {out});
}

Mat Dense::forward(const Mat& x, Mat* cache_x) const {
  if (x.cols != in_dim)
    throw ValidationError("dense: input has " + std::to_string(x.cols) + " cols, layer expects " +
                          std::to_string(in_dim));
  if (cache_x) *cache_x = x;
  Mat y;
  kernels::matmul(x, w->value, y);
  if (b)
    for (int r = 0; r < y.rows; ++r)
      for (int c = 0; c < y.cols; ++c) y(r, c) += b->value.data[static_cast<size_t>(c)];
  return y;
}

Mat Dense::backward(const Mat& dy, const Mat& cached_x) const {
  Mat dw;
  kernels::matmul_tn(cached_x, dy, dw);
  w->grad += dw;
  if (b)
    for (int r = 0; r < dy.rows; ++r)
      for (int c = 0; c < dy.cols; ++c) b->grad.data[static_cast<size_t>(c)] += dy(r, c);
  Mat dx;
  kernels::matmul_nt(dy, w->value, dx);
  return dx;
}

// ---------------------------------------------------------------------------
// Conv1d
// ---------------------------------------------------------------------------

void Conv1d::init(ParameterStore& ps, const std::string& name, int k_, int cin_, int cout_, Rng& rng,
                  int stride_, int groups_) {
  k = k_;
  cin = cin_;
  cout = cout_;
  stride = stride_;
  groups = groups_;
  if (cin % groups != 0 || cout % groups != 0)
    throw ValidationError("conv1d: channels not divisible by groups");
  const int cpg = cin / groups;
  w = &ps.create(name + ".w", {k, cpg, cout});
  const double s = 1.0 / std::sqrt(static_cast<double>(k * cpg));
  for (double& v : w->value.data) v = rng.uniform(-s, s);
  b = &ps.create(name + ".b", {cout});
}

void Conv1d::init_identity(ParameterStore& ps, const std::string& name, int k_, int channels) {
  k = k_;
  cin = cout = channels;
  stride = 1;
  groups = 1;
  if (k % 2 == 0) throw ValidationError("conv1d: identity init needs odd kernel");
  w = &ps.create(name + ".w", {k, channels, channels});
  const int center = k / 2;
  for (int c = 0; c < channels; ++c) w->value(center * channels + c, c) = 1.0;
  b = &ps.create(name + ".b", {channels});
}

Mat Conv1d::forward(const Mat& x, Mat* cache_x) const {
  if (x.cols != cin)
    throw ValidationError("conv1d: input has " + std::to_string(x.cols) + " channels, layer expects " +
                          std::to_string(cin));
  if (cache_x) *cache_x = x;
  const int len = x.rows;
  const int lout = (len + stride - 1) / stride;
  const int pad_total = std::max(0, (lout - 1) * stride + k - len);
  const int pad_left = pad_total / 2;
  const int cpg = cin / groups;
  const int opg = cout / groups;
  Mat y(lout, cout);
  for (int t = 0; t < lout; ++t) {
    for (int oc = 0; oc < cout; ++oc) {
      const int g = oc / opg;
      double s = b->value.data[static_cast<size_t>(oc)];
      for (int dt = 0; dt < k; ++dt) {
        const int tin = t * stride - pad_left + dt;
        if (tin < 0 || tin >= len) continue;
        const double* xrow = x.row(tin) + g * cpg;
        for (int ic = 0; ic < cpg; ++ic) s += w->value(dt * cpg + ic, oc) * xrow[ic];
      }
      y(t, oc) = s;
    }
  }
  return y;
}

Mat Conv1d::backward(const Mat& dy, const Mat& cached_x) const {
  const int len = cached_x.rows;
  const int lout = dy.rows;
  const int pad_total = std::max(0, (lout - 1) * stride + k - len);
  const int pad_left = pad_total / 2;
  const int cpg = cin / groups;
  const int opg = cout / groups;
  Mat dx(len, cin);
  for (int t = 0; t < lout; ++t) {
    for (int oc = 0; oc < cout; ++oc) {
      const int g = oc / opg;
      const double d = dy(t, oc);
      b->grad.data[static_cast<size_t>(oc)] += d;
      for (int dt = 0; dt < k; ++dt) {
        const int tin = t * stride - pad_left + dt;
        if (tin < 0 || tin >= len) continue;
        const double* xrow = cached_x.row(tin) + g * cpg;
        double* dxrow = dx.row(tin) + g * cpg;
        for (int ic = 0; ic < cpg; ++ic) {
          w->grad(dt * cpg + ic, oc) += d * xrow[ic];
          dxrow[ic] += d * w->value(dt * cpg + ic, oc);
        }
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Gelu
// ---------------------------------------------------------------------------

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Mat Gelu::forward(const Mat& x, Mat* cache_x) const {
  if (cache_x) *cache_x = x;
  Mat y(x.rows, x.cols);
  for (size_t i = 0; i < x.data.size(); ++i) {
    const double v = x.data[i];
    y.data[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
  }
  return y;
}

Mat Gelu::backward(const Mat& dy, const Mat& cached_x) const {
  Mat dx(dy.rows, dy.cols);
  for (size_t i = 0; i < dy.data.size(); ++i) {
    const double v = cached_x.data[i];
    const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
    const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
    dx.data[i] = dy.data[i] * d;
  }
  return dx;
}

// ---------------------------------------------------------------------------
// LayerNorm
// ---------------------------------------------------------------------------

void LayerNorm::init(ParameterStore& ps, const std::string& name, int dim_) {
  dim = dim_;
  gamma = &ps.create(name + ".gamma", {dim});
  std::fill(gamma->value.data.begin(), gamma->value.data.end(), 1.0);
  beta = &ps.create(name + ".beta", {dim});
}

Mat LayerNorm::forward(const Mat& x, Mat* cache_x) const {
  if (x.cols != dim) throw ValidationError("layernorm: width mismatch");
  if (cache_x) *cache_x = x;
  Mat y(x.rows, x.cols);
  for (int r = 0; r < x.rows; ++r) {
    double mu = 0.0;
    for (int c = 0; c < dim; ++c) mu += x(r, c);
    mu /= dim;
    double var = 0.0;
    for (int c = 0; c < dim; ++c) {
      const double d = x(r, c) - mu;
      var += d * d;
    }
    var /= dim;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int c = 0; c < dim; ++c)
      y(r, c) = gamma->value.data[static_cast<size_t>(c)] * (x(r, c) - mu) * inv +
                beta->value.data[static_cast<size_t>(c)];
  }
  return y;
}

Mat LayerNorm::backward(const Mat& dy, const Mat& cached_x) const {
  Mat dx(dy.rows, dy.cols);
  for (int r = 0; r < dy.rows; ++r) {
    double mu = 0.0;
    for (int c = 0; c < dim; ++c) mu += cached_x(r, c);
    mu /= dim;
    double var = 0.0;
    for (int c = 0; c < dim; ++c) {
      const double d = cached_x(r, c) - mu;
      var += d * d;
    }
    var /= dim;
    const double inv = 1.0 / std::sqrt(var + eps);
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (int c = 0; c < dim; ++c) {
      const double xhat = (cached_x(r, c) - mu) * inv;
      const double dxhat = dy(r, c) * gamma->value.data[static_cast<size_t>(c)];
      gamma->grad.data[static_cast<size_t>(c)] += dy(r, c) * xhat;
      beta->grad.data[static_cast<size_t>(c)] += dy(r, c);
      mean_dxhat += dxhat;
      mean_dxhat_xhat += dxhat * xhat;
    }
    mean_dxhat /= dim;
    mean_dxhat_xhat /= dim;
    for (int c = 0; c < dim; ++c) {
      const double xhat = (cached_x(r, c) - mu) * inv;
      const double dxhat = dy(r, c) * gamma->value.data[static_cast<size_t>(c)];
      dx(r, c) = inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Film
// ---------------------------------------------------------------------------

void Film::init(ParameterStore& ps, const std::string& name, int cond_dim, int channels_) {
  channels = channels_;
  Rng dummy(0);
  gen.init(ps, name + ".gen", cond_dim, 2 * channels, dummy, true, 0.0);
}

Mat Film::forward(const Mat& x, const Mat& cond, Cache* cache) const {
  if (x.cols != channels) throw ValidationError("film: channel mismatch");
  const Mat st = gen.forward(cond);
  Mat y(x.rows, x.cols);
  for (int r = 0; r < x.rows; ++r)
    for (int c = 0; c < channels; ++c) y(r, c) = x(r, c) * (1.0 + st(0, c)) + st(0, channels + c);
  if (cache) {
    cache->x = x;
    cache->cond = cond;
    cache->st = st;
  }
  return y;
}

Mat Film::backward(const Mat& dy, const Cache& cache, Mat* dcond) const {
  Mat dst(1, 2 * channels);
  Mat dx(dy.rows, dy.cols);
  for (int r = 0; r < dy.rows; ++r) {
    for (int c = 0; c < channels; ++c) {
      dst(0, c) += dy(r, c) * cache.x(r, c);
      dst(0, channels + c) += dy(r, c);
      dx(r, c) = dy(r, c) * (1.0 + cache.st(0, c));
    }
  }
  const Mat dc = gen.backward(dst, cache.cond);
  if (dcond) *dcond += dc;
  return dx;
}

// ---------------------------------------------------------------------------
// Embedding
// ---------------------------------------------------------------------------

void Embedding::init(ParameterStore& ps, const std::string& name, int vocab, int dim, Rng& rng) {
  table = &ps.create(name, {vocab, dim});
  const double s = 1.0 / std::sqrt(static_cast<double>(dim));
  for (double& v : table->value.data) v = rng.uniform(-s, s);
}

Mat Embedding::forward(const std::vector<int>& idx) const {
  Mat out(static_cast<int>(idx.size()), table->value.cols);
  for (size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= table->value.rows)
      throw ValidationError("embedding: index " + std::to_string(idx[r]) + " out of range");
    std::copy(table->value.row(idx[r]), table->value.row(idx[r]) + table->value.cols,
              out.row(static_cast<int>(r)));
  }
  return out;
}

void Embedding::backward(const Mat& dy, const std::vector<int>& idx) const {
  for (size_t r = 0; r < idx.size(); ++r)
    for (int c = 0; c < dy.cols; ++c) table->grad(idx[r], c) += dy(static_cast<int>(r), c);
}

// ---------------------------------------------------------------------------
// Temporal interpolation
// ---------------------------------------------------------------------------

namespace {

struct Tap {
  int i0, i1;
  double w0, w1;
};

std::vector<Tap> interp_taps(int src, int dst, InterpMethod method) {
  if (dst <= 0) throw ValidationError("interpolate: target length must be positive");
  if (src <= 0) throw ValidationError("interpolate: source length must be positive");
  std::vector<Tap> taps(static_cast<size_t>(dst));
  for (int t = 0; t < dst; ++t) {
    if (src == 1) {
      taps[t] = {0, 0, 1.0, 0.0};
      continue;
    }
    const double p = dst == 1 ? (src - 1) / 2.0
                              : static_cast<double>(t) * (src - 1) / (dst - 1);
    int i0 = static_cast<int>(std::floor(p));
    if (i0 > src - 1) i0 = src - 1;
    const double f = p - i0;
    const int i1 = std::min(i0 + 1, src - 1);
    if (method == InterpMethod::Nearest) {
      const int i = f >= 0.5 ? i1 : i0;
      taps[t] = {i, i, 1.0, 0.0};
    } else {
      taps[t] = {i0, i1, 1.0 - f, f};
    }
  }
  return taps;
}

}  // namespace

Mat interpolate_temporal(const Mat& x, int target_len, InterpMethod method) {
  const auto taps = interp_taps(x.rows, target_len, method);
  if (target_len == x.rows && method == InterpMethod::Linear) return x;
  Mat y(target_len, x.cols);
  for (int t = 0; t < target_len; ++t) {
    const Tap& tap = taps[static_cast<size_t>(t)];
    for (int c = 0; c < x.cols; ++c)
      y(t, c) = tap.w0 * x(tap.i0, c) + tap.w1 * x(tap.i1, c);
  }
  return y;
}

Mat interpolate_temporal_backward(const Mat& dy, int source_len, InterpMethod method) {
  const auto taps = interp_taps(source_len, dy.rows, method);
  Mat dx(source_len, dy.cols);
  for (int t = 0; t < dy.rows; ++t) {
    const Tap& tap = taps[static_cast<size_t>(t)];
    for (int c = 0; c < dy.cols; ++c) {
      dx(tap.i0, c) += tap.w0 * dy(t, c);
      dx(tap.i1, c) += tap.w1 * dy(t, c);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Attention
// ---------------------------------------------------------------------------

void MultiHeadAttention::init(ParameterStore& ps, const std::string& name, int width_, int heads_,
                              Rng& rng) {
  width = width_;
  heads = heads_;
  if (width % heads != 0) throw ValidationError("attention: width not divisible by heads");
  wq.init(ps, name + ".wq", width, width, rng);
  wk.init(ps, name + ".wk", width, width, rng);
  wv.init(ps, name + ".wv", width, width, rng);
  wo.init(ps, name + ".wo", width, width, rng);
}

namespace {

// Softmax-weighted sum of V rows for one query row, iterating exactly the
// allowed positions in increasing order. Shared by the training forward and
// the cached decode path so both produce identical bits.
void attend_row(const double* qrow, const Mat& k, const Mat& v, int head, int head_dim,
                const std::vector<int>& allowed, double* out_row, double* probs_out) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  const int off = head * head_dim;
  thread_local std::vector<double> scores;
  scores.assign(allowed.size(), 0.0);
  double mx = -std::numeric_limits<double>::infinity();
  for (size_t a = 0; a < allowed.size(); ++a) {
    const double* krow = k.row(allowed[a]) + off;
    double s = 0.0;
    for (int c = 0; c < head_dim; ++c) s += qrow[off + c] * krow[c];
    s *= scale;
    scores[a] = s;
    mx = std::max(mx, s);
  }
  double denom = 0.0;
  for (size_t a = 0; a < allowed.size(); ++a) {
    scores[a] = std::exp(scores[a] - mx);
    denom += scores[a];
  }
  for (size_t a = 0; a < allowed.size(); ++a) {
    const double p = scores[a] / denom;
    if (probs_out) probs_out[allowed[a]] = p;
    const double* vrow = v.row(allowed[a]) + off;
    for (int c = 0; c < head_dim; ++c) out_row[off + c] += p * vrow[c];
  }
}

}  // namespace

void attention_core(const Mat& q, const Mat& k, const Mat& v, int heads, const BoolMat& mask,
                    Mat* concat, std::vector<Mat>* probs) {
  if (q.rows != mask.rows || mask.rows != mask.cols)
    throw ValidationError("attention: mask shape mismatch");
  const int t_len = q.rows;
  const int head_dim = q.cols / heads;
  *concat = Mat(t_len, q.cols);
  if (probs) probs->assign(static_cast<size_t>(heads), Mat(t_len, t_len));
  std::vector<int> allowed;
  for (int i = 0; i < t_len; ++i) {
    allowed.clear();
    for (int j = 0; j < t_len; ++j)
      if (mask(i, j)) allowed.push_back(j);
    if (allowed.empty()) throw ValidationError("attention: row with no attendable position");
    for (int h = 0; h < heads; ++h)
      attend_row(q.row(i), k, v, h, head_dim, allowed, concat->row(i),
                 probs ? (*probs)[static_cast<size_t>(h)].row(i) : nullptr);
  }
}

void attention_core_backward(const Mat& dconcat, const Mat& q, const Mat& k, const Mat& v,
                             int heads, const BoolMat& mask, const std::vector<Mat>& probs,
                             Mat* dq, Mat* dk, Mat* dv) {
  const int t_len = dconcat.rows;
  const int head_dim = q.cols / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  *dq = Mat(t_len, q.cols);
  *dk = Mat(t_len, q.cols);
  *dv = Mat(t_len, q.cols);
  for (int h = 0; h < heads; ++h) {
    const int off = h * head_dim;
    const Mat& p = probs[static_cast<size_t>(h)];
    for (int i = 0; i < t_len; ++i) {
      double dot_sum = 0.0;
      thread_local std::vector<double> dp;
      dp.assign(static_cast<size_t>(t_len), 0.0);
      for (int j = 0; j < t_len; ++j) {
        if (!mask(i, j)) continue;
        double s = 0.0;
        for (int c = 0; c < head_dim; ++c) s += dconcat(i, off + c) * v(j, off + c);
        dp[static_cast<size_t>(j)] = s;
        dot_sum += p(i, j) * s;
      }
      for (int j = 0; j < t_len; ++j) {
        if (!mask(i, j)) continue;
        const double ds = p(i, j) * (dp[static_cast<size_t>(j)] - dot_sum);
        for (int c = 0; c < head_dim; ++c) {
          (*dq)(i, off + c) += ds * k(j, off + c) * scale;
          (*dk)(j, off + c) += ds * q(i, off + c) * scale;
          (*dv)(j, off + c) += p(i, j) * dconcat(i, off + c);
        }
      }
    }
  }
}

Mat MultiHeadAttention::forward(const Mat& x, const BoolMat& mask, Cache* cache) const {
  Mat q = wq.forward(x);
  Mat k = wk.forward(x);
  Mat v = wv.forward(x);
  Mat concat;
  std::vector<Mat> probs;
  attention_core(q, k, v, heads, mask, &concat, &probs);
  Mat y = wo.forward(concat);
  if (cache) {
    cache->x = x;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->concat = std::move(concat);
    cache->probs = std::move(probs);
    cache->mask = &mask;
  }
  return y;
}

Mat MultiHeadAttention::backward(const Mat& dy, const Cache& cache) const {
  const Mat dconcat = wo.backward(dy, cache.concat);
  Mat dq, dk, dv;
  attention_core_backward(dconcat, cache.q, cache.k, cache.v, heads, *cache.mask, cache.probs,
                          &dq, &dk, &dv);
  Mat dx = wq.backward(dq, cache.x);
  dx += wk.backward(dk, cache.x);
  dx += wv.backward(dv, cache.x);
  return dx;
}

Mat MultiHeadAttention::decode_step(const Mat& x_new, Mat& k_cache, Mat& v_cache,
                                    bool attend_within) const {
  const int n = x_new.rows;
  const int head_dim = width / heads;
  const Mat q = wq.forward(x_new);
  const Mat k_new = wk.forward(x_new);
  const Mat v_new = wv.forward(x_new);
  const int p0 = k_cache.rows;
  Mat k_all(p0 + n, width), v_all(p0 + n, width);
  std::copy(k_cache.data.begin(), k_cache.data.end(), k_all.data.begin());
  std::copy(k_new.data.begin(), k_new.data.end(), k_all.data.begin() + k_cache.data.size());
  std::copy(v_cache.data.begin(), v_cache.data.end(), v_all.data.begin());
  std::copy(v_new.data.begin(), v_new.data.end(), v_all.data.begin() + v_cache.data.size());
  Mat concat(n, width);
  for (int i = 0; i < n; ++i) {
    const int limit = attend_within ? p0 + n : p0 + i + 1;
    std::vector<int> allowed(static_cast<size_t>(limit));
    for (int j = 0; j < limit; ++j) allowed[static_cast<size_t>(j)] = j;
    for (int h = 0; h < heads; ++h)
      attend_row(q.row(i), k_all, v_all, h, head_dim, allowed, concat.row(i), nullptr);
  }
  k_cache = std::move(k_all);
  v_cache = std::move(v_all);
  return wo.forward(concat);
}

// ---------------------------------------------------------------------------
// Losses and checks
// ---------------------------------------------------------------------------

Mat softmax_rows(const Mat& logits) {
  Mat p(logits.rows, logits.cols);
  for (int r = 0; r < logits.rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < logits.cols; ++c) mx = std::max(mx, logits(r, c));
    double denom = 0.0;
    for (int c = 0; c < logits.cols; ++c) {
      p(r, c) = std::exp(logits(r, c) - mx);
      denom += p(r, c);
    }
    for (int c = 0; c < logits.cols; ++c) p(r, c) /= denom;
  }
  return p;
}

double softmax_cross_entropy(const Mat& logits, const std::vector<int>& targets, Mat* dlogits) {
  if (static_cast<int>(targets.size()) != logits.rows)
    throw ValidationError("cross_entropy: target count mismatch");
  const Mat p = softmax_rows(logits);
  double loss = 0.0;
  for (int r = 0; r < logits.rows; ++r) {
    const int t = targets[static_cast<size_t>(r)];
    if (t < 0 || t >= logits.cols) throw ValidationError("cross_entropy: target out of range");
    loss -= std::log(std::max(p(r, t), 1e-300));
  }
  loss /= logits.rows;
  if (dlogits) {
    *dlogits = p;
    for (int r = 0; r < logits.rows; ++r) {
      (*dlogits)(r, targets[static_cast<size_t>(r)]) -= 1.0;
      for (int c = 0; c < logits.cols; ++c) (*dlogits)(r, c) /= logits.rows;
    }
  }
  return loss;
}

GradCheckReport grad_check(ParameterStore& store, const std::function<double()>& loss_with_grad,
                           const std::function<double()>& loss_only, double tolerance, Rng& rng,
                           int min_checked) {
  store.zero_grads();
  loss_with_grad();

  struct Coord {
    Param* p;
    std::string name;
    size_t i;
  };
  std::vector<Param*> params;
  std::vector<std::string> names;
  int64_t total = 0;
  for (auto& [name, p] : store.entries()) {
    if (!p.trainable) continue;
    params.push_back(&p);
    names.push_back(name);
    total += p.count();
  }
  std::vector<Coord> coords;
  if (total <= min_checked) {
    for (size_t pi = 0; pi < params.size(); ++pi)
      for (size_t i = 0; i < params[pi]->value.data.size(); ++i)
        coords.push_back({params[pi], names[pi], i});
  } else {
    for (int n = 0; n < min_checked; ++n) {
      // Weight parameter choice by coordinate count.
      int64_t pick = static_cast<int64_t>(rng.uniform01() * static_cast<double>(total));
      size_t pi = 0;
      while (pi + 1 < params.size() && pick >= params[pi]->count()) {
        pick -= params[pi]->count();
        ++pi;
      }
      const size_t i = static_cast<size_t>(rng.uniform_int(static_cast<int>(params[pi]->value.data.size())));
      coords.push_back({params[pi], names[pi], i});
    }
  }

  const double h = 1e-5;
  GradCheckReport report;
  for (const Coord& c : coords) {
    const double analytic = c.p->grad.data[c.i];
    const double saved = c.p->value.data[c.i];
    c.p->value.data[c.i] = saved + h;
    const double f1 = loss_only();
    c.p->value.data[c.i] = saved - h;
    const double f2 = loss_only();
    c.p->value.data[c.i] = saved;
    const double numeric = (f1 - f2) / (2.0 * h);
    double rel = 0.0;
    if (std::abs(analytic - numeric) >= 1e-8)
      rel = std::abs(analytic - numeric) / std::max(std::abs(analytic), std::abs(numeric));
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_param = c.name;
    }
    ++report.checked;
  }
  report.pass = report.max_rel_error < tolerance;
  return report;
}

}  // namespace mint::nn
