#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mint/mat.hpp"
#include "mint/rng.hpp"

namespace mint::nn {

// A named trainable array. `shape` is the true rank for serialization;
// in memory the array is a 2D Mat with cols = shape.back().
struct Param {
  std::vector<int> shape;
  Mat value, grad, m, v;  // v: second Adam moment
  bool trainable = true;

  int64_t count() const { return static_cast<int64_t>(value.size()); }
};

class ParameterStore {
 public:
  Param& create(const std::string& name, std::vector<int> shape, bool trainable = true);
  Param& get(const std::string& name);
  const Param& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) > 0; }

  void zero_grads();
  int64_t total_count() const;
  std::vector<std::string> names() const;

  // Checkpoint format ("MNTC"): magic, version u32 LE, entry count u32 LE;
  // per entry: name length u16 LE, name bytes, rank u8, dims u32 LE each,
  // row-major f32 LE values. Entries are written in name order.
  void save(const std::string& path) const;
  void load(const std::string& path);

  // Full-precision value copy between stores with identical layouts;
  // optimizer state is reset.
  void copy_values_from(const ParameterStore& other);

  std::map<std::string, Param>& entries() { return params_; }
  const std::map<std::string, Param>& entries() const { return params_; }

 private:
  std::map<std::string, Param> params_;
};

struct OptimizerConfig {
  double learning_rate = 3e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double epsilon = 1e-8;
  int batch_size = 64;

  void validate() const;
};

// Decoupled-weight-decay adaptive step with bias correction; step_index is
// 1-based. Rejects the whole step if any gradient is non-finite.
void adamw_step(ParameterStore& store, const OptimizerConfig& cfg, int64_t step_index);

// ---------------------------------------------------------------------------
// Layers. Forward passes record what backward needs into caller-owned caches,
// so one layer instance can serve several forward/backward pairs per step.
// Backward accumulates into Param::grad and returns the input gradient.
// ---------------------------------------------------------------------------

struct Dense {
  Param* w = nullptr;  // [in][out]
  Param* b = nullptr;
  int in_dim = 0, out_dim = 0;

  void init(ParameterStore& ps, const std::string& name, int in, int out, Rng& rng,
            bool bias = true, double init_scale = -1.0);
  Mat forward(const Mat& x, Mat* cache_x = nullptr) const;
  Mat backward(const Mat& dy, const Mat& cached_x) const;
};

// Temporal convolution over an L x C map with "same" padding; stride > 1
// downsamples to ceil(L / stride). groups > 1 keeps channel groups
// independent (cin and cout both divisible by groups).
struct Conv1d {
  Param* w = nullptr;  // [k][cin/groups][cout]
  Param* b = nullptr;
  int k = 0, cin = 0, cout = 0, stride = 1, groups = 1;

  void init(ParameterStore& ps, const std::string& name, int k, int cin, int cout, Rng& rng,
            int stride = 1, int groups = 1);
  // Zero weights except a center-tap identity (requires cin == cout, odd k).
  void init_identity(ParameterStore& ps, const std::string& name, int k, int channels);
  Mat forward(const Mat& x, Mat* cache_x = nullptr) const;
  Mat backward(const Mat& dy, const Mat& cached_x) const;
};

// Smooth GELU (tanh approximation).
struct Gelu {
  Mat forward(const Mat& x, Mat* cache_x = nullptr) const;
  Mat backward(const Mat& dy, const Mat& cached_x) const;
};

struct LayerNorm {
  Param* gamma = nullptr;
  Param* beta = nullptr;
  int dim = 0;
  double eps = 1e-5;

  void init(ParameterStore& ps, const std::string& name, int dim);
  Mat forward(const Mat& x, Mat* cache_x = nullptr) const;
  Mat backward(const Mat& dy, const Mat& cached_x) const;
};

// Feature-wise affine modulation: y = x .* (1 + s) + t with [s|t] produced
// from a conditioning row by a zero-initialized dense map, so the layer is
// the identity at initialization.
struct Film {
  Dense gen;
  int channels = 0;

  void init(ParameterStore& ps, const std::string& name, int cond_dim, int channels);
  struct Cache {
    Mat x, cond, st;
  };
  Mat forward(const Mat& x, const Mat& cond, Cache* cache = nullptr) const;
  // Returns dx; adds the conditioning gradient into dcond if non-null.
  Mat backward(const Mat& dy, const Cache& cache, Mat* dcond = nullptr) const;
};

struct Embedding {
  Param* table = nullptr;  // [V][C]
  void init(ParameterStore& ps, const std::string& name, int vocab, int dim, Rng& rng);
  Mat forward(const std::vector<int>& idx) const;
  void backward(const Mat& dy, const std::vector<int>& idx) const;
};

enum class InterpMethod { Linear, Nearest };

// Endpoint-inclusive temporal resampling of an L x C map. target_len == L
// is the identity, a length-1 source broadcasts, and a length-1 target
// samples the temporal center.
Mat interpolate_temporal(const Mat& x, int target_len, InterpMethod method = InterpMethod::Linear);
// Transpose of the linear operator above (scatter of dy back to source rows).
Mat interpolate_temporal_backward(const Mat& dy, int source_len,
                                  InterpMethod method = InterpMethod::Linear);

struct BoolMat {
  int rows = 0, cols = 0;
  std::vector<uint8_t> data;
  BoolMat() = default;
  BoolMat(int r, int c, bool fill = false)
      : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill ? 1 : 0) {}
  uint8_t& operator()(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  bool operator()(int r, int c) const { return data[static_cast<size_t>(r) * cols + c] != 0; }
};

// Attention math on already-projected q/k/v blocks; masked-out pairs are
// skipped entirely, so cached decoding can reproduce the exact arithmetic
// of a full pass.
void attention_core(const Mat& q, const Mat& k, const Mat& v, int heads, const BoolMat& mask,
                    Mat* concat, std::vector<Mat>* probs);
void attention_core_backward(const Mat& dconcat, const Mat& q, const Mat& k, const Mat& v,
                             int heads, const BoolMat& mask, const std::vector<Mat>& probs,
                             Mat* dq, Mat* dk, Mat* dv);

// Masked multi-head self-attention over a T x width map.
struct MultiHeadAttention {
  Dense wq, wk, wv, wo;
  int heads = 0, width = 0;

  void init(ParameterStore& ps, const std::string& name, int width, int heads, Rng& rng);

  struct Cache {
    Mat x, q, k, v, concat;
    std::vector<Mat> probs;  // one T x T matrix per head
    const BoolMat* mask = nullptr;
  };
  Mat forward(const Mat& x, const BoolMat& mask, Cache* cache = nullptr) const;
  Mat backward(const Mat& dy, const Cache& cache) const;

  // Decode path: project new rows, append K/V to the running cache, and
  // attend each new row over [0, prefix + its own block) — identical
  // arithmetic to a full forward under the scale mask.
  Mat decode_step(const Mat& x_new, Mat& k_cache, Mat& v_cache, bool attend_within) const;
};

// Mean cross-entropy over rows; fills dlogits (mean-scaled) when non-null.
double softmax_cross_entropy(const Mat& logits, const std::vector<int>& targets, Mat* dlogits);

// Row-wise softmax with temperature 1.
Mat softmax_rows(const Mat& logits);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  int checked = 0;
  bool pass = false;
};

// Central finite differences (step 1e-5) on a random subsample of at least
// `min_checked` coordinates across all trainable params. `loss_with_grad`
// must zero + fill store gradients; `loss_only` must not touch them.
GradCheckReport grad_check(ParameterStore& store, const std::function<double()>& loss_with_grad,
                           const std::function<double()>& loss_only, double tolerance, Rng& rng,
                           int min_checked = 64);

}  // namespace mint::nn
