#include "mint/policy.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mint {

namespace {

nn::Gelu gelu;

Mat slice_rows(const Mat& m, int r0, int n) {
  Mat out(n, m.cols);
  std::copy(m.row(r0), m.row(r0) + static_cast<size_t>(n) * m.cols, out.data.begin());
  return out;
}

void set_rows(Mat& dst, const Mat& src, int r0) {
  std::copy(src.data.begin(), src.data.end(), dst.row(r0));
}

void add_rows(Mat& dst, const Mat& src, int r0) {
  double* d = dst.row(r0);
  for (size_t i = 0; i < src.data.size(); ++i) d[i] += src.data[i];
}

int pyramid_positions(const std::vector<int>& schedule) {
  int n = 0;
  for (int l : schedule) n += l;
  return n;
}

}  // namespace

IntentToken extract_intent(const ActionChunk& chunk, const Sdat& tokenizer) {
  const TokenPyramid pyramid = tokenizer.tokenize(chunk);
  IntentToken intent;
  intent.index = pyramid.maps.front().front();
  const Mat& cb = tokenizer.codebook().vectors;
  intent.embedding.assign(cb.row(intent.index), cb.row(intent.index) + cb.cols);
  return intent;
}

void PolicyConfig::validate() const {
  if (width <= 0 || blocks <= 0 || heads <= 0 || mlp_dim <= 0)
    throw ValidationError("policy: architecture sizes must be positive");
  if (width % heads != 0) throw ValidationError("policy: width not divisible by heads");
  if (proprio_dim <= 0) throw ValidationError("policy: proprio_dim must be positive");
  if (task_conditioned && (num_tasks <= 0 || task_embed_dim <= 0))
    throw ValidationError("policy: task embedding sizes must be positive");
}

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

Policy Policy::init(const PolicyConfig& cfg, const Sdat* tokenizer, uint64_t seed) {
  cfg.validate();
  if (!tokenizer) throw ValidationError("policy: tokenizer required");
  Policy p;
  p.cfg_ = cfg;
  p.tokenizer_ = tokenizer;
  p.build(seed);
  return p;
}

int Policy::total_positions() const {
  return context_len() + pyramid_positions(tokenizer_->config().scales);
}

void Policy::build(uint64_t seed) {
  Rng rng(derive_seed(seed, 0x90fc));
  const int width = cfg_.width;
  const auto& schedule = tokenizer_->config().scales;
  mask_ = build_scale_mask(schedule, context_len());

  proprio_proj_.init(store_, "ctx.proprio", cfg_.proprio_dim, width, rng);
  in_proj_.init(store_, "in_proj", tokenizer_->config().code_dim, width, rng);
  start_emb_ = &store_.create("start_emb", {1, width});
  for (double& v : start_emb_->value.data) v = rng.uniform(-0.02, 0.02);
  pos_emb_ = &store_.create("pos_emb", {total_positions(), width});
  for (double& v : pos_emb_->value.data) v = rng.uniform(-0.02, 0.02);

  blocks_.resize(static_cast<size_t>(cfg_.blocks));
  for (int b = 0; b < cfg_.blocks; ++b) {
    Block& blk = blocks_[static_cast<size_t>(b)];
    const std::string prefix = "block" + std::to_string(b);
    blk.ln1.init(store_, prefix + ".ln1", width);
    blk.attn.init(store_, prefix + ".attn", width, cfg_.heads, rng);
    blk.ln2.init(store_, prefix + ".ln2", width);
    blk.mlp1.init(store_, prefix + ".mlp1", width, cfg_.mlp_dim, rng);
    blk.mlp2.init(store_, prefix + ".mlp2", cfg_.mlp_dim, width, rng);
    if (cfg_.task_conditioned) blk.film.init(store_, prefix + ".film", cfg_.task_embed_dim, width);
  }
  ln_f_.init(store_, "ln_f", width);
  head_.init(store_, "head", width, tokenizer_->config().codebook_size, rng);
  if (cfg_.task_conditioned) task_table_.init(store_, "task_table", cfg_.num_tasks, cfg_.task_embed_dim, rng);
}

nn::BoolMat Policy::build_scale_mask(const std::vector<int>& schedule, int context_len) {
  ScaleSchedule{schedule}.validate();
  const int t_len = context_len + pyramid_positions(schedule);
  nn::BoolMat mask(t_len, t_len);
  // Context attends to context.
  for (int i = 0; i < context_len; ++i)
    for (int j = 0; j < context_len; ++j) mask(i, j) = 1;
  int row = context_len;
  int scale_end = context_len;
  for (int l : schedule) {
    scale_end += l;
    for (int i = 0; i < l; ++i, ++row)
      for (int j = 0; j < scale_end; ++j) mask(row, j) = 1;
  }
  return mask;
}

void Policy::save(const std::string& path) { store_.save(path); }

Policy Policy::load_checkpoint(const PolicyConfig& cfg, const Sdat* tokenizer,
                               const std::string& path) {
  Policy p = init(cfg, tokenizer, 0);
  p.store_.load(path);
  return p;
}

Policy Policy::clone() const {
  Policy p = init(cfg_, tokenizer_, 0);
  p.store_.copy_values_from(store_);
  return p;
}

// ---------------------------------------------------------------------------
// Input embedding
// ---------------------------------------------------------------------------

Mat Policy::cond_row(const PolicyContext& ctx) const {
  if (!cfg_.task_conditioned) return Mat();
  if (ctx.task_id < 0 || ctx.task_id >= cfg_.num_tasks)
    throw ValidationError("policy: task id " + std::to_string(ctx.task_id) + " out of range");
  return task_table_.forward({ctx.task_id});
}

Mat Policy::input_rows(const PolicyContext& ctx, const std::vector<std::vector<int>>& prefix,
                       int upto_scale) const {
  if (static_cast<int>(ctx.proprio.size()) != cfg_.proprio_dim)
    throw ValidationError("policy: proprio size mismatch");
  const auto& schedule = tokenizer_->config().scales;
  if (upto_scale < 1 || upto_scale > static_cast<int>(schedule.size()))
    throw ValidationError("policy: scale index out of range");
  int rows = context_len();
  for (int k = 0; k < upto_scale; ++k) rows += schedule[static_cast<size_t>(k)];

  Mat x(rows, cfg_.width);
  Mat proprio(1, cfg_.proprio_dim);
  for (int i = 0; i < cfg_.proprio_dim; ++i) proprio(0, i) = ctx.proprio[static_cast<size_t>(i)];
  set_rows(x, proprio_proj_.forward(proprio), 0);
  set_rows(x, start_emb_->value, context_len());

  int row = context_len() + schedule[0];
  for (int k = 1; k < upto_scale; ++k) {
    if (static_cast<int>(prefix.size()) < k)
      throw ValidationError("policy: prefix is missing scale " + std::to_string(k));
    std::vector<std::vector<int>> maps(prefix.begin(), prefix.begin() + k);
    const Mat fhat = tokenizer_->rebuild_prefix(maps);
    const Mat feats = nn::interpolate_temporal(fhat, schedule[static_cast<size_t>(k)]);
    set_rows(x, in_proj_.forward(feats), row);
    row += schedule[static_cast<size_t>(k)];
  }
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cfg_.width; ++c) x(r, c) += pos_emb_->value(r, c);
  return x;
}

// ---------------------------------------------------------------------------
// Full-recompute forward (decode oracle, next-scale API, teacher forcing)
// ---------------------------------------------------------------------------

Mat Policy::full_logits(const PolicyContext& ctx, const std::vector<std::vector<int>>& maps,
                        int upto_scale) const {
  const auto& schedule = tokenizer_->config().scales;
  Mat x = input_rows(ctx, maps, upto_scale);
  // The precomputed mask's top-left block is the mask of the truncated
  // sequence because positions are ordered by scale.
  nn::BoolMat mask(x.rows, x.rows);
  for (int i = 0; i < x.rows; ++i)
    for (int j = 0; j < x.rows; ++j) mask(i, j) = mask_(i, j) ? 1 : 0;

  const Mat cond = cond_row(ctx);
  for (const Block& blk : blocks_) {
    Mat h = blk.ln1.forward(x);
    Mat a = blk.attn.forward(h, mask);
    x += a;
    Mat h2 = blk.ln2.forward(x);
    Mat m = blk.mlp2.forward(gelu.forward(blk.mlp1.forward(h2)));
    x += m;
    if (cfg_.task_conditioned) x = blk.film.forward(x, cond);
  }
  const int lk = schedule[static_cast<size_t>(upto_scale - 1)];
  Mat xs = slice_rows(x, x.rows - lk, lk);
  return head_.forward(ln_f_.forward(xs));
}

Mat Policy::forward_next(const PolicyContext& ctx,
                         const std::vector<std::vector<int>>& prefix) const {
  const auto& schedule = tokenizer_->config().scales;
  if (prefix.size() >= schedule.size())
    throw ValidationError("policy: prefix already covers every scale");
  for (size_t k = 0; k < prefix.size(); ++k)
    if (static_cast<int>(prefix[k].size()) != schedule[k])
      throw ValidationError("policy: prefix map " + std::to_string(k + 1) +
                            " does not match the schedule");
  return full_logits(ctx, prefix, static_cast<int>(prefix.size()) + 1);
}

Mat Policy::forward_all(const PolicyContext& ctx, const TokenPyramid& pyramid) const {
  PolicyTrainExample ex{ctx, pyramid};
  std::vector<const PolicyTrainExample*> batch{&ex};
  return batch_forward(batch, nullptr);
}

double Policy::teacher_forced_nll(const PolicyContext& ctx, const TokenPyramid& pyramid) const {
  const Mat logits = forward_all(ctx, pyramid);
  const Mat p = nn::softmax_rows(logits);
  double nll = 0.0;
  int row = 0;
  for (const auto& map : pyramid.maps)
    for (int idx : map) nll -= std::log(std::max(p(row++, idx), 1e-300));
  return nll;
}

// ---------------------------------------------------------------------------
// Batched teacher-forced training path
// ---------------------------------------------------------------------------

struct Policy::BatchCaches {
  int batch = 0, t_len = 0, scale_rows = 0;
  Mat proprio_in;                  // B x S
  Mat prefix_feats;                // (B * sum_{k>=2} l_k) x C
  std::vector<Mat> conds;          // per sample 1 x ted
  struct BlockCache {
    Mat ln1_in, h, q, k, v, concat, ln2_in, mlp_in, mlp_pre, mlp_mid;
    std::vector<std::vector<Mat>> probs;  // per sample, per head
    std::vector<nn::Film::Cache> film;    // per sample
  };
  std::vector<BlockCache> blocks;
  Mat ln_f_in;
  std::vector<int> task_ids;
};

Mat Policy::batch_forward(const std::vector<const PolicyTrainExample*>& batch,
                          BatchCaches* caches) const {
  const auto& schedule = tokenizer_->config().scales;
  const int t_len = total_positions();
  const int b_n = static_cast<int>(batch.size());
  const int width = cfg_.width;
  const int scale_rows = pyramid_positions(schedule);
  const int n_scales = static_cast<int>(schedule.size());

  // Stacked input embedding.
  Mat proprio_in(b_n, cfg_.proprio_dim);
  int prefix_rows_per_sample = 0;
  for (int k = 1; k < n_scales; ++k) prefix_rows_per_sample += schedule[static_cast<size_t>(k)];
  Mat prefix_feats(b_n * std::max(prefix_rows_per_sample, 1), tokenizer_->config().code_dim);

  for (int s = 0; s < b_n; ++s) {
    const PolicyTrainExample& ex = *batch[static_cast<size_t>(s)];
    ex.pyramid.validate(tokenizer_->config().codebook_size);
    if (ex.pyramid.schedule != schedule)
      throw ValidationError("policy: pyramid schedule mismatch");
    if (static_cast<int>(ex.ctx.proprio.size()) != cfg_.proprio_dim)
      throw ValidationError("policy: proprio size mismatch");
    for (int i = 0; i < cfg_.proprio_dim; ++i) proprio_in(s, i) = ex.ctx.proprio[static_cast<size_t>(i)];
    int fr = s * prefix_rows_per_sample;
    for (int k = 1; k < n_scales; ++k) {
      std::vector<std::vector<int>> maps(ex.pyramid.maps.begin(), ex.pyramid.maps.begin() + k);
      const Mat fhat = tokenizer_->rebuild_prefix(maps);
      const Mat feats = nn::interpolate_temporal(fhat, schedule[static_cast<size_t>(k)]);
      for (int r = 0; r < feats.rows; ++r, ++fr)
        std::copy(feats.row(r), feats.row(r) + feats.cols, prefix_feats.row(fr));
    }
  }
  const Mat proprio_rows = proprio_proj_.forward(proprio_in);
  const Mat prefix_rows =
      prefix_rows_per_sample > 0 ? in_proj_.forward(prefix_feats) : Mat(0, width);

  Mat x(b_n * t_len, width);
  for (int s = 0; s < b_n; ++s) {
    const int base = s * t_len;
    set_rows(x, slice_rows(proprio_rows, s, 1), base);
    set_rows(x, start_emb_->value, base + context_len());
    int row = base + context_len() + schedule[0];
    int fr = s * prefix_rows_per_sample;
    for (int k = 1; k < n_scales; ++k) {
      const int lk = schedule[static_cast<size_t>(k)];
      set_rows(x, slice_rows(prefix_rows, fr, lk), row);
      row += lk;
      fr += lk;
    }
    for (int r = 0; r < t_len; ++r)
      for (int c = 0; c < width; ++c) x(base + r, c) += pos_emb_->value(r, c);
  }

  if (caches) {
    caches->batch = b_n;
    caches->t_len = t_len;
    caches->scale_rows = scale_rows;
    caches->proprio_in = proprio_in;
    caches->prefix_feats = prefix_feats;
    caches->blocks.resize(static_cast<size_t>(cfg_.blocks));
    caches->conds.resize(static_cast<size_t>(b_n));
    caches->task_ids.resize(static_cast<size_t>(b_n));
  }

  std::vector<Mat> conds(static_cast<size_t>(b_n));
  if (cfg_.task_conditioned) {
    for (int s = 0; s < b_n; ++s) {
      conds[static_cast<size_t>(s)] = cond_row(batch[static_cast<size_t>(s)]->ctx);
      if (caches) {
        caches->conds[static_cast<size_t>(s)] = conds[static_cast<size_t>(s)];
        caches->task_ids[static_cast<size_t>(s)] = batch[static_cast<size_t>(s)]->ctx.task_id;
      }
    }
  }

  for (int b = 0; b < cfg_.blocks; ++b) {
    const Block& blk = blocks_[static_cast<size_t>(b)];
    BatchCaches::BlockCache* bc = caches ? &caches->blocks[static_cast<size_t>(b)] : nullptr;
    Mat h = blk.ln1.forward(x, bc ? &bc->ln1_in : nullptr);
    Mat q = blk.attn.wq.forward(h);
    Mat k = blk.attn.wk.forward(h);
    Mat v = blk.attn.wv.forward(h);
    Mat concat(b_n * t_len, width);
    if (bc) bc->probs.resize(static_cast<size_t>(b_n));
    for (int s = 0; s < b_n; ++s) {
      Mat qc = slice_rows(q, s * t_len, t_len);
      Mat kc = slice_rows(k, s * t_len, t_len);
      Mat vc = slice_rows(v, s * t_len, t_len);
      Mat cc;
      nn::attention_core(qc, kc, vc, cfg_.heads, mask_, &cc,
                         bc ? &bc->probs[static_cast<size_t>(s)] : nullptr);
      set_rows(concat, cc, s * t_len);
    }
    Mat a = blk.attn.wo.forward(concat);
    if (bc) {
      bc->h = h;
      bc->q = std::move(q);
      bc->k = std::move(k);
      bc->v = std::move(v);
      bc->concat = std::move(concat);
    }
    x += a;
    Mat h2 = blk.ln2.forward(x, bc ? &bc->ln2_in : nullptr);
    Mat m1 = blk.mlp1.forward(h2, bc ? &bc->mlp_in : nullptr);
    Mat g = gelu.forward(m1, bc ? &bc->mlp_pre : nullptr);
    Mat m2 = blk.mlp2.forward(g, bc ? &bc->mlp_mid : nullptr);
    x += m2;
    if (cfg_.task_conditioned) {
      if (bc) bc->film.resize(static_cast<size_t>(b_n));
      for (int s = 0; s < b_n; ++s) {
        Mat xs = slice_rows(x, s * t_len, t_len);
        Mat ys = blk.film.forward(xs, conds[static_cast<size_t>(s)],
                                  bc ? &bc->film[static_cast<size_t>(s)] : nullptr);
        set_rows(x, ys, s * t_len);
      }
    }
  }

  // Head over scale positions only.
  Mat xs(b_n * scale_rows, width);
  for (int s = 0; s < b_n; ++s)
    set_rows(xs, slice_rows(x, s * t_len + context_len(), scale_rows), s * scale_rows);
  Mat normed = ln_f_.forward(xs, caches ? &caches->ln_f_in : nullptr);
  return head_.forward(normed);
}

void Policy::batch_backward(const Mat& dlogits, const BatchCaches& caches) const {
  const int b_n = caches.batch;
  const int t_len = caches.t_len;
  const int width = cfg_.width;
  const int scale_rows = caches.scale_rows;

  const Mat normed = ln_f_.forward(caches.ln_f_in);
  Mat dnormed = head_.backward(dlogits, normed);
  Mat dxs = ln_f_.backward(dnormed, caches.ln_f_in);

  Mat dx(b_n * t_len, width);
  for (int s = 0; s < b_n; ++s)
    set_rows(dx, slice_rows(dxs, s * scale_rows, scale_rows), s * t_len + context_len());

  for (int b = cfg_.blocks - 1; b >= 0; --b) {
    const Block& blk = blocks_[static_cast<size_t>(b)];
    const BatchCaches::BlockCache& bc = caches.blocks[static_cast<size_t>(b)];
    if (cfg_.task_conditioned) {
      for (int s = 0; s < b_n; ++s) {
        Mat dys = slice_rows(dx, s * t_len, t_len);
        Mat dcond(1, cfg_.task_embed_dim);
        Mat dxs2 = blk.film.backward(dys, bc.film[static_cast<size_t>(s)], &dcond);
        set_rows(dx, dxs2, s * t_len);
        task_table_.backward(dcond, {caches.task_ids[static_cast<size_t>(s)]});
      }
    }
    // MLP branch.
    Mat dg = blk.mlp2.backward(dx, bc.mlp_mid);
    Mat dm1 = gelu.backward(dg, bc.mlp_pre);
    Mat dh2 = blk.mlp1.backward(dm1, bc.mlp_in);
    dx += blk.ln2.backward(dh2, bc.ln2_in);
    // Attention branch.
    Mat dconcat = blk.attn.wo.backward(dx, bc.concat);
    Mat dq(b_n * t_len, width), dk(b_n * t_len, width), dv(b_n * t_len, width);
    for (int s = 0; s < b_n; ++s) {
      Mat dcs = slice_rows(dconcat, s * t_len, t_len);
      Mat qs = slice_rows(bc.q, s * t_len, t_len);
      Mat ks = slice_rows(bc.k, s * t_len, t_len);
      Mat vs = slice_rows(bc.v, s * t_len, t_len);
      Mat dqs, dks, dvs;
      nn::attention_core_backward(dcs, qs, ks, vs, cfg_.heads, mask_,
                                  bc.probs[static_cast<size_t>(s)], &dqs, &dks, &dvs);
      set_rows(dq, dqs, s * t_len);
      set_rows(dk, dks, s * t_len);
      set_rows(dv, dvs, s * t_len);
    }
    Mat dh = blk.attn.wq.backward(dq, bc.h);
    dh += blk.attn.wk.backward(dk, bc.h);
    dh += blk.attn.wv.backward(dv, bc.h);
    dx += blk.ln1.backward(dh, bc.ln1_in);
  }

  // Input embeddings.
  const auto& schedule = tokenizer_->config().scales;
  const int n_scales = static_cast<int>(schedule.size());
  int prefix_rows_per_sample = 0;
  for (int k = 1; k < n_scales; ++k) prefix_rows_per_sample += schedule[static_cast<size_t>(k)];

  Mat dproprio_rows(b_n, width);
  Mat dprefix_rows(std::max(b_n * prefix_rows_per_sample, 1), width);
  for (int s = 0; s < b_n; ++s) {
    const int base = s * t_len;
    for (int r = 0; r < t_len; ++r)
      for (int c = 0; c < width; ++c) pos_emb_->grad(r, c) += dx(base + r, c);
    set_rows(dproprio_rows, slice_rows(dx, base, 1), s);
    add_rows(start_emb_->grad, slice_rows(dx, base + context_len(), 1), 0);
    int row = base + context_len() + schedule[0];
    int fr = s * prefix_rows_per_sample;
    for (int k = 1; k < n_scales; ++k) {
      const int lk = schedule[static_cast<size_t>(k)];
      set_rows(dprefix_rows, slice_rows(dx, row, lk), fr);
      row += lk;
      fr += lk;
    }
  }
  proprio_proj_.backward(dproprio_rows, caches.proprio_in);
  if (prefix_rows_per_sample > 0) in_proj_.backward(dprefix_rows, caches.prefix_feats);
}

double Policy::loss_and_gradients(const std::vector<PolicyTrainExample>& batch) {
  std::vector<const PolicyTrainExample*> ptrs;
  std::vector<int> targets;
  for (const auto& ex : batch) {
    ptrs.push_back(&ex);
    for (const auto& map : ex.pyramid.maps)
      for (int idx : map) targets.push_back(idx);
  }
  BatchCaches caches;
  const Mat logits = batch_forward(ptrs, &caches);
  Mat dlogits;
  const double ce = nn::softmax_cross_entropy(logits, targets, &dlogits);
  batch_backward(dlogits, caches);
  return ce;
}

PolicyTrainLog Policy::train(const std::vector<PolicyTrainExample>& dataset,
                             const PolicyTrainConfig& train_cfg) {
  if (dataset.empty()) throw ValidationError("policy train: empty dataset");
  train_cfg.opt.validate();
  Rng rng(derive_seed(train_cfg.seed, 0x90fcdead));

  std::vector<size_t> order(dataset.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  PolicyTrainLog log;
  int64_t step = 0;
  for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<size_t>(rng.uniform_int(static_cast<int>(i)))]);

    double ce_sum = 0.0;
    int batches = 0;
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(train_cfg.opt.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(train_cfg.opt.batch_size));
      std::vector<const PolicyTrainExample*> batch;
      std::vector<int> targets;
      for (size_t i = start; i < end; ++i) {
        batch.push_back(&dataset[order[i]]);
        for (const auto& map : dataset[order[i]].pyramid.maps)
          for (int idx : map) targets.push_back(idx);
      }
      store_.zero_grads();
      BatchCaches caches;
      const Mat logits = batch_forward(batch, &caches);
      Mat dlogits;
      const double ce = nn::softmax_cross_entropy(logits, targets, &dlogits);
      if (!std::isfinite(ce))
        throw ValidationError("policy train: loss diverged at step " + std::to_string(step));
      batch_backward(dlogits, caches);
      ++step;
      nn::adamw_step(store_, train_cfg.opt, step);
      ce_sum += ce;
      ++batches;
    }
    log.epoch_ce.push_back(ce_sum / batches);
  }
  return log;
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

namespace {

int sample_from_logits(const double* logits, int n, double temperature, Rng& rng) {
  if (temperature <= 0.0) {
    int best = 0;
    for (int i = 1; i < n; ++i)
      if (logits[i] > logits[best]) best = i;
    return best;
  }
  double mx = logits[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
  thread_local std::vector<double> p;
  p.assign(static_cast<size_t>(n), 0.0);
  double denom = 0.0;
  for (int i = 0; i < n; ++i) {
    p[static_cast<size_t>(i)] = std::exp((logits[i] - mx) / temperature);
    denom += p[static_cast<size_t>(i)];
  }
  const double u = rng.uniform01() * denom;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    acc += p[static_cast<size_t>(i)];
    if (u < acc) return i;
  }
  return n - 1;
}

}  // namespace

TokenPyramid Policy::sample_impl(const PolicyContext& ctx, double temperature, uint64_t seed,
                                 std::optional<int> fixed_intent, std::string* trace,
                                 bool cached) const {
  if (temperature < 0.0) throw ValidationError("policy: temperature must be >= 0");
  const auto& schedule = tokenizer_->config().scales;
  const int vocab = tokenizer_->config().codebook_size;
  const int n_scales = static_cast<int>(schedule.size());
  if (fixed_intent && (*fixed_intent < 0 || *fixed_intent >= vocab))
    throw ValidationError("policy: fixed intent index out of range");
  Rng rng(derive_seed(seed, 0x5a3));

  const Mat cond = cond_row(ctx);
  std::vector<std::pair<Mat, Mat>> kv(static_cast<size_t>(cfg_.blocks));
  for (auto& e : kv) {
    e.first = Mat(0, cfg_.width);
    e.second = Mat(0, cfg_.width);
  }

  auto run_rows = [&](const Mat& rows) {
    Mat x = rows;
    for (int b = 0; b < cfg_.blocks; ++b) {
      const Block& blk = blocks_[static_cast<size_t>(b)];
      Mat h = blk.ln1.forward(x);
      Mat a = blk.attn.decode_step(h, kv[static_cast<size_t>(b)].first,
                                   kv[static_cast<size_t>(b)].second, true);
      x += a;
      Mat h2 = blk.ln2.forward(x);
      Mat m = blk.mlp2.forward(gelu.forward(blk.mlp1.forward(h2)));
      x += m;
      if (cfg_.task_conditioned) x = blk.film.forward(x, cond);
    }
    return x;
  };

  std::vector<std::vector<int>> maps;
  std::ostringstream trace_os;
  int next_pos = 0;

  if (cached) {
    // Context rows prime the cache.
    Mat ctx_rows = input_rows(ctx, {}, 1);
    Mat first = slice_rows(ctx_rows, 0, context_len());
    run_rows(first);
    next_pos = context_len();
    (void)next_pos;
  }

  for (int k = 0; k < n_scales; ++k) {
    const int lk = schedule[static_cast<size_t>(k)];
    Mat logits;
    if (cached) {
      Mat all_rows = input_rows(ctx, maps, k + 1);
      Mat rows = slice_rows(all_rows, all_rows.rows - lk, lk);
      Mat x = run_rows(rows);
      logits = head_.forward(ln_f_.forward(x));
    } else {
      logits = full_logits(ctx, maps, k + 1);
    }
    std::vector<int> tokens(static_cast<size_t>(lk));
    for (int r = 0; r < lk; ++r) {
      if (k == 0 && fixed_intent) {
        tokens[static_cast<size_t>(r)] = *fixed_intent;
        continue;
      }
      tokens[static_cast<size_t>(r)] = sample_from_logits(logits.row(r), vocab, temperature, rng);
    }
    if (trace) {
      for (int r = 0; r < lk; ++r) {
        trace_os << "scale=" << (k + 1) << "; pos=" << r << "; chosen=" << tokens[static_cast<size_t>(r)]
                 << "; logits=";
        for (int v = 0; v < vocab; ++v) trace_os << (v ? "," : "") << logits(r, v);
        trace_os << "\n";
      }
    }
    maps.push_back(std::move(tokens));
  }

  if (trace) *trace = trace_os.str();
  TokenPyramid out;
  out.schedule = schedule;
  out.maps = std::move(maps);
  return out;
}

TokenPyramid Policy::sample(const PolicyContext& ctx, double temperature, uint64_t seed,
                            std::optional<int> fixed_intent, std::string* trace) const {
  return sample_impl(ctx, temperature, seed, fixed_intent, trace, true);
}

TokenPyramid Policy::sample_uncached(const PolicyContext& ctx, double temperature, uint64_t seed,
                                     std::optional<int> fixed_intent) const {
  return sample_impl(ctx, temperature, seed, fixed_intent, nullptr, false);
}

}  // namespace mint
