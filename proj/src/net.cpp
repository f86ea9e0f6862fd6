#include "sherd/net.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace sherd {

void NetConfig::validate() const {
  if (classes < 1) fail(Errc::InvariantViolation, "net needs at least one class");
  if (k < 1) fail(Errc::InvariantViolation, "net needs at least one point per sample");
  if (branch_widths.empty() || fusion_widths.empty())
    fail(Errc::InvariantViolation, "branch and fusion stages need at least one layer");
  for (const auto* widths : {&branch_widths, &fusion_widths, &head_widths})
    for (int w : *widths)
      if (w < 1) fail(Errc::InvariantViolation, "layer widths must be positive");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    fail(Errc::InvariantViolation, "dropout rate must be in [0, 1)");
}

int NetConfig::point_feature_width() const {
  return branch_widths.back() * (use_angle_branch ? 2 : 1);
}

int NetConfig::pooled_width() const { return fusion_widths.back(); }

NetConfig NetConfig::with_defaults(int classes, int k) {
  NetConfig cfg;
  cfg.classes = classes;
  cfg.k = k;
  return cfg;
}

NetConfig NetConfig::toy(int classes, int k) {
  NetConfig cfg;
  cfg.classes = classes;
  cfg.k = k;
  cfg.branch_widths = {8, 16};
  cfg.fusion_widths = {24};
  cfg.head_widths = {12};
  cfg.dropout_rate = 0.0;  // gradient checks need a smooth graph
  return cfg;
}

namespace {

template <typename T>
Dense<T> init_dense(Rng& rng, int in, int out) {
  Dense<T> d;
  d.w = Mat<T>(in, out);
  d.b.assign(out, T(0));
  const double limit = std::sqrt(6.0 / in);
  std::uniform_real_distribution<double> u(-limit, limit);
  for (T& x : d.w.v) x = static_cast<T>(u(rng));
  return d;
}

template <typename T>
std::vector<Dense<T>> init_stage(Rng& rng, int in, const std::vector<int>& widths) {
  std::vector<Dense<T>> layers;
  layers.reserve(widths.size());
  for (int out : widths) {
    layers.push_back(init_dense<T>(rng, in, out));
    in = out;
  }
  return layers;
}

// y = x * W + b
template <typename T>
Mat<T> affine(const Mat<T>& x, const Dense<T>& layer) {
  Mat<T> y(x.rows, layer.w.cols);
  matmul(y, x, false, layer.w, false);
  for (int r = 0; r < y.rows; ++r) {
    T* row = &y.at(r, 0);
    for (int c = 0; c < y.cols; ++c) row[c] += layer.b[c];
  }
  return y;
}

template <typename T>
void relu_inplace(Mat<T>& x) {
  for (T& v : x.v) v = v > T(0) ? v : T(0);
}

}  // namespace

template <typename T>
NetParams<T> init_params(Rng& rng, const NetConfig& cfg) {
  cfg.validate();
  NetParams<T> p;
  p.loc = init_stage<T>(rng, 4, cfg.branch_widths);
  if (cfg.use_angle_branch) p.ang = init_stage<T>(rng, 4, cfg.branch_widths);
  p.fusion = init_stage<T>(rng, cfg.point_feature_width(), cfg.fusion_widths);
  std::vector<int> head = cfg.head_widths;
  head.push_back(cfg.classes);
  p.head = init_stage<T>(rng, cfg.pooled_width(), head);
  return p;
}

template <typename T>
Batch<T> pack_batch(const std::vector<EncodedSample>& samples) {
  if (samples.empty()) fail(Errc::ShapeMismatch, "empty batch");
  Batch<T> batch;
  batch.b = static_cast<int>(samples.size());
  batch.k = samples[0].k;
  batch.loc = Mat<T>(batch.b * batch.k, 4);
  batch.ang = Mat<T>(batch.b * batch.k, 4);
  batch.labels.reserve(samples.size());
  for (int s = 0; s < batch.b; ++s) {
    const EncodedSample& e = samples[s];
    if (e.k != batch.k || e.loc.size() != static_cast<size_t>(e.k) * 4 ||
        e.ang.size() != e.loc.size())
      fail(Errc::ShapeMismatch, "inconsistent sample shapes in batch");
    for (int i = 0; i < batch.k * 4; ++i) {
      batch.loc.v[static_cast<size_t>(s) * batch.k * 4 + i] = static_cast<T>(e.loc[i]);
      batch.ang.v[static_cast<size_t>(s) * batch.k * 4 + i] = static_cast<T>(e.ang[i]);
    }
    batch.labels.push_back(e.label ? *e.label : -1);
  }
  return batch;
}

template <typename T>
Mat<T> forward(const NetParams<T>& params, const NetConfig& cfg, const Batch<T>& batch,
               NetMode mode, Rng* rng, NetCache<T>* cache) {
  cfg.validate();
  // The point count is a free dimension: shared per-point layers and the
  // max pool work for any K, and evaluation legitimately samples more
  // points than training (cfg.k records the training default).
  const int n = batch.b * batch.k;
  if (batch.b < 1 || batch.k < 1) fail(Errc::ShapeMismatch, "empty batch");
  if (batch.loc.rows != n || batch.loc.cols != 4)
    fail(Errc::ShapeMismatch, "loc input must be (b*k) x 4");
  if (cfg.use_angle_branch && (batch.ang.rows != n || batch.ang.cols != 4))
    fail(Errc::ShapeMismatch, "ang input must be (b*k) x 4");
  const bool want_dropout = mode == NetMode::Train && cfg.dropout_rate > 0.0;
  if (want_dropout && rng == nullptr)
    fail(Errc::InvariantViolation, "train-mode forward needs a random source for dropout");

  auto run_stage = [](const Mat<T>& input, const std::vector<Dense<T>>& layers,
                      std::vector<Mat<T>>* acts) {
    Mat<T> cur = input;
    for (const Dense<T>& layer : layers) {
      cur = affine(cur, layer);
      relu_inplace(cur);
      if (acts) acts->push_back(cur);
    }
    return cur;
  };

  std::vector<Mat<T>> loc_acts, ang_acts, fusion_acts;
  const Mat<T> loc_out = run_stage(batch.loc, params.loc, cache ? &loc_acts : nullptr);
  Mat<T> concat;
  if (cfg.use_angle_branch) {
    const Mat<T> ang_out = run_stage(batch.ang, params.ang, cache ? &ang_acts : nullptr);
    concat = Mat<T>(n, loc_out.cols + ang_out.cols);
    for (int r = 0; r < n; ++r) {
      T* dst = concat.data() + static_cast<size_t>(r) * concat.cols;
      std::copy_n(loc_out.data() + static_cast<size_t>(r) * loc_out.cols, loc_out.cols, dst);
      std::copy_n(ang_out.data() + static_cast<size_t>(r) * ang_out.cols, ang_out.cols,
                  dst + loc_out.cols);
    }
  } else {
    concat = loc_out;
  }
  const Mat<T> fusion_out = run_stage(concat, params.fusion, cache ? &fusion_acts : nullptr);

  // Element-wise max over each sample's K points.
  const int fw = fusion_out.cols;
  Mat<T> pooled(batch.b, fw);
  std::vector<int> argmax(static_cast<size_t>(batch.b) * fw, 0);
  for (int s = 0; s < batch.b; ++s) {
    for (int f = 0; f < fw; ++f) {
      T best = fusion_out.at(s * batch.k, f);
      int best_k = 0;
      for (int p = 1; p < batch.k; ++p) {
        const T v = fusion_out.at(s * batch.k + p, f);
        if (v > best) {
          best = v;
          best_k = p;
        }
      }
      pooled.at(s, f) = best;
      argmax[static_cast<size_t>(s) * fw + f] = best_k;
    }
  }

  // Head: ReLU + dropout after every layer except the last.
  std::vector<Mat<T>> head_acts, drop_mask;
  Mat<T> cur = pooled;
  const T keep = static_cast<T>(1.0 - cfg.dropout_rate);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (size_t l = 0; l < params.head.size(); ++l) {
    const bool last = l + 1 == params.head.size();
    cur = affine(cur, params.head[l]);
    if (last) break;
    relu_inplace(cur);
    if (want_dropout) {
      Mat<T> mask(cur.rows, cur.cols);
      for (size_t i = 0; i < mask.v.size(); ++i)
        mask.v[i] = unit(*rng) < cfg.dropout_rate ? T(0) : T(1) / keep;
      for (size_t i = 0; i < cur.v.size(); ++i) cur.v[i] *= mask.v[i];
      drop_mask.push_back(std::move(mask));
    } else if (cache) {
      // Backward replays masks; identity when dropout was off.
      Mat<T> mask(cur.rows, cur.cols);
      std::fill(mask.v.begin(), mask.v.end(), T(1));
      drop_mask.push_back(std::move(mask));
    }
    if (cache) head_acts.push_back(cur);
  }
  Mat<T> logits = cur;

  // Row-stable softmax.
  Mat<T> probs(batch.b, cfg.classes);
  for (int r = 0; r < batch.b; ++r) {
    T mx = logits.at(r, 0);
    for (int c = 1; c < cfg.classes; ++c) mx = std::max(mx, logits.at(r, c));
    T sum = T(0);
    for (int c = 0; c < cfg.classes; ++c) {
      const T e = std::exp(logits.at(r, c) - mx);
      probs.at(r, c) = e;
      sum += e;
    }
    for (int c = 0; c < cfg.classes; ++c) probs.at(r, c) /= sum;
  }

  if (cache) {
    cache->valid = true;
    cache->mode = mode;
    cache->b = batch.b;
    cache->k = batch.k;
    cache->x_loc = batch.loc;
    cache->x_ang = batch.ang;
    cache->loc_acts = std::move(loc_acts);
    cache->ang_acts = std::move(ang_acts);
    cache->concat = std::move(concat);
    cache->fusion_acts = std::move(fusion_acts);
    cache->pooled = std::move(pooled);
    cache->argmax = std::move(argmax);
    cache->head_acts = std::move(head_acts);
    cache->drop_mask = std::move(drop_mask);
    cache->logits = std::move(logits);
    cache->probs = probs;
  }
  return probs;
}

namespace {

// Backward through one dense layer: fills the layer gradient and returns
// d(input). `input` is what the forward fed into the layer.
template <typename T>
Mat<T> dense_backward(const Mat<T>& input, const Dense<T>& layer, const Mat<T>& dout,
                      Dense<T>& grad) {
  grad.w = Mat<T>(layer.w.rows, layer.w.cols);
  matmul(grad.w, input, true, dout, false);
  grad.b.assign(layer.b.size(), T(0));
  for (int r = 0; r < dout.rows; ++r)
    for (int c = 0; c < dout.cols; ++c) grad.b[c] += dout.at(r, c);
  Mat<T> din(input.rows, input.cols);
  matmul(din, dout, false, layer.w, true);
  return din;
}

template <typename T>
void relu_backward_inplace(Mat<T>& d, const Mat<T>& act) {
  for (size_t i = 0; i < d.v.size(); ++i)
    if (!(act.v[i] > T(0))) d.v[i] = T(0);
}

}  // namespace

template <typename T>
NetParams<T> backward(const NetParams<T>& params, const NetConfig& cfg,
                      const NetCache<T>& cache, const Mat<T>& dlogits) {
  if (!cache.valid) fail(Errc::StaleCache, "backward without a recorded forward");
  if (cache.mode != NetMode::Train)
    fail(Errc::StaleCache, "backward needs a train-mode forward cache");
  if (dlogits.rows != cache.b || dlogits.cols != cfg.classes)
    fail(Errc::ShapeMismatch, "dlogits must be batch x classes");

  NetParams<T> grads;
  grads.loc.resize(params.loc.size());
  grads.ang.resize(params.ang.size());
  grads.fusion.resize(params.fusion.size());
  grads.head.resize(params.head.size());

  // Head, last layer first.
  Mat<T> d = dlogits;
  for (size_t li = params.head.size(); li-- > 0;) {
    const Mat<T>& input = li == 0 ? cache.pooled : cache.head_acts[li - 1];
    Mat<T> din = dense_backward(input, params.head[li], d, grads.head[li]);
    if (li > 0) {
      const Mat<T>& mask = cache.drop_mask[li - 1];
      const Mat<T>& act = cache.head_acts[li - 1];
      for (size_t i = 0; i < din.v.size(); ++i) din.v[i] *= mask.v[i];
      relu_backward_inplace(din, act);
    }
    d = std::move(din);
  }

  // Un-pool: gradient flows only to each feature's argmax point.
  const int fw = cfg.pooled_width();
  Mat<T> dfusion(cache.b * cache.k, fw);
  for (int s = 0; s < cache.b; ++s)
    for (int f = 0; f < fw; ++f) {
      const int p = cache.argmax[static_cast<size_t>(s) * fw + f];
      dfusion.at(s * cache.k + p, f) = d.at(s, f);
    }

  // Fusion stage.
  Mat<T> dcur = std::move(dfusion);
  for (size_t li = params.fusion.size(); li-- > 0;) {
    relu_backward_inplace(dcur, cache.fusion_acts[li]);
    const Mat<T>& input = li == 0 ? cache.concat : cache.fusion_acts[li - 1];
    dcur = dense_backward(input, params.fusion[li], dcur, grads.fusion[li]);
  }

  // Split the per-point features back into the two branches.
  auto stage_backward = [&](const Mat<T>& x0, const std::vector<Dense<T>>& layers,
                            const std::vector<Mat<T>>& acts, Mat<T> dout,
                            std::vector<Dense<T>>& grad_out) {
    for (size_t li = layers.size(); li-- > 0;) {
      relu_backward_inplace(dout, acts[li]);
      const Mat<T>& input = li == 0 ? x0 : acts[li - 1];
      dout = dense_backward(input, layers[li], dout, grad_out[li]);
    }
  };

  if (cfg.use_angle_branch) {
    const int bw = cfg.branch_widths.back();
    Mat<T> dloc(dcur.rows, bw), dang(dcur.rows, bw);
    for (int r = 0; r < dcur.rows; ++r) {
      std::copy_n(&dcur.at(r, 0), bw, &dloc.at(r, 0));
      std::copy_n(&dcur.at(r, bw), bw, &dang.at(r, 0));
    }
    stage_backward(cache.x_loc, params.loc, cache.loc_acts, std::move(dloc), grads.loc);
    stage_backward(cache.x_ang, params.ang, cache.ang_acts, std::move(dang), grads.ang);
  } else {
    stage_backward(cache.x_loc, params.loc, cache.loc_acts, std::move(dcur), grads.loc);
  }
  return grads;
}

template <typename T>
AdamState<T> make_adam(const NetParams<T>& params, double lr) {
  AdamState<T> st;
  st.lr = lr;
  auto zero_like = [](const NetParams<T>& src) {
    NetParams<T> z;
    auto zero_stage = [](const std::vector<Dense<T>>& stage) {
      std::vector<Dense<T>> out;
      out.reserve(stage.size());
      for (const Dense<T>& d : stage) {
        Dense<T> zd;
        zd.w = Mat<T>(d.w.rows, d.w.cols);
        zd.b.assign(d.b.size(), T(0));
        out.push_back(std::move(zd));
      }
      return out;
    };
    z.loc = zero_stage(src.loc);
    z.ang = zero_stage(src.ang);
    z.fusion = zero_stage(src.fusion);
    z.head = zero_stage(src.head);
    return z;
  };
  st.m = zero_like(params);
  st.v = zero_like(params);
  return st;
}

template <typename T>
void adam_step(NetParams<T>& params, const NetParams<T>& grads, AdamState<T>& state) {
  state.step += 1;
  const double b1 = state.beta1, b2 = state.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));

  auto update = [&](T& p, const T g, T& m, T& v) {
    const double gd = static_cast<double>(g);
    const double md = b1 * static_cast<double>(m) + (1.0 - b1) * gd;
    const double vd = b2 * static_cast<double>(v) + (1.0 - b2) * gd * gd;
    m = static_cast<T>(md);
    v = static_cast<T>(vd);
    const double mhat = md / bc1;
    const double vhat = vd / bc2;
    p = static_cast<T>(static_cast<double>(p) - state.lr * mhat / (std::sqrt(vhat) + state.eps));
  };

  auto walk = [&](std::vector<Dense<T>>& ps, const std::vector<Dense<T>>& gs,
                  std::vector<Dense<T>>& ms, std::vector<Dense<T>>& vs) {
    if (ps.size() != gs.size()) fail(Errc::ShapeMismatch, "gradient stage count mismatch");
    for (size_t l = 0; l < ps.size(); ++l) {
      if (ps[l].w.size() != gs[l].w.size() || ps[l].b.size() != gs[l].b.size())
        fail(Errc::ShapeMismatch, "gradient tensor shape mismatch");
      for (size_t i = 0; i < ps[l].w.v.size(); ++i)
        update(ps[l].w.v[i], gs[l].w.v[i], ms[l].w.v[i], vs[l].w.v[i]);
      for (size_t i = 0; i < ps[l].b.size(); ++i)
        update(ps[l].b[i], gs[l].b[i], ms[l].b[i], vs[l].b[i]);
    }
  };
  walk(params.loc, grads.loc, state.m.loc, state.v.loc);
  walk(params.ang, grads.ang, state.m.ang, state.v.ang);
  walk(params.fusion, grads.fusion, state.m.fusion, state.v.fusion);
  walk(params.head, grads.head, state.m.head, state.v.head);
}

template NetParams<float> init_params<float>(Rng&, const NetConfig&);
template NetParams<double> init_params<double>(Rng&, const NetConfig&);
template Batch<float> pack_batch<float>(const std::vector<EncodedSample>&);
template Batch<double> pack_batch<double>(const std::vector<EncodedSample>&);
template Mat<float> forward<float>(const NetParams<float>&, const NetConfig&,
                                   const Batch<float>&, NetMode, Rng*, NetCache<float>*);
template Mat<double> forward<double>(const NetParams<double>&, const NetConfig&,
                                     const Batch<double>&, NetMode, Rng*, NetCache<double>*);
template NetParams<float> backward<float>(const NetParams<float>&, const NetConfig&,
                                          const NetCache<float>&, const Mat<float>&);
template NetParams<double> backward<double>(const NetParams<double>&, const NetConfig&,
                                            const NetCache<double>&, const Mat<double>&);
template AdamState<float> make_adam<float>(const NetParams<float>&, double);
template AdamState<double> make_adam<double>(const NetParams<double>&, double);
template void adam_step<float>(NetParams<float>&, const NetParams<float>&, AdamState<float>&);
template void adam_step<double>(NetParams<double>&, const NetParams<double>&,
                                AdamState<double>&);

}  // namespace sherd
