#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "doctest.h"
#include "sherd/net.hpp"
#include "sherd/pointprep.hpp"

using namespace sherd;

namespace {

Batch<double> random_batch(const NetConfig& cfg, int b, Rng& rng,
                           const std::vector<int>& labels) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Batch<double> batch;
  batch.b = b;
  batch.k = cfg.k;
  batch.loc = Mat<double>(b * cfg.k, 4);
  batch.ang = Mat<double>(b * cfg.k, 4);
  for (double& v : batch.loc.v) v = gauss(rng);
  for (double& v : batch.ang.v) v = gauss(rng);
  batch.labels = labels;
  return batch;
}

// Sum of per-sample cross-entropies against the batch labels.
template <typename T>
double ce_loss(const Mat<T>& probs, const std::vector<int>& labels) {
  double loss = 0.0;
  for (int r = 0; r < probs.rows; ++r)
    loss -= std::log(static_cast<double>(probs.at(r, labels[r])));
  return loss;
}

template <typename T>
Mat<T> ce_dlogits(const Mat<T>& probs, const std::vector<int>& labels, double scale) {
  Mat<T> d = probs;
  for (int r = 0; r < d.rows; ++r) d.at(r, labels[r]) -= T(1);
  for (T& v : d.v) v = static_cast<T>(v * scale);
  return d;
}

template <typename T>
double max_abs_diff(const NetParams<T>& a, const NetParams<T>& b) {
  double worst = 0.0;
  const std::vector<Dense<T>>* ga[] = {&a.loc, &a.ang, &a.fusion, &a.head};
  const std::vector<Dense<T>>* gb[] = {&b.loc, &b.ang, &b.fusion, &b.head};
  for (int g = 0; g < 4; ++g) {
    REQUIRE(ga[g]->size() == gb[g]->size());
    for (size_t l = 0; l < ga[g]->size(); ++l) {
      for (size_t i = 0; i < (*ga[g])[l].w.v.size(); ++i)
        worst = std::max(worst, std::abs(static_cast<double>((*ga[g])[l].w.v[i]) -
                                         static_cast<double>((*gb[g])[l].w.v[i])));
      for (size_t i = 0; i < (*ga[g])[l].b.size(); ++i)
        worst = std::max(worst, std::abs(static_cast<double>((*ga[g])[l].b[i]) -
                                         static_cast<double>((*gb[g])[l].b[i])));
    }
  }
  return worst;
}

double variance(const std::vector<double>& v) {
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  double acc = 0.0;
  for (double x : v) acc += (x - mean) * (x - mean);
  return acc / v.size();
}

template <typename T>
double stage_variance(const Mat<T>& m) {
  std::vector<double> flat(m.v.begin(), m.v.end());
  return variance(flat);
}

}  // namespace

TEST_CASE("config validation rejects broken layouts") {
  CHECK_THROWS_AS(NetConfig::with_defaults(0, 16).validate(), SherdError);
  CHECK_THROWS_AS(NetConfig::with_defaults(3, 0).validate(), SherdError);
  NetConfig bad = NetConfig::toy(3, 16);
  bad.dropout_rate = 1.0;
  CHECK_THROWS_AS(bad.validate(), SherdError);
  bad = NetConfig::toy(3, 16);
  bad.fusion_widths.clear();
  CHECK_THROWS_AS(bad.validate(), SherdError);
  bad = NetConfig::toy(3, 16);
  bad.branch_widths = {8, -2};
  CHECK_THROWS_AS(bad.validate(), SherdError);

  const NetConfig full = NetConfig::with_defaults(7, 512);
  CHECK_NOTHROW(full.validate());
  CHECK(full.point_feature_width() == 512);
  CHECK(full.pooled_width() == 1024);
  NetConfig loc_only = full;
  loc_only.use_angle_branch = false;
  CHECK(loc_only.point_feature_width() == 256);
}

TEST_CASE("initialization is deterministic with zero biases") {
  const NetConfig cfg = NetConfig::toy(3, 16);
  Rng a = make_rng(7), b = make_rng(7), c = make_rng(8);
  const auto pa = init_params<double>(a, cfg);
  const auto pb = init_params<double>(b, cfg);
  const auto pc = init_params<double>(c, cfg);
  CHECK(max_abs_diff(pa, pb) == 0.0);
  CHECK(max_abs_diff(pa, pc) > 0.0);

  bool all_bias_zero = true;
  for_each_layer(pa, [&](const Dense<double>& l) {
    for (double v : l.b) all_bias_zero = all_bias_zero && v == 0.0;
  });
  CHECK(all_bias_zero);

  // Single-class config still produces a one-wide final layer.
  Rng d = make_rng(9);
  const auto p1 = init_params<double>(d, NetConfig::toy(1, 8));
  CHECK(p1.head.back().w.cols == 1);
}

TEST_CASE("white-noise input keeps activation variance bounded through the stack") {
  NetConfig cfg = NetConfig::with_defaults(5, 32);
  Rng rng = make_rng(21);
  const auto params = init_params<double>(rng, cfg);
  Rng data_rng = make_rng(22);
  const Batch<double> batch = random_batch(cfg, 8, data_rng, std::vector<int>(8, 0));
  NetCache<double> cache;
  forward(params, cfg, batch, NetMode::Eval, nullptr, &cache);

  auto check_stage = [&](const std::vector<Mat<double>>& acts) {
    for (const auto& act : acts) {
      const double var = stage_variance(act);
      CHECK(var > 0.1);
      CHECK(var < 10.0);
    }
  };
  check_stage(cache.loc_acts);
  check_stage(cache.ang_acts);
  check_stage(cache.fusion_acts);
  check_stage(cache.head_acts);
}

TEST_CASE("probability rows are non-negative and sum to one") {
  const NetConfig cfg = NetConfig::toy(4, 12);
  Rng rng = make_rng(31);
  const auto params = init_params<float>(rng, cfg);
  Rng data_rng = make_rng(32);
  Batch<float> batch;
  {
    const Batch<double> d = random_batch(cfg, 6, data_rng, std::vector<int>(6, 0));
    batch.b = d.b;
    batch.k = d.k;
    batch.loc = Mat<float>(d.loc.rows, d.loc.cols);
    batch.ang = Mat<float>(d.ang.rows, d.ang.cols);
    for (size_t i = 0; i < d.loc.v.size(); ++i) batch.loc.v[i] = static_cast<float>(d.loc.v[i]);
    for (size_t i = 0; i < d.ang.v.size(); ++i) batch.ang.v[i] = static_cast<float>(d.ang.v[i]);
    batch.labels = d.labels;
  }
  const Mat<float> probs = forward<float>(params, cfg, batch, NetMode::Eval);
  for (int r = 0; r < probs.rows; ++r) {
    double sum = 0.0;
    for (int c = 0; c < probs.cols; ++c) {
      CHECK(probs.at(r, c) >= 0.0f);
      sum += probs.at(r, c);
    }
    CHECK(std::abs(sum - 1.0) < 1e-6);
  }

  // One class: the softmax is constant 1.
  const NetConfig one = NetConfig::toy(1, 12);
  Rng orng = make_rng(33);
  const auto oparams = init_params<float>(orng, one);
  const Mat<float> oprobs = forward<float>(oparams, one, batch, NetMode::Eval);
  for (float p : oprobs.v) CHECK(p == 1.0f);
}

TEST_CASE("point order never changes eval predictions") {
  const NetConfig cfg = NetConfig::toy(5, 12);
  Rng rng = make_rng(41);
  const auto params = init_params<double>(rng, cfg);
  Rng data_rng = make_rng(42);
  Batch<double> batch = random_batch(cfg, 2, data_rng, {0, 0});
  const Mat<double> base = forward(params, cfg, batch, NetMode::Eval);

  Rng perm_rng = make_rng(43);
  for (int trial = 0; trial < 20; ++trial) {
    Batch<double> shuffled = batch;
    for (int s = 0; s < batch.b; ++s) {
      std::vector<int> order(cfg.k);
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), perm_rng);
      for (int p = 0; p < cfg.k; ++p)
        for (int c = 0; c < 4; ++c) {
          shuffled.loc.at(s * cfg.k + p, c) = batch.loc.at(s * cfg.k + order[p], c);
          shuffled.ang.at(s * cfg.k + p, c) = batch.ang.at(s * cfg.k + order[p], c);
        }
    }
    const Mat<double> probs = forward(params, cfg, shuffled, NetMode::Eval);
    for (size_t i = 0; i < probs.v.size(); ++i)
      CHECK(std::abs(probs.v[i] - base.v[i]) < 1e-6);
  }
}

TEST_CASE("repeat padding pattern never changes eval predictions") {
  const NetConfig cfg = NetConfig::toy(3, 16);
  Rng rng = make_rng(51);
  const auto params = init_params<double>(rng, cfg);

  // Five distinct points padded to K=16 two different ways.
  Rng data_rng = make_rng(52);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<std::array<double, 8>> pts(5);
  for (auto& p : pts)
    for (double& v : p) v = gauss(data_rng);

  auto build = [&](const std::vector<int>& pick) {
    Batch<double> b;
    b.b = 1;
    b.k = cfg.k;
    b.loc = Mat<double>(cfg.k, 4);
    b.ang = Mat<double>(cfg.k, 4);
    b.labels = {0};
    for (int p = 0; p < cfg.k; ++p)
      for (int c = 0; c < 4; ++c) {
        b.loc.at(p, c) = pts[pick[p]][c];
        b.ang.at(p, c) = pts[pick[p]][c + 4];
      }
    return b;
  };
  std::vector<int> cycle(cfg.k), tail(cfg.k);
  for (int p = 0; p < cfg.k; ++p) {
    cycle[p] = p % 5;
    tail[p] = p < 5 ? p : 4;
  }
  const Mat<double> pa = forward(params, cfg, build(cycle), NetMode::Eval);
  const Mat<double> pb = forward(params, cfg, build(tail), NetMode::Eval);
  for (size_t i = 0; i < pa.v.size(); ++i) CHECK(std::abs(pa.v[i] - pb.v[i]) < 1e-6);
}

TEST_CASE("re-zeroing the inactive encoding group is a no-op") {
  // Real encoded input: the inactive group must already be zero, so zeroing
  // it again cannot change the prediction.
  SherdOutline outline;
  for (int i = 0; i <= 40; ++i)
    outline.points.push_back({i * 2.0, 0.0, PointSide::Inner});
  for (int i = 0; i <= 40; ++i)
    outline.points.push_back({i * 2.0, 5.0, PointSide::Outer});
  SamplingConfig cfg;
  cfg.k = 16;
  cfg.resolution = 2.0;
  Rng rng = make_rng(61);
  EncodedSample sample = prepare(outline, cfg, rng);
  sample.label = 0;

  EncodedSample scrubbed = sample;
  for (int p = 0; p < cfg.k; ++p) {
    const bool inner_active =
        scrubbed.loc[p * 4 + 0] != 0.0 || scrubbed.loc[p * 4 + 1] != 0.0;
    const int off = inner_active ? 2 : 0;
    scrubbed.loc[p * 4 + off] = 0.0;
    scrubbed.loc[p * 4 + off + 1] = 0.0;
    scrubbed.ang[p * 4 + off] = 0.0;
    scrubbed.ang[p * 4 + off + 1] = 0.0;
  }

  const NetConfig net_cfg = NetConfig::toy(3, cfg.k);
  Rng prng = make_rng(62);
  const auto params = init_params<double>(prng, net_cfg);
  const auto ba = pack_batch<double>({sample});
  const auto bb = pack_batch<double>({scrubbed});
  const Mat<double> pa = forward(params, net_cfg, ba, NetMode::Eval);
  const Mat<double> pb = forward(params, net_cfg, bb, NetMode::Eval);
  for (size_t i = 0; i < pa.v.size(); ++i) CHECK(pa.v[i] == pb.v[i]);
}

TEST_CASE("every parameter gradient matches central finite differences") {
  NetConfig cfg = NetConfig::toy(3, 16);
  cfg.dropout_rate = 0.0;  // finite differences need a smooth graph
  Rng rng = make_rng(71);
  auto params = init_params<double>(rng, cfg);
  // Zero-initialized biases can leave a relu pinned exactly at its kink
  // (a fully dead point row feeds the next layer nothing but the bias),
  // where central differences are one-sided. Jittered biases make the
  // probe point generic.
  std::normal_distribution<double> jitter(0.0, 0.05);
  for_each_layer(params, [&](Dense<double>& l) {
    for (double& b : l.b) b = jitter(rng);
  });
  Rng data_rng = make_rng(72);
  const Batch<double> batch = random_batch(cfg, 2, data_rng, {0, 2});

  NetCache<double> cache;
  const Mat<double> probs = forward(params, cfg, batch, NetMode::Train, nullptr, &cache);
  const Mat<double> dlogits = ce_dlogits(probs, batch.labels, 1.0);
  const NetParams<double> grads = backward(params, cfg, cache, dlogits);

  std::vector<double*> param_ptrs;
  for_each_layer(params, [&](Dense<double>& l) {
    for (double& v : l.w.v) param_ptrs.push_back(&v);
    for (double& v : l.b) param_ptrs.push_back(&v);
  });
  std::vector<double> analytic;
  for_each_layer(grads, [&](const Dense<double>& l) {
    analytic.insert(analytic.end(), l.w.v.begin(), l.w.v.end());
    analytic.insert(analytic.end(), l.b.begin(), l.b.end());
  });
  REQUIRE(param_ptrs.size() == analytic.size());

  const double h = 1e-4;
  double worst_rel = 0.0;
  for (size_t i = 0; i < param_ptrs.size(); ++i) {
    const double saved = *param_ptrs[i];
    *param_ptrs[i] = saved + h;
    const double up =
        ce_loss(forward(params, cfg, batch, NetMode::Train), batch.labels);
    *param_ptrs[i] = saved - h;
    const double down =
        ce_loss(forward(params, cfg, batch, NetMode::Train), batch.labels);
    *param_ptrs[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double diff = std::abs(numeric - analytic[i]);
    if (diff < 1e-8) continue;  // below finite-difference noise for tiny gradients
    worst_rel = std::max(worst_rel, diff / std::max(std::abs(numeric), std::abs(analytic[i])));
  }
  CHECK(worst_rel < 1e-4);
}

TEST_CASE("zero upstream gradient yields exactly zero parameter gradients") {
  const NetConfig cfg = NetConfig::toy(3, 8);
  Rng rng = make_rng(81);
  const auto params = init_params<double>(rng, cfg);
  Rng data_rng = make_rng(82);
  const Batch<double> batch = random_batch(cfg, 2, data_rng, {0, 1});
  NetCache<double> cache;
  forward(params, cfg, batch, NetMode::Train, nullptr, &cache);
  const Mat<double> zero(batch.b, cfg.classes);
  const auto grads = backward(params, cfg, cache, zero);

  double worst = 0.0;
  for_each_layer(grads, [&](const Dense<double>& l) {
    for (double v : l.w.v) worst = std::max(worst, std::abs(v));
    for (double v : l.b) worst = std::max(worst, std::abs(v));
  });
  CHECK(worst == 0.0);
}

TEST_CASE("points the pool never selects contribute nothing to gradients") {
  // With zero biases the whole point pipeline is positively homogeneous, so
  // half-scale copies of a point can never beat the original at the pool.
  // Swapping the padding between exact copies and half-scale copies must
  // leave predictions and every gradient bit-identical.
  const NetConfig cfg = NetConfig::toy(3, 8);
  Rng rng = make_rng(91);
  const auto params = init_params<double>(rng, cfg);

  Rng data_rng = make_rng(92);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::array<double, 8> point{};
  for (double& v : point) v = gauss(data_rng);

  auto build = [&](double pad_scale) {
    Batch<double> b;
    b.b = 1;
    b.k = cfg.k;
    b.loc = Mat<double>(cfg.k, 4);
    b.ang = Mat<double>(cfg.k, 4);
    b.labels = {1};
    for (int p = 0; p < cfg.k; ++p) {
      const double s = p == 0 ? 1.0 : pad_scale;
      for (int c = 0; c < 4; ++c) {
        b.loc.at(p, c) = s * point[c];
        b.ang.at(p, c) = s * point[c + 4];
      }
    }
    return b;
  };

  auto run = [&](const Batch<double>& batch) {
    NetCache<double> cache;
    const Mat<double> probs = forward(params, cfg, batch, NetMode::Train, nullptr, &cache);
    return backward(params, cfg, cache, ce_dlogits(probs, batch.labels, 1.0));
  };
  const auto grads_full = run(build(1.0));
  const auto grads_half = run(build(0.5));
  CHECK(max_abs_diff(grads_full, grads_half) == 0.0);
}

TEST_CASE("backward rejects missing or eval-mode caches") {
  const NetConfig cfg = NetConfig::toy(3, 8);
  Rng rng = make_rng(101);
  const auto params = init_params<double>(rng, cfg);
  const Mat<double> dlogits(2, 3);

  NetCache<double> empty;
  CHECK_THROWS_AS(backward(params, cfg, empty, dlogits), SherdError);

  Rng data_rng = make_rng(102);
  const Batch<double> batch = random_batch(cfg, 2, data_rng, {0, 1});
  NetCache<double> eval_cache;
  forward(params, cfg, batch, NetMode::Eval, nullptr, &eval_cache);
  CHECK_THROWS_AS(backward(params, cfg, eval_cache, dlogits), SherdError);
}

TEST_CASE("shape mismatches are rejected but the point count is free") {
  const NetConfig cfg = NetConfig::toy(3, 16);
  Rng rng = make_rng(111);
  const auto params = init_params<double>(rng, cfg);
  Rng data_rng = make_rng(112);

  // Evaluation uses denser sampling than training: any K works.
  const NetConfig other = NetConfig::toy(3, 40);
  const Batch<double> denser = random_batch(other, 2, data_rng, {0, 1});
  const Mat<double> probs = forward(params, cfg, denser, NetMode::Eval);
  CHECK(probs.rows == 2);

  Batch<double> torn = denser;
  torn.k = 24;  // rows no longer match b*k
  CHECK_THROWS_AS(forward(params, cfg, torn, NetMode::Eval), SherdError);

  const Batch<double> batch = random_batch(cfg, 2, data_rng, {0, 1});
  NetCache<double> cache;
  forward(params, cfg, batch, NetMode::Train, nullptr, &cache);
  const Mat<double> bad_dlogits(2, 5);
  CHECK_THROWS_AS(backward(params, cfg, cache, bad_dlogits), SherdError);
}

TEST_CASE("adam ignores zero gradients and is deterministic") {
  const NetConfig cfg = NetConfig::toy(3, 8);
  Rng rng = make_rng(121);
  auto params = init_params<double>(rng, cfg);
  const auto before = params;

  auto zero_grads = params;
  for_each_layer(zero_grads, [](Dense<double>& l) {
    std::fill(l.w.v.begin(), l.w.v.end(), 0.0);
    std::fill(l.b.begin(), l.b.end(), 0.0);
  });
  auto state = make_adam(params, 1e-3);
  adam_step(params, zero_grads, state);
  CHECK(state.step == 1);
  CHECK(max_abs_diff(params, before) == 0.0);

  // Same start, same gradients, same trajectory.
  auto constant = zero_grads;
  for_each_layer(constant, [](Dense<double>& l) {
    std::fill(l.w.v.begin(), l.w.v.end(), 0.01);
    std::fill(l.b.begin(), l.b.end(), 0.01);
  });
  auto pa = before, pb = before;
  auto sa = make_adam(pa, 1e-3), sb = make_adam(pb, 1e-3);
  for (int i = 0; i < 5; ++i) {
    adam_step(pa, constant, sa);
    adam_step(pb, constant, sb);
  }
  CHECK(max_abs_diff(pa, pb) == 0.0);
}

TEST_CASE("constant gradient drives per-parameter steps to the learning rate") {
  const NetConfig cfg = NetConfig::toy(2, 4);
  Rng rng = make_rng(131);
  auto params = init_params<double>(rng, cfg);
  auto grads = params;
  for_each_layer(grads, [](Dense<double>& l) {
    std::fill(l.w.v.begin(), l.w.v.end(), 0.01);
    std::fill(l.b.begin(), l.b.end(), 0.01);
  });
  const double lr = 1e-3;
  auto state = make_adam(params, lr);

  // With a constant gradient the bias corrections cancel exactly, so the
  // per-step move is lr * g / (|g| + eps) from the very first step.
  const double probe_before = params.loc[0].w.v[0];
  adam_step(params, grads, state);
  CHECK(std::abs((probe_before - params.loc[0].w.v[0]) - lr) < 1e-4 * lr);

  for (int i = 0; i < 99; ++i) adam_step(params, grads, state);
  auto prev = params;
  adam_step(params, grads, state);
  double worst = 0.0;
  const std::vector<Dense<double>>* gp[] = {&prev.loc, &prev.ang, &prev.fusion, &prev.head};
  const std::vector<Dense<double>>* gn[] = {&params.loc, &params.ang, &params.fusion,
                                            &params.head};
  for (int g = 0; g < 4; ++g)
    for (size_t l = 0; l < gp[g]->size(); ++l)
      for (size_t i = 0; i < (*gp[g])[l].w.v.size(); ++i)
        worst = std::max(worst,
                         std::abs(((*gp[g])[l].w.v[i] - (*gn[g])[l].w.v[i]) - lr) / lr);
  CHECK(worst < 1e-4);
}

TEST_CASE("the graph can overfit a small fixed classification problem") {
  NetConfig cfg;
  cfg.classes = 4;
  cfg.k = 16;
  cfg.branch_widths = {16, 32};
  cfg.fusion_widths = {48};
  cfg.head_widths = {24};
  Rng rng = make_rng(141);
  auto params = init_params<float>(rng, cfg);

  // Four well-separated clusters, 32 fixed samples each.
  Rng data_rng = make_rng(142);
  std::normal_distribution<double> noise(0.0, 0.25);
  std::vector<EncodedSample> samples;
  for (int c = 0; c < cfg.classes; ++c) {
    const double cx = 3.0 * std::cos(c * kPi / 2.0);
    const double cy = 3.0 * std::sin(c * kPi / 2.0);
    for (int s = 0; s < 32; ++s) {
      EncodedSample e;
      e.k = cfg.k;
      e.loc.resize(cfg.k * 4, 0.0);
      e.ang.resize(cfg.k * 4, 0.0);
      e.label = c;
      for (int p = 0; p < cfg.k; ++p) {
        const double ang = 0.3 * c + noise(data_rng);
        e.loc[p * 4 + 0] = cx + noise(data_rng);
        e.loc[p * 4 + 1] = cy + noise(data_rng);
        e.ang[p * 4 + 0] = std::sin(ang);
        e.ang[p * 4 + 1] = std::cos(ang);
      }
      samples.push_back(std::move(e));
    }
  }
  const Batch<float> batch = pack_batch<float>(samples);

  auto accuracy = [&]() {
    const Mat<float> probs = forward(params, cfg, batch, NetMode::Eval);
    int hits = 0;
    for (int r = 0; r < probs.rows; ++r) {
      int best = 0;
      for (int c = 1; c < cfg.classes; ++c)
        if (probs.at(r, c) > probs.at(r, best)) best = c;
      if (best == batch.labels[r]) ++hits;
    }
    return static_cast<double>(hits) / probs.rows;
  };

  auto state = make_adam(params, 1e-3);
  Rng drop_rng = make_rng(143);
  double acc = accuracy();
  int steps = 0;
  for (; steps < 2000 && acc < 0.95; ++steps) {
    NetCache<float> cache;
    const Mat<float> probs = forward(params, cfg, batch, NetMode::Train, &drop_rng, &cache);
    const Mat<float> dlogits = ce_dlogits(probs, batch.labels, 1.0 / batch.b);
    const auto grads = backward(params, cfg, cache, dlogits);
    adam_step(params, grads, state);
    if ((steps + 1) % 25 == 0) acc = accuracy();
  }
  CHECK(acc >= 0.95);
}
