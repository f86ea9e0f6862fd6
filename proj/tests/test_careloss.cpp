#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "sherd/careloss.hpp"

using namespace sherd;

namespace {

Mat<double> row_probs(const std::vector<std::vector<double>>& rows) {
  Mat<double> m(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c) m.at(r, c) = rows[r][c];
  return m;
}

Mat<double> softmax_rows(const Mat<double>& logits) {
  Mat<double> p(logits.rows, logits.cols);
  for (int r = 0; r < logits.rows; ++r) {
    double mx = logits.at(r, 0);
    for (int c = 1; c < logits.cols; ++c) mx = std::max(mx, logits.at(r, c));
    double sum = 0.0;
    for (int c = 0; c < logits.cols; ++c) {
      p.at(r, c) = std::exp(logits.at(r, c) - mx);
      sum += p.at(r, c);
    }
    for (int c = 0; c < logits.cols; ++c) p.at(r, c) /= sum;
  }
  return p;
}

}  // namespace

TEST_CASE("stats counting follows the batch outcomes") {
  ClassStats stats(3);

  update_stats(stats, {0, 1, 2}, {0, 1, 2});
  CHECK(stats.total_miss == 0);
  CHECK(stats.false_pos == std::vector<long>{0, 0, 0});
  CHECK(stats.correct == std::vector<long>{1, 1, 1});
  CHECK(stats.batches == 1);

  update_stats(stats, {0}, {2});
  CHECK(stats.total[0] == 2);
  CHECK(stats.correct[0] == 1);
  CHECK(stats.false_pos[2] == 1);
  CHECK(stats.total_miss == 1);

  CHECK_THROWS_AS(update_stats(stats, {3}, {0}), SherdError);
  CHECK_THROWS_AS(update_stats(stats, {0}, {-1}), SherdError);
  CHECK_THROWS_AS(update_stats(stats, {0, 1}, {0}), SherdError);
}

TEST_CASE("two batches accumulate like their concatenation") {
  ClassStats split(4), joint(4);
  const std::vector<int> la = {0, 1, 2, 3, 0}, pa = {0, 2, 2, 1, 0};
  const std::vector<int> lb = {3, 3, 1}, pb = {3, 0, 1};
  update_stats(split, la, pa);
  update_stats(split, lb, pb);

  std::vector<int> lc = la, pc = pa;
  lc.insert(lc.end(), lb.begin(), lb.end());
  pc.insert(pc.end(), pb.begin(), pb.end());
  update_stats(joint, lc, pc);

  CHECK(split.correct == joint.correct);
  CHECK(split.total == joint.total);
  CHECK(split.false_pos == joint.false_pos);
  CHECK(split.total_miss == joint.total_miss);
}

TEST_CASE("window rates default to neutral values for empty counters") {
  ClassStats stats(3);
  const auto psi = window_psi(stats);
  const auto rho = window_rho(stats);
  for (double p : psi) CHECK(p == 0.5);
  for (double r : rho) CHECK(r == 0.0);

  // Partially filled window: seen classes use their own rate.
  update_stats(stats, {0, 0, 0, 0}, {0, 0, 0, 1});
  CHECK(window_psi(stats)[0] == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(window_psi(stats)[1] == 0.5);
  CHECK(window_rho(stats)[1] == 1.0);
  CHECK(window_rho(stats)[2] == 0.0);
}

TEST_CASE("two-class accuracy weights match the closed-form evaluation") {
  // psi = (0.9, 0.5) with sensitivity 6 puts the exponents at -5.4 and
  // -3.0; the expected shares were evaluated independently at 50-digit
  // precision.
  ClassStats stats(2);
  std::vector<int> labels, preds;
  for (int i = 0; i < 10; ++i) {
    labels.push_back(0);
    preds.push_back(i < 9 ? 0 : 1);
    labels.push_back(1);
    preds.push_back(i < 5 ? 1 : 0);
  }
  update_stats(stats, labels, preds);
  CHECK(window_psi(stats)[0] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(window_psi(stats)[1] == doctest::Approx(0.5).epsilon(1e-15));

  CareConfig cfg;
  cfg.gamma = 0.0;  // no history: the refresh lands exactly on the target
  const LossWeights w = refresh_weights(LossWeights::uniform(2), stats, cfg);
  CHECK(w.u[0] == doctest::Approx(0.08317269649392237).epsilon(1e-12));
  CHECK(w.u[1] == doctest::Approx(0.91682730350607763).epsilon(1e-12));
}

TEST_CASE("equal rates collapse to uniform weights") {
  ClassStats stats(3);
  // Every class at 0.7 accuracy; misses spread evenly.
  for (int j = 0; j < 3; ++j) {
    std::vector<int> labels(10, j), preds(10, j);
    preds[7] = (j + 1) % 3;
    preds[8] = (j + 1) % 3;
    preds[9] = (j + 2) % 3;
    update_stats(stats, labels, preds);
  }
  CareConfig cfg;
  cfg.gamma = 0.0;
  const LossWeights w = refresh_weights(LossWeights::uniform(3), stats, cfg);
  for (double u : w.u) CHECK(u == doctest::Approx(1.0 / 3).epsilon(1e-12));

  // A clean window leaves the false-positive weights uniform too.
  ClassStats clean(3);
  update_stats(clean, {0, 1, 2}, {0, 1, 2});
  const LossWeights wc = refresh_weights(LossWeights::uniform(3), clean, cfg);
  for (double v : wc.vhat_norm) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("momentum blends toward the target and resets the window") {
  ClassStats stats(2);
  update_stats(stats, {0, 0, 1, 1}, {0, 0, 0, 0});  // psi = (1, 0), all misses into 0
  const auto psi = window_psi(stats);
  const auto rho = window_rho(stats);

  CareConfig cfg;  // gamma = 0.8
  const LossWeights start = LossWeights::uniform(2);
  const LossWeights next = refresh_weights(start, stats, cfg);

  auto target = [&](const std::vector<double>& rate, double alpha) {
    const double a = std::exp(alpha * rate[0]), b = std::exp(alpha * rate[1]);
    return std::vector<double>{a / (a + b), b / (a + b)};
  };
  const auto ut = target(psi, -cfg.alpha_u);
  const auto vt = target(rho, cfg.alpha_v);
  for (int j = 0; j < 2; ++j) {
    CHECK(next.u[j] == doctest::Approx(0.8 * 0.5 + 0.2 * ut[j]).epsilon(1e-12));
    CHECK(next.vhat_norm[j] == doctest::Approx(0.8 * 0.5 + 0.2 * vt[j]).epsilon(1e-12));
  }
  CHECK(next.u[0] + next.u[1] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(next.vhat_norm[0] + next.vhat_norm[1] == doctest::Approx(1.0).epsilon(1e-9));

  // Refresh consumed the window.
  CHECK(stats.total == std::vector<long>{0, 0});
  CHECK(stats.total_miss == 0);
  CHECK(stats.batches == 0);
}

TEST_CASE("weight monotonicity follows the rates") {
  CareConfig cfg;
  cfg.gamma = 0.0;

  auto u_for = [&](long correct0) {
    ClassStats stats(2);
    std::vector<int> labels(10, 0), preds(10, 0);
    for (long i = correct0; i < 10; ++i) preds[i] = 1;
    update_stats(stats, labels, preds);
    update_stats(stats, std::vector<int>(10, 1), std::vector<int>(10, 1));
    return refresh_weights(LossWeights::uniform(2), stats, cfg).u[0];
  };
  // Better accuracy for class 0 must shrink its share of u.
  CHECK(u_for(8) < u_for(6));

  auto v_for = [&](int fp0) {
    ClassStats stats(3);
    std::vector<int> labels, preds;
    for (int i = 0; i < 10; ++i) {
      labels.push_back(1);
      preds.push_back(i < fp0 ? 0 : 2);
    }
    update_stats(stats, labels, preds);
    return refresh_weights(LossWeights::uniform(3), stats, cfg).vhat_norm[0];
  };
  // More false positives into class 0 must raise its boost.
  CHECK(v_for(7) > v_for(3));
}

TEST_CASE("correct batches spread the v terms uniformly") {
  const Mat<double> probs = row_probs({{0.7, 0.2, 0.1}, {0.1, 0.8, 0.1}, {0.2, 0.2, 0.6}});
  const std::vector<int> labels = {0, 1, 2};
  LossWeights w = LossWeights::uniform(3);
  w.u = {0.5, 0.3, 0.2};
  const CareResult res = careloss(probs, labels, w, CareConfig{});

  CHECK(res.eta == doctest::Approx(3.0).epsilon(1e-15));
  for (double v : res.v) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));
  double expect = 0.0;
  for (int i = 0; i < 3; ++i) expect += w.u[i] * (1.0 / 3) * -std::log(probs.at(i, i));
  CHECK(res.loss == doctest::Approx(expect).epsilon(1e-12));

  // Uniform u on top reduces to scaled plain cross-entropy.
  const CareResult plain = careloss(probs, labels, LossWeights::uniform(3), CareConfig{});
  double ce = 0.0;
  for (int i = 0; i < 3; ++i) ce += -std::log(probs.at(i, i));
  CHECK(plain.loss == doctest::Approx(ce / (3.0 * 3.0)).epsilon(1e-12));
}

TEST_CASE("a mixed batch matches the independently evaluated table") {
  // Four samples, two misses; every number below was produced by a 50-digit
  // evaluation of the weighting formulas.
  const Mat<double> probs = row_probs({{0.7, 0.2, 0.1},
                                       {0.6, 0.3, 0.1},
                                       {0.1, 0.2, 0.7},
                                       {0.2, 0.5, 0.3}});
  const std::vector<int> labels = {0, 1, 2, 0};
  LossWeights w;
  w.u = {0.5, 0.3, 0.2};
  w.vhat_norm = {0.2, 0.5, 0.3};
  const CareResult res = careloss(probs, labels, w, CareConfig{});

  CHECK(res.predicted == std::vector<int>{0, 0, 2, 1});
  CHECK(res.eta == doctest::Approx(4.7).epsilon(1e-15));
  const double expect_v[] = {0.21276595744680851, 0.25531914893617021,
                             0.21276595744680851, 0.31914893617021277};
  const double expect_loss[] = {0.03794414297220557, 0.09221919352283765,
                                0.01517765718888223, 0.25682519879267559};
  for (int i = 0; i < 4; ++i) {
    CHECK(res.v[i] == doctest::Approx(expect_v[i]).epsilon(1e-12));
    CHECK(res.per_sample[i] == doctest::Approx(expect_loss[i]).epsilon(1e-12));
  }
  CHECK(res.loss == doctest::Approx(0.40216619247660104).epsilon(1e-12));
}

TEST_CASE("v terms always sum to one and favor misses") {
  Rng rng = make_rng(17);
  std::uniform_int_distribution<int> label_dist(0, 4);
  std::uniform_real_distribution<double> unit(0.01, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + trial % 32;
    Mat<double> probs(n, 5);
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
      double sum = 0.0;
      for (int j = 0; j < 5; ++j) {
        probs.at(i, j) = unit(rng);
        sum += probs.at(i, j);
      }
      for (int j = 0; j < 5; ++j) probs.at(i, j) /= sum;
      labels[i] = label_dist(rng);
    }
    LossWeights w = LossWeights::uniform(5);
    for (double& v : w.vhat_norm) v = unit(rng);
    double vsum = 0.0;
    for (double v : w.vhat_norm) vsum += v;
    for (double& v : w.vhat_norm) v /= vsum;

    const CareResult res = careloss(probs, labels, w, CareConfig{});
    double total = 0.0;
    for (double v : res.v) total += v;
    CHECK(std::abs(total - 1.0) < 1e-9);
    for (int i = 0; i < n; ++i)
      if (res.predicted[i] != labels[i]) CHECK(res.v[i] >= 1.0 / res.eta);
  }
}

TEST_CASE("zero sensitivities reduce to scaled plain cross-entropy") {
  CareConfig off;
  off.alpha_u = 0.0;
  off.alpha_v = 0.0;
  off.gamma = 0.0;

  // Any window now refreshes to uniform u.
  ClassStats stats(3);
  update_stats(stats, {0, 0, 1, 2, 2, 2}, {0, 1, 1, 0, 2, 2});
  const LossWeights w = refresh_weights(LossWeights::uniform(3), stats, off);
  for (double u : w.u) CHECK(u == doctest::Approx(1.0 / 3).epsilon(1e-12));

  // Even with misclassifications in the batch the loss is plain mean
  // cross-entropy over c * n.
  const Mat<double> probs = row_probs({{0.6, 0.3, 0.1},
                                       {0.5, 0.4, 0.1},
                                       {0.1, 0.1, 0.8},
                                       {0.3, 0.4, 0.3}});
  const std::vector<int> labels = {1, 0, 2, 2};  // two misses
  const CareResult res = careloss(probs, labels, w, off);
  double ce = 0.0;
  for (int i = 0; i < 4; ++i) ce += -std::log(probs.at(i, labels[i]));
  CHECK(res.loss == doctest::Approx(ce / (3.0 * 4.0)).epsilon(1e-12));
}

TEST_CASE("the batch-sum normalization switch rescales v") {
  const Mat<double> probs = row_probs({{0.6, 0.4}, {0.3, 0.7}, {0.8, 0.2}});
  const std::vector<int> labels = {0, 0, 0};  // one miss
  LossWeights w = LossWeights::uniform(2);
  CareConfig cfg;
  cfg.v_sums_to_batch = true;
  const CareResult res = careloss(probs, labels, w, cfg);
  double total = 0.0;
  for (double v : res.v) total += v;
  CHECK(total == doctest::Approx(3.0).epsilon(1e-12));

  const CareResult unit = careloss(probs, labels, w, CareConfig{});
  CHECK(res.loss == doctest::Approx(3.0 * unit.loss).epsilon(1e-12));
}

TEST_CASE("vanishing probabilities are clamped and flagged") {
  const Mat<double> probs = row_probs({{0.0, 1.0}, {0.5, 0.5}});
  const std::vector<int> labels = {0, 0};
  const CareResult res = careloss(probs, labels, LossWeights::uniform(2), CareConfig{});
  CHECK(res.clamped);
  CHECK(std::isfinite(res.loss));
  CHECK(res.per_sample[0] == doctest::Approx(res.weight[0] * -std::log(1e-12)).epsilon(1e-12));

  const CareResult clean = careloss(row_probs({{0.5, 0.5}}), {0},
                                    LossWeights::uniform(2), CareConfig{});
  CHECK_FALSE(clean.clamped);
}

TEST_CASE("prediction ties resolve to the lowest class index") {
  const CareResult res = careloss(row_probs({{0.4, 0.4, 0.2}}), {1},
                                  LossWeights::uniform(3), CareConfig{});
  CHECK(res.predicted[0] == 0);
}

TEST_CASE("loss gradients match finite differences through the softmax") {
  Mat<double> logits(4, 3);
  const double vals[] = {1.2, -0.4, 0.3, -0.8, 0.9, 0.1, 0.5, 0.4, -1.0, 0.0, 2.0, -0.5};
  std::copy(std::begin(vals), std::end(vals), logits.v.begin());
  const std::vector<int> labels = {0, 1, 2, 0};
  LossWeights w;
  w.u = {0.5, 0.3, 0.2};
  w.vhat_norm = {0.25, 0.45, 0.3};
  const CareConfig cfg;

  const Mat<double> probs = softmax_rows(logits);
  const CareResult res = careloss(probs, labels, w, cfg);
  const Mat<double> analytic = careloss_dlogits(probs, labels, res);

  // The weights are constants for the gradient: perturbations must not
  // change any argmax, so the margins above are kept comfortably wide.
  const double h = 1e-6;
  for (size_t i = 0; i < logits.v.size(); ++i) {
    const double saved = logits.v[i];
    logits.v[i] = saved + h;
    const double up = careloss(softmax_rows(logits), labels, w, cfg).loss;
    logits.v[i] = saved - h;
    const double down = careloss(softmax_rows(logits), labels, w, cfg).loss;
    logits.v[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    CHECK(analytic.v[i] == doctest::Approx(numeric).epsilon(1e-6));
  }
}

TEST_CASE("shape mismatches are rejected") {
  const Mat<double> probs = row_probs({{0.5, 0.5}});
  CHECK_THROWS_AS(careloss(probs, {0, 1}, LossWeights::uniform(2), CareConfig{}),
                  SherdError);
  CHECK_THROWS_AS(careloss(probs, {0}, LossWeights::uniform(3), CareConfig{}), SherdError);
  CHECK_THROWS_AS(careloss(probs, {5}, LossWeights::uniform(2), CareConfig{}), SherdError);

  ClassStats stats(2);
  CHECK_THROWS_AS(refresh_weights(LossWeights::uniform(3), stats, CareConfig{}), SherdError);
}

TEST_CASE("the stats log is well-formed CSV") {
  std::ostringstream os;
  write_stats_csv_header(os, 2);
  append_stats_csv(os, 50, {0.5, 0.75}, {1.0, 0.0}, {0.6, 0.4});
  CHECK(os.str() == "step,psi_0,psi_1,rho_0,rho_1,u_0,u_1\n50,0.5,0.75,1,0,0.6,0.4\n");
}
