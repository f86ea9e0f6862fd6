#include "sherd/careloss.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace sherd {

void ClassStats::reset() {
  std::fill(correct.begin(), correct.end(), 0);
  std::fill(total.begin(), total.end(), 0);
  std::fill(false_pos.begin(), false_pos.end(), 0);
  total_miss = 0;
  batches = 0;
}

LossWeights LossWeights::uniform(int classes) {
  if (classes < 1) fail(Errc::InvariantViolation, "weights need at least one class");
  LossWeights w;
  w.u.assign(classes, 1.0 / classes);
  w.vhat_norm.assign(classes, 1.0 / classes);
  return w;
}

std::vector<double> window_psi(const ClassStats& stats) {
  std::vector<double> psi(stats.classes());
  for (int j = 0; j < stats.classes(); ++j)
    psi[j] = stats.total[j] > 0
                 ? static_cast<double>(stats.correct[j]) / stats.total[j]
                 : 0.5;
  return psi;
}

std::vector<double> window_rho(const ClassStats& stats) {
  std::vector<double> rho(stats.classes(), 0.0);
  if (stats.total_miss > 0)
    for (int j = 0; j < stats.classes(); ++j)
      rho[j] = static_cast<double>(stats.false_pos[j]) / stats.total_miss;
  return rho;
}

void update_stats(ClassStats& stats, const std::vector<int>& labels,
                  const std::vector<int>& predictions) {
  if (labels.size() != predictions.size())
    fail(Errc::ShapeMismatch, "labels and predictions differ in length");
  const int c = stats.classes();
  for (size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i], p = predictions[i];
    if (y < 0 || y >= c || p < 0 || p >= c)
      fail(Errc::IndexOutOfRange, "class index outside the catalog");
    stats.total[y] += 1;
    if (p == y) {
      stats.correct[y] += 1;
    } else {
      stats.false_pos[p] += 1;
      stats.total_miss += 1;
    }
  }
  stats.batches += 1;
}

namespace {

std::vector<double> normalized_exp(const std::vector<double>& x, double alpha) {
  std::vector<double> out(x.size());
  double sum = 0.0;
  for (size_t j = 0; j < x.size(); ++j) {
    out[j] = std::exp(alpha * x[j]);
    sum += out[j];
  }
  for (double& v : out) v /= sum;
  return out;
}

void blend_renormalize(std::vector<double>& w, const std::vector<double>& target,
                       double gamma) {
  double sum = 0.0;
  for (size_t j = 0; j < w.size(); ++j) {
    w[j] = gamma * w[j] + (1.0 - gamma) * target[j];
    sum += w[j];
  }
  for (double& v : w) v /= sum;
}

}  // namespace

LossWeights refresh_weights(const LossWeights& old_weights, ClassStats& stats,
                            const CareConfig& cfg) {
  const int c = stats.classes();
  if (static_cast<int>(old_weights.u.size()) != c ||
      static_cast<int>(old_weights.vhat_norm.size()) != c)
    fail(Errc::ShapeMismatch, "weight vectors disagree with the class count");
  const std::vector<double> u_target = normalized_exp(window_psi(stats), -cfg.alpha_u);
  const std::vector<double> v_target = normalized_exp(window_rho(stats), cfg.alpha_v);
  LossWeights next = old_weights;
  blend_renormalize(next.u, u_target, cfg.gamma);
  blend_renormalize(next.vhat_norm, v_target, cfg.gamma);
  stats.reset();
  return next;
}

template <typename T>
CareResult careloss(const Mat<T>& probs, const std::vector<int>& labels,
                    const LossWeights& weights, const CareConfig& cfg) {
  const int n = probs.rows;
  const int c = probs.cols;
  if (static_cast<int>(labels.size()) != n)
    fail(Errc::ShapeMismatch, "one label per probability row required");
  if (static_cast<int>(weights.u.size()) != c ||
      static_cast<int>(weights.vhat_norm.size()) != c)
    fail(Errc::ShapeMismatch, "weight vectors disagree with the class count");

  CareResult res;
  res.per_sample.resize(n);
  res.v.resize(n);
  res.weight.resize(n);
  res.predicted.resize(n);

  for (int i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= c)
      fail(Errc::IndexOutOfRange, "label outside the class range");
    int best = 0;
    for (int j = 1; j < c; ++j)
      if (probs.at(i, j) > probs.at(i, best)) best = j;
    res.predicted[i] = best;
  }

  // v terms: misclassified samples carry an extra share set by the
  // false-positive weight of the class they were mistaken for. alpha_v = 0
  // switches the pathway off entirely, leaving a uniform 1/n.
  double eta = 0.0;
  std::vector<double> raw(n, 1.0);
  if (cfg.alpha_v != 0.0)
    for (int i = 0; i < n; ++i)
      if (res.predicted[i] != labels[i]) raw[i] += weights.vhat_norm[res.predicted[i]];
  for (double r : raw) eta += r;
  res.eta = eta;
  const double v_scale = cfg.v_sums_to_batch ? n / eta : 1.0 / eta;

  for (int i = 0; i < n; ++i) {
    double p = static_cast<double>(probs.at(i, labels[i]));
    if (p < kProbFloor) {
      p = kProbFloor;
      res.clamped = true;
    }
    res.v[i] = raw[i] * v_scale;
    res.weight[i] = weights.u[labels[i]] * res.v[i];
    res.per_sample[i] = res.weight[i] * -std::log(p);
    res.loss += res.per_sample[i];
  }
  return res;
}

template <typename T>
Mat<T> careloss_dlogits(const Mat<T>& probs, const std::vector<int>& labels,
                        const CareResult& result) {
  if (static_cast<int>(labels.size()) != probs.rows ||
      static_cast<int>(result.weight.size()) != probs.rows)
    fail(Errc::ShapeMismatch, "loss result does not match the probability rows");
  Mat<T> d(probs.rows, probs.cols);
  for (int i = 0; i < probs.rows; ++i) {
    const T w = static_cast<T>(result.weight[i]);
    for (int j = 0; j < probs.cols; ++j) d.at(i, j) = w * probs.at(i, j);
    d.at(i, labels[i]) -= static_cast<T>(result.weight[i]);
  }
  return d;
}

void write_stats_csv_header(std::ostream& os, int classes) {
  os << "step";
  for (const char* name : {"psi", "rho", "u"})
    for (int j = 0; j < classes; ++j) os << ',' << name << '_' << j;
  os << '\n';
}

void append_stats_csv(std::ostream& os, long step, const std::vector<double>& psi,
                      const std::vector<double>& rho, const std::vector<double>& u) {
  os << step;
  for (const auto* vec : {&psi, &rho, &u})
    for (double v : *vec) os << ',' << v;
  os << '\n';
}

template CareResult careloss<float>(const Mat<float>&, const std::vector<int>&,
                                    const LossWeights&, const CareConfig&);
template CareResult careloss<double>(const Mat<double>&, const std::vector<int>&,
                                     const LossWeights&, const CareConfig&);
template Mat<float> careloss_dlogits<float>(const Mat<float>&, const std::vector<int>&,
                                            const CareResult&);
template Mat<double> careloss_dlogits<double>(const Mat<double>&, const std::vector<int>&,
                                              const CareResult&);

}  // namespace sherd
