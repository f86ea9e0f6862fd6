#pragma once

#include <iosfwd>
#include <vector>

#include "sherd/common.hpp"
#include "sherd/matrix.hpp"

namespace sherd {

// Windowed per-class counters feeding the loss weights: correct/total per
// label class for the accuracy rate, false positives per predicted class
// plus the shared miss total for the false-positive rate.
struct ClassStats {
  std::vector<long> correct, total;   // indexed by true label
  std::vector<long> false_pos;        // indexed by predicted label
  long total_miss = 0;
  long batches = 0;                   // batches accumulated since last reset

  explicit ClassStats(int classes)
      : correct(classes, 0), total(classes, 0), false_pos(classes, 0) {}
  int classes() const { return static_cast<int>(correct.size()); }
  void reset();
};

struct CareConfig {
  double alpha_u = 6.0;   // accuracy sensitivity; 0 turns the u pathway off
  double alpha_v = 5.0;   // false-positive sensitivity; 0 turns the v pathway off
  double gamma = 0.8;     // momentum on the normalized weight vectors
  int refresh_batches = 50;
  // The per-batch v terms normalize to 1 by default; flip to make them sum
  // to the batch size instead (pure cross-entropy scaling convention).
  bool v_sums_to_batch = false;
};

// Normalized weight vectors. u scales samples by their label class,
// vhat_norm boosts misclassified samples by their predicted class.
struct LossWeights {
  std::vector<double> u;          // sums to 1
  std::vector<double> vhat_norm;  // sums to 1

  static LossWeights uniform(int classes);
};

// Per-class accuracy over the window; classes unseen in the window default
// to the neutral 0.5.
std::vector<double> window_psi(const ClassStats& stats);
// Share of the window's misclassifications landing in each class; an empty
// miss pool gives all zeros.
std::vector<double> window_rho(const ClassStats& stats);

void update_stats(ClassStats& stats, const std::vector<int>& labels,
                  const std::vector<int>& predictions);

// Momentum-smoothed step of both weight vectors toward the targets implied
// by the current window, then counter reset.
LossWeights refresh_weights(const LossWeights& old_weights, ClassStats& stats,
                            const CareConfig& cfg);

struct CareResult {
  double loss = 0.0;               // batch sum
  std::vector<double> per_sample;  // u[y_i] * v_i * (-log p_i)
  std::vector<double> v;           // per-sample v_i
  std::vector<double> weight;      // u[y_i] * v_i, the constant gradient scale
  std::vector<int> predicted;      // argmax per row, lowest index on ties
  double eta = 0.0;
  bool clamped = false;            // some p_i hit the probability floor
};

constexpr double kProbFloor = 1e-12;

template <typename T>
CareResult careloss(const Mat<T>& probs, const std::vector<int>& labels,
                    const LossWeights& weights, const CareConfig& cfg);

// d(loss)/d(logits) for probs = softmax(logits): the weights are constants,
// so each row is weight_i * (probs_i - onehot(y_i)).
template <typename T>
Mat<T> careloss_dlogits(const Mat<T>& probs, const std::vector<int>& labels,
                        const CareResult& result);

// Analysis log: one row per refresh with the window rates and resulting u.
void write_stats_csv_header(std::ostream& os, int classes);
void append_stats_csv(std::ostream& os, long step, const std::vector<double>& psi,
                      const std::vector<double>& rho, const std::vector<double>& u);

}  // namespace sherd
