#pragma once

#include <vector>

#include "sherd/common.hpp"
#include "sherd/matrix.hpp"
#include "sherd/pointprep.hpp"

namespace sherd {

// Classifier head and branch widths. Defaults follow the reference layout:
// per-point branches 64/128/128/256, fusion 512/1024, head 512/256/c,
// dropout 0.7 in the head only. Widths stay configurable so tests can run
// reduced nets where full-width finite differences would be intractable.
struct NetConfig {
  int classes = 0;
  int k = 512;                                    // points per sample
  std::vector<int> branch_widths{64, 128, 128, 256};
  std::vector<int> fusion_widths{512, 1024};
  std::vector<int> head_widths{512, 256};         // a final `classes`-wide layer follows
  double dropout_rate = 0.7;
  bool use_angle_branch = true;                   // ablation: location-only input

  void validate() const;
  int point_feature_width() const;                // fusion input width
  int pooled_width() const;                       // fusion output width

  static NetConfig with_defaults(int classes, int k);
  // Small widths and no dropout, for finite-difference gradient checks.
  static NetConfig toy(int classes, int k);
};

enum class NetMode { Train, Eval };

template <typename T>
struct Dense {
  Mat<T> w;             // in x out
  std::vector<T> b;     // out
};

template <typename T>
struct NetParams {
  std::vector<Dense<T>> loc, ang, fusion, head;
};

// Visits every layer of every stage in a fixed order (loc, ang, fusion,
// head), so optimizer state and serialization stay aligned.
template <typename T, typename F>
void for_each_layer(NetParams<T>& p, F&& f) {
  for (auto* group : {&p.loc, &p.ang, &p.fusion, &p.head})
    for (Dense<T>& layer : *group) f(layer);
}
template <typename T, typename F>
void for_each_layer(const NetParams<T>& p, F&& f) {
  for (const auto* group : {&p.loc, &p.ang, &p.fusion, &p.head})
    for (const Dense<T>& layer : *group) f(layer);
}

template <typename T>
struct Batch {
  int b = 0;               // samples
  int k = 0;               // points per sample
  Mat<T> loc;              // (b*k) x 4
  Mat<T> ang;              // (b*k) x 4
  std::vector<int> labels; // -1 when absent
};

template <typename T>
Batch<T> pack_batch(const std::vector<EncodedSample>& samples);

// Everything backward needs to replay a train-mode forward exactly.
template <typename T>
struct NetCache {
  bool valid = false;
  NetMode mode = NetMode::Eval;
  int b = 0, k = 0;
  Mat<T> x_loc, x_ang;
  std::vector<Mat<T>> loc_acts, ang_acts;   // post-ReLU per branch layer
  Mat<T> concat;                            // per-point fusion input
  std::vector<Mat<T>> fusion_acts;          // post-ReLU per fusion layer
  Mat<T> pooled;                            // b x pooled_width
  std::vector<int> argmax;                  // b*pooled_width point indices
  std::vector<Mat<T>> head_acts;            // post-ReLU+dropout per hidden head layer
  std::vector<Mat<T>> drop_mask;            // dropout scale factors (0 or 1/keep)
  Mat<T> logits, probs;
};

// Scaled-uniform fan-in initialization, zero biases, deterministic.
template <typename T>
NetParams<T> init_params(Rng& rng, const NetConfig& cfg);

// Returns row-stochastic class probabilities (b x classes). Train mode
// draws dropout masks from rng and fills `cache` for backward; eval mode
// needs neither.
template <typename T>
Mat<T> forward(const NetParams<T>& params, const NetConfig& cfg, const Batch<T>& batch,
               NetMode mode, Rng* rng = nullptr, NetCache<T>* cache = nullptr);

// dlogits is d(loss)/d(logits), b x classes. Gradients mirror the
// parameter structure; max-pool routes per-feature gradient to the argmax
// point, dropout masks are replayed from the cache.
template <typename T>
NetParams<T> backward(const NetParams<T>& params, const NetConfig& cfg,
                      const NetCache<T>& cache, const Mat<T>& dlogits);

template <typename T>
struct AdamState {
  double lr = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  NetParams<T> m, v;  // moment accumulators, same shapes as the params
};

template <typename T>
AdamState<T> make_adam(const NetParams<T>& params, double lr);

template <typename T>
void adam_step(NetParams<T>& params, const NetParams<T>& grads, AdamState<T>& state);

}  // namespace sherd
