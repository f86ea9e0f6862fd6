#pragma once

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "sherd/careloss.hpp"
#include "sherd/catalog.hpp"
#include "sherd/net.hpp"
#include "sherd/pointprep.hpp"
#include "sherd/synthgeom.hpp"

namespace sherd {

struct TrainConfig {
  SamplingConfig train_sampling{512, 2.0};
  SamplingConfig eval_sampling{1024, 1.0};
  bool augment_rotation = true;
  bool augment_scaling = true;
  ScaleAugment scale{};
  EncodeMode encode_mode = EncodeMode::GroupHot;
  NetConfig net;  // classes and k are overwritten from the catalog/sampling
  CareConfig care{};
  double learning_rate = 1e-6;
  int batch_size = 128;
  long steps = 50000;
  std::uint64_t seed = 42;
  long checkpoint_every = 1000;
  int holdout_per_class = 10;  // unaugmented sherds kept aside for best-model retention
  int workers = 1;             // data-generation threads
  std::string out_dir;         // empty: keep everything in memory

  void validate(const Catalog& catalog) const;
};

// Everything needed to resume training or classify on its own: the network
// and optimizer, the loss statistics, and the data-pipeline settings that
// produced the inputs (including the class-id order the logits follow).
struct Checkpoint {
  NetConfig net;
  NetParams<float> params;
  AdamState<float> opt;
  long step = 0;
  LossWeights weights;
  ClassStats stats{1};
  std::vector<std::string> class_ids;
  SamplingConfig train_sampling{512, 2.0};
  SamplingConfig eval_sampling{1024, 1.0};
  EncodeMode encode_mode = EncodeMode::GroupHot;
  CareConfig care{};
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

struct TrainResult {
  Checkpoint final_state;
  Checkpoint best;            // highest holdout mean top-1 at a checkpoint
  double best_top1 = -1.0;
  long degenerate_resamples = 0;
  std::vector<double> loss_curve;  // one entry per step
  double gen_seconds = 0.0;        // data generation total
  double step_seconds = 0.0;       // forward/loss/backward/update total
};

// On-the-fly training: every step synthesizes a fresh class-balanced batch
// (uniform class, uniform sketch, fresh plane and trim lines, rotation and
// scale augmentation), then forward -> weighted loss -> backward -> Adam.
// Loss statistics refresh on their own cadence; checkpoints are evaluated
// on an unaugmented holdout and the best is retained. Deterministic under
// cfg.seed for any worker count.
TrainResult train(const Catalog& catalog, const TrainConfig& cfg,
                  std::ostream* log = nullptr);

// One synthetic training-style sherd: fresh plane and cuts with optional
// rotation applied to the 3D fracture before projection, optional scale
// augmentation after. Degenerate draws are retried, counted into
// `resamples`.
SherdOutline synthesize_augmented(const ProfileSketch& sketch, Rng& rng,
                                  bool augment_rotation, bool augment_scaling,
                                  const ScaleAugment& scale, long& resamples,
                                  int max_tries = 100);

// Deterministic labelled outline set, one substream per (class, index), so
// the result is independent of generation order. Unaugmented by default;
// augmented sets add the training-style rotation and scale jitter.
std::vector<SherdOutline> synthesize_outline_set(const Catalog& catalog, int per_class,
                                                 std::uint64_t seed,
                                                 bool augmented = false);

struct Metrics {
  std::vector<int> ks;                         // ascending
  std::vector<std::vector<double>> per_class;  // ks.size() rows, classes columns
  std::vector<long> class_counts;              // samples seen per class
  std::vector<double> mean;                    // across classes with >= 1 sample
  std::vector<double> sd;                      // population SD across those classes
  std::vector<long> confusion;                 // classes x classes, row = true label
};

Metrics evaluate(const Checkpoint& ckpt, const std::vector<SherdOutline>& dataset,
                 const std::vector<int>& ks, std::uint64_t seed);
// Same, with an explicit sampling configuration (the resolution sweep path).
Metrics evaluate(const Checkpoint& ckpt, const std::vector<SherdOutline>& dataset,
                 const std::vector<int>& ks, const SamplingConfig& sampling,
                 std::uint64_t seed);

void write_metrics_csv(std::ostream& os, const Metrics& m);
void write_confusion_csv(std::ostream& os, const Metrics& m,
                         const std::vector<std::string>& class_ids);

// Ranked (class_id, probability), descending, ties by ascending class
// index. Break points never contribute; an outline with no usable surface
// points is rejected as EmptyOutline.
std::vector<std::pair<std::string, double>> classify(const Checkpoint& ckpt,
                                                     const SherdOutline& outline,
                                                     std::uint64_t seed);

struct SweepRow {
  double resolution_mm = 0.0;
  double top1 = 0.0;
  double top5 = 0.0;
};

// Re-evaluates the dataset at each resolution with K = floor(512 * 2 /
// resolution), capped at 4096.
std::vector<SweepRow> resolution_sweep(const Checkpoint& ckpt,
                                       const std::vector<SherdOutline>& dataset,
                                       const std::vector<double>& resolutions,
                                       std::uint64_t seed);

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows);

// Deterministic fixture catalog: three vessel families (bowls, jars,
// plates) on a per-class parameter ladder, so class prototypes stay
// separated by at least min_prototype_separation_mm of profile Hausdorff
// distance.
struct FixtureSpec {
  int classes = 10;
  int sketches_per_class = 2;
  double min_prototype_separation_mm = 10.0;
  std::uint64_t seed = 42;
};

Catalog make_parametric_catalog(const FixtureSpec& spec);

// Symmetric Hausdorff distance between two profile sketches, the larger of
// the per-side (inner-inner, outer-outer) distances. Fixture separation
// measure.
double sketch_hausdorff(const ProfileSketch& a, const ProfileSketch& b);

// Welford-style running moments; the evaluation code sums directly, this
// recurrence is the independent cross-check.
struct StreamingMoments {
  long n = 0;
  double mu = 0.0;
  double m2 = 0.0;

  void add(double x) {
    n += 1;
    const double d = x - mu;
    mu += d / n;
    m2 += d * (x - mu);
  }
  double mean() const { return mu; }
  double population_sd() const { return n > 0 ? std::sqrt(m2 / n) : 0.0; }
};

}  // namespace sherd
