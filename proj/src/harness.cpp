#include "sherd/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <ostream>
#include <random>
#include <thread>

namespace sherd {

namespace {

// Disjoint seed domains for the independent random streams.
constexpr std::uint64_t kSeedInit = 0x696e6974;     // parameter init
constexpr std::uint64_t kSeedDropout = 0x64726f70;  // dropout masks
constexpr std::uint64_t kSeedData = 0x64617461;     // per-(step, slot) batch data
constexpr std::uint64_t kSeedHoldout = 0x686f6c64;  // retention eval set
constexpr std::uint64_t kSeedEval = 0x6576616c;     // per-sample eval sampling
constexpr std::uint64_t kSeedGen = 0x67656e;        // standalone outline sets

// ---- checkpoint binary encoding ----

constexpr char kMagic[8] = {'S', 'H', 'R', 'D', 'N', 'E', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

void put_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}
template <typename T>
void put(std::ostream& os, T v) {
  put_bytes(os, &v, sizeof v);
}
void put_str(std::ostream& os, const std::string& s) {
  put<std::uint64_t>(os, s.size());
  put_bytes(os, s.data(), s.size());
}
template <typename T>
void put_vec(std::ostream& os, const std::vector<T>& v) {
  put<std::uint64_t>(os, v.size());
  put_bytes(os, v.data(), v.size() * sizeof(T));
}

void get_bytes(std::istream& is, void* p, size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!is) fail(Errc::MalformedFile, "checkpoint truncated");
}
template <typename T>
T get(std::istream& is) {
  T v;
  get_bytes(is, &v, sizeof v);
  return v;
}
std::string get_str(std::istream& is) {
  const auto n = get<std::uint64_t>(is);
  if (n > (1u << 20)) fail(Errc::MalformedFile, "checkpoint string length implausible");
  std::string s(n, '\0');
  get_bytes(is, s.data(), n);
  return s;
}
template <typename T>
std::vector<T> get_vec(std::istream& is) {
  const auto n = get<std::uint64_t>(is);
  if (n > (1u << 28)) fail(Errc::MalformedFile, "checkpoint vector length implausible");
  std::vector<T> v(n);
  get_bytes(is, v.data(), n * sizeof(T));
  return v;
}

void put_dense(std::ostream& os, const Dense<float>& d) {
  put<std::int32_t>(os, d.w.rows);
  put<std::int32_t>(os, d.w.cols);
  put_vec(os, d.w.v);
  put_vec(os, d.b);
}
Dense<float> get_dense(std::istream& is) {
  Dense<float> d;
  const auto rows = get<std::int32_t>(is);
  const auto cols = get<std::int32_t>(is);
  d.w = Mat<float>(rows, cols);
  d.w.v = get_vec<float>(is);
  if (d.w.v.size() != static_cast<size_t>(rows) * cols)
    fail(Errc::MalformedFile, "checkpoint tensor shape disagrees with its data");
  d.b = get_vec<float>(is);
  return d;
}
void put_params(std::ostream& os, const NetParams<float>& p) {
  for (const auto* stage : {&p.loc, &p.ang, &p.fusion, &p.head}) {
    put<std::uint64_t>(os, stage->size());
    for (const auto& layer : *stage) put_dense(os, layer);
  }
}
NetParams<float> get_params(std::istream& is) {
  NetParams<float> p;
  for (auto* stage : {&p.loc, &p.ang, &p.fusion, &p.head}) {
    const auto n = get<std::uint64_t>(is);
    if (n > 64) fail(Errc::MalformedFile, "checkpoint stage depth implausible");
    stage->reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) stage->push_back(get_dense(is));
  }
  return p;
}
void put_sampling(std::ostream& os, const SamplingConfig& s) {
  put<std::int32_t>(os, s.k);
  put<double>(os, s.resolution);
}
SamplingConfig get_sampling(std::istream& is) {
  SamplingConfig s;
  s.k = get<std::int32_t>(is);
  s.resolution = get<double>(is);
  return s;
}

// Stable class ranking: descending probability, ascending index on ties.
template <typename T>
std::vector<int> rank_classes(const Mat<T>& probs, int row) {
  std::vector<int> order(probs.cols);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return probs.at(row, a) > probs.at(row, b); });
  return order;
}

}  // namespace

void TrainConfig::validate(const Catalog& catalog) const {
  train_sampling.validate();
  eval_sampling.validate();
  if (catalog.class_count() < 2)
    fail(Errc::InvariantViolation, "training needs a catalog with at least two classes");
  if (batch_size < 1) fail(Errc::InvariantViolation, "batch size must be positive");
  if (steps < 0) fail(Errc::InvariantViolation, "step count must be non-negative");
  if (learning_rate <= 0) fail(Errc::InvariantViolation, "learning rate must be positive");
  if (checkpoint_every < 1) fail(Errc::InvariantViolation, "checkpoint cadence must be positive");
  if (holdout_per_class < 0) fail(Errc::InvariantViolation, "holdout size cannot be negative");
  if (workers < 1) fail(Errc::InvariantViolation, "at least one data worker is required");
  if (care.refresh_batches < 1)
    fail(Errc::InvariantViolation, "stats refresh cadence must be positive");
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(Errc::IoError, "cannot write checkpoint '" + path + "'");
  put_bytes(os, kMagic, sizeof kMagic);
  put<std::uint32_t>(os, kVersion);

  put<std::int32_t>(os, ckpt.net.classes);
  put<std::int32_t>(os, ckpt.net.k);
  put_vec(os, std::vector<std::int32_t>(ckpt.net.branch_widths.begin(),
                                        ckpt.net.branch_widths.end()));
  put_vec(os, std::vector<std::int32_t>(ckpt.net.fusion_widths.begin(),
                                        ckpt.net.fusion_widths.end()));
  put_vec(os, std::vector<std::int32_t>(ckpt.net.head_widths.begin(),
                                        ckpt.net.head_widths.end()));
  put<double>(os, ckpt.net.dropout_rate);
  put<std::uint8_t>(os, ckpt.net.use_angle_branch ? 1 : 0);

  put_params(os, ckpt.params);
  put<double>(os, ckpt.opt.lr);
  put<double>(os, ckpt.opt.beta1);
  put<double>(os, ckpt.opt.beta2);
  put<double>(os, ckpt.opt.eps);
  put<std::int64_t>(os, ckpt.opt.step);
  put_params(os, ckpt.opt.m);
  put_params(os, ckpt.opt.v);

  put<std::int64_t>(os, ckpt.step);
  put_vec(os, ckpt.weights.u);
  put_vec(os, ckpt.weights.vhat_norm);

  put<std::int32_t>(os, ckpt.stats.classes());
  put_vec(os, ckpt.stats.correct);
  put_vec(os, ckpt.stats.total);
  put_vec(os, ckpt.stats.false_pos);
  put<std::int64_t>(os, ckpt.stats.total_miss);
  put<std::int64_t>(os, ckpt.stats.batches);

  put<std::uint64_t>(os, ckpt.class_ids.size());
  for (const auto& id : ckpt.class_ids) put_str(os, id);

  put_sampling(os, ckpt.train_sampling);
  put_sampling(os, ckpt.eval_sampling);
  put<std::uint8_t>(os, ckpt.encode_mode == EncodeMode::GroupHot ? 0 : 1);
  put<double>(os, ckpt.care.alpha_u);
  put<double>(os, ckpt.care.alpha_v);
  put<double>(os, ckpt.care.gamma);
  put<std::int32_t>(os, ckpt.care.refresh_batches);
  put<std::uint8_t>(os, ckpt.care.v_sums_to_batch ? 1 : 0);
  if (!os) fail(Errc::IoError, "short write on checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(Errc::IoError, "cannot read checkpoint '" + path + "'");
  char magic[8];
  get_bytes(is, magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0)
    fail(Errc::MalformedFile, "'" + path + "' is not a checkpoint file");
  if (get<std::uint32_t>(is) != kVersion)
    fail(Errc::MalformedFile, "unsupported checkpoint version in '" + path + "'");

  Checkpoint ckpt;
  ckpt.net.classes = get<std::int32_t>(is);
  ckpt.net.k = get<std::int32_t>(is);
  const auto branch = get_vec<std::int32_t>(is);
  const auto fusion = get_vec<std::int32_t>(is);
  const auto head = get_vec<std::int32_t>(is);
  ckpt.net.branch_widths.assign(branch.begin(), branch.end());
  ckpt.net.fusion_widths.assign(fusion.begin(), fusion.end());
  ckpt.net.head_widths.assign(head.begin(), head.end());
  ckpt.net.dropout_rate = get<double>(is);
  ckpt.net.use_angle_branch = get<std::uint8_t>(is) != 0;

  ckpt.params = get_params(is);
  ckpt.opt.lr = get<double>(is);
  ckpt.opt.beta1 = get<double>(is);
  ckpt.opt.beta2 = get<double>(is);
  ckpt.opt.eps = get<double>(is);
  ckpt.opt.step = get<std::int64_t>(is);
  ckpt.opt.m = get_params(is);
  ckpt.opt.v = get_params(is);

  ckpt.step = get<std::int64_t>(is);
  ckpt.weights.u = get_vec<double>(is);
  ckpt.weights.vhat_norm = get_vec<double>(is);

  const auto stat_classes = get<std::int32_t>(is);
  if (stat_classes < 1 || stat_classes != ckpt.net.classes)
    fail(Errc::MalformedFile, "checkpoint stats class count disagrees with the net");
  ckpt.stats = ClassStats(stat_classes);
  ckpt.stats.correct = get_vec<long>(is);
  ckpt.stats.total = get_vec<long>(is);
  ckpt.stats.false_pos = get_vec<long>(is);
  ckpt.stats.total_miss = get<std::int64_t>(is);
  ckpt.stats.batches = get<std::int64_t>(is);

  const auto id_count = get<std::uint64_t>(is);
  if (id_count != static_cast<std::uint64_t>(ckpt.net.classes))
    fail(Errc::MalformedFile, "checkpoint class-id list disagrees with the net");
  ckpt.class_ids.reserve(id_count);
  for (std::uint64_t i = 0; i < id_count; ++i) ckpt.class_ids.push_back(get_str(is));

  ckpt.train_sampling = get_sampling(is);
  ckpt.eval_sampling = get_sampling(is);
  ckpt.encode_mode = get<std::uint8_t>(is) == 0 ? EncodeMode::GroupHot
                                                : EncodeMode::OnehotAppend;
  ckpt.care.alpha_u = get<double>(is);
  ckpt.care.alpha_v = get<double>(is);
  ckpt.care.gamma = get<double>(is);
  ckpt.care.refresh_batches = get<std::int32_t>(is);
  ckpt.care.v_sums_to_batch = get<std::uint8_t>(is) != 0;
  return ckpt;
}

SherdOutline synthesize_augmented(const ProfileSketch& sketch, Rng& rng,
                                  bool augment_rotation, bool augment_scaling,
                                  const ScaleAugment& scale, long& resamples,
                                  int max_tries) {
  const ProfileExtent extent = profile_extent(sketch);
  for (int attempt = 0; attempt < max_tries; ++attempt) {
    const CuttingPlane plane = sample_cutting_plane(rng, sketch, extent);
    Fracture3D fracture = fracture_points_3d(sketch, plane);
    if (augment_rotation) fracture = augment_fracture(fracture, rng);
    try {
      const SherdOutline unclipped = project_fracture(fracture, plane, std::nullopt);
      const CutPair cuts = sample_cut_lines(outline_bounds(unclipped), extent.height(), rng);
      SherdOutline out = project_fracture(fracture, plane, cuts);
      out.class_id = sketch.class_id;
      if (augment_scaling) out = augment_scale(out, rng, scale);
      return out;
    } catch (const SherdError& e) {
      if (e.code() != Errc::DegenerateSherd) throw;
      resamples += 1;
    }
  }
  fail(Errc::DegenerateSherd, "no viable augmented sherd after " +
                                  std::to_string(max_tries) + " attempts for sketch '" +
                                  sketch.source_id + "'");
}

namespace {

EncodedSample generate_training_sample(const Catalog& catalog, const TrainConfig& cfg,
                                       long step, int slot, long& resamples) {
  Rng rng = make_rng(mix_seed(cfg.seed, kSeedData), static_cast<std::uint64_t>(step),
                     static_cast<std::uint64_t>(slot));
  const int c = static_cast<int>(catalog.class_count());
  const int cls = std::uniform_int_distribution<int>(0, c - 1)(rng);
  const auto& sketches = catalog.sketches(catalog.class_ids[cls]);
  const auto& sketch =
      sketches[std::uniform_int_distribution<size_t>(0, sketches.size() - 1)(rng)];
  const SherdOutline sherd = synthesize_augmented(
      sketch, rng, cfg.augment_rotation, cfg.augment_scaling, cfg.scale, resamples);
  EncodedSample sample = prepare(sherd, cfg.train_sampling, rng, cfg.encode_mode);
  sample.label = cls;
  return sample;
}

std::vector<EncodedSample> generate_batch(const Catalog& catalog, const TrainConfig& cfg,
                                          long step, long& resamples) {
  std::vector<EncodedSample> samples(cfg.batch_size);
  if (cfg.workers <= 1) {
    for (int i = 0; i < cfg.batch_size; ++i)
      samples[i] = generate_training_sample(catalog, cfg, step, i, resamples);
    return samples;
  }
  std::vector<std::thread> pool;
  std::vector<long> counters(cfg.workers, 0);
  std::atomic<bool> failed{false};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  for (int w = 0; w < cfg.workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < cfg.batch_size; i += cfg.workers) {
          if (failed.load(std::memory_order_relaxed)) return;
          samples[i] = generate_training_sample(catalog, cfg, step, i, counters[w]);
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        failed.store(true, std::memory_order_relaxed);
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
  for (long n : counters) resamples += n;
  return samples;
}

std::vector<SherdOutline> generate_holdout(const Catalog& catalog, const TrainConfig& cfg) {
  std::vector<SherdOutline> holdout;
  const int c = static_cast<int>(catalog.class_count());
  for (int j = 0; j < c; ++j) {
    const auto& sketches = catalog.sketches(catalog.class_ids[j]);
    for (int i = 0; i < cfg.holdout_per_class; ++i) {
      Rng rng = make_rng(mix_seed(cfg.seed, kSeedHoldout), static_cast<std::uint64_t>(j),
                         static_cast<std::uint64_t>(i));
      const auto& sketch =
          sketches[std::uniform_int_distribution<size_t>(0, sketches.size() - 1)(rng)];
      holdout.push_back(synthesize_sherd(sketch, rng));
    }
  }
  return holdout;
}

void require_near(double value, double target, double tol, const char* what) {
  if (std::abs(value - target) > tol) fail(Errc::InvariantViolation, what);
}

}  // namespace

TrainResult train(const Catalog& catalog, const TrainConfig& cfg, std::ostream* log) {
  cfg.validate(catalog);
  const int c = static_cast<int>(catalog.class_count());

  NetConfig net_cfg = cfg.net;
  net_cfg.classes = c;
  net_cfg.k = cfg.train_sampling.k;
  net_cfg.validate();

  Rng init_rng = make_rng(cfg.seed, kSeedInit);
  NetParams<float> params = init_params<float>(init_rng, net_cfg);
  AdamState<float> opt = make_adam(params, cfg.learning_rate);
  Rng dropout_rng = make_rng(cfg.seed, kSeedDropout);

  LossWeights weights = LossWeights::uniform(c);
  ClassStats stats(c);

  std::ofstream care_csv, train_csv;
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    care_csv.open(cfg.out_dir + "/care_stats.csv", std::ios::trunc);
    write_stats_csv_header(care_csv, c);
    train_csv.open(cfg.out_dir + "/train_log.csv", std::ios::trunc);
    train_csv << "step,loss,u_norm,v_norm,gen_sherds_per_s,step_sherds_per_s\n";
  }

  TrainResult result;
  result.loss_curve.reserve(cfg.steps);

  const std::vector<SherdOutline> holdout =
      cfg.holdout_per_class > 0 ? generate_holdout(catalog, cfg)
                                : std::vector<SherdOutline>{};

  auto snapshot = [&](long step) {
    Checkpoint ckpt;
    ckpt.net = net_cfg;
    ckpt.params = params;
    ckpt.opt = opt;
    ckpt.step = step;
    ckpt.weights = weights;
    ckpt.stats = stats;
    ckpt.class_ids = catalog.class_ids;
    ckpt.train_sampling = cfg.train_sampling;
    ckpt.eval_sampling = cfg.eval_sampling;
    ckpt.encode_mode = cfg.encode_mode;
    ckpt.care = cfg.care;
    return ckpt;
  };

  auto consider_best = [&](long step) {
    const Checkpoint current = snapshot(step);
    if (!holdout.empty()) {
      const Metrics m = evaluate(current, holdout, {1}, cfg.seed);
      if (m.mean[0] > result.best_top1) {
        result.best_top1 = m.mean[0];
        result.best = current;
        if (!cfg.out_dir.empty()) save_checkpoint(result.best, cfg.out_dir + "/best.ckpt");
      }
    }
    if (!cfg.out_dir.empty()) save_checkpoint(current, cfg.out_dir + "/latest.ckpt");
  };

  using clock = std::chrono::steady_clock;
  double gen_window = 0.0, step_window = 0.0;
  long window_samples = 0;

  for (long step = 0; step < cfg.steps; ++step) {
    const auto t0 = clock::now();
    const std::vector<EncodedSample> samples =
        generate_batch(catalog, cfg, step, result.degenerate_resamples);
    const Batch<float> batch = pack_batch<float>(samples);
    const auto t1 = clock::now();

    NetCache<float> cache;
    const Mat<float> probs =
        forward(params, net_cfg, batch, NetMode::Train, &dropout_rng, &cache);
    const CareResult lres = careloss(probs, batch.labels, weights, cfg.care);
    update_stats(stats, batch.labels, lres.predicted);
    const Mat<float> dlogits = careloss_dlogits(probs, batch.labels, lres);
    const NetParams<float> grads = backward(params, net_cfg, cache, dlogits);
    adam_step(params, grads, opt);
    const auto t2 = clock::now();

    // The weighting algebra is load-bearing: check it on every step.
    require_near(std::accumulate(weights.u.begin(), weights.u.end(), 0.0), 1.0, 1e-9,
                 "class weights u drifted off unit sum");
    require_near(std::accumulate(lres.v.begin(), lres.v.end(), 0.0),
                 cfg.care.v_sums_to_batch ? static_cast<double>(cfg.batch_size) : 1.0, 1e-9,
                 "per-batch v terms drifted off their normalization");

    result.loss_curve.push_back(lres.loss);
    const double gen_s = std::chrono::duration<double>(t1 - t0).count();
    const double step_s = std::chrono::duration<double>(t2 - t1).count();
    result.gen_seconds += gen_s;
    result.step_seconds += step_s;
    gen_window += gen_s;
    step_window += step_s;
    window_samples += cfg.batch_size;

    if ((step + 1) % cfg.care.refresh_batches == 0) {
      const auto psi = window_psi(stats);
      const auto rho = window_rho(stats);
      weights = refresh_weights(weights, stats, cfg.care);
      if (care_csv.is_open()) append_stats_csv(care_csv, step + 1, psi, rho, weights.u);

      double u_norm = 0.0, v_norm = 0.0;
      for (double u : weights.u) u_norm += u * u;
      for (double v : weights.vhat_norm) v_norm += v * v;
      u_norm = std::sqrt(u_norm);
      v_norm = std::sqrt(v_norm);
      const double gen_rate = window_samples / std::max(gen_window, 1e-12);
      const double step_rate = window_samples / std::max(step_window, 1e-12);
      if (log)
        *log << "step=" << step + 1 << " loss=" << lres.loss << " u_norm=" << u_norm
             << " v_norm=" << v_norm << " gen_sherds_per_s=" << gen_rate
             << " step_sherds_per_s=" << step_rate << '\n';
      if (train_csv.is_open())
        train_csv << step + 1 << ',' << lres.loss << ',' << u_norm << ',' << v_norm << ','
                  << gen_rate << ',' << step_rate << '\n';
      gen_window = step_window = 0.0;
      window_samples = 0;
    }

    if ((step + 1) % cfg.checkpoint_every == 0) consider_best(step + 1);
  }

  result.final_state = snapshot(cfg.steps);
  if (cfg.steps % cfg.checkpoint_every != 0 || cfg.steps == 0) consider_best(cfg.steps);
  if (result.best_top1 < 0) {
    result.best = result.final_state;  // no holdout: the final model stands
  }
  if (!cfg.out_dir.empty())
    save_checkpoint(result.final_state, cfg.out_dir + "/final.ckpt");
  return result;
}

std::vector<SherdOutline> synthesize_outline_set(const Catalog& catalog, int per_class,
                                                 std::uint64_t seed, bool augmented) {
  if (per_class < 1)
    fail(Errc::InvariantViolation, "outline sets need at least one outline per class");
  std::vector<SherdOutline> out;
  out.reserve(catalog.class_count() * per_class);
  for (size_t j = 0; j < catalog.class_ids.size(); ++j) {
    const auto& sketches = catalog.sketches(catalog.class_ids[j]);
    for (int i = 0; i < per_class; ++i) {
      Rng rng = make_rng(mix_seed(seed, kSeedGen), j, static_cast<std::uint64_t>(i));
      const auto& sketch =
          sketches[std::uniform_int_distribution<size_t>(0, sketches.size() - 1)(rng)];
      if (augmented) {
        long resamples = 0;
        out.push_back(synthesize_augmented(sketch, rng, true, true, {}, resamples));
      } else {
        out.push_back(synthesize_sherd(sketch, rng));
      }
    }
  }
  return out;
}

namespace {

struct EvalTally {
  std::vector<std::vector<long>> hits;  // ks x classes
  std::vector<long> counts;             // per class
  std::vector<long> confusion;          // classes x classes
};

}  // namespace

Metrics evaluate(const Checkpoint& ckpt, const std::vector<SherdOutline>& dataset,
                 const std::vector<int>& ks, const SamplingConfig& sampling,
                 std::uint64_t seed) {
  if (dataset.empty()) fail(Errc::InvariantViolation, "evaluation needs at least one outline");
  std::vector<int> sorted_ks = ks;
  std::sort(sorted_ks.begin(), sorted_ks.end());
  sorted_ks.erase(std::unique(sorted_ks.begin(), sorted_ks.end()), sorted_ks.end());
  if (sorted_ks.empty() || sorted_ks.front() < 1)
    fail(Errc::InvariantViolation, "top-k ranks must be positive");
  sampling.validate();

  const int c = ckpt.net.classes;
  EvalTally tally;
  tally.hits.assign(sorted_ks.size(), std::vector<long>(c, 0));
  tally.counts.assign(c, 0);
  tally.confusion.assign(static_cast<size_t>(c) * c, 0);

  constexpr int kEvalBatch = 64;
  for (size_t start = 0; start < dataset.size(); start += kEvalBatch) {
    const size_t stop = std::min(dataset.size(), start + kEvalBatch);
    std::vector<EncodedSample> samples;
    samples.reserve(stop - start);
    for (size_t i = start; i < stop; ++i) {
      const SherdOutline& outline = dataset[i];
      if (!outline.class_id)
        fail(Errc::UnknownLabel, "evaluation outline carries no class label");
      int label = -1;
      for (int j = 0; j < c; ++j)
        if (ckpt.class_ids[j] == *outline.class_id) {
          label = j;
          break;
        }
      if (label < 0)
        fail(Errc::UnknownLabel, "class '" + *outline.class_id + "' is not in the model");
      Rng rng = make_rng(mix_seed(seed, kSeedEval), static_cast<std::uint64_t>(i));
      EncodedSample sample = prepare(outline, sampling, rng, ckpt.encode_mode);
      sample.label = label;
      samples.push_back(std::move(sample));
    }
    const Batch<float> batch = pack_batch<float>(samples);
    const Mat<float> probs = forward(ckpt.params, ckpt.net, batch, NetMode::Eval);
    for (int r = 0; r < probs.rows; ++r) {
      const int label = batch.labels[r];
      const std::vector<int> order = rank_classes(probs, r);
      int rank = 0;
      while (order[rank] != label) ++rank;
      tally.counts[label] += 1;
      tally.confusion[static_cast<size_t>(label) * c + order[0]] += 1;
      for (size_t ki = 0; ki < sorted_ks.size(); ++ki)
        if (rank < sorted_ks[ki]) tally.hits[ki][label] += 1;
    }
  }

  Metrics m;
  m.ks = sorted_ks;
  m.class_counts = tally.counts;
  m.confusion = tally.confusion;
  m.per_class.assign(sorted_ks.size(), std::vector<double>(c, 0.0));
  m.mean.assign(sorted_ks.size(), 0.0);
  m.sd.assign(sorted_ks.size(), 0.0);
  for (size_t ki = 0; ki < sorted_ks.size(); ++ki) {
    double sum = 0.0, sq = 0.0;
    long used = 0;
    for (int j = 0; j < c; ++j) {
      if (tally.counts[j] == 0) continue;
      const double acc = static_cast<double>(tally.hits[ki][j]) / tally.counts[j];
      m.per_class[ki][j] = acc;
      sum += acc;
      sq += acc * acc;
      used += 1;
    }
    if (used > 0) {
      m.mean[ki] = sum / used;
      const double var = std::max(0.0, sq / used - m.mean[ki] * m.mean[ki]);
      m.sd[ki] = std::sqrt(var);
    }
  }
  return m;
}

Metrics evaluate(const Checkpoint& ckpt, const std::vector<SherdOutline>& dataset,
                 const std::vector<int>& ks, std::uint64_t seed) {
  return evaluate(ckpt, dataset, ks, ckpt.eval_sampling, seed);
}

void write_metrics_csv(std::ostream& os, const Metrics& m) {
  os << "k,mean,sd";
  for (size_t j = 0; j < m.per_class.front().size(); ++j) os << ",class_" << j;
  os << '\n';
  for (size_t ki = 0; ki < m.ks.size(); ++ki) {
    os << m.ks[ki] << ',' << m.mean[ki] << ',' << m.sd[ki];
    for (double acc : m.per_class[ki]) os << ',' << acc;
    os << '\n';
  }
}

void write_confusion_csv(std::ostream& os, const Metrics& m,
                         const std::vector<std::string>& class_ids) {
  const size_t c = class_ids.size();
  os << "true\\predicted";
  for (const auto& id : class_ids) os << ',' << id;
  os << '\n';
  for (size_t i = 0; i < c; ++i) {
    os << class_ids[i];
    for (size_t j = 0; j < c; ++j) os << ',' << m.confusion[i * c + j];
    os << '\n';
  }
}

std::vector<std::pair<std::string, double>> classify(const Checkpoint& ckpt,
                                                     const SherdOutline& outline,
                                                     std::uint64_t seed) {
  Rng rng = make_rng(mix_seed(seed, kSeedEval));
  const EncodedSample sample = prepare(outline, ckpt.eval_sampling, rng, ckpt.encode_mode);
  const Batch<float> batch = pack_batch<float>({sample});
  const Mat<float> probs = forward(ckpt.params, ckpt.net, batch, NetMode::Eval);
  const std::vector<int> order = rank_classes(probs, 0);
  std::vector<std::pair<std::string, double>> ranked;
  ranked.reserve(order.size());
  for (int j : order)
    ranked.emplace_back(ckpt.class_ids[j], static_cast<double>(probs.at(0, j)));
  return ranked;
}

std::vector<SweepRow> resolution_sweep(const Checkpoint& ckpt,
                                       const std::vector<SherdOutline>& dataset,
                                       const std::vector<double>& resolutions,
                                       std::uint64_t seed) {
  std::vector<SweepRow> rows;
  rows.reserve(resolutions.size());
  for (double res : resolutions) {
    if (res <= 0) fail(Errc::InvariantViolation, "sweep resolutions must be positive");
    SamplingConfig sampling;
    sampling.resolution = res;
    sampling.k = std::min(4096, static_cast<int>(std::floor(512.0 * 2.0 / res)));
    const Metrics m = evaluate(ckpt, dataset, {1, 5}, sampling, seed);
    rows.push_back({res, m.mean[0], m.mean[1]});
  }
  return rows;
}

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << "resolution_mm,top1,top5\n";
  for (const SweepRow& r : rows)
    os << r.resolution_mm << ',' << r.top1 << ',' << r.top5 << '\n';
}

namespace {

// One vessel wall as a centerline radius curve sampled bottom to top.
struct VesselParams {
  double height;
  double r_base;
  double r_rim;
  double bulge;       // mid-body swell, signed
  double thickness;
  double flare_exp;   // shape of the base-to-rim transition
};

ProfileSketch build_sketch(const VesselParams& p, const std::string& class_id,
                           const std::string& source_id) {
  ProfileSketch sketch;
  sketch.class_id = class_id;
  sketch.source_id = source_id;
  const int rows = 48;
  for (int i = 0; i <= rows; ++i) {
    const double t = static_cast<double>(i) / rows;
    const double r =
        p.r_base + (p.r_rim - p.r_base) * std::pow(t, p.flare_exp) + p.bulge * std::sin(kPi * t);
    const double z = p.height * t;
    sketch.inner.push_back({r - 0.5 * p.thickness, z, false});
    sketch.outer.push_back({r + 0.5 * p.thickness, z, false});
  }
  return sketch;
}

VesselParams fixture_params(int family, int tier, double sep) {
  // Training scales every sherd by a wide random factor, so absolute size
  // carries almost no class signal. Tiers therefore move scale-free
  // proportions — wall curvature, swell ratio, thickness-to-radius, aspect —
  // in different directions per family, while a mild size ladder (scaled by
  // the requested separation) keeps prototypes apart in raw Hausdorff terms.
  const double step = std::max(1.8 * sep, 14.0);
  const double t = tier;
  switch (family) {
    case 0: {  // open bowls: flare sharpens, wall thickens, body sags more
      const double rim = 70.0 + 0.45 * step * t;
      return {(1.00 + 0.22 * t) * rim, (0.23 + 0.03 * t) * rim, rim,
              (-0.05 - 0.045 * t) * rim, (0.050 + 0.020 * t) * rim,
              0.55 * std::pow(1.75, t)};
    }
    case 1: {  // necked jars: belly swells, wall thins, body shortens
      const double rim = 30.0 + 0.25 * step * t;
      return {(3.3 - 0.6 * t) * rim, (0.80 - 0.08 * t) * rim, rim,
              (0.85 + 0.50 * t) * rim, (0.185 - 0.055 * t) * rim, 1.0 + 0.3 * t};
    }
    default: {  // plates: deepen, thicken sharply, rim transition steepens
      const double rim = 95.0 + 1.0 * step * t;
      return {(0.26 + 0.13 * t) * rim, (0.30 - 0.045 * t) * rim, rim,
              (-0.02 - 0.05 * t) * rim, (0.062 + 0.030 * t) * rim, 1.5 + 0.9 * t};
    }
  }
}

const char* family_name(int family) {
  switch (family) {
    case 0: return "bowl";
    case 1: return "jar";
    default: return "plate";
  }
}

}  // namespace

double sketch_hausdorff(const ProfileSketch& a, const ProfileSketch& b) {
  auto to_vecs = [](const std::vector<ProfilePoint>& pts) {
    std::vector<Vec2> out;
    out.reserve(pts.size());
    for (const auto& p : pts) out.push_back({p.x, p.y});
    return out;
  };
  const double inner = hausdorff(to_vecs(a.inner), to_vecs(b.inner));
  const double outer = hausdorff(to_vecs(a.outer), to_vecs(b.outer));
  return std::max(inner, outer);
}

Catalog make_parametric_catalog(const FixtureSpec& spec) {
  if (spec.classes < 2)
    fail(Errc::InvariantViolation, "a fixture catalog needs at least two classes");
  if (spec.sketches_per_class < 1)
    fail(Errc::InvariantViolation, "each fixture class needs at least one sketch");

  Catalog catalog;
  for (int i = 0; i < spec.classes; ++i) {
    const int family = i % 3;
    const int tier = i / 3;
    const VesselParams proto = fixture_params(family, tier, spec.min_prototype_separation_mm);
    const std::string class_id = std::string(family_name(family)) + "_" + std::to_string(tier);

    std::vector<ProfileSketch> sketches;
    for (int s = 0; s < spec.sketches_per_class; ++s) {
      VesselParams p = proto;
      if (s > 0) {
        // Within-class variants jitter mildly; the prototype itself stays
        // exact so the separation ladder is deterministic.
        Rng rng = make_rng(spec.seed, static_cast<std::uint64_t>(i),
                           static_cast<std::uint64_t>(s));
        std::uniform_real_distribution<double> jitter(-0.03, 0.03);
        p.height *= 1.0 + jitter(rng);
        p.r_base *= 1.0 + jitter(rng);
        p.r_rim *= 1.0 + jitter(rng);
        p.bulge *= 1.0 + jitter(rng);
        p.thickness *= 1.0 + jitter(rng);
      }
      ProfileSketch sketch =
          build_sketch(p, class_id, class_id + "_v" + std::to_string(s));
      validate_sketch(sketch);
      sketches.push_back(std::move(sketch));
    }
    catalog.class_ids.push_back(class_id);
    catalog.classes.emplace(class_id, std::move(sketches));
  }
  return catalog;
}

}  // namespace sherd
