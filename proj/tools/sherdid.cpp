#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "sherd/harness.hpp"

using namespace sherd;
using nlohmann::json;

namespace {

// Every subcommand runs deterministically under --seed; this is the
// documented default when the flag is omitted.
constexpr std::uint64_t kDefaultSeed = 42;

// Overrides --out for gen and train when set.
constexpr const char* kOutDirEnv = "SHERDID_OUT_DIR";

constexpr std::uint64_t kSeedOracle = 0x6f7263;  // oracle-check plane draws

std::vector<int> parse_int_list(const std::string& text, const std::string& what) {
  std::vector<int> out;
  std::istringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      fail(Errc::MalformedFile, what + ": '" + item + "' is not an integer");
    }
  }
  if (out.empty()) fail(Errc::MalformedFile, what + ": empty list");
  return out;
}

std::vector<double> parse_double_list(const std::string& text, const std::string& what) {
  std::vector<double> out;
  std::istringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      fail(Errc::MalformedFile, what + ": '" + item + "' is not a number");
    }
  }
  if (out.empty()) fail(Errc::MalformedFile, what + ": empty list");
  return out;
}

void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                const std::string& path, const char* where) {
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* a : allowed)
      if (item.key() == a) known = true;
    if (!known)
      fail(Errc::MalformedFile,
           path + ": unknown key \"" + item.key() + "\" in " + where);
  }
}

template <typename T>
void read_field(const json& obj, const char* key, T& out, const std::string& path) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    fail(Errc::MalformedFile, path + ": \"" + key + "\" has the wrong type");
  }
}

void read_sampling(const json& obj, const char* key, SamplingConfig& out,
                   const std::string& path) {
  if (!obj.contains(key)) return;
  const json& s = obj.at(key);
  if (!s.is_object()) fail(Errc::MalformedFile, path + ": \"" + key + "\" must be an object");
  check_keys(s, {"k", "resolution"}, path, key);
  read_field(s, "k", out.k, path);
  read_field(s, "resolution", out.resolution, path);
}

struct ParsedConfig {
  TrainConfig cfg;
  bool has_workers = false;
};

// The config file mirrors the training configuration one to one. Unknown
// keys are rejected so typos never silently fall back to defaults.
ParsedConfig parse_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::IoError, "cannot open config file '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    fail(Errc::MalformedFile, "config file '" + path + "': " + e.what());
  }
  if (!doc.is_object())
    fail(Errc::MalformedFile, "config file '" + path + "': expected a top-level object");
  check_keys(doc,
             {"train_sampling", "eval_sampling", "augment_rotation", "augment_scaling",
              "scale", "encode_mode", "net", "care", "learning_rate", "batch_size",
              "steps", "seed", "checkpoint_every", "holdout_per_class", "workers",
              "out_dir"},
             path, "the top level");

  ParsedConfig parsed;
  TrainConfig& cfg = parsed.cfg;
  read_sampling(doc, "train_sampling", cfg.train_sampling, path);
  read_sampling(doc, "eval_sampling", cfg.eval_sampling, path);
  read_field(doc, "augment_rotation", cfg.augment_rotation, path);
  read_field(doc, "augment_scaling", cfg.augment_scaling, path);
  if (doc.contains("scale")) {
    const json& s = doc.at("scale");
    if (!s.is_object()) fail(Errc::MalformedFile, path + ": \"scale\" must be an object");
    check_keys(s, {"mean", "variance", "min_scale", "max_scale"}, path, "scale");
    read_field(s, "mean", cfg.scale.mean, path);
    read_field(s, "variance", cfg.scale.variance, path);
    read_field(s, "min_scale", cfg.scale.min_scale, path);
    read_field(s, "max_scale", cfg.scale.max_scale, path);
  }
  if (doc.contains("encode_mode")) {
    const std::string mode = doc.at("encode_mode").is_string()
                                 ? doc.at("encode_mode").get<std::string>()
                                 : std::string();
    if (mode == "group_hot")
      cfg.encode_mode = EncodeMode::GroupHot;
    else if (mode == "onehot_append")
      cfg.encode_mode = EncodeMode::OnehotAppend;
    else
      fail(Errc::MalformedFile,
           path + ": \"encode_mode\" must be \"group_hot\" or \"onehot_append\"");
  }
  if (doc.contains("net")) {
    const json& n = doc.at("net");
    if (!n.is_object()) fail(Errc::MalformedFile, path + ": \"net\" must be an object");
    check_keys(n,
               {"branch_widths", "fusion_widths", "head_widths", "dropout_rate",
                "use_angle_branch"},
               path, "net");
    read_field(n, "branch_widths", cfg.net.branch_widths, path);
    read_field(n, "fusion_widths", cfg.net.fusion_widths, path);
    read_field(n, "head_widths", cfg.net.head_widths, path);
    read_field(n, "dropout_rate", cfg.net.dropout_rate, path);
    read_field(n, "use_angle_branch", cfg.net.use_angle_branch, path);
  }
  if (doc.contains("care")) {
    const json& c = doc.at("care");
    if (!c.is_object()) fail(Errc::MalformedFile, path + ": \"care\" must be an object");
    check_keys(c, {"alpha_u", "alpha_v", "gamma", "refresh_batches", "v_sums_to_batch"},
               path, "care");
    read_field(c, "alpha_u", cfg.care.alpha_u, path);
    read_field(c, "alpha_v", cfg.care.alpha_v, path);
    read_field(c, "gamma", cfg.care.gamma, path);
    read_field(c, "refresh_batches", cfg.care.refresh_batches, path);
    read_field(c, "v_sums_to_batch", cfg.care.v_sums_to_batch, path);
  }
  read_field(doc, "learning_rate", cfg.learning_rate, path);
  read_field(doc, "batch_size", cfg.batch_size, path);
  read_field(doc, "steps", cfg.steps, path);
  read_field(doc, "seed", cfg.seed, path);
  read_field(doc, "checkpoint_every", cfg.checkpoint_every, path);
  read_field(doc, "holdout_per_class", cfg.holdout_per_class, path);
  if (doc.contains("workers")) {
    read_field(doc, "workers", cfg.workers, path);
    parsed.has_workers = true;
  }
  read_field(doc, "out_dir", cfg.out_dir, path);
  return parsed;
}

std::vector<SherdOutline> load_outline_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::directory_iterator it(dir, ec);
  if (ec) fail(Errc::IoError, "cannot list outline directory '" + dir + "'");
  std::vector<std::string> files;
  for (const auto& entry : it)
    if (entry.path().extension() == ".json") files.push_back(entry.path().string());
  std::sort(files.begin(), files.end());
  if (files.empty())
    fail(Errc::IoError, "no .json outline files in directory '" + dir + "'");
  std::vector<SherdOutline> outlines;
  outlines.reserve(files.size());
  for (const auto& f : files) outlines.push_back(load_outline(f));
  return outlines;
}

std::string safe_filename(const std::string& id) {
  std::string out = id;
  for (char& ch : out)
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '_' && ch != '-') ch = '_';
  return out;
}

std::string out_dir_or_env(const std::string& flag_value) {
  if (const char* env = std::getenv(kOutDirEnv); env && *env) return env;
  return flag_value;
}

void print_seed(std::uint64_t seed) { std::cerr << "effective seed: " << seed << '\n'; }

int default_workers() {
  const unsigned n = std::thread::hardware_concurrency();
  return n > 0 ? static_cast<int>(n) : 1;
}

// ---- subcommand option bags ----

struct FixtureOpts {
  std::string out;
  int classes = 10;
  int per_class = 2;
  double separation = 10.0;
  std::uint64_t seed = kDefaultSeed;
};

struct GenOpts {
  std::string catalog;
  std::string out;
  int per_class = 50;
  bool augment = false;
  std::uint64_t seed = kDefaultSeed;
};

struct TrainOpts {
  std::string catalog;
  std::string config;
  std::string out = "train_out";
  long steps = -1;
  int workers = -1;
  std::uint64_t seed = kDefaultSeed;
  bool seed_given = false;
  bool out_given = false;
};

struct EvalOpts {
  std::string checkpoint;
  std::string outlines;
  std::string topk = "1,2,5,10";
  std::string metrics_out;
  std::string confusion_out;
  std::uint64_t seed = kDefaultSeed;
};

struct ClassifyOpts {
  std::string checkpoint;
  std::string outline;
  int top = 5;
  bool as_json = false;
  std::uint64_t seed = kDefaultSeed;
};

struct SweepOpts {
  std::string checkpoint;
  std::string outlines;
  std::string resolutions = "1,2,4,8";
  std::string out;
  std::uint64_t seed = kDefaultSeed;
};

struct OracleOpts {
  std::string catalog;
  int planes = 20;
  double tol = 0.5;
  double step_deg = 0.1;
  double margin = 0.1;
  std::uint64_t seed = kDefaultSeed;
};

int run_fixture(const FixtureOpts& o) {
  print_seed(o.seed);
  FixtureSpec spec;
  spec.classes = o.classes;
  spec.sketches_per_class = o.per_class;
  spec.min_prototype_separation_mm = o.separation;
  spec.seed = o.seed;
  const Catalog catalog = make_parametric_catalog(spec);
  save_catalog(catalog, o.out);
  std::cerr << "wrote " << catalog.class_count() << " classes x " << o.per_class
            << " sketches to " << o.out << '\n';
  return 0;
}

int run_gen(const GenOpts& o) {
  print_seed(o.seed);
  const Catalog catalog = load_catalog(o.catalog);
  const std::string dir = out_dir_or_env(o.out);
  std::filesystem::create_directories(dir);
  const auto outlines = synthesize_outline_set(catalog, o.per_class, o.seed, o.augment);
  size_t idx = 0;
  std::vector<int> counter(catalog.class_count(), 0);
  for (const SherdOutline& outline : outlines) {
    const int cls = catalog.index_of(*outline.class_id);
    const std::string name =
        safe_filename(*outline.class_id) + "_" + std::to_string(counter[cls]++) + ".json";
    save_outline(outline, dir + "/" + name);
    ++idx;
  }
  std::cerr << "wrote " << idx << " outlines to " << dir << '\n';
  return 0;
}

int run_train(const TrainOpts& o) {
  const Catalog catalog = load_catalog(o.catalog);
  ParsedConfig parsed;
  if (!o.config.empty()) parsed = parse_train_config(o.config);
  TrainConfig& cfg = parsed.cfg;
  if (o.steps >= 0) cfg.steps = o.steps;
  if (o.seed_given) cfg.seed = o.seed;
  if (o.workers > 0)
    cfg.workers = o.workers;
  else if (!parsed.has_workers)
    cfg.workers = default_workers();
  if (o.out_given || cfg.out_dir.empty()) cfg.out_dir = o.out;
  cfg.out_dir = out_dir_or_env(cfg.out_dir);

  print_seed(cfg.seed);
  std::cerr << "training " << catalog.class_count() << " classes for " << cfg.steps
            << " steps (batch " << cfg.batch_size << ", " << cfg.workers
            << " workers) -> " << cfg.out_dir << '\n';
  const TrainResult result = train(catalog, cfg, &std::cerr);
  std::cerr << "final loss " << (result.loss_curve.empty() ? 0.0 : result.loss_curve.back())
            << ", degenerate resamples " << result.degenerate_resamples << '\n';
  if (result.best_top1 >= 0)
    std::cerr << "best holdout top-1 " << result.best_top1 << '\n';
  std::cout << cfg.out_dir << "/final.ckpt" << '\n';
  return 0;
}

int run_eval(const EvalOpts& o) {
  print_seed(o.seed);
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const auto outlines = load_outline_dir(o.outlines);
  const auto ks = parse_int_list(o.topk, "--topk");
  const Metrics m = evaluate(ckpt, outlines, ks, o.seed);
  std::cerr << "evaluated " << outlines.size() << " outlines over " << ckpt.net.classes
            << " classes\n";
  if (o.metrics_out.empty()) {
    write_metrics_csv(std::cout, m);
  } else {
    std::ofstream out(o.metrics_out);
    if (!out) fail(Errc::IoError, "cannot write metrics file '" + o.metrics_out + "'");
    write_metrics_csv(out, m);
  }
  if (!o.confusion_out.empty()) {
    std::ofstream out(o.confusion_out);
    if (!out) fail(Errc::IoError, "cannot write confusion file '" + o.confusion_out + "'");
    write_confusion_csv(out, m, ckpt.class_ids);
  }
  return 0;
}

int run_classify(const ClassifyOpts& o) {
  print_seed(o.seed);
  if (o.top < 1) fail(Errc::InvariantViolation, "--top must be at least 1");
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const SherdOutline outline = load_outline(o.outline);
  const auto ranked = classify(ckpt, outline, o.seed);
  const size_t shown = std::min<size_t>(ranked.size(), static_cast<size_t>(o.top));
  if (o.as_json) {
    json rows = json::array();
    for (size_t i = 0; i < shown; ++i)
      rows.push_back({{"class_id", ranked[i].first}, {"probability", ranked[i].second}});
    std::cout << rows.dump(2) << '\n';
  } else {
    for (size_t i = 0; i < shown; ++i)
      std::cout << ranked[i].first << ' ' << ranked[i].second << '\n';
  }
  return 0;
}

int run_sweep(const SweepOpts& o) {
  print_seed(o.seed);
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const auto outlines = load_outline_dir(o.outlines);
  const auto resolutions = parse_double_list(o.resolutions, "--resolutions");
  const auto rows = resolution_sweep(ckpt, outlines, resolutions, o.seed);
  if (o.out.empty()) {
    write_sweep_csv(std::cout, rows);
  } else {
    std::ofstream out(o.out);
    if (!out) fail(Errc::IoError, "cannot write sweep file '" + o.out + "'");
    write_sweep_csv(out, rows);
  }
  return 0;
}

int run_oracle_check(const OracleOpts& o) {
  print_seed(o.seed);
  const Catalog catalog = load_catalog(o.catalog);
  std::vector<const ProfileSketch*> sketches;
  for (const auto& id : catalog.class_ids)
    for (const auto& sketch : catalog.sketches(id)) sketches.push_back(&sketch);

  double worst = 0.0;
  std::string worst_id;
  for (int p = 0; p < o.planes; ++p) {
    Rng rng = make_rng(mix_seed(o.seed, kSeedOracle), static_cast<std::uint64_t>(p));
    const ProfileSketch& sketch =
        *sketches[std::uniform_int_distribution<size_t>(0, sketches.size() - 1)(rng)];
    const ProfileExtent extent = profile_extent(sketch);
    CuttingPlane plane;
    int tries = 0;
    do {
      plane = sample_cutting_plane(rng, sketch, extent);
    } while (!plane_fully_transversal(sketch, plane, o.margin) && ++tries < 200);
    if (tries >= 200)
      fail(Errc::CannotIntersect,
           "no fully transversal plane found for sketch '" + sketch.source_id + "'");
    const SherdOutline fast = generate_fracture(sketch, plane, std::nullopt);
    const SherdOutline dense = brute_force_fracture(sketch, plane, o.step_deg);
    const double d = outline_hausdorff(fast, dense);
    std::cerr << "plane " << p << ": sketch=" << sketch.source_id << " hausdorff=" << d
              << " mm\n";
    if (d > worst) {
      worst = d;
      worst_id = sketch.source_id;
    }
  }
  std::cout << "max deviation " << worst << " mm over " << o.planes
            << " planes (tolerance " << o.tol << ")\n";
  if (worst > o.tol) {
    std::cerr << "error: generator deviates " << worst << " mm from the dense mesh on '"
              << worst_id << "', above tolerance " << o.tol << " mm\n";
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sherdid: synthesize, train on, and identify potsherd outlines"};
  app.require_subcommand(1);

  FixtureOpts fx;
  auto* fixture = app.add_subcommand("fixture", "Write a parametric profile catalog");
  fixture->add_option("--out", fx.out, "Catalog JSON path to write")->required();
  fixture->add_option("--classes", fx.classes, "Number of classes (default 10)");
  fixture->add_option("--per-class", fx.per_class, "Sketches per class (default 2)");
  fixture->add_option("--separation", fx.separation,
                      "Minimum prototype Hausdorff separation in mm (default 10)");
  fixture->add_option("--seed", fx.seed, "Random seed (default 42)");

  GenOpts gn;
  auto* gen = app.add_subcommand("gen", "Synthesize labelled sherd outlines");
  gen->add_option("--catalog", gn.catalog, "Profile catalog JSON")->required();
  gen->add_option("--out", gn.out,
                  std::string("Output directory (overridden by $") + kOutDirEnv + ")")
      ->required();
  gen->add_option("--per-class", gn.per_class, "Outlines per class (default 50)");
  gen->add_flag("--augment", gn.augment,
                "Apply training-style rotation and scale augmentation");
  gen->add_option("--seed", gn.seed, "Random seed (default 42)");

  TrainOpts tr;
  auto* train_cmd = app.add_subcommand("train", "Train a classifier on synthetic sherds");
  train_cmd->add_option("--catalog", tr.catalog, "Profile catalog JSON")->required();
  train_cmd->add_option("--config", tr.config,
                        "JSON config mirroring the training configuration");
  train_cmd->add_option("--out", tr.out,
                        std::string("Output directory (default train_out, overridden by $") +
                            kOutDirEnv + ")");
  train_cmd->add_option("--steps", tr.steps, "Override the training step count");
  train_cmd->add_option("--workers", tr.workers,
                        "Data-generation threads (default: hardware concurrency)");
  train_cmd->add_option("--seed", tr.seed, "Random seed (default 42)");

  EvalOpts ev;
  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on stored outlines");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--outlines", ev.outlines, "Directory of outline JSON files")
      ->required();
  eval_cmd->add_option("--topk", ev.topk, "Comma-separated ranks (default 1,2,5,10)");
  eval_cmd->add_option("--metrics-out", ev.metrics_out,
                       "Metrics CSV path (default: stdout)");
  eval_cmd->add_option("--confusion-out", ev.confusion_out, "Confusion matrix CSV path");
  eval_cmd->add_option("--seed", ev.seed, "Random seed (default 42)");

  ClassifyOpts cl;
  auto* classify_cmd = app.add_subcommand("classify", "Rank classes for one outline");
  classify_cmd->add_option("--checkpoint", cl.checkpoint, "Checkpoint file")->required();
  classify_cmd->add_option("--outline", cl.outline, "Outline JSON file")->required();
  classify_cmd->add_option("--top", cl.top, "Number of classes to print (default 5)");
  classify_cmd->add_flag("--json", cl.as_json, "Emit a JSON array instead of text lines");
  classify_cmd->add_option("--seed", cl.seed, "Random seed (default 42)");

  SweepOpts sw;
  auto* sweep_cmd = app.add_subcommand("sweep", "Score across sampling resolutions");
  sweep_cmd->add_option("--checkpoint", sw.checkpoint, "Checkpoint file")->required();
  sweep_cmd->add_option("--outlines", sw.outlines, "Directory of outline JSON files")
      ->required();
  sweep_cmd->add_option("--resolutions", sw.resolutions,
                        "Comma-separated resolutions in mm (default 1,2,4,8)");
  sweep_cmd->add_option("--out", sw.out, "Sweep CSV path (default: stdout)");
  sweep_cmd->add_option("--seed", sw.seed, "Random seed (default 42)");

  OracleOpts oc;
  auto* oracle_cmd = app.add_subcommand(
      "oracle-check", "Compare the linear generator against a dense mesh section");
  oracle_cmd->add_option("--catalog", oc.catalog, "Profile catalog JSON")->required();
  oracle_cmd->add_option("--planes", oc.planes, "Number of random planes (default 20)");
  oracle_cmd->add_option("--tol", oc.tol, "Hausdorff tolerance in mm (default 0.5)");
  oracle_cmd->add_option("--step", oc.step_deg,
                         "Mesh angular step in degrees (default 0.1)");
  oracle_cmd->add_option("--margin", oc.margin,
                         "Transversality margin for plane rejection (default 0.1)");
  oracle_cmd->add_option("--seed", oc.seed, "Random seed (default 42)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*fixture) return run_fixture(fx);
    if (*gen) return run_gen(gn);
    if (*train_cmd) {
      tr.seed_given = train_cmd->count("--seed") > 0;
      tr.out_given = train_cmd->count("--out") > 0;
      return run_train(tr);
    }
    if (*eval_cmd) return run_eval(ev);
    if (*classify_cmd) return run_classify(cl);
    if (*sweep_cmd) return run_sweep(sw);
    if (*oracle_cmd) return run_oracle_check(oc);
  } catch (const SherdError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
