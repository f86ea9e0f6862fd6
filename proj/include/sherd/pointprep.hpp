#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "sherd/common.hpp"
#include "sherd/geom.hpp"
#include "sherd/synthgeom.hpp"

namespace sherd {

struct SamplingConfig {
  int k = 512;             // points per sample (train 512, eval 1024)
  double resolution = 2.0;  // minimum inter-sample arc spacing, mm

  void validate() const;
};

// Side labels live in dedicated feature groups: per point only the group of
// its own surface carries values, the other group stays zero. The ablation
// variant keeps one shared coordinate pair and appends a two-value one-hot
// side indicator instead (rows stay 4 wide).
enum class EncodeMode { GroupHot, OnehotAppend };

struct EncodedSample {
  int k = 0;
  std::vector<double> loc;  // K x 4, row-major
  std::vector<double> ang;  // K x 4, row-major
  std::optional<int> label;
};

// A sampled outline point with enough provenance to find its arc-distance
// neighbors on the dense outline.
struct OutlineSample {
  Vec2 pos;
  Side side = Side::Inner;
  size_t chain_index = 0;  // index into SherdOutline::chains()
  double arc = 0.0;        // arc position within that chain, mm
};

// Translates so the centroid of non-break points is the origin; break
// points ride along.
SherdOutline center_outline(const SherdOutline& outline);

// Small random 3D rotation before projection: angle |a| with a ~ N(0, 10)
// degrees, axis uniform on the sphere. Applied to every run point; the
// in-plane projection later absorbs the fixed-point choice, so the rotation
// acts about the coordinate origin.
Fracture3D augment_fracture(const Fracture3D& fracture, Rng& rng);
constexpr double kFractureRotSigmaDeg = 10.0;

// Uniform scale s ~ N(mean, variance), redrawn until s lands in
// [0.3, 3.0]. Defaults follow the synthesis recipe; both parameters stay
// adjustable because the source distribution is unusually wide.
struct ScaleAugment {
  double mean = 1.2;
  double variance = 0.8;
  double min_scale = 0.3;
  double max_scale = 3.0;
};

SherdOutline augment_scale(const SherdOutline& outline, Rng& rng,
                           const ScaleAugment& cfg = {});

// min(K, floor(L / resolution)) distinct points drawn by stratified
// jittered arc-length sampling over non-break segments (guaranteed spacing
// >= 0.75 * resolution), padded to exactly K by repeating uniformly chosen
// sampled points.
std::vector<OutlineSample> sample_points(const SherdOutline& outline,
                                         const SamplingConfig& cfg, Rng& rng);

// Interior angle of the outline at the sample, between the two points at
// arc distance `spacing` along the sample's own chain (clamped at chain
// ends). Returns (sin, cos) with theta in [0, pi]; degenerate neighbor
// collapse counts as straight: (0, -1).
std::pair<double, double> compute_angle(const SherdOutline& outline, const OutlineSample& s,
                                        double spacing);

// Packs samples and their angles into the network input rows.
EncodedSample encode(const std::vector<OutlineSample>& samples,
                     const std::vector<std::pair<double, double>>& angles,
                     EncodeMode mode = EncodeMode::GroupHot);

// center -> sample -> angles -> encode, deterministic under a fixed rng.
EncodedSample prepare(const SherdOutline& outline, const SamplingConfig& cfg, Rng& rng,
                      EncodeMode mode = EncodeMode::GroupHot);

}  // namespace sherd
