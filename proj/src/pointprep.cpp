#include "sherd/pointprep.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace sherd {

void SamplingConfig::validate() const {
  if (k < 16) fail(Errc::InvariantViolation, "sampling K must be >= 16");
  if (!(resolution > 0)) fail(Errc::InvariantViolation, "sampling resolution must be > 0");
}

SherdOutline center_outline(const SherdOutline& outline) {
  double cx = 0.0, cy = 0.0;
  size_t n = 0;
  for (const SherdPoint& p : outline.points) {
    if (p.side == PointSide::Break) continue;
    cx += p.x;
    cy += p.y;
    ++n;
  }
  if (n == 0) fail(Errc::EmptyOutline, "centering an outline with no surface points");
  cx /= static_cast<double>(n);
  cy /= static_cast<double>(n);
  SherdOutline out = outline;
  for (SherdPoint& p : out.points) {
    p.x -= cx;
    p.y -= cy;
  }
  return out;
}

Fracture3D augment_fracture(const Fracture3D& fracture, Rng& rng) {
  std::normal_distribution<double> angle_deg(0.0, kFractureRotSigmaDeg);
  std::uniform_real_distribution<double> uz(-1.0, 1.0);
  std::uniform_real_distribution<double> uphi(0.0, 2.0 * kPi);
  const double angle = std::abs(deg2rad(angle_deg(rng)));
  const double z = uz(rng);
  const double phi = uphi(rng);
  const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
  const Vec3 axis{s * std::cos(phi), s * std::sin(phi), z};
  Fracture3D out = fracture;
  for (auto& run : out.runs)
    for (Vec3& p : run.pts) p = rotate_about_axis(p, axis, angle);
  return out;
}

SherdOutline augment_scale(const SherdOutline& outline, Rng& rng, const ScaleAugment& cfg) {
  if (!(cfg.variance >= 0.0) || !(cfg.min_scale <= cfg.max_scale))
    fail(Errc::InvariantViolation, "scale augmentation config is inconsistent");
  std::normal_distribution<double> dist(cfg.mean, std::sqrt(cfg.variance));
  double s = dist(rng);
  for (int tries = 0; s < cfg.min_scale || s > cfg.max_scale; ++tries) {
    if (tries >= 10000)
      fail(Errc::InvariantViolation, "scale truncation window has negligible mass");
    s = dist(rng);
  }
  SherdOutline out = outline;
  for (SherdPoint& p : out.points) {
    p.x *= s;
    p.y *= s;
  }
  return out;
}

namespace {

// Arc-length geometry of one chain: points and cumulative lengths.
struct ChainArcs {
  Side side = Side::Inner;
  std::vector<Vec2> pts;
  std::vector<double> cum;  // cum[i] = arc length up to pts[i]
  double length() const { return cum.empty() ? 0.0 : cum.back(); }

  Vec2 point_at(double arc) const {
    const double a = std::clamp(arc, 0.0, length());
    const auto it = std::lower_bound(cum.begin(), cum.end(), a);
    size_t hi = static_cast<size_t>(it - cum.begin());
    if (hi == 0) return pts.front();
    const size_t lo = hi - 1;
    const double seg = cum[hi] - cum[lo];
    if (seg <= 0.0) return pts[hi];
    const double t = (a - cum[lo]) / seg;
    return pts[lo] + (pts[hi] - pts[lo]) * t;
  }
};

std::vector<ChainArcs> chain_arcs(const SherdOutline& outline) {
  std::vector<ChainArcs> out;
  for (const Chain& c : outline.chains()) {
    ChainArcs arcs;
    arcs.side = c.side == PointSide::Inner ? Side::Inner : Side::Outer;
    arcs.pts.reserve(c.count);
    arcs.cum.reserve(c.count);
    double acc = 0.0;
    for (size_t i = c.first; i < c.first + c.count; ++i) {
      const Vec2 p{outline.points[i].x, outline.points[i].y};
      if (!arcs.pts.empty()) acc += (p - arcs.pts.back()).norm();
      arcs.pts.push_back(p);
      arcs.cum.push_back(acc);
    }
    out.push_back(std::move(arcs));
  }
  return out;
}

}  // namespace

std::vector<OutlineSample> sample_points(const SherdOutline& outline,
                                         const SamplingConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::vector<ChainArcs> chains = chain_arcs(outline);
  double total = 0.0;
  for (const ChainArcs& c : chains) total += c.length();
  if (total <= 0.0) fail(Errc::EmptyOutline, "outline has no sampleable arc length");

  const int m = std::min<long>(cfg.k, static_cast<long>(std::floor(total / cfg.resolution)));
  if (m < 1)
    fail(Errc::EmptyOutline, "outline arc is shorter than one resolution step");

  // One uniform draw per stratum; the jitter margin keeps consecutive draws
  // at least 0.75 * resolution apart while every stratum stays reachable
  // (stratum width >= resolution by construction of m).
  const double w = total / m;
  const double margin = 0.375 * cfg.resolution;
  std::vector<OutlineSample> samples;
  samples.reserve(cfg.k);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < m; ++i) {
    const double lo = i * w + margin;
    const double hi = (i + 1) * w - margin;
    const double arc = lo + (hi - lo) * unit(rng);
    // Map the concatenated-arc coordinate onto its chain.
    double base = 0.0;
    for (size_t ci = 0; ci < chains.size(); ++ci) {
      const double len = chains[ci].length();
      if (arc <= base + len || ci + 1 == chains.size()) {
        const double local = std::clamp(arc - base, 0.0, len);
        samples.push_back(OutlineSample{chains[ci].point_at(local), chains[ci].side, ci, local});
        break;
      }
      base += len;
    }
  }
  std::uniform_int_distribution<int> pick(0, m - 1);
  while (static_cast<int>(samples.size()) < cfg.k) samples.push_back(samples[pick(rng)]);
  return samples;
}

std::pair<double, double> compute_angle(const SherdOutline& outline, const OutlineSample& s,
                                        double spacing) {
  const std::vector<ChainArcs> chains = chain_arcs(outline);
  if (s.chain_index >= chains.size())
    fail(Errc::IndexOutOfRange, "sample refers to a nonexistent chain");
  const ChainArcs& chain = chains[s.chain_index];
  const Vec2 p = chain.point_at(s.arc);
  const Vec2 before = chain.point_at(s.arc - spacing);
  const Vec2 after = chain.point_at(s.arc + spacing);
  const Vec2 a = before - p;
  const Vec2 b = after - p;
  const double na = a.norm(), nb = b.norm();
  if (na < 1e-12 || nb < 1e-12) return {0.0, -1.0};  // collapsed neighbor: straight
  const double theta = std::atan2(std::abs(a.cross(b)), a.dot(b));
  return {std::sin(theta), std::cos(theta)};
}

EncodedSample encode(const std::vector<OutlineSample>& samples,
                     const std::vector<std::pair<double, double>>& angles, EncodeMode mode) {
  if (samples.size() != angles.size())
    fail(Errc::ShapeMismatch, "samples and angles differ in length");
  EncodedSample out;
  out.k = static_cast<int>(samples.size());
  out.loc.assign(samples.size() * 4, 0.0);
  out.ang.assign(samples.size() * 4, 0.0);
  for (size_t i = 0; i < samples.size(); ++i) {
    const OutlineSample& s = samples[i];
    const auto [sin_t, cos_t] = angles[i];
    double* loc = &out.loc[i * 4];
    double* ang = &out.ang[i * 4];
    if (mode == EncodeMode::GroupHot) {
      const int g = s.side == Side::Inner ? 0 : 2;
      loc[g] = s.pos.x;
      loc[g + 1] = s.pos.y;
      ang[g] = sin_t;
      ang[g + 1] = cos_t;
    } else {
      const double hot_in = s.side == Side::Inner ? 1.0 : 0.0;
      loc[0] = s.pos.x;
      loc[1] = s.pos.y;
      loc[2] = hot_in;
      loc[3] = 1.0 - hot_in;
      ang[0] = sin_t;
      ang[1] = cos_t;
      ang[2] = hot_in;
      ang[3] = 1.0 - hot_in;
    }
  }
  return out;
}

EncodedSample prepare(const SherdOutline& outline, const SamplingConfig& cfg, Rng& rng,
                      EncodeMode mode) {
  const SherdOutline centered = center_outline(outline);
  const std::vector<OutlineSample> samples = sample_points(centered, cfg, rng);
  std::vector<std::pair<double, double>> angles;
  angles.reserve(samples.size());
  for (const OutlineSample& s : samples)
    angles.push_back(compute_angle(centered, s, cfg.resolution));
  return encode(samples, angles, mode);
}

}  // namespace sherd
