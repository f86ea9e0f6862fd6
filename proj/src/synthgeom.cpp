#include "sherd/synthgeom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <utility>

#include <nlohmann/json.hpp>

namespace sherd {

using nlohmann::json;

Vec3 CuttingPlane::normal() const {
  const double t = deg2rad(tilt_deg);
  const double az = azimuth_rad;
  // Horizontal in-plane direction h is the strike rotated +90 deg about z;
  // tilting rotates the normal from h toward +z.
  return Vec3{-std::sin(az) * std::cos(t), std::cos(az) * std::cos(t), std::sin(t)};
}

double CuttingPlane::plane_d() const {
  // The plane passes through offset * h at z = 0, h = (-sin az, cos az, 0).
  return offset_mm * std::cos(deg2rad(tilt_deg));
}

void CuttingPlane::frame(Vec3& ex, Vec3& ey) const {
  const Vec3 n = normal();
  // Projection of +z onto the plane; tilt < 90 deg keeps it well defined.
  ey = (Vec3{0, 0, 1} - n * n.z).normalized();
  ex = n.cross(ey);
}

double CutLine::y_at(double x) const {
  return z_intercept + std::tan(deg2rad(slope_angle_deg)) * x;
}

double CutLine::keep_value(double x, double y) const {
  const double d = y - y_at(x);
  return keep == KeepSide::Above ? d : -d;
}

std::vector<Chain> SherdOutline::chains() const {
  std::vector<Chain> out;
  size_t i = 0;
  while (i < points.size()) {
    if (points[i].side == PointSide::Break) {
      ++i;
      continue;
    }
    Chain c{points[i].side, i, 1};
    while (i + c.count < points.size() && points[i + c.count].side == c.side) ++c.count;
    i += c.count;
    out.push_back(c);
  }
  return out;
}

double SherdOutline::surface_arc_length() const {
  double total = 0.0;
  for (const Chain& c : chains()) {
    for (size_t i = c.first + 1; i < c.first + c.count; ++i) {
      const double dx = points[i].x - points[i - 1].x;
      const double dy = points[i].y - points[i - 1].y;
      total += std::hypot(dx, dy);
    }
  }
  return total;
}

void save_outline(const SherdOutline& outline, const std::string& path) {
  json pts = json::array();
  for (const SherdPoint& p : outline.points)
    pts.push_back(json::array({p.x, p.y, point_side_name(p.side)}));
  json doc;
  doc["class_id"] = outline.class_id ? json(*outline.class_id) : json(nullptr);
  doc["points"] = std::move(pts);
  std::ofstream out(path);
  if (!out) fail(Errc::IoError, "cannot write outline file '" + path + "'");
  out << doc.dump(2) << '\n';
  if (!out) fail(Errc::IoError, "short write on outline file '" + path + "'");
}

SherdOutline load_outline(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::IoError, "cannot open outline file '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    fail(Errc::MalformedFile, "outline file '" + path + "': " + e.what());
  }
  if (!doc.is_object() || !doc.contains("points") || !doc["points"].is_array())
    fail(Errc::MalformedFile, "outline file '" + path + "': expected {\"points\": [...]}");
  SherdOutline out;
  if (doc.contains("class_id") && !doc["class_id"].is_null()) {
    if (!doc["class_id"].is_string())
      fail(Errc::MalformedFile, "outline file '" + path + "': class_id must be a string or null");
    out.class_id = doc["class_id"].get<std::string>();
  }
  for (const json& jp : doc["points"]) {
    if (!jp.is_array() || jp.size() != 3 || !jp[0].is_number() || !jp[1].is_number() ||
        !jp[2].is_string())
      fail(Errc::MalformedFile, "outline file '" + path + "': points must be [x, y, side]");
    SherdPoint p;
    p.x = jp[0].get<double>();
    p.y = jp[1].get<double>();
    if (!std::isfinite(p.x) || !std::isfinite(p.y))
      fail(Errc::MalformedFile, "outline file '" + path + "': non-finite coordinate");
    const std::string side = jp[2].get<std::string>();
    if (side == "inner")
      p.side = PointSide::Inner;
    else if (side == "outer")
      p.side = PointSide::Outer;
    else if (side == "break")
      p.side = PointSide::Break;
    else
      fail(Errc::MalformedFile, "outline file '" + path + "': unknown side '" + side + "'");
    out.points.push_back(p);
  }
  return out;
}

namespace {

constexpr double kTangencyTol = 1e-9;  // on the normalized discriminant
constexpr double kDegenerateRadius = 1e-12;

}  // namespace

double root_side_value(const Vec3& p, const CuttingPlane& plane) {
  const Vec3 n = plane.normal();
  // (n x z) . p; the two roots of a transversal circle intersection fall on
  // opposite sides of this value's zero plane, so >= 0 selects one branch
  // consistently across all circles.
  return n.y * p.x - n.x * p.y;
}

CircleHits circle_plane_intersection(double r, double z, const CuttingPlane& plane) {
  CircleHits hits;
  const Vec3 n = plane.normal();
  const double e = plane.plane_d() - n.z * z;
  // n_x*r*cos(phi) + n_y*r*sin(phi) = e, amplitude R = hypot(a, b).
  const double a = n.x * r;
  const double b = n.y * r;
  const double big = std::hypot(a, b);
  if (big <= kDegenerateRadius) {
    // Zero-radius circle: a single axis point, hit only if on the plane.
    if (std::abs(e) <= kDegenerateRadius) {
      hits.count = 1;
      hits.p[0] = Vec3{0, 0, z};
    }
    return hits;
  }
  const double c = e / big;
  const double disc = 1.0 - c * c;  // normalized discriminant
  if (disc < -kTangencyTol) return hits;
  const double phi0 = std::atan2(b, a);
  if (disc <= kTangencyTol) {
    hits.count = 1;
    hits.p[0] = Vec3{r * std::cos(phi0), r * std::sin(phi0), z};
    return hits;
  }
  const double delta = std::acos(std::clamp(c, -1.0, 1.0));
  const Vec3 p_minus{r * std::cos(phi0 - delta), r * std::sin(phi0 - delta), z};
  const Vec3 p_plus{r * std::cos(phi0 + delta), r * std::sin(phi0 + delta), z};
  hits.count = 2;
  // Canonical root first: the branch with root_side_value >= 0 is phi0-delta.
  hits.p[0] = p_minus;
  hits.p[1] = p_plus;
  return hits;
}

Vec3 pick_root(const CircleHits& hits) {
  if (hits.count < 1) fail(Errc::InvariantViolation, "pick_root on an empty intersection");
  return hits.p[0];
}

Fracture3D fracture_points_3d(const ProfileSketch& sketch, const CuttingPlane& plane) {
  Fracture3D fracture;
  for (Side side : {Side::Inner, Side::Outer}) {
    for (const auto& segment : effective_segments(sketch, side)) {
      Fracture3D::Run run;
      run.side = side;
      for (const ProfilePoint& pp : segment) {
        const CircleHits hits = circle_plane_intersection(pp.x, pp.y, plane);
        if (hits.count == 0) continue;  // plane misses this circle
        run.pts.push_back(pick_root(hits));
      }
      if (!run.pts.empty()) fracture.runs.push_back(std::move(run));
    }
  }
  return fracture;
}

namespace {

struct Run2D {
  Side side = Side::Inner;
  std::vector<Vec2> pts;
};

// Keeps the part of `run` on the kept side of `line`, inserting the exact
// boundary crossing. A run that the line slices into two or more pieces
// signals an implausible sherd and is rejected by the caller.
std::vector<std::vector<Vec2>> clip_run(const std::vector<Vec2>& run, const CutLine& line) {
  std::vector<std::vector<Vec2>> pieces;
  std::vector<Vec2> cur;
  auto flush = [&] {
    if (cur.size() >= 2) pieces.push_back(cur);
    cur.clear();
  };
  for (size_t i = 0; i < run.size(); ++i) {
    const double vi = line.keep_value(run[i].x, run[i].y);
    if (i > 0) {
      const double vp = line.keep_value(run[i - 1].x, run[i - 1].y);
      if ((vp < 0) != (vi < 0)) {
        const double t = vp / (vp - vi);
        const Vec2 cross{run[i - 1].x + t * (run[i].x - run[i - 1].x),
                         run[i - 1].y + t * (run[i].y - run[i - 1].y)};
        if (vp >= 0) {  // leaving the kept side
          cur.push_back(cross);
          flush();
        } else {  // entering the kept side
          cur.push_back(cross);
        }
      }
    }
    if (vi >= 0) cur.push_back(run[i]);
  }
  flush();
  return pieces;
}

SherdOutline assemble_outline(std::vector<Run2D> inner, std::vector<Run2D> outer) {
  SherdOutline out;
  // Interleave inner and outer runs so consecutive runs change side and
  // chain boundaries stay unambiguous without explicit separators.
  size_t i = 0, o = 0;
  while (i < inner.size() || o < outer.size()) {
    if (i < inner.size()) {
      for (const Vec2& p : inner[i].pts)
        out.points.push_back(SherdPoint{p.x, p.y, PointSide::Inner});
      ++i;
    }
    if (o < outer.size()) {
      for (const Vec2& p : outer[o].pts)
        out.points.push_back(SherdPoint{p.x, p.y, PointSide::Outer});
      ++o;
    }
  }
  return out;
}

}  // namespace

SherdOutline project_fracture(const Fracture3D& fracture, const CuttingPlane& plane,
                              const std::optional<CutPair>& cuts) {
  if (fracture.runs.empty())
    fail(Errc::DegenerateSherd, "plane does not intersect the profile");
  Vec3 ex, ey;
  plane.frame(ex, ey);
  const Vec3 origin = fracture.runs.front().pts.front();

  std::vector<Run2D> inner, outer;
  for (const Fracture3D::Run& run : fracture.runs) {
    Run2D flat;
    flat.side = run.side;
    flat.pts.reserve(run.pts.size());
    for (const Vec3& p : run.pts) {
      const Vec3 d = p - origin;
      flat.pts.push_back(Vec2{d.dot(ex), d.dot(ey)});
    }
    (run.side == Side::Inner ? inner : outer).push_back(std::move(flat));
  }

  if (cuts) {
    for (auto* group : {&inner, &outer}) {
      std::vector<Run2D> trimmed;
      for (Run2D& run : *group) {
        std::vector<std::vector<Vec2>> pieces{std::move(run.pts)};
        for (const CutLine* line : {&cuts->upper, &cuts->lower}) {
          std::vector<std::vector<Vec2>> next;
          for (const auto& piece : pieces) {
            auto cut = clip_run(piece, *line);
            if (cut.size() > 1)
              fail(Errc::DegenerateSherd, "trim line slices a fracture run into "
                                          "multiple pieces");
            for (auto& c : cut) next.push_back(std::move(c));
          }
          pieces = std::move(next);
        }
        for (auto& piece : pieces) trimmed.push_back(Run2D{run.side, std::move(piece)});
      }
      *group = std::move(trimmed);
    }
  }

  auto count_points = [](const std::vector<Run2D>& runs) {
    size_t n = 0;
    for (const Run2D& r : runs) n += r.pts.size();
    return n;
  };
  if (count_points(inner) < 2 || count_points(outer) < 2)
    fail(Errc::DegenerateSherd, "fewer than 2 points per surface side");

  SherdOutline out = assemble_outline(std::move(inner), std::move(outer));
  if (out.surface_arc_length() < kMinSherdArcMm)
    fail(Errc::DegenerateSherd, "surviving outline arc is shorter than 20 mm");
  return out;
}

SherdOutline generate_fracture(const ProfileSketch& sketch, const CuttingPlane& plane,
                               const std::optional<CutPair>& cuts) {
  SherdOutline out = project_fracture(fracture_points_3d(sketch, plane), plane, cuts);
  out.class_id = sketch.class_id;
  return out;
}

SherdOutline brute_force_fracture(const ProfileSketch& sketch, const CuttingPlane& plane,
                                  double angular_step_deg) {
  if (angular_step_deg <= 0 || angular_step_deg > 0.5)
    fail(Errc::InvariantViolation, "mesh angular step must be in (0, 0.5] degrees");
  const int cols = static_cast<int>(std::ceil(360.0 / angular_step_deg));
  const double step = 2.0 * kPi / cols;
  const Vec3 n = plane.normal();
  const double d = plane.plane_d();

  struct MeshPoint {
    double coord;  // fractional row index along the profile segment
    Vec3 p;
  };

  bool have_origin = false;
  Vec3 origin;
  std::vector<Fracture3D::Run> runs;

  for (Side side : {Side::Inner, Side::Outer}) {
    for (const auto& segment : effective_segments(sketch, side)) {
      const size_t rows = segment.size();
      // Signed plane distances for the full ring of each row, reused by the
      // meridian edges of the next row.
      std::vector<Vec3> ring(cols), prev_ring(cols);
      std::vector<double> f(cols), prev_f(cols);
      std::vector<MeshPoint> kept;
      for (size_t i = 0; i < rows; ++i) {
        const double r = segment[i].x;
        const double z = segment[i].y;
        for (int j = 0; j < cols; ++j) {
          const double phi = j * step;
          ring[j] = Vec3{r * std::cos(phi), r * std::sin(phi), z};
          f[j] = n.dot(ring[j]) - d;
        }
        bool row_has_ring_hit = false;
        Vec3 row_first_hit;
        double row_best_side = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < cols; ++j) {
          const int k = (j + 1) % cols;
          const double fa = f[j], fb = f[k];
          if ((fa < 0) == (fb < 0) && fa != 0) continue;
          if (fa == 0 && fb == 0) continue;  // edge lies in the plane
          const double t = fa / (fa - fb);
          const Vec3 p = ring[j] + (ring[k] - ring[j]) * t;
          if (root_side_value(p, plane) < 0) continue;
          kept.push_back(MeshPoint{static_cast<double>(i), p});
          // Near tangency both ring crossings can land on the kept side;
          // the one further into the branch stands in for the picked root.
          if (!row_has_ring_hit || root_side_value(p, plane) > row_best_side) {
            row_first_hit = p;
            row_best_side = root_side_value(p, plane);
          }
          row_has_ring_hit = true;
        }
        if (row_has_ring_hit && !have_origin) {
          // Same convention as the direct generator: the first intersecting
          // circle's picked root anchors the 2D frame.
          origin = row_first_hit;
          have_origin = true;
        }
        if (i > 0) {
          for (int j = 0; j < cols; ++j) {
            const double fa = prev_f[j], fb = f[j];
            if ((fa < 0) == (fb < 0) && fa != 0) continue;
            if (fa == 0 && fb == 0) continue;  // edge lies in the plane
            const double t = fa / (fa - fb);
            const Vec3 p = prev_ring[j] + (ring[j] - prev_ring[j]) * t;
            if (root_side_value(p, plane) < 0) continue;
            kept.push_back(MeshPoint{static_cast<double>(i - 1) + t, p});
          }
        }
        std::swap(ring, prev_ring);
        std::swap(f, prev_f);
      }
      if (kept.empty()) continue;
      std::sort(kept.begin(), kept.end(),
                [](const MeshPoint& a, const MeshPoint& b) { return a.coord < b.coord; });
      Fracture3D::Run run;
      run.side = side;
      run.pts.reserve(kept.size());
      for (const MeshPoint& mp : kept) run.pts.push_back(mp.p);
      runs.push_back(std::move(run));
    }
  }

  if (runs.empty() || !have_origin)
    fail(Errc::DegenerateSherd, "plane does not intersect the mesh");

  Vec3 ex, ey;
  plane.frame(ex, ey);
  std::vector<Run2D> inner, outer;
  for (const Fracture3D::Run& run : runs) {
    Run2D flat;
    flat.side = run.side;
    for (const Vec3& p : run.pts) {
      const Vec3 off = p - origin;
      flat.pts.push_back(Vec2{off.dot(ex), off.dot(ey)});
    }
    (run.side == Side::Inner ? inner : outer).push_back(std::move(flat));
  }
  SherdOutline out = assemble_outline(std::move(inner), std::move(outer));
  out.class_id = sketch.class_id;
  return out;
}

bool plane_fully_transversal(const ProfileSketch& sketch, const CuttingPlane& plane,
                             double margin) {
  const Vec3 n = plane.normal();
  const double d = plane.plane_d();
  for (Side side : {Side::Inner, Side::Outer}) {
    for (const auto& segment : effective_segments(sketch, side)) {
      for (const ProfilePoint& pp : segment) {
        const double big = std::hypot(n.x * pp.x, n.y * pp.x);
        if (big <= kDegenerateRadius) return false;
        const double e = d - n.z * pp.y;
        if (std::abs(e) > (1.0 - margin) * big) return false;
      }
    }
  }
  return true;
}

CuttingPlane sample_cutting_plane(Rng& rng, const ProfileSketch& sketch,
                                  const ProfileExtent& extent) {
  std::uniform_real_distribution<double> tilt(0.0, kMaxPlaneTiltDeg);
  std::uniform_real_distribution<double> azimuth(0.0, 2.0 * kPi);
  std::uniform_real_distribution<double> offset(-0.8 * extent.r_max, 0.8 * extent.r_max);
  for (int attempt = 0; attempt < 100; ++attempt) {
    CuttingPlane plane{tilt(rng), azimuth(rng), offset(rng)};
    // Viable only when both surfaces give the downstream stages something
    // to work with.
    size_t inner_pts = 0, outer_pts = 0;
    for (const auto& run : fracture_points_3d(sketch, plane).runs)
      (run.side == Side::Inner ? inner_pts : outer_pts) += run.pts.size();
    if (inner_pts >= 2 && outer_pts >= 2) return plane;
  }
  fail(Errc::CannotIntersect, "no viable cutting plane after 100 attempts");
}

Bounds2D outline_bounds(const SherdOutline& outline) {
  if (outline.points.empty()) fail(Errc::EmptyOutline, "bounds of an empty outline");
  Bounds2D b;
  b.x_min = b.x_max = outline.points.front().x;
  b.y_min = b.y_max = outline.points.front().y;
  for (const SherdPoint& p : outline.points) {
    b.x_min = std::min(b.x_min, p.x);
    b.x_max = std::max(b.x_max, p.x);
    b.y_min = std::min(b.y_min, p.y);
    b.y_max = std::max(b.y_max, p.y);
  }
  return b;
}

namespace {

std::vector<std::vector<Vec2>> side_polylines(const SherdOutline& o, PointSide side) {
  std::vector<std::vector<Vec2>> lines;
  for (const Chain& c : o.chains()) {
    if (c.side != side) continue;
    std::vector<Vec2> line;
    line.reserve(c.count);
    for (size_t i = c.first; i < c.first + c.count; ++i)
      line.push_back(Vec2{o.points[i].x, o.points[i].y});
    lines.push_back(std::move(line));
  }
  return lines;
}

double directed_outline_hausdorff(const SherdOutline& a, const SherdOutline& b) {
  double worst = 0.0;
  for (PointSide side : {PointSide::Inner, PointSide::Outer}) {
    const auto from = side_polylines(a, side);
    const auto to = side_polylines(b, side);
    for (const auto& line : from) {
      for (const Vec2& p : line) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& target : to) best = std::min(best, dist_point_polyline(p, target));
        worst = std::max(worst, best);
      }
    }
  }
  return worst;
}

}  // namespace

double outline_hausdorff(const SherdOutline& a, const SherdOutline& b) {
  return std::max(directed_outline_hausdorff(a, b), directed_outline_hausdorff(b, a));
}

CutPair sample_cut_lines(const Bounds2D& fracture_bounds, double vessel_height, Rng& rng) {
  std::normal_distribution<double> slope(0.0, 5.0);
  auto truncated_slope = [&] {
    for (;;) {
      const double s = slope(rng);
      if (std::abs(s) <= kMaxCutSlopeDeg) return s;
    }
  };
  const double x_mid = 0.5 * (fracture_bounds.x_min + fracture_bounds.x_max);
  std::uniform_real_distribution<double> height(fracture_bounds.y_min, fracture_bounds.y_max);
  for (;;) {
    double hi = height(rng);
    double lo = height(rng);
    if (hi < lo) std::swap(hi, lo);
    if (hi == lo) continue;
    if (hi - lo > 0.6 * vessel_height) continue;
    CutPair cuts;
    cuts.upper.slope_angle_deg = truncated_slope();
    cuts.upper.keep = KeepSide::Below;
    cuts.upper.z_intercept = hi - std::tan(deg2rad(cuts.upper.slope_angle_deg)) * x_mid;
    cuts.lower.slope_angle_deg = truncated_slope();
    cuts.lower.keep = KeepSide::Above;
    cuts.lower.z_intercept = lo - std::tan(deg2rad(cuts.lower.slope_angle_deg)) * x_mid;
    return cuts;
  }
}

SherdOutline synthesize_sherd(const ProfileSketch& sketch, Rng& rng, int max_tries) {
  const ProfileExtent extent = profile_extent(sketch);
  for (int attempt = 0; attempt < max_tries; ++attempt) {
    const CuttingPlane plane = sample_cutting_plane(rng, sketch, extent);
    const Fracture3D fracture = fracture_points_3d(sketch, plane);
    SherdOutline unclipped = project_fracture(fracture, plane, std::nullopt);
    const CutPair cuts = sample_cut_lines(outline_bounds(unclipped), extent.height(), rng);
    try {
      SherdOutline out = project_fracture(fracture, plane, cuts);
      out.class_id = sketch.class_id;
      return out;
    } catch (const SherdError& e) {
      if (e.code() != Errc::DegenerateSherd) throw;
    }
  }
  fail(Errc::DegenerateSherd, "no viable sherd after " + std::to_string(max_tries) +
                                  " attempts for sketch '" + sketch.source_id + "'");
}

}  // namespace sherd
