#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sherd/catalog.hpp"
#include "sherd/common.hpp"
#include "sherd/geom.hpp"

namespace sherd {

// Oriented section plane through the virtual vessel. The profile sketch is
// placed in the xz plane with the rotation axis on z; tilt is the angle
// between the plane and the z axis (kept below 20 degrees, real fractures
// are nearly vertical), azimuth rotates the plane's strike direction about
// z, and offset displaces the plane from the axis along the horizontal
// projection of its normal, measured at z = 0.
struct CuttingPlane {
  double tilt_deg = 0.0;
  double azimuth_rad = 0.0;
  double offset_mm = 0.0;

  Vec3 normal() const;
  // n . p = plane_d() for points p on the plane.
  double plane_d() const;
  // In-plane orthonormal frame: ey is the normalized projection of +z onto
  // the plane (the sherd's vertical), ex = n x ey.
  void frame(Vec3& ex, Vec3& ey) const;
};

constexpr double kMaxPlaneTiltDeg = 20.0;
constexpr double kMaxCutSlopeDeg = 15.0;
constexpr double kMinSherdArcMm = 20.0;

enum class KeepSide { Above, Below };

// Almost-horizontal trim line in projected sherd coordinates:
// y(x) = z_intercept + tan(slope_angle) * x, keeping one side.
struct CutLine {
  double z_intercept = 0.0;
  double slope_angle_deg = 0.0;
  KeepSide keep = KeepSide::Below;

  double y_at(double x) const;
  // Signed distance-like value, positive on the kept side.
  double keep_value(double x, double y) const;
};

enum class PointSide { Inner, Outer, Break };

inline const char* point_side_name(PointSide s) {
  switch (s) {
    case PointSide::Inner: return "inner";
    case PointSide::Outer: return "outer";
    case PointSide::Break: return "break";
  }
  return "?";
}

inline PointSide to_point_side(Side s) {
  return s == Side::Inner ? PointSide::Inner : PointSide::Outer;
}

struct SherdPoint {
  double x = 0.0;
  double y = 0.0;
  PointSide side = PointSide::Inner;
};

// A maximal run of consecutive same-side surface points. Consecutive points
// within a chain are connected by outline arcs; points across chain
// boundaries are not.
struct Chain {
  PointSide side = PointSide::Inner;
  size_t first = 0;  // index into points
  size_t count = 0;
};

struct SherdOutline {
  std::optional<std::string> class_id;
  std::vector<SherdPoint> points;

  // Maximal same-side runs over non-break points.
  std::vector<Chain> chains() const;
  // Total arc length over chain-internal segments (non-break only).
  double surface_arc_length() const;
};

void save_outline(const SherdOutline& outline, const std::string& path);
SherdOutline load_outline(const std::string& path);

// Up to two points of the circle {x^2+y^2=r^2, z} on the plane, canonical
// root first. Tangency within 1e-9 on the normalized discriminant yields a
// single point.
struct CircleHits {
  int count = 0;
  Vec3 p[2];
};

CircleHits circle_plane_intersection(double r, double z, const CuttingPlane& plane);

// Deterministic branch selection: for every circle of a fracture the same
// quadratic root is used, so one coherent side of the cut is produced. The
// selected branch satisfies root_side_value(p, plane) >= 0.
Vec3 pick_root(const CircleHits& hits);
double root_side_value(const Vec3& p, const CuttingPlane& plane);

// One picked intersection point per intersecting profile point, in
// originating order, grouped per effective segment. Inner runs precede
// outer runs.
struct Fracture3D {
  struct Run {
    Side side = Side::Inner;
    std::vector<Vec3> pts;
  };
  std::vector<Run> runs;
};

Fracture3D fracture_points_3d(const ProfileSketch& sketch, const CuttingPlane& plane);

struct CutPair {
  CutLine upper;  // keeps below
  CutLine lower;  // keeps above
};

// Projects a 3D fracture into the plane frame (origin at the first
// intersection point), optionally trims it with the two cut lines, and
// assembles the outline. Throws DegenerateSherd when fewer than 2 points
// remain on either side, when the surviving arc is shorter than
// kMinSherdArcMm, or when a trim splits a run in two.
SherdOutline project_fracture(const Fracture3D& fracture, const CuttingPlane& plane,
                              const std::optional<CutPair>& cuts);

// Direct linear-time synthesis: intersect every effective profile point's
// circle with the plane, keep the picked root, project, connect in
// originating order (skipping circles the plane misses), then trim.
SherdOutline generate_fracture(const ProfileSketch& sketch, const CuttingPlane& plane,
                               const std::optional<CutPair>& cuts);

// Dense rotational-mesh oracle: builds the profile x angular-step polyline
// mesh, intersects every mesh edge with the plane, keeps the pick_root
// side, and projects with the same frame convention. O(n * steps); tests
// only.
SherdOutline brute_force_fracture(const ProfileSketch& sketch, const CuttingPlane& plane,
                                  double angular_step_deg);

// True when the plane crosses every effective profile circle transversally
// with |e|/R <= 1 - margin (e the plane offset at the circle's height, R
// the tilted-circle amplitude). Near-tangent or skipped circles make the
// fast generator bridge the gap with a straight chord while a dense mesh
// follows the cut curve's lateral excursion around the grazing point, so
// chordal-equivalence checks between the two are restricted to fully
// transversal planes.
bool plane_fully_transversal(const ProfileSketch& sketch, const CuttingPlane& plane,
                             double margin);

// tilt ~ U[0, 20] deg, azimuth ~ U[0, 2pi), offset ~ U[-0.8, 0.8] * r_max;
// resampled until the plane yields at least two intersection points per
// side of the sketch, up to 100 tries, then CannotIntersect.
CuttingPlane sample_cutting_plane(Rng& rng, const ProfileSketch& sketch,
                                  const ProfileExtent& extent);

struct Bounds2D {
  double x_min = 0.0, x_max = 0.0, y_min = 0.0, y_max = 0.0;
};

Bounds2D outline_bounds(const SherdOutline& outline);

// Symmetric side-aware Hausdorff distance: every vertex of one outline is
// measured against the nearest same-side chain polyline of the other, and
// the worst such distance over both directions is returned. Break points
// are ignored.
double outline_hausdorff(const SherdOutline& a, const SherdOutline& b);

// Trim-line placement: line heights at the sherd's horizontal midpoint are
// uniform within the fracture's vertical extent with upper > lower and
// height <= 60% of the vessel height; slopes ~ N(0, 5 deg) truncated to
// +/-15 deg.
CutPair sample_cut_lines(const Bounds2D& fracture_bounds, double vessel_height, Rng& rng);

// Plane + cut sampling + generation with rejection of degenerate sherds,
// up to `max_tries` full attempts. Used by gen/train pipelines that do not
// need the rotation augmentation hook.
SherdOutline synthesize_sherd(const ProfileSketch& sketch, Rng& rng, int max_tries = 100);

}  // namespace sherd
