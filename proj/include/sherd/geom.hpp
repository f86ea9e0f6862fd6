#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace sherd {

struct Vec2 {
  double x = 0.0, y = 0.0;

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double dot(const Vec2& o) const { return x * o.x + y * o.y; }
  double cross(const Vec2& o) const { return x * o.y - y * o.x; }
  double norm() const { return std::hypot(x, y); }
};

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm() const { return std::sqrt(x * x + y * y + z * z); }
  Vec3 normalized() const {
    double n = norm();
    return n > 0 ? Vec3{x / n, y / n, z / n} : Vec3{};
  }
};

// Rotation of p about a unit axis through the origin by angle (radians).
inline Vec3 rotate_about_axis(const Vec3& p, const Vec3& axis, double angle) {
  double c = std::cos(angle), s = std::sin(angle);
  Vec3 k = axis;
  return p * c + k.cross(p) * s + k * (k.dot(p) * (1.0 - c));
}

inline double dist_point_segment(const Vec2& p, const Vec2& a, const Vec2& b) {
  Vec2 ab = b - a;
  double len2 = ab.dot(ab);
  if (len2 <= 0.0) return (p - a).norm();
  double t = (p - a).dot(ab) / len2;
  t = t < 0.0 ? 0.0 : (t > 1.0 ? 1.0 : t);
  return (p - (a + ab * t)).norm();
}

inline double polyline_length(const std::vector<Vec2>& pts) {
  double L = 0.0;
  for (size_t i = 1; i < pts.size(); ++i) L += (pts[i] - pts[i - 1]).norm();
  return L;
}

inline double dist_point_polyline(const Vec2& p, const std::vector<Vec2>& line) {
  if (line.empty()) return std::numeric_limits<double>::infinity();
  if (line.size() == 1) return (p - line[0]).norm();
  double best = std::numeric_limits<double>::infinity();
  for (size_t i = 1; i < line.size(); ++i)
    best = std::min(best, dist_point_segment(p, line[i - 1], line[i]));
  return best;
}

// Directed Hausdorff from the vertices of a to the polyline b.
inline double directed_hausdorff(const std::vector<Vec2>& a, const std::vector<Vec2>& b) {
  double worst = 0.0;
  for (const auto& p : a) worst = std::max(worst, dist_point_polyline(p, b));
  return worst;
}

inline double hausdorff(const std::vector<Vec2>& a, const std::vector<Vec2>& b) {
  return std::max(directed_hausdorff(a, b), directed_hausdorff(b, a));
}

}  // namespace sherd
