#include "sherd/catalog.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace sherd {

using nlohmann::json;

const std::vector<ProfileSketch>& Catalog::sketches(const std::string& id) const {
  auto it = classes.find(id);
  if (it == classes.end()) fail(Errc::UnknownLabel, "no class '" + id + "' in catalog");
  return it->second;
}

int Catalog::index_of(const std::string& id) const {
  for (size_t i = 0; i < class_ids.size(); ++i)
    if (class_ids[i] == id) return static_cast<int>(i);
  return -1;
}

double polyline_arc_length(const std::vector<ProfilePoint>& pts) {
  double L = 0.0;
  for (size_t i = 1; i < pts.size(); ++i)
    L += std::hypot(pts[i].x - pts[i - 1].x, pts[i].y - pts[i - 1].y);
  return L;
}

namespace {

constexpr double kMinPointSpacing = 1e-6;  // mm
constexpr double kMinArcLength = 10.0;     // mm

void validate_polyline(const std::vector<ProfilePoint>& pts, const std::string& who,
                       const char* side) {
  if (pts.size() < 2)
    fail(Errc::InvariantViolation,
         who + ": " + side + " polyline has " + std::to_string(pts.size()) +
             " points, need at least 2");
  for (size_t i = 0; i < pts.size(); ++i) {
    const auto& p = pts[i];
    if (!std::isfinite(p.x) || !std::isfinite(p.y))
      fail(Errc::InvariantViolation,
           who + ": " + side + " point " + std::to_string(i) + " is not finite");
    if (p.x < 0.0)
      fail(Errc::InvariantViolation, who + ": " + side + " point " + std::to_string(i) +
                                         " has x = " + std::to_string(p.x) +
                                         " < 0 (profile must lie on one side of the axis)");
    if (i > 0) {
      double d = std::hypot(p.x - pts[i - 1].x, p.y - pts[i - 1].y);
      if (d <= kMinPointSpacing)
        fail(Errc::InvariantViolation, who + ": " + side + " points " + std::to_string(i - 1) +
                                           " and " + std::to_string(i) +
                                           " are consecutive duplicates");
    }
  }
  if (polyline_arc_length(pts) < kMinArcLength)
    fail(Errc::InvariantViolation,
         who + ": " + side + " polyline arc length below " + std::to_string(kMinArcLength) + " mm");
}

std::vector<ProfilePoint> parse_polyline(const json& arr, const std::string& who,
                                         const char* side) {
  if (!arr.is_array())
    fail(Errc::MalformedFile, who + ": " + side + " must be an array of points");
  std::vector<ProfilePoint> out;
  out.reserve(arr.size());
  for (const auto& item : arr) {
    if (!item.is_array() || item.size() < 2 || item.size() > 3 || !item[0].is_number() ||
        !item[1].is_number())
      fail(Errc::MalformedFile, who + ": " + side + " point must be [x, y] or [x, y, missing]");
    ProfilePoint p;
    p.x = item[0].get<double>();
    p.y = item[1].get<double>();
    if (item.size() == 3) {
      if (!item[2].is_boolean())
        fail(Errc::MalformedFile, who + ": " + side + " missing flag must be a boolean");
      p.missing = item[2].get<bool>();
    }
    out.push_back(p);
  }
  return out;
}

}  // namespace

void validate_sketch(const ProfileSketch& sketch) {
  std::string who = "sketch '" + sketch.source_id + "' of class '" + sketch.class_id + "'";
  validate_polyline(sketch.inner, who, "inner");
  validate_polyline(sketch.outer, who, "outer");
}

Catalog load_catalog(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::IoError, "cannot open '" + path + "'");
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    fail(Errc::MalformedFile, path + ": " + e.what());
  }
  if (!doc.is_object() || !doc.contains("classes") || !doc["classes"].is_array())
    fail(Errc::MalformedFile, path + ": expected top-level object with a \"classes\" array");

  Catalog cat;
  for (const auto& cls : doc["classes"]) {
    if (!cls.is_object() || !cls.contains("class_id") || !cls["class_id"].is_string())
      fail(Errc::MalformedFile, path + ": class entry missing string \"class_id\"");
    std::string class_id = cls["class_id"].get<std::string>();
    if (cat.classes.count(class_id))
      fail(Errc::InvariantViolation, path + ": duplicate class_id '" + class_id + "'");
    if (!cls.contains("sketches") || !cls["sketches"].is_array() || cls["sketches"].empty())
      fail(Errc::InvariantViolation, path + ": class '" + class_id + "' has no sketches");

    std::vector<ProfileSketch> sketches;
    for (const auto& sk : cls["sketches"]) {
      if (!sk.is_object()) fail(Errc::MalformedFile, path + ": sketch entry must be an object");
      ProfileSketch sketch;
      sketch.class_id = class_id;
      sketch.source_id = sk.value("source_id", "");
      if (!sk.contains("inner") || !sk.contains("outer"))
        fail(Errc::MalformedFile,
             path + ": sketch '" + sketch.source_id + "' needs \"inner\" and \"outer\"");
      sketch.inner = parse_polyline(sk["inner"], sketch.source_id, "inner");
      sketch.outer = parse_polyline(sk["outer"], sketch.source_id, "outer");
      validate_sketch(sketch);
      sketches.push_back(std::move(sketch));
    }
    cat.class_ids.push_back(class_id);
    cat.classes.emplace(std::move(class_id), std::move(sketches));
  }
  if (cat.classes.empty()) fail(Errc::EmptyCatalog, path + ": no classes");
  return cat;
}

void save_catalog(const Catalog& catalog, const std::string& path) {
  json classes = json::array();
  for (const auto& id : catalog.class_ids) {
    json sketches = json::array();
    for (const auto& sk : catalog.classes.at(id)) {
      auto dump = [](const std::vector<ProfilePoint>& pts) {
        json arr = json::array();
        for (const auto& p : pts) {
          if (p.missing)
            arr.push_back(json::array({p.x, p.y, true}));
          else
            arr.push_back(json::array({p.x, p.y}));
        }
        return arr;
      };
      sketches.push_back(
          {{"source_id", sk.source_id}, {"inner", dump(sk.inner)}, {"outer", dump(sk.outer)}});
    }
    classes.push_back({{"class_id", id}, {"sketches", std::move(sketches)}});
  }
  std::ofstream out(path);
  if (!out) fail(Errc::IoError, "cannot write '" + path + "'");
  out << json{{"classes", std::move(classes)}}.dump(2) << "\n";
}

std::vector<std::vector<ProfilePoint>> effective_segments(const ProfileSketch& sketch, Side side) {
  const auto& pts = sketch.polyline(side);
  std::vector<std::vector<ProfilePoint>> segments;
  std::vector<ProfilePoint> current;
  for (size_t i = 0; i < pts.size(); ++i) {
    current.push_back(pts[i]);
    bool edge_missing = pts[i].missing;  // edge from i to i+1
    bool last = (i + 1 == pts.size());
    if (edge_missing || last) {
      if (current.size() >= 2) segments.push_back(std::move(current));
      current.clear();
    }
  }
  if (segments.empty())
    fail(Errc::AllMissing, "sketch '" + sketch.source_id + "' " + side_name(side) +
                               ": every edge is flagged missing");
  return segments;
}

ProfileExtent profile_extent(const ProfileSketch& sketch) {
  ProfileExtent ext;
  ext.y_min = std::numeric_limits<double>::infinity();
  ext.y_max = -std::numeric_limits<double>::infinity();
  for (Side side : {Side::Inner, Side::Outer}) {
    for (const auto& seg : effective_segments(sketch, side)) {
      for (const auto& p : seg) {
        ext.r_max = std::max(ext.r_max, p.x);
        ext.y_min = std::min(ext.y_min, p.y);
        ext.y_max = std::max(ext.y_max, p.y);
      }
    }
  }
  return ext;
}

}  // namespace sherd
