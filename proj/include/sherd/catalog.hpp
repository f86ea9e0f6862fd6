#pragma once

#include <map>
#include <string>
#include <vector>

#include "sherd/common.hpp"
#include "sherd/geom.hpp"

namespace sherd {

// One vertex of a vessel half-profile in the axial plane. Coordinates are
// millimeters at true vessel scale; x is the radial distance from the
// rotation axis (the axis itself is x = 0) and y is height. `missing`
// flags the edge from this point to the next as absent from the drawing:
// it is not vessel surface and is never intersected or sampled.
struct ProfilePoint {
  double x = 0.0;
  double y = 0.0;
  bool missing = false;
};

enum class Side { Inner, Outer };

inline const char* side_name(Side s) { return s == Side::Inner ? "inner" : "outer"; }

struct ProfileSketch {
  std::string class_id;
  std::string source_id;
  std::vector<ProfilePoint> inner;
  std::vector<ProfilePoint> outer;

  const std::vector<ProfilePoint>& polyline(Side s) const {
    return s == Side::Inner ? inner : outer;
  }
};

struct Catalog {
  // Insertion-ordered class list; class index in this vector is the label index.
  std::vector<std::string> class_ids;
  std::map<std::string, std::vector<ProfileSketch>> classes;

  size_t class_count() const { return class_ids.size(); }
  const std::vector<ProfileSketch>& sketches(const std::string& id) const;
  int index_of(const std::string& id) const;  // -1 if unknown
};

// Validates one sketch against the profile invariants; throws
// InvariantViolation naming the sketch and the violated rule.
void validate_sketch(const ProfileSketch& sketch);

// Loads and validates a profile manifest (JSON). Throws MalformedFile,
// InvariantViolation or EmptyCatalog.
Catalog load_catalog(const std::string& path);

// Serializes a catalog back to the manifest schema.
void save_catalog(const Catalog& catalog, const std::string& path);

// Maximal runs of consecutive points whose connecting edges are not flagged
// missing. Points interior to missing edges never appear. Throws AllMissing
// when nothing remains.
std::vector<std::vector<ProfilePoint>> effective_segments(const ProfileSketch& sketch, Side side);

struct ProfileExtent {
  double r_max = 0.0;
  double y_min = 0.0;
  double y_max = 0.0;
  double height() const { return y_max - y_min; }
};

// Extent over the effective (non-missing) points of both polylines.
ProfileExtent profile_extent(const ProfileSketch& sketch);

double polyline_arc_length(const std::vector<ProfilePoint>& pts);

}  // namespace sherd
