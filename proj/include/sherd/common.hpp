#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace sherd {

enum class Errc {
  MalformedFile,
  InvariantViolation,
  EmptyCatalog,
  AllMissing,
  CannotIntersect,
  DegenerateSherd,
  EmptyOutline,
  BreakLabel,
  ShapeMismatch,
  StaleCache,
  IndexOutOfRange,
  UnknownLabel,
  ZeroProbability,
  IoError,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::MalformedFile: return "MalformedFile";
    case Errc::InvariantViolation: return "InvariantViolation";
    case Errc::EmptyCatalog: return "EmptyCatalog";
    case Errc::AllMissing: return "AllMissing";
    case Errc::CannotIntersect: return "CannotIntersect";
    case Errc::DegenerateSherd: return "DegenerateSherd";
    case Errc::EmptyOutline: return "EmptyOutline";
    case Errc::BreakLabel: return "BreakLabel";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::StaleCache: return "StaleCache";
    case Errc::IndexOutOfRange: return "IndexOutOfRange";
    case Errc::UnknownLabel: return "UnknownLabel";
    case Errc::ZeroProbability: return "ZeroProbability";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

class SherdError : public std::runtime_error {
 public:
  SherdError(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}
  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) {
  throw SherdError(code, what);
}

using Rng = std::mt19937_64;

// splitmix64; used to derive independent stream seeds from (seed, tags).
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  return mix_seed(a ^ mix_seed(b));
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return mix_seed(mix_seed(a, b) ^ mix_seed(c));
}

inline Rng make_rng(std::uint64_t seed) { return Rng(mix_seed(seed)); }
inline Rng make_rng(std::uint64_t seed, std::uint64_t tag) { return Rng(mix_seed(seed, tag)); }
inline Rng make_rng(std::uint64_t seed, std::uint64_t tag, std::uint64_t sub) {
  return Rng(mix_seed(seed, tag, sub));
}

constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

}  // namespace sherd
