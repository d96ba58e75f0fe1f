#ifndef PREMAP_GEOMETRY_HPP
#define PREMAP_GEOMETRY_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "premap/common.hpp"
#include "premap/rng.hpp"

namespace premap {

/// Axis-aligned hyperrectangle [lower, upper].
struct Box {
  Vec lower;
  Vec upper;

  Box() = default;
  Box(Vec lo, Vec hi) : lower(std::move(lo)), upper(std::move(hi)) {
    if (lower.size() != upper.size())
      throw DimensionError("box lower/upper dimension mismatch");
    for (Eigen::Index i = 0; i < lower.size(); ++i)
      if (!(lower[i] <= upper[i]))
        throw Error("box has lower > upper in dimension " + std::to_string(i));
  }

  int dim() const { return static_cast<int>(lower.size()); }

  double volume() const {
    double v = 1.0;
    for (Eigen::Index i = 0; i < lower.size(); ++i) v *= upper[i] - lower[i];
    return v;
  }

  bool contains(const Vec& x) const {
    if (x.size() != lower.size())
      throw DimensionError("point dimension does not match box");
    for (Eigen::Index i = 0; i < x.size(); ++i)
      if (x[i] < lower[i] || x[i] > upper[i]) return false;
    return true;
  }
};

/// Closed half-space a.x + b >= 0.
struct HalfSpace {
  Vec a;
  double b = 0.0;

  bool satisfied(const Vec& x) const { return a.dot(x) + b >= 0.0; }
};

/// Box intersected with a conjunction of half-spaces.
struct Polytope {
  Box box;
  std::vector<HalfSpace> halfspaces;

  bool contains(const Vec& x) const {
    if (!box.contains(x)) return false;
    for (const auto& h : halfspaces)
      if (!h.satisfied(x)) return false;
    return true;
  }
};

/// A finite union of polytopes. Under mode promises pairwise
/// measure-disjoint members; Over mode permits overlap.
struct PolytopeUnion {
  std::vector<Polytope> polytopes;
  ApproxMode mode = ApproxMode::Under;

  bool contains(const Vec& x) const {
    for (const auto& p : polytopes)
      if (p.contains(x)) return true;
    return false;
  }
};

/// n points uniform in the box, deterministic for a fixed seed.
inline std::vector<Vec> sample_box(const Box& box, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw Error("sample_box requires n >= 1");
  Rng rng(seed);
  std::vector<Vec> points;
  points.reserve(n);
  const int d = box.dim();
  for (std::size_t k = 0; k < n; ++k) {
    Vec x(d);
    for (int i = 0; i < d; ++i) x[i] = rng.uniform(box.lower[i], box.upper[i]);
    points.push_back(std::move(x));
  }
  return points;
}

/// Monte Carlo volume: vol(box) * fraction of samples satisfying the predicate.
inline double estimate_volume(const std::function<bool(const Vec&)>& indicator,
                              const Box& box, const std::vector<Vec>& samples) {
  if (samples.empty()) throw Error("estimate_volume requires a nonempty sample set");
  std::size_t hits = 0;
  for (const auto& x : samples)
    if (indicator(x)) ++hits;
  return box.volume() * static_cast<double>(hits) / static_cast<double>(samples.size());
}

/// Ratio vol(union)/vol(preimage) on a shared sample set. A sample inside
/// several member polytopes counts once.
struct CoverageResult {
  bool empty_preimage = false;
  double ratio = 0.0;
  std::size_t union_hits = 0;
  std::size_t preimage_hits = 0;
};

inline CoverageResult coverage_ratio(const PolytopeUnion& u,
                                     const std::function<bool(const Vec&)>& preimage,
                                     const Box& box, const std::vector<Vec>& samples) {
  (void)box;
  CoverageResult r;
  for (const auto& x : samples) {
    if (preimage(x)) ++r.preimage_hits;
    if (u.contains(x)) ++r.union_hits;
  }
  if (r.preimage_hits == 0) {
    r.empty_preimage = true;
    return r;
  }
  r.ratio = static_cast<double>(r.union_hits) / static_cast<double>(r.preimage_hits);
  return r;
}

/// Vertices of the box clipped by the half-spaces, counterclockwise.
/// 2-D only. Empty result means empty intersection.
inline std::vector<Eigen::Vector2d> clip_box_2d(const Box& box,
                                                const std::vector<HalfSpace>& halfspaces) {
  if (box.dim() != 2) throw DimensionError("clip_box_2d requires dimension 2");
  std::vector<Eigen::Vector2d> poly = {
      {box.lower[0], box.lower[1]},
      {box.upper[0], box.lower[1]},
      {box.upper[0], box.upper[1]},
      {box.lower[0], box.upper[1]},
  };
  // Sutherland-Hodgman against each a.x + b >= 0.
  for (const auto& h : halfspaces) {
    if (poly.empty()) break;
    std::vector<Eigen::Vector2d> next;
    const std::size_t n = poly.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Eigen::Vector2d& p = poly[i];
      const Eigen::Vector2d& q = poly[(i + 1) % n];
      const double fp = h.a[0] * p[0] + h.a[1] * p[1] + h.b;
      const double fq = h.a[0] * q[0] + h.a[1] * q[1] + h.b;
      if (fp >= 0.0) next.push_back(p);
      if ((fp < 0.0) != (fq < 0.0)) {
        const double t = fp / (fp - fq);
        next.push_back(p + t * (q - p));
      }
    }
    poly = std::move(next);
  }
  return poly;
}

/// Exact area of box ∩ half-spaces via half-plane clipping and the
/// shoelace formula. Empty intersection gives 0.
inline double polygon_area_2d(const Box& box, const std::vector<HalfSpace>& halfspaces) {
  const auto poly = clip_box_2d(box, halfspaces);
  if (poly.size() < 3) return 0.0;
  double twice = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % poly.size()];
    twice += p[0] * q[1] - q[0] * p[1];
  }
  return std::abs(twice) / 2.0;
}

}  // namespace premap

#endif  // PREMAP_GEOMETRY_HPP
