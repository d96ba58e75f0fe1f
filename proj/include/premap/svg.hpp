#ifndef PREMAP_SVG_HPP
#define PREMAP_SVG_HPP

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "premap/common.hpp"
#include "premap/geometry.hpp"
#include "premap/model.hpp"
#include "premap/rng.hpp"

namespace premap {

/// 2-D plot of an approximation: root box, each polytope clipped exactly to
/// a polygon, and sample points of the true preimage.
inline void write_svg(std::ostream& out, const Box& box, const PolytopeUnion& u,
                      const Network& net, const OutputSpec& spec,
                      const std::vector<HalfSpace>& input_constraints,
                      std::uint64_t seed, std::size_t n_points = 2000) {
  if (box.dim() != 2) throw DimensionError("SVG output requires a 2-D problem");
  const double size = 640.0, margin = 40.0;
  const double wx = box.upper[0] - box.lower[0];
  const double wy = box.upper[1] - box.lower[1];
  const double sx = (size - 2 * margin) / (wx > 0 ? wx : 1.0);
  const double sy = (size - 2 * margin) / (wy > 0 ? wy : 1.0);
  const auto px = [&](double x) { return margin + (x - box.lower[0]) * sx; };
  // y axis points up in problem space, down in SVG space
  const auto py = [&](double y) { return size - margin - (y - box.lower[1]) * sy; };

  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\""
      << size << "\" viewBox=\"0 0 " << size << " " << size << "\">\n";
  out << "  <rect x=\"" << px(box.lower[0]) << "\" y=\"" << py(box.upper[1]) << "\" width=\""
      << wx * sx << "\" height=\"" << wy * sy
      << "\" fill=\"none\" stroke=\"black\" stroke-width=\"1\"/>\n";

  const char* fill = u.mode == ApproxMode::Under ? "#4477aa" : "#cc6677";
  for (const auto& poly : u.polytopes) {
    const auto verts = clip_box_2d(poly.box, poly.halfspaces);
    if (verts.size() < 3) continue;
    out << "  <polygon points=\"";
    for (std::size_t i = 0; i < verts.size(); ++i) {
      if (i) out << " ";
      out << px(verts[i][0]) << "," << py(verts[i][1]);
    }
    out << "\" fill=\"" << fill << "\" fill-opacity=\"0.35\" stroke=\"" << fill
        << "\" stroke-width=\"0.8\"/>\n";
  }

  const auto points = sample_box(box, n_points, derive_seed(seed, "svg", 0));
  for (const auto& x : points) {
    bool inside = true;
    for (const auto& h : input_constraints)
      if (!h.satisfied(x)) {
        inside = false;
        break;
      }
    if (!inside || !spec.satisfied(net.forward(x))) continue;
    out << "  <circle cx=\"" << px(x[0]) << "\" cy=\"" << py(x[1])
        << "\" r=\"1.2\" fill=\"#222222\" fill-opacity=\"0.6\"/>\n";
  }
  out << "</svg>\n";
}

}  // namespace premap

#endif  // PREMAP_SVG_HPP
