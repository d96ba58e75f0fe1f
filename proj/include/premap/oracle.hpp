#ifndef PREMAP_ORACLE_HPP
#define PREMAP_ORACLE_HPP

#include <cstdint>
#include <utility>
#include <vector>

#include "premap/common.hpp"
#include "premap/geometry.hpp"
#include "premap/model.hpp"
#include "premap/relax.hpp"
#include "premap/rng.hpp"

namespace premap {

class CapExceededError : public Error {
 public:
  explicit CapExceededError(const std::string& what) : Error(what) {}
};

/// Sign of every hidden neuron, layer-major: +1 active, -1 inactive.
using ActivationPattern = std::vector<std::int8_t>;

/// One linear region of the network: on `region`, forward(net, x) = a.x + b.
struct LinearPiece {
  ActivationPattern pattern;
  Polytope region;
  Mat a;
  Vec b;
};

struct PieceEnumeration {
  std::vector<LinearPiece> pieces;
  // d > 2: region emptiness was decided by sampling rather than exactly.
  bool sampling_decided = false;
};

inline constexpr int kOracleNeuronCap = 24;
inline constexpr std::size_t kOracleEmptinessSamples = 100000;

namespace detail {

inline int count_unstable_interval(const Network& net, const Box& box) {
  Subregion region;
  region.box = box;
  const BoundContext ctx = concrete_bounds(net, region, BoundMethod::Interval);
  int unstable = 0;
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    if (net.layers[k].activation != Activation::ReLU) continue;
    const Vec& lo = ctx.bounds.lower[k];
    const Vec& hi = ctx.bounds.upper[k];
    for (int j = 0; j < lo.size(); ++j)
      if (lo[j] < 0.0 && hi[j] > 0.0) ++unstable;
  }
  return unstable;
}

}  // namespace detail

/// Enumerates the nonempty activation patterns of the network over the box,
/// pruning sign prefixes whose region is already infeasible. With d = 2 the
/// emptiness test is exact (half-plane clipping); otherwise a fixed sample
/// set decides it and the result is flagged sampling-decided.
///
/// Desk scale only: refuses boxes with more than `cap` unstable neurons.
inline PieceEnumeration enumerate_pieces(const Network& net, const Box& box,
                                         int cap = kOracleNeuronCap,
                                         std::uint64_t seed = 0) {
  if (box.dim() != net.input_dim)
    throw DimensionError("enumerate_pieces: box dimension does not match network");
  const int unstable = detail::count_unstable_interval(net, box);
  if (unstable > cap)
    throw CapExceededError("network has " + std::to_string(unstable) +
                           " unstable neurons on the box, cap is " + std::to_string(cap));

  PieceEnumeration out;
  const bool exact_2d = box.dim() == 2;
  out.sampling_decided = !exact_2d;

  // d > 2: pre-sample once; a partial pattern stays alive while at least one
  // sample is consistent with it.
  std::vector<Vec> samples;
  if (!exact_2d) samples = sample_box(box, kOracleEmptinessSamples, derive_seed(seed, "oracle", 0));
  std::vector<std::uint32_t> all_idx(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) all_idx[i] = static_cast<std::uint32_t>(i);

  struct Frame {
    Mat post_a;  // post-activation of the previous layer as a function of x
    Vec post_b;
    int layer;
    ActivationPattern pattern;
    std::vector<HalfSpace> halfspaces;           // from branched neurons only
    std::vector<Eigen::Vector2d> polygon;        // d = 2 feasible region
    std::vector<std::uint32_t> sample_idx;       // d > 2 consistent samples
  };

  const auto box_polygon = [&]() -> std::vector<Eigen::Vector2d> {
    if (!exact_2d) return {};
    return clip_box_2d(box, {});
  };

  std::vector<Frame> stack;
  stack.push_back({Mat::Identity(net.input_dim, net.input_dim), Vec::Zero(net.input_dim),
                   0, {}, {}, box_polygon(), all_idx});

  while (!stack.empty()) {
    Frame frame = std::move(stack.back());
    stack.pop_back();

    if (frame.layer == static_cast<int>(net.layers.size())) {
      LinearPiece piece;
      piece.pattern = std::move(frame.pattern);
      piece.region = Polytope{box, std::move(frame.halfspaces)};
      piece.a = std::move(frame.post_a);
      piece.b = std::move(frame.post_b);
      out.pieces.push_back(std::move(piece));
      continue;
    }

    const AffineLayer& layer = net.layers[frame.layer];
    Mat pre_a = layer.weights * frame.post_a;
    Vec pre_b = layer.weights * frame.post_b + layer.bias;

    if (layer.activation != Activation::ReLU) {
      frame.post_a = std::move(pre_a);
      frame.post_b = std::move(pre_b);
      ++frame.layer;
      stack.push_back(std::move(frame));
      continue;
    }

    // Branch the signs of this layer's neurons one at a time.
    struct NeuronFrame {
      int neuron;
      ActivationPattern pattern;
      std::vector<HalfSpace> halfspaces;
      std::vector<Eigen::Vector2d> polygon;
      std::vector<std::uint32_t> sample_idx;
      std::vector<std::int8_t> signs;  // this layer so far
    };
    std::vector<NeuronFrame> neuron_stack;
    neuron_stack.push_back({0, std::move(frame.pattern), std::move(frame.halfspaces),
                            std::move(frame.polygon), std::move(frame.sample_idx), {}});
    const int n = layer.out_width();
    while (!neuron_stack.empty()) {
      NeuronFrame nf = std::move(neuron_stack.back());
      neuron_stack.pop_back();
      if (nf.neuron == n) {
        // Layer fully signed: mask the affine map and descend.
        Frame next;
        next.post_a = pre_a;
        next.post_b = pre_b;
        for (int j = 0; j < n; ++j) {
          if (nf.signs[j] > 0) continue;
          next.post_a.row(j).setZero();
          next.post_b[j] = 0.0;
        }
        next.layer = frame.layer + 1;
        next.pattern = std::move(nf.pattern);
        next.pattern.insert(next.pattern.end(), nf.signs.begin(), nf.signs.end());
        next.halfspaces = std::move(nf.halfspaces);
        next.polygon = std::move(nf.polygon);
        next.sample_idx = std::move(nf.sample_idx);
        stack.push_back(std::move(next));
        continue;
      }

      const int j = nf.neuron;
      const RowVec row = pre_a.row(j);
      const double lo = detail::concretize_min(row, pre_b[j], box);
      const double hi = detail::concretize_max(row, pre_b[j], box);
      const auto descend = [&](std::int8_t sign, bool branched) {
        NeuronFrame child = nf;
        child.neuron = j + 1;
        child.signs.push_back(sign);
        if (branched) {
          HalfSpace h;
          if (sign > 0) {
            h = {row.transpose(), pre_b[j]};
          } else {
            h = {-row.transpose(), -pre_b[j]};
          }
          if (exact_2d) {
            // clip incrementally against the new half-plane
            std::vector<Eigen::Vector2d> next;
            const std::size_t m = child.polygon.size();
            for (std::size_t i = 0; i < m; ++i) {
              const Eigen::Vector2d& p = child.polygon[i];
              const Eigen::Vector2d& q = child.polygon[(i + 1) % m];
              const double fp = h.a[0] * p[0] + h.a[1] * p[1] + h.b;
              const double fq = h.a[0] * q[0] + h.a[1] * q[1] + h.b;
              if (fp >= 0.0) next.push_back(p);
              if ((fp < 0.0) != (fq < 0.0)) next.push_back(p + (fp / (fp - fq)) * (q - p));
            }
            child.polygon = std::move(next);
            if (child.polygon.size() < 3) return;  // empty region, prune
          } else {
            std::vector<std::uint32_t> kept;
            for (std::uint32_t idx : nf.sample_idx) {
              const double v = row.dot(samples[idx]) + pre_b[j];
              if (sign > 0 ? v >= 0.0 : v <= 0.0) kept.push_back(idx);
            }
            if (kept.empty()) return;  // sampling-decided empty
            child.sample_idx = std::move(kept);
          }
          child.halfspaces.push_back(std::move(h));
        }
        neuron_stack.push_back(std::move(child));
      };
      if (lo >= 0.0) {
        descend(+1, false);
      } else if (hi <= 0.0) {
        descend(-1, false);
      } else {
        // Push - first so + is explored first (deterministic piece order).
        descend(-1, true);
        descend(+1, true);
      }
    }
  }
  return out;
}

struct ExactPreimage {
  PolytopeUnion approximation;  // the exact restricted preimage as a DUP
  double area = 0.0;            // exact, d = 2 only
  bool exact_area = false;
  bool sampling_decided = false;
  int num_pieces = 0;
};

/// Exact restricted preimage: per linear piece, intersect the piece region
/// with the spec constraints composed through the piece's affine map.
inline ExactPreimage exact_preimage(const Network& net, const Box& box,
                                    const OutputSpec& spec, int cap = kOracleNeuronCap,
                                    std::uint64_t seed = 0) {
  PieceEnumeration pieces = enumerate_pieces(net, box, cap, seed);
  ExactPreimage out;
  out.approximation.mode = ApproxMode::Under;
  out.sampling_decided = pieces.sampling_decided;
  out.exact_area = box.dim() == 2;
  out.num_pieces = static_cast<int>(pieces.pieces.size());
  for (auto& piece : pieces.pieces) {
    Polytope poly = std::move(piece.region);
    for (const auto& cons : spec.constraints) {
      // c.(A x + b) + d >= 0
      poly.halfspaces.push_back(
          {piece.a.transpose() * cons.c, cons.c.dot(piece.b) + cons.d});
    }
    if (out.exact_area) {
      const double area = polygon_area_2d(poly.box, poly.halfspaces);
      if (area <= 0.0) continue;  // empty or degenerate intersection
      out.area += area;
    }
    out.approximation.polytopes.push_back(std::move(poly));
  }
  return out;
}

}  // namespace premap

#endif  // PREMAP_ORACLE_HPP
