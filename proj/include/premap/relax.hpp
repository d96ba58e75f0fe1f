#ifndef PREMAP_RELAX_HPP
#define PREMAP_RELAX_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "premap/common.hpp"
#include "premap/geometry.hpp"
#include "premap/model.hpp"

namespace premap {

enum class SplitSign { NonNeg, Neg };
enum class BoundSide { Lower, Upper };
enum class BoundMethod { Backward, Interval };

/// One fixed-sign constraint on a hidden neuron's pre-activation.
struct NeuronSplit {
  int layer = 0;   // index into Network::layers; must be a ReLU layer
  int neuron = 0;
  SplitSign sign = SplitSign::NonNeg;
};

/// Node of the refinement tree: an input box plus the ReLU sign
/// constraints accumulated on the path from the root.
struct Subregion {
  Box box;
  std::vector<NeuronSplit> splits;
  std::uint64_t id = 1;

  bool has_split(int layer, int neuron) const {
    for (const auto& s : splits)
      if (s.layer == layer && s.neuron == neuron) return true;
    return false;
  }

  /// True when the point's pre-activations satisfy every split sign.
  bool splits_satisfied(const std::vector<Vec>& preacts) const {
    for (const auto& s : splits) {
      const double z = preacts[s.layer][s.neuron];
      if (s.sign == SplitSign::NonNeg ? z < 0.0 : z > 0.0) return false;
    }
    return true;
  }
};

/// Flat indexing of hidden (ReLU-layer) neurons across the network.
struct HiddenIndex {
  std::vector<int> offset;  // per layer; -1 for non-ReLU layers
  int total = 0;

  explicit HiddenIndex(const Network& net) {
    offset.assign(net.layers.size(), -1);
    for (std::size_t k = 0; k < net.layers.size(); ++k) {
      if (net.layers[k].activation != Activation::ReLU) continue;
      offset[k] = total;
      total += net.layers[k].out_width();
    }
  }

  int flat(int layer, int neuron) const { return offset[layer] + neuron; }
};

/// Optimizable relaxation parameters, kept per output-spec constraint:
/// alpha[k] holds one lower-slope in [0,1] per hidden neuron (flat index),
/// beta[k] one multiplier >= 0 per split of the subregion, in split order.
struct RelaxParams {
  std::vector<Vec> alpha;
  std::vector<Vec> beta;

  bool empty() const { return alpha.empty(); }

  void project() {
    for (auto& a : alpha) a = a.cwiseMax(0.0).cwiseMin(1.0);
    for (auto& b : beta) b = b.cwiseMax(0.0);
  }
};

/// Concrete pre-activation bounds l <= h(x) <= u per ReLU layer.
/// Entries for non-ReLU layers stay empty.
struct NeuronBounds {
  std::vector<Vec> lower;
  std::vector<Vec> upper;
};

struct AffineBound {
  Vec a;
  double b = 0.0;

  double value(const Vec& x) const { return a.dot(x) + b; }
};

/// One affine bounding function per spec constraint, valid on the
/// subregion restricted to its split signs.
struct LinearSpecBounds {
  BoundSide side = BoundSide::Lower;
  std::vector<AffineBound> rows;
};

struct ReluRelaxation {
  double lower_slope = 0.0;
  double lower_bias = 0.0;
  double upper_slope = 0.0;
  double upper_bias = 0.0;
};

// Below this width an unstable neuron is treated as stable at the sign of
// its midpoint, avoiding division blow-up in the chord slope.
inline constexpr double kStableWidthEps = 1e-12;

/// Linear bounds on ReLU over [l, u]: inactive and active neurons are exact,
/// an unstable neuron gets lower slope alpha and the upper chord.
inline ReluRelaxation relu_relaxation(double l, double u, double alpha) {
  if (l > u) throw Error("relu_relaxation: l > u");
  if (u <= 0.0) return {0.0, 0.0, 0.0, 0.0};
  if (l >= 0.0) return {1.0, 0.0, 1.0, 0.0};
  if (u - l < kStableWidthEps) {
    return (l + u) / 2.0 >= 0.0 ? ReluRelaxation{1.0, 0.0, 1.0, 0.0}
                                : ReluRelaxation{0.0, 0.0, 0.0, 0.0};
  }
  const double s = u / (u - l);
  return {alpha, 0.0, s, -u * l / (u - l)};
}

namespace detail {

inline double concretize_min(const RowVec& a, double c, const Box& box) {
  double v = c;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    v += a[i] >= 0.0 ? a[i] * box.lower[i] : a[i] * box.upper[i];
  return v;
}

inline double concretize_max(const RowVec& a, double c, const Box& box) {
  double v = c;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    v += a[i] >= 0.0 ? a[i] * box.upper[i] : a[i] * box.lower[i];
  return v;
}

}  // namespace detail

/// Tape of one backward pass, enough to reverse-differentiate the output
/// coefficients with respect to alpha and beta. Never shared across passes.
struct BackwardTape {
  struct Step {
    int layer = 0;
    Mat coeff;        // rows-over-post coefficients before substitution (K x n)
    Mat slope;        // chosen relaxation slopes
    Mat intercept;    // chosen relaxation intercepts
    Mat alpha_used;   // 1 where the slope was the free alpha parameter
    // (split index in subregion order, neuron, +-1 factor applied to beta)
    std::vector<std::tuple<int, int, double>> beta_terms;
  };
  std::vector<Step> steps;  // in processing order (last layer first)
};

struct BackwardResult {
  Mat a;  // K x d input coefficients
  Vec b;  // K biases
};

namespace detail {

/// Alpha lookup for a backward pass: either one shared vector over hidden
/// neurons (intermediate passes) or per-spec-row values (final pass).
struct AlphaSource {
  const Vec* shared = nullptr;
  const std::vector<Vec>* per_row = nullptr;

  double get(int row, int flat) const {
    return shared ? (*shared)[flat] : (*per_row)[row][flat];
  }
};

/// Backward propagation of K affine rows from the post-activation output of
/// layer `top` down to the input. `rows0`/`bias0` are coefficients over
/// post(top). Lower side: a.x + b <= target; Upper side: >=.
inline BackwardResult propagate_rows(
    const Network& net, const HiddenIndex& hidden, const Subregion& region,
    const NeuronBounds& bounds, const AlphaSource& alpha,
    const std::vector<Vec>* beta, BoundSide side, int top, Mat rows0, Vec bias0,
    BackwardTape* tape = nullptr) {
  Mat a = std::move(rows0);
  Vec b = std::move(bias0);
  const int k_rows = static_cast<int>(a.rows());
  for (int t = top; t >= 0; --t) {
    const AffineLayer& layer = net.layers[t];
    if (layer.activation == Activation::ReLU) {
      const int n = layer.out_width();
      const Vec& lo = bounds.lower[t];
      const Vec& hi = bounds.upper[t];
      Mat slope(k_rows, n), intercept(k_rows, n), alpha_used;
      if (tape) alpha_used = Mat::Zero(k_rows, n);
      for (int j = 0; j < n; ++j) {
        const int flat = hidden.flat(t, j);
        for (int r = 0; r < k_rows; ++r) {
          const ReluRelaxation rr = relu_relaxation(lo[j], hi[j], alpha.get(r, flat));
          // Lower side keeps the lower relaxation under positive coefficients;
          // upper side mirrors the choice.
          const bool take_lower = (side == BoundSide::Lower) == (a(r, j) >= 0.0);
          slope(r, j) = take_lower ? rr.lower_slope : rr.upper_slope;
          intercept(r, j) = take_lower ? rr.lower_bias : rr.upper_bias;
          if (tape && take_lower && lo[j] < 0.0 && hi[j] > 0.0 &&
              hi[j] - lo[j] >= kStableWidthEps)
            alpha_used(r, j) = 1.0;
        }
      }
      b += (a.array() * intercept.array()).matrix().rowwise().sum();
      Mat ahat = (a.array() * slope.array()).matrix();
      std::vector<std::tuple<int, int, double>> beta_terms;
      if (beta) {
        for (std::size_t s = 0; s < region.splits.size(); ++s) {
          const NeuronSplit& sp = region.splits[s];
          if (sp.layer != t) continue;
          // Lower side: +beta.z for Neg splits, -beta.z for NonNeg; the term
          // is nonpositive on the split's side, so the bound stays valid.
          double factor = sp.sign == SplitSign::Neg ? 1.0 : -1.0;
          if (side == BoundSide::Upper) factor = -factor;
          for (int r = 0; r < k_rows; ++r)
            ahat(r, sp.neuron) += factor * (*beta)[r][static_cast<int>(s)];
          beta_terms.emplace_back(static_cast<int>(s), sp.neuron, factor);
        }
      }
      if (tape)
        tape->steps.push_back({t, std::move(a), std::move(slope), std::move(intercept),
                               std::move(alpha_used), std::move(beta_terms)});
      a = std::move(ahat);
    }
    b += a * layer.bias;
    a = a * layer.weights;
  }
  return {std::move(a), std::move(b)};
}

inline void clip_layer_to_splits(const Subregion& region, int layer, Vec& lo, Vec& hi) {
  for (const auto& s : region.splits) {
    if (s.layer != layer) continue;
    if (s.sign == SplitSign::NonNeg) {
      lo[s.neuron] = std::max(lo[s.neuron], 0.0);
      hi[s.neuron] = std::max(hi[s.neuron], lo[s.neuron]);
    } else {
      hi[s.neuron] = std::min(hi[s.neuron], 0.0);
      lo[s.neuron] = std::min(lo[s.neuron], hi[s.neuron]);
    }
  }
}

}  // namespace detail

/// Concrete bounds plus the shared alpha vector used for intermediate
/// passes. The alpha vector is initialized once (at the root region) and
/// reused unchanged by descendant regions, which keeps child bounds
/// pointwise at least as tight as the parent's.
struct BoundContext {
  NeuronBounds bounds;
  Vec alpha0;
};

/// Computes concrete pre-activation bounds for every ReLU layer over
/// region.box, clipping split-fixed neurons to their sign. The backward
/// method treats each hidden layer as an output and propagates to the
/// input; the interval method is a cheaper forward pass.
inline BoundContext concrete_bounds(const Network& net, const Subregion& region,
                                    BoundMethod method = BoundMethod::Backward,
                                    const Vec* inherited_alpha0 = nullptr) {
  if (region.box.dim() != net.input_dim)
    throw DimensionError("concrete_bounds: region dimension does not match network");
  const HiddenIndex hidden(net);
  BoundContext ctx;
  ctx.bounds.lower.resize(net.layers.size());
  ctx.bounds.upper.resize(net.layers.size());
  const bool init_alpha = inherited_alpha0 == nullptr;
  ctx.alpha0 = init_alpha ? Vec::Constant(hidden.total, 1.0) : *inherited_alpha0;

  int prev_relu = -1;
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    if (net.layers[k].activation != Activation::ReLU) continue;
    const int n = net.layers[k].out_width();
    Vec lo(n), hi(n);
    if (method == BoundMethod::Interval || prev_relu < 0) {
      // Interval arithmetic from the previous ReLU layer's clipped bounds;
      // exact for the first layer (affine image of the box).
      Vec mid, rad;
      if (prev_relu < 0) {
        mid = (region.box.lower + region.box.upper) / 2.0;
        rad = (region.box.upper - region.box.lower) / 2.0;
      } else {
        Vec plo = ctx.bounds.lower[prev_relu].cwiseMax(0.0);
        Vec phi = ctx.bounds.upper[prev_relu].cwiseMax(0.0);
        mid = (plo + phi) / 2.0;
        rad = (phi - plo) / 2.0;
      }
      for (std::size_t t = prev_relu + 1; t <= k; ++t) {
        const Mat& w = net.layers[t].weights;
        Vec nmid = w * mid + net.layers[t].bias;
        Vec nrad = w.cwiseAbs() * rad;
        mid = std::move(nmid);
        rad = std::move(nrad);
      }
      lo = mid - rad;
      hi = mid + rad;
    } else {
      detail::AlphaSource alpha{&ctx.alpha0, nullptr};
      const auto fold = [&](BoundSide side) {
        return detail::propagate_rows(net, hidden, region, ctx.bounds, alpha,
                                      nullptr, side, static_cast<int>(k) - 1,
                                      net.layers[k].weights, net.layers[k].bias);
      };
      const BackwardResult lo_res = fold(BoundSide::Lower);
      const BackwardResult hi_res = fold(BoundSide::Upper);
      for (int j = 0; j < n; ++j) {
        lo[j] = detail::concretize_min(lo_res.a.row(j), lo_res.b[j], region.box);
        hi[j] = detail::concretize_max(hi_res.a.row(j), hi_res.b[j], region.box);
      }
    }
    detail::clip_layer_to_splits(region, static_cast<int>(k), lo, hi);
    if (init_alpha) {
      // Slope minimizing the worst-case relaxation area.
      for (int j = 0; j < n; ++j)
        ctx.alpha0[hidden.flat(static_cast<int>(k), j)] = hi[j] > -lo[j] ? 1.0 : 0.0;
    }
    ctx.bounds.lower[k] = std::move(lo);
    ctx.bounds.upper[k] = std::move(hi);
    prev_relu = static_cast<int>(k);
  }
  return ctx;
}

/// Fresh parameters for a subregion: alpha from the context's shared
/// initialization, one zero beta per split, independently for each of the
/// K spec constraints.
inline RelaxParams init_params(const BoundContext& ctx, const Subregion& region, int k_specs) {
  RelaxParams p;
  p.alpha.assign(k_specs, ctx.alpha0);
  p.beta.assign(k_specs, Vec::Zero(static_cast<Eigen::Index>(region.splits.size())));
  return p;
}

/// Backward pass over the spec-composed network: one affine bound per spec
/// constraint, valid on {x in box : split signs hold}. Records a tape for
/// reverse-mode gradients when `tape` is non-null.
inline LinearSpecBounds backward_bounds(const Network& net_with_spec,
                                        const Subregion& region,
                                        const BoundContext& ctx,
                                        const RelaxParams& params, BoundSide side,
                                        BackwardTape* tape = nullptr) {
  const HiddenIndex hidden(net_with_spec);
  const int k_specs = net_with_spec.output_dim;
  detail::AlphaSource alpha{nullptr, &params.alpha};
  const int top = static_cast<int>(net_with_spec.layers.size()) - 1;
  BackwardResult res = detail::propagate_rows(
      net_with_spec, hidden, region, ctx.bounds, alpha, &params.beta, side, top,
      Mat::Identity(k_specs, k_specs), Vec::Zero(k_specs), tape);
  LinearSpecBounds out;
  out.side = side;
  out.rows.reserve(k_specs);
  for (int r = 0; r < k_specs; ++r)
    out.rows.push_back({res.a.row(r).transpose(), res.b[r]});
  return out;
}

/// Affine lower/upper bounds of one hidden neuron's pre-activation over the
/// region, used as the splitting plane for ReLU splits.
inline std::pair<AffineBound, AffineBound> preactivation_bounds(
    const Network& net, const Subregion& region, const BoundContext& ctx,
    int layer, int neuron) {
  const HiddenIndex hidden(net);
  detail::AlphaSource alpha{&ctx.alpha0, nullptr};
  Mat row0 = net.layers[layer].weights.row(neuron);
  Vec bias0 = Vec::Constant(1, net.layers[layer].bias[neuron]);
  const auto run = [&](BoundSide side) {
    BackwardResult r = detail::propagate_rows(net, hidden, region, ctx.bounds,
                                              alpha, nullptr, side, layer - 1,
                                              row0, bias0);
    return AffineBound{r.a.row(0).transpose(), r.b[0]};
  };
  return {run(BoundSide::Lower), run(BoundSide::Upper)};
}

struct ParamGradients {
  std::vector<Vec> alpha;  // per spec row, flat hidden index
  std::vector<Vec> beta;   // per spec row, split index
};

/// Reverse-mode pass: given dLoss/d(a_k), dLoss/d(b_k) for the K bound rows
/// produced with `tape`, accumulates dLoss/dalpha and dLoss/dbeta.
inline ParamGradients backward_gradients(const Network& net_with_spec,
                                         const Subregion& region,
                                         const BackwardTape& tape, const Mat& a_bar,
                                         const Vec& b_bar) {
  const HiddenIndex hidden(net_with_spec);
  const int k_rows = static_cast<int>(a_bar.rows());
  ParamGradients g;
  g.alpha.assign(k_rows, Vec::Zero(hidden.total));
  g.beta.assign(k_rows, Vec::Zero(static_cast<Eigen::Index>(region.splits.size())));

  Mat abar = a_bar;
  const Vec& cbar = b_bar;  // bias adjoint is constant through the pass
  auto step_it = tape.steps.rbegin();
  for (std::size_t t = 0; t < net_with_spec.layers.size(); ++t) {
    const AffineLayer& layer = net_with_spec.layers[t];
    // Undo the affine fold: A' = Ahat.W, b' = b + Ahat.bias.
    Mat ahat_bar = abar * layer.weights.transpose() + cbar * layer.bias.transpose();
    if (layer.activation == Activation::ReLU) {
      if (step_it == tape.steps.rend() || step_it->layer != static_cast<int>(t))
        throw Error("backward_gradients: tape does not match network");
      const BackwardTape::Step& step = *step_it++;
      for (const auto& [split_idx, neuron, factor] : step.beta_terms)
        for (int r = 0; r < k_rows; ++r)
          g.beta[r][split_idx] += factor * ahat_bar(r, neuron);
      for (int r = 0; r < k_rows; ++r)
        for (int j = 0; j < step.coeff.cols(); ++j)
          if (step.alpha_used(r, j) != 0.0)
            g.alpha[r][hidden.flat(static_cast<int>(t), j)] +=
                ahat_bar(r, j) * step.coeff(r, j);
      abar = (ahat_bar.array() * step.slope.array()).matrix();
      for (int r = 0; r < k_rows; ++r)
        abar.row(r) += cbar[r] * step.intercept.row(r);
    } else {
      abar = std::move(ahat_bar);
    }
  }
  return g;
}

}  // namespace premap

#endif  // PREMAP_RELAX_HPP
