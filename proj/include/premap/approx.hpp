#ifndef PREMAP_APPROX_HPP
#define PREMAP_APPROX_HPP

#include <cmath>
#include <cstdint>
#include <future>
#include <utility>
#include <vector>

#include "premap/common.hpp"
#include "premap/geometry.hpp"
#include "premap/model.hpp"
#include "premap/relax.hpp"
#include "premap/rng.hpp"

namespace premap {

struct ApproxConfig {
  std::size_t n_samples = 10000;
  ApproxMode mode = ApproxMode::Under;
  int opt_steps = 20;
  double learning_rate = 0.1;
  double lse_temperature = 1.0;
  BoundMethod intermediate_bounds = BoundMethod::Backward;
  bool optimize_beta = true;  // off: Lagrange multipliers stay at zero
  int threads = 1;

  void validate() const {
    if (n_samples < 1) throw Error("n_samples must be >= 1");
    if (opt_steps < 0) throw Error("opt_steps must be >= 0");
    if (learning_rate <= 0.0) throw Error("learning_rate must be positive");
    if (lse_temperature <= 0.0) throw Error("lse_temperature must be positive");
  }
};

inline double sigmoid(double y) {
  if (y >= 0.0) return 1.0 / (1.0 + std::exp(-y));
  const double e = std::exp(y);
  return e / (1.0 + e);
}

namespace detail {

// Smooth minimum of the K bound values at one sample:
// -tau.LSE(-g_1/tau, ..., -g_K/tau), with max subtraction for stability.
inline double smooth_min(const Vec& g, double tau) {
  double m = -g[0];
  for (Eigen::Index i = 1; i < g.size(); ++i) m = std::max(m, -g[i]);
  double s = 0.0;
  for (Eigen::Index i = 0; i < g.size(); ++i) s += std::exp((-g[i] - m) / tau);
  return -(m + tau * std::log(s));
}

// Softmin weights p_k = exp(-g_k/tau) / sum_i exp(-g_i/tau).
inline Vec softmin_weights(const Vec& g, double tau) {
  double m = -g[0];
  for (Eigen::Index i = 1; i < g.size(); ++i) m = std::max(m, -g[i]);
  Vec w(g.size());
  double s = 0.0;
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    w[i] = std::exp((-g[i] - m) / tau);
    s += w[i];
  }
  return w / s;
}

/// Deterministic parallel map: out[i] = fn(i); output order equals input
/// order regardless of the worker count.
template <typename Result, typename Fn>
std::vector<Result> parallel_map(std::size_t count, int threads, Fn&& fn) {
  std::vector<Result> out(count);
  if (threads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) out[i] = fn(i);
    return out;
  }
  std::vector<std::future<void>> futures;
  std::size_t next = 0;
  const std::size_t workers = std::min<std::size_t>(threads, count);
  const std::size_t chunk = (count + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = next;
    const std::size_t end = std::min(count, begin + chunk);
    next = end;
    if (begin >= end) break;
    futures.push_back(std::async(std::launch::async, [&fn, &out, begin, end] {
      for (std::size_t i = begin; i < end; ++i) out[i] = fn(i);
    }));
  }
  for (auto& f : futures) f.get();
  return out;
}

}  // namespace detail

/// Differentiable volume surrogate of Algorithm GenApprox:
///   Under: -(vol/N).sum_j sigma(-LSE(-g_1(x_j), ..., -g_K(x_j)))
///   Over:  +(vol/N).sum_j sigma(-LSE(-g_1(x_j), ..., -g_K(x_j)))
inline double smoothed_loss(const LinearSpecBounds& bounds, const std::vector<Vec>& samples,
                            double box_volume, ApproxMode mode, double temperature = 1.0) {
  if (samples.empty()) throw Error("smoothed_loss requires a nonempty sample set");
  const int k = static_cast<int>(bounds.rows.size());
  double acc = 0.0;
  Vec g(k);
  for (const auto& x : samples) {
    for (int i = 0; i < k; ++i) g[i] = bounds.rows[i].value(x);
    acc += sigmoid(detail::smooth_min(g, temperature));
  }
  const double scaled = box_volume / static_cast<double>(samples.size()) * acc;
  return mode == ApproxMode::Under ? -scaled : scaled;
}

struct OptimizeResult {
  RelaxParams params;
  LinearSpecBounds bounds;
  // Samples inside {all g >= 0} and the fixed constraints, on the fixed set.
  std::size_t inside_count = 0;
};

namespace detail {

inline std::size_t count_inside(const LinearSpecBounds& bounds,
                                const std::vector<Vec>& samples,
                                const std::vector<char>& fixed_ok) {
  std::size_t hits = 0;
  for (std::size_t n = 0; n < samples.size(); ++n) {
    if (!fixed_ok[n]) continue;
    bool ok = true;
    for (const auto& row : bounds.rows)
      if (row.value(samples[n]) < 0.0) {
        ok = false;
        break;
      }
    if (ok) ++hits;
  }
  return hits;
}

}  // namespace detail

struct LossGradients {
  double loss = 0.0;
  ParamGradients grads;
};

/// Loss and its exact reverse-mode gradient with respect to (alpha, beta)
/// through smoothed_loss composed with backward_bounds.
inline LossGradients smoothed_loss_gradients(const Network& net_with_spec,
                                             const Subregion& region,
                                             const BoundContext& ctx,
                                             const ApproxConfig& config,
                                             const RelaxParams& params,
                                             const std::vector<Vec>& samples) {
  const BoundSide side =
      config.mode == ApproxMode::Under ? BoundSide::Lower : BoundSide::Upper;
  const int k_specs = net_with_spec.output_dim;
  const std::size_t n = samples.size();
  BackwardTape tape;
  const LinearSpecBounds bounds =
      backward_bounds(net_with_spec, region, ctx, params, side, &tape);

  LossGradients out;
  Mat a_bar = Mat::Zero(k_specs, net_with_spec.input_dim);
  Vec b_bar = Vec::Zero(k_specs);
  Vec g(k_specs);
  const double sign = config.mode == ApproxMode::Under ? -1.0 : 1.0;
  const double scale = sign * region.box.volume() / static_cast<double>(n);
  for (const auto& x : samples) {
    for (int i = 0; i < k_specs; ++i) g[i] = bounds.rows[i].value(x);
    const double m = detail::smooth_min(g, config.lse_temperature);
    const double s = sigmoid(m);
    out.loss += scale * s;
    const Vec w = detail::softmin_weights(g, config.lse_temperature);
    const double outer = scale * s * (1.0 - s);
    for (int i = 0; i < k_specs; ++i) {
      a_bar.row(i) += outer * w[i] * x.transpose();
      b_bar[i] += outer * w[i];
    }
  }
  out.grads = backward_gradients(net_with_spec, region, tape, a_bar, b_bar);
  return out;
}

/// Projected gradient descent on (alpha, beta) through the smoothed loss.
/// The sample set stays fixed across steps; the returned parameters are the
/// candidate (initialization or any iterate) whose polytope covers the
/// best sample count: most samples for Under, fewest for Over.
inline OptimizeResult optimize_parameters(const Network& net_with_spec,
                                          const Subregion& region,
                                          const BoundContext& ctx,
                                          const ApproxConfig& config,
                                          RelaxParams initial,
                                          const std::vector<Vec>& samples,
                                          const std::vector<HalfSpace>& fixed_constraints = {}) {
  config.validate();
  const BoundSide side =
      config.mode == ApproxMode::Under ? BoundSide::Lower : BoundSide::Upper;
  const int k_specs = net_with_spec.output_dim;

  std::vector<char> fixed_ok(samples.size(), 1);
  for (std::size_t j = 0; j < samples.size(); ++j)
    for (const auto& h : fixed_constraints)
      if (!h.satisfied(samples[j])) {
        fixed_ok[j] = 0;
        break;
      }

  const auto better = [&](std::size_t candidate, std::size_t best) {
    return config.mode == ApproxMode::Under ? candidate > best : candidate < best;
  };

  OptimizeResult best;
  best.params = initial;
  best.bounds = backward_bounds(net_with_spec, region, ctx, initial, side);
  best.inside_count = detail::count_inside(best.bounds, samples, fixed_ok);

  RelaxParams current = std::move(initial);
  for (int step = 0; step < config.opt_steps; ++step) {
    const LossGradients lg =
        smoothed_loss_gradients(net_with_spec, region, ctx, config, current, samples);
    for (int i = 0; i < k_specs; ++i) {
      current.alpha[i] -= config.learning_rate * lg.grads.alpha[i];
      if (config.optimize_beta)
        current.beta[i] -= config.learning_rate * lg.grads.beta[i];
    }
    current.project();

    LinearSpecBounds stepped =
        backward_bounds(net_with_spec, region, ctx, current, side);
    const std::size_t inside = detail::count_inside(stepped, samples, fixed_ok);
    if (better(inside, best.inside_count)) {
      best.params = current;
      best.bounds = std::move(stepped);
      best.inside_count = inside;
    }
  }
  return best;
}

/// One refinement job: the subregion, the split-plane constraints it
/// inherited, and optional warm starts carried down the tree.
struct SubregionJob {
  Subregion region;
  std::vector<HalfSpace> extra_constraints;
  RelaxParams init;          // empty: fresh from the bound context
  Vec alpha0;                // empty: initialize at this region
  std::vector<Vec> samples;  // empty: draw n_samples seeded by region id
};

struct RegionApprox {
  Polytope polytope;
  RelaxParams params;
  LinearSpecBounds bounds;
  BoundContext ctx;
  std::vector<Vec> samples;
  std::size_t inside_count = 0;
};

/// Approximates each subregion independently with one polytope whose
/// half-spaces are the optimized spec bounds {g_i >= 0} plus the inherited
/// split constraints; the subregion box carries the input-split bounds.
inline std::vector<RegionApprox> gen_approx(const Network& net, const OutputSpec& spec,
                                            std::vector<SubregionJob> jobs,
                                            const ApproxConfig& config,
                                            std::uint64_t seed) {
  config.validate();
  const Network composed = compose_spec(net, spec);
  auto run_one = [&](std::size_t idx) {
    SubregionJob& job = jobs[idx];
    if (job.region.box.dim() != net.input_dim)
      throw DimensionError("gen_approx: subregion dimension does not match network");
    RegionApprox out;
    out.ctx = concrete_bounds(composed, job.region, config.intermediate_bounds,
                              job.alpha0.size() > 0 ? &job.alpha0 : nullptr);
    out.samples = job.samples.empty()
                      ? sample_box(job.region.box, config.n_samples,
                                   derive_seed(seed, "samples", job.region.id))
                      : std::move(job.samples);
    RelaxParams start =
        job.init.empty() ? init_params(out.ctx, job.region, spec.size()) : std::move(job.init);
    OptimizeResult opt =
        optimize_parameters(composed, job.region, out.ctx, config, std::move(start),
                            out.samples, job.extra_constraints);
    out.params = std::move(opt.params);
    out.bounds = std::move(opt.bounds);
    out.inside_count = opt.inside_count;
    out.polytope.box = job.region.box;
    out.polytope.halfspaces = job.extra_constraints;
    for (const auto& row : out.bounds.rows)
      out.polytope.halfspaces.push_back({row.a, row.b});
    return out;
  };
  return detail::parallel_map<RegionApprox>(jobs.size(), config.threads, run_one);
}

}  // namespace premap

#endif  // PREMAP_APPROX_HPP
