#ifndef PREMAP_REFINE_HPP
#define PREMAP_REFINE_HPP

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include "premap/approx.hpp"
#include "premap/common.hpp"
#include "premap/geometry.hpp"
#include "premap/model.hpp"
#include "premap/relax.hpp"
#include "premap/rng.hpp"

namespace premap {

enum class SplitStrategy { Input, ReLU };
enum class InputSelect { Smooth, LongestEdge };

struct RefineConfig {
  double target_coverage = 0.9;  // Under: stop at cov >= r; Over: cov <= r
  int max_iterations = 100;
  SplitStrategy split_strategy = SplitStrategy::Input;
  InputSelect input_select = InputSelect::Smooth;
  int greedy_feature_cap = 32;
  ApproxConfig approx;
  std::uint64_t seed = 0;

  void validate() const {
    approx.validate();
    if (max_iterations < 0) throw Error("max_iterations must be >= 0");
    if (approx.mode == ApproxMode::Under) {
      if (!(target_coverage > 0.0 && target_coverage <= 1.0))
        throw Error("under-approximation target coverage must be in (0, 1]");
    } else if (!(target_coverage >= 1.0)) {
      throw Error("over-approximation target coverage must be >= 1");
    }
  }
};

struct RunStats {
  int iterations = 0;
  std::vector<double> coverage_trace;
  int num_polytopes = 0;
  std::int64_t wall_ms = 0;
  std::string status;  // target_met | budget_exhausted | all_relu_split | empty_preimage
};

/// Leaf of the refinement tree together with its cached estimates.
struct DomainNode {
  Subregion region;
  std::vector<HalfSpace> extra_constraints;
  RegionApprox approx;
  std::vector<char> preimage_flags;  // per sample: x in the node's restricted preimage
  std::size_t flagged = 0;
  double priority_raw = 0.0;
  double priority = 0.0;
  std::vector<std::uint32_t> cov_idx;  // coverage-set samples inside region.box
  bool finished = false;               // ReLU mode: nothing left to split
};

/// Estimated improvement headroom of a node on its own sample set: Under
/// counts preimage samples the polytope misses, Over counts polytope samples
/// outside the preimage. Negative only through sampling noise.
inline double calc_priority(const DomainNode& node, ApproxMode mode) {
  const double n = static_cast<double>(node.approx.samples.size());
  const double scale = node.region.box.volume() / n;
  const double diff = static_cast<double>(node.flagged) -
                      static_cast<double>(node.approx.inside_count);
  return mode == ApproxMode::Under ? scale * diff : -scale * diff;
}

struct SplitChoice {
  enum Kind { Feature, Neuron } kind = Feature;
  int feature = 0;
  int layer = 0;
  int neuron = 0;
};

/// Midpoint bisection on a feature, or sign split on a hidden neuron.
/// Children ids extend the parent's tree path (2id, 2id+1).
inline std::pair<Subregion, Subregion> split_subregion(const Subregion& region,
                                                       const SplitChoice& choice) {
  Subregion a = region, b = region;
  a.id = region.id * 2;
  b.id = region.id * 2 + 1;
  if (choice.kind == SplitChoice::Feature) {
    const double mid =
        (region.box.lower[choice.feature] + region.box.upper[choice.feature]) / 2.0;
    a.box.upper[choice.feature] = mid;
    b.box.lower[choice.feature] = mid;
  } else {
    if (region.has_split(choice.layer, choice.neuron))
      throw Error("neuron (" + std::to_string(choice.layer) + ", " +
                  std::to_string(choice.neuron) + ") is already split in this subregion");
    a.splits.push_back({choice.layer, choice.neuron, SplitSign::NonNeg});
    b.splits.push_back({choice.layer, choice.neuron, SplitSign::Neg});
  }
  return {std::move(a), std::move(b)};
}

/// Split constraints for the two children of a ReLU split, from affine
/// bounds h_lo <= h <= h_hi of the split neuron over the parent region.
/// Under mode: the constraint implies the true sign (children stay disjoint
/// and sound); Over mode: the constraint is implied by the true sign, so the
/// children may overlap inside the relaxation slab.
inline std::pair<HalfSpace, HalfSpace> split_halfspaces(const AffineBound& h_lo,
                                                        const AffineBound& h_hi,
                                                        ApproxMode mode) {
  if (mode == ApproxMode::Under)
    return {HalfSpace{h_lo.a, h_lo.b}, HalfSpace{-h_hi.a, -h_hi.b}};
  return {HalfSpace{h_hi.a, h_hi.b}, HalfSpace{-h_lo.a, -h_lo.b}};
}

/// Index of the feature to bisect. The smooth heuristic scores each
/// candidate split by re-bounding both children at the node's current
/// parameters (no optimization) and summing sigmoid margins over the
/// node's samples; beyond the feature cap it falls back to longest edge.
inline int select_input_feature(const Network& composed, const DomainNode& node,
                                const RefineConfig& config) {
  const Box& box = node.region.box;
  const int d = box.dim();
  std::vector<int> candidates;
  for (int f = 0; f < d; ++f)
    if (box.upper[f] > box.lower[f]) candidates.push_back(f);
  if (candidates.empty()) throw Error("select_input_feature: all features have zero width");

  const auto longest_edge = [&] {
    int best = candidates[0];
    for (int f : candidates)
      if (box.upper[f] - box.lower[f] > box.upper[best] - box.lower[best]) best = f;
    return best;
  };
  if (config.input_select == InputSelect::LongestEdge ||
      static_cast<int>(candidates.size()) > config.greedy_feature_cap)
    return longest_edge();

  const BoundSide side =
      config.approx.mode == ApproxMode::Under ? BoundSide::Lower : BoundSide::Upper;
  int best = -1;
  double best_score = 0.0;
  for (int f : candidates) {
    SplitChoice choice;
    choice.kind = SplitChoice::Feature;
    choice.feature = f;
    auto [lo_child, hi_child] = split_subregion(node.region, choice);
    double score = 0.0;
    for (const Subregion* child : {&lo_child, &hi_child}) {
      const BoundContext ctx = concrete_bounds(
          composed, *child, config.approx.intermediate_bounds, &node.approx.ctx.alpha0);
      const LinearSpecBounds bounds =
          backward_bounds(composed, *child, ctx, node.approx.params, side);
      double acc = 0.0;
      std::size_t count = 0;
      for (const auto& x : node.approx.samples) {
        if (!child->box.contains(x)) continue;
        ++count;
        double margin = bounds.rows[0].value(x);
        for (std::size_t i = 1; i < bounds.rows.size(); ++i)
          margin = std::min(margin, bounds.rows[i].value(x));
        acc += sigmoid(margin);
      }
      if (count > 0)
        score += child->box.volume() * acc / static_cast<double>(count);
    }
    if (config.approx.mode == ApproxMode::Over) score = -score;
    // near-ties resolve to the lowest feature index
    if (best < 0 || score > best_score + 1e-9) {
      best = f;
      best_score = score;
    }
  }
  return best;
}

/// The unstable, not-yet-split neuron whose pre-activation sign split is
/// most balanced on the node's samples. Empty when every neuron is stable
/// or already split (the AllReLUSplit signal).
inline std::optional<std::pair<int, int>> select_relu_node(const Network& net,
                                                           const DomainNode& node) {
  const std::vector<Vec>& samples = node.approx.samples;
  const std::size_t n = samples.size();
  Mat acts(n, net.input_dim);
  for (std::size_t i = 0; i < n; ++i) acts.row(i) = samples[i].transpose();

  std::optional<std::pair<int, int>> best;
  std::size_t best_balance = 0;
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    const AffineLayer& layer = net.layers[k];
    Mat pre = acts * layer.weights.transpose();
    pre.rowwise() += layer.bias.transpose();
    if (layer.activation != Activation::ReLU) {
      acts = std::move(pre);
      continue;
    }
    const Vec& lo = node.approx.ctx.bounds.lower[k];
    const Vec& hi = node.approx.ctx.bounds.upper[k];
    for (int j = 0; j < layer.out_width(); ++j) {
      const bool unstable =
          lo[j] < 0.0 && hi[j] > 0.0 && hi[j] - lo[j] >= kStableWidthEps;
      if (!unstable || node.region.has_split(static_cast<int>(k), j)) continue;
      std::size_t nonneg = 0;
      for (std::size_t i = 0; i < n; ++i)
        if (pre(i, j) >= 0.0) ++nonneg;
      const std::size_t balance =
          nonneg >= n - nonneg ? nonneg - (n - nonneg) : (n - nonneg) - nonneg;
      if (!best || balance < best_balance) {
        best = {static_cast<int>(k), j};
        best_balance = balance;
      }
    }
    acts = pre.cwiseMax(0.0);
  }
  return best;
}

struct RefineResult {
  PolytopeUnion approximation;
  RunStats stats;
  double final_ratio = 0.0;
  std::size_t union_hits = 0;
  std::size_t denom_hits = 0;
};

namespace detail {

/// Shared driver for preimage refinement and quantitative verification.
/// The goal denominator is the restricted preimage (coverage-ratio runs) or
/// the input set I (quantitative runs, which must survive an empty preimage).
struct RefineGoal {
  enum class Denominator { Preimage, InputSet } denominator = Denominator::Preimage;
  double target_ratio = 0.9;
  bool stop_on_empty_preimage = true;
};

class Refiner {
 public:
  Refiner(const Network& net, const OutputSpec& spec, Box root_box,
          std::vector<HalfSpace> input_constraints, const RefineConfig& config)
      : net_(net),
        spec_(spec),
        composed_(compose_spec(net, spec)),
        root_box_(std::move(root_box)),
        input_constraints_(std::move(input_constraints)),
        config_(config) {}

  RefineResult run(const RefineGoal& goal) {
    config_.validate();
    const auto t0 = std::chrono::steady_clock::now();
    RefineResult result;
    result.approximation.mode = config_.approx.mode;
    RunStats& stats = result.stats;

    coverage_set_ = sample_box(root_box_, 4 * config_.approx.n_samples,
                               derive_seed(config_.seed, "coverage", 0));
    cov_in_preimage_.assign(coverage_set_.size(), 0);
    cov_in_input_.assign(coverage_set_.size(), 0);
    for (std::size_t s = 0; s < coverage_set_.size(); ++s) {
      bool in_input = true;
      for (const auto& h : input_constraints_)
        if (!h.satisfied(coverage_set_[s])) {
          in_input = false;
          break;
        }
      cov_in_input_[s] = in_input ? 1 : 0;
      if (in_input && spec_.satisfied(net_.forward(coverage_set_[s])))
        cov_in_preimage_[s] = 1;
    }
    const std::size_t preimage_hits =
        static_cast<std::size_t>(std::count(cov_in_preimage_.begin(), cov_in_preimage_.end(), 1));
    result.denom_hits =
        goal.denominator == RefineGoal::Denominator::Preimage
            ? preimage_hits
            : static_cast<std::size_t>(std::count(cov_in_input_.begin(), cov_in_input_.end(), 1));

    covered_.assign(coverage_set_.size(), 0);
    if (preimage_hits == 0 && goal.stop_on_empty_preimage) {
      stats.status = "empty_preimage";
      finalize(result, t0);
      return result;
    }
    if (result.denom_hits == 0)
      throw DegenerateInputError(
          "no coverage sample satisfies the input set; cannot estimate volumes");

    // Root approximation.
    Subregion root;
    root.box = root_box_;
    root.id = 1;
    auto root_node = make_node(root, input_constraints_, {}, {}, Vec());
    root_node->cov_idx.resize(coverage_set_.size());
    for (std::size_t s = 0; s < coverage_set_.size(); ++s)
      root_node->cov_idx[s] = static_cast<std::uint32_t>(s);
    apply_cover_delta(*root_node, +1);
    push(root_node);

    const auto ratio = [&] {
      return static_cast<double>(union_hits_) / static_cast<double>(result.denom_hits);
    };
    const auto met = [&](double r) {
      return config_.approx.mode == ApproxMode::Under ? r >= goal.target_ratio
                                                      : r <= goal.target_ratio;
    };
    stats.coverage_trace.push_back(ratio());

    bool target_met = met(stats.coverage_trace.back());
    while (!target_met && stats.iterations < config_.max_iterations) {
      std::shared_ptr<DomainNode> node = pop();
      if (!node) break;  // everything fully split
      SplitChoice choice;
      if (config_.split_strategy == SplitStrategy::ReLU) {
        auto picked = select_relu_node(composed_, *node);
        if (!picked) {
          node->finished = true;
          finished_.push_back(std::move(node));
          continue;  // not a refinement step
        }
        choice.kind = SplitChoice::Neuron;
        choice.layer = picked->first;
        choice.neuron = picked->second;
      } else {
        choice.kind = SplitChoice::Feature;
        choice.feature = select_input_feature(composed_, *node, config_);
      }
      refine_step(*node, choice);
      ++stats.iterations;
      stats.coverage_trace.push_back(ratio());
      target_met = met(stats.coverage_trace.back());
    }

    if (target_met)
      stats.status = "target_met";
    else if (queue_.empty() && config_.split_strategy == SplitStrategy::ReLU)
      stats.status = "all_relu_split";
    else
      stats.status = "budget_exhausted";

    collect_leaves(result.approximation);
    result.union_hits = union_hits_;
    result.final_ratio = stats.coverage_trace.empty() ? 0.0 : stats.coverage_trace.back();
    finalize(result, t0);
    return result;
  }

 private:
  struct QueueEntry {
    double priority;
    std::uint64_t id;
    std::shared_ptr<DomainNode> node;
    bool operator<(const QueueEntry& other) const {
      if (priority != other.priority) return priority < other.priority;
      return id > other.id;  // smaller id pops first on ties
    }
  };

  std::shared_ptr<DomainNode> make_node(const Subregion& region,
                                        std::vector<HalfSpace> extra, RelaxParams init,
                                        std::vector<Vec> samples, Vec alpha0) {
    SubregionJob job;
    job.region = region;
    job.extra_constraints = std::move(extra);
    job.init = std::move(init);
    job.samples = std::move(samples);
    job.alpha0 = std::move(alpha0);
    std::vector<RegionApprox> approx =
        gen_approx(net_, spec_, {std::move(job)}, config_.approx, config_.seed);
    auto node = std::make_shared<DomainNode>();
    node->region = region;
    node->extra_constraints.assign(
        approx[0].polytope.halfspaces.begin(),
        approx[0].polytope.halfspaces.end() - approx[0].bounds.rows.size());
    node->approx = std::move(approx[0]);
    flag_node(*node);
    node->priority_raw = calc_priority(*node, config_.approx.mode);
    node->priority = std::max(0.0, node->priority_raw);
    return node;
  }

  void flag_node(DomainNode& node) {
    node.preimage_flags.assign(node.approx.samples.size(), 0);
    node.flagged = 0;
    for (std::size_t i = 0; i < node.approx.samples.size(); ++i) {
      const Vec& x = node.approx.samples[i];
      bool in_input = true;
      for (const auto& h : input_constraints_)
        if (!h.satisfied(x)) {
          in_input = false;
          break;
        }
      if (!in_input) continue;
      if (!node.region.splits.empty() &&
          !node.region.splits_satisfied(net_.preactivations(x)))
        continue;
      if (spec_.satisfied(net_.forward(x))) {
        node.preimage_flags[i] = 1;
        ++node.flagged;
      }
    }
    node.priority_raw = calc_priority(node, config_.approx.mode);
    node.priority = std::max(0.0, node.priority_raw);
  }

  void push(const std::shared_ptr<DomainNode>& node) {
    queue_.push({node->priority, node->region.id, node});
  }

  std::shared_ptr<DomainNode> pop() {
    if (queue_.empty()) return nullptr;
    auto node = queue_.top().node;
    queue_.pop();
    return node;
  }

  // Exact incremental union membership on the coverage set: counts per
  // sample how many leaf polytopes contain it.
  void apply_cover_delta(const DomainNode& node, int delta) {
    for (std::uint32_t s : node.cov_idx) {
      if (!node.approx.polytope.contains(coverage_set_[s])) continue;
      const int before = covered_[s];
      covered_[s] = static_cast<std::uint16_t>(before + delta);
      if (before == 0 && delta > 0) ++union_hits_;
      if (before == 1 && delta < 0) --union_hits_;
    }
  }

  void refine_step(DomainNode& parent, const SplitChoice& choice) {
    auto [region_a, region_b] = split_subregion(parent.region, choice);
    std::vector<HalfSpace> extra_a = parent.extra_constraints;
    std::vector<HalfSpace> extra_b = parent.extra_constraints;
    RelaxParams init_a = parent.approx.params;
    RelaxParams init_b = parent.approx.params;
    std::vector<Vec> samples_a, samples_b;

    if (choice.kind == SplitChoice::Neuron) {
      const auto [h_lo, h_hi] = preactivation_bounds(
          composed_, parent.region, parent.approx.ctx, choice.layer, choice.neuron);
      const auto [plane_a, plane_b] =
          split_halfspaces(h_lo, h_hi, config_.approx.mode);
      extra_a.push_back(plane_a);
      extra_b.push_back(plane_b);
      // Children keep the parent's alpha warm start but restart every beta
      // at zero, which recovers the standard bound as the first candidate.
      const Eigen::Index n_splits = static_cast<Eigen::Index>(region_a.splits.size());
      for (auto& beta : init_a.beta) beta = Vec::Zero(n_splits);
      for (auto& beta : init_b.beta) beta = Vec::Zero(n_splits);
      samples_a = parent.approx.samples;
      samples_b = parent.approx.samples;
    } else {
      for (const auto& x : parent.approx.samples)
        (region_a.box.contains(x) ? samples_a : samples_b).push_back(x);
      top_up(samples_a, region_a);
      top_up(samples_b, region_b);
    }

    SubregionJob job_a{region_a, std::move(extra_a), std::move(init_a),
                       parent.approx.ctx.alpha0, std::move(samples_a)};
    SubregionJob job_b{region_b, std::move(extra_b), std::move(init_b),
                       parent.approx.ctx.alpha0, std::move(samples_b)};
    std::vector<RegionApprox> results =
        gen_approx(net_, spec_, {std::move(job_a), std::move(job_b)}, config_.approx,
                   config_.seed);

    auto finish_child = [&](const Subregion& region, RegionApprox&& approx) {
      auto child = std::make_shared<DomainNode>();
      child->region = region;
      child->extra_constraints.assign(
          approx.polytope.halfspaces.begin(),
          approx.polytope.halfspaces.end() - approx.bounds.rows.size());
      child->approx = std::move(approx);
      flag_node(*child);
      if (choice.kind == SplitChoice::Neuron) {
        child->cov_idx = parent.cov_idx;
      } else {
        for (std::uint32_t s : parent.cov_idx)
          if (child->region.box.contains(coverage_set_[s])) child->cov_idx.push_back(s);
      }
      apply_cover_delta(*child, +1);
      push(child);
    };
    apply_cover_delta(parent, -1);
    finish_child(region_a, std::move(results[0]));
    finish_child(region_b, std::move(results[1]));
  }

  void top_up(std::vector<Vec>& samples, const Subregion& region) {
    const std::size_t want = config_.approx.n_samples;
    if (samples.size() >= want) return;
    auto fresh = sample_box(region.box, want - samples.size(),
                            derive_seed(config_.seed, "samples", region.id));
    samples.insert(samples.end(), std::make_move_iterator(fresh.begin()),
                   std::make_move_iterator(fresh.end()));
  }

  void collect_leaves(PolytopeUnion& u) {
    std::vector<QueueEntry> rest;
    while (!queue_.empty()) {
      rest.push_back(queue_.top());
      queue_.pop();
    }
    std::vector<std::pair<std::uint64_t, const Polytope*>> leaves;
    for (const auto& e : rest) leaves.emplace_back(e.id, &e.node->approx.polytope);
    for (const auto& n : finished_) leaves.emplace_back(n->region.id, &n->approx.polytope);
    std::sort(leaves.begin(), leaves.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& [id, poly] : leaves) u.polytopes.push_back(*poly);
  }

  void finalize(RefineResult& result, std::chrono::steady_clock::time_point t0) {
    result.stats.num_polytopes = static_cast<int>(result.approximation.polytopes.size());
    result.stats.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                               std::chrono::steady_clock::now() - t0)
                               .count();
  }

  const Network& net_;
  const OutputSpec& spec_;
  Network composed_;
  Box root_box_;
  std::vector<HalfSpace> input_constraints_;
  RefineConfig config_;

  std::vector<Vec> coverage_set_;
  std::vector<char> cov_in_preimage_;
  std::vector<char> cov_in_input_;
  std::vector<std::uint16_t> covered_;
  std::size_t union_hits_ = 0;
  std::priority_queue<QueueEntry> queue_;
  std::vector<std::shared_ptr<DomainNode>> finished_;
};

}  // namespace detail

/// Anytime refinement (priority queue over subregions): repeatedly splits
/// the most improvable leaf and re-approximates the two children until the
/// coverage target, the iteration budget, or full ReLU stabilization.
inline RefineResult refine_preimage(const Network& net, const OutputSpec& spec,
                                    const Box& region, const RefineConfig& config) {
  detail::Refiner refiner(net, spec, region, {}, config);
  detail::RefineGoal goal;
  goal.denominator = detail::RefineGoal::Denominator::Preimage;
  goal.target_ratio = config.target_coverage;
  goal.stop_on_empty_preimage = true;
  return refiner.run(goal);
}

}  // namespace premap

#endif  // PREMAP_REFINE_HPP
