#ifndef PREMAP_QUANT_HPP
#define PREMAP_QUANT_HPP

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "premap/common.hpp"
#include "premap/geometry.hpp"
#include "premap/model.hpp"
#include "premap/refine.hpp"

namespace premap {

/// A quantitative property (I, O, p): at least proportion p of the input
/// set I = box ∧ half-spaces must map into the output set O.
struct QuantProperty {
  Box input_box;
  std::vector<HalfSpace> input_halfspaces;
  OutputSpec output_spec;
  double p = 0.0;
};

enum class VerdictValue { True, False, Unknown };

inline const char* to_string(VerdictValue v) {
  switch (v) {
    case VerdictValue::True: return "True";
    case VerdictValue::False: return "False";
    default: return "Unknown";
  }
}

struct Verdict {
  VerdictValue value = VerdictValue::Unknown;
  double achieved_proportion = 0.0;
  double standard_error = 0.0;
  // False only: shortfall p - achieved. The under-approximation at full
  // stabilization is exact only up to floating point, so the gap is
  // reported rather than silently asserted to be exact.
  double residual_gap = 0.0;
  RunStats stats;
};

/// Quantitative verification via under-approximation refinement. True when
/// the estimated union volume reaches p.vol(I); False when ReLU splitting
/// stabilizes every region without reaching it; Unknown at budget
/// exhaustion. Input splitting can never conclude False.
inline Verdict verify(const Network& net, const QuantProperty& property,
                      RefineConfig config) {
  if (!(property.p >= 0.0 && property.p <= 1.0))
    throw Error("quantitative threshold p must lie in [0, 1]");
  config.approx.mode = ApproxMode::Under;
  config.target_coverage = 1.0;  // placeholder; the goal below drives the run
  detail::Refiner refiner(net, property.output_spec, property.input_box,
                          property.input_halfspaces, config);
  detail::RefineGoal goal;
  goal.denominator = detail::RefineGoal::Denominator::InputSet;
  goal.target_ratio = property.p;
  goal.stop_on_empty_preimage = false;

  RefineResult result = refiner.run(goal);

  Verdict verdict;
  verdict.stats = result.stats;
  verdict.achieved_proportion = result.final_ratio;
  const double phat = verdict.achieved_proportion;
  verdict.standard_error =
      std::sqrt(std::max(0.0, phat * (1.0 - phat)) /
                static_cast<double>(std::max<std::size_t>(result.denom_hits, 1)));
  if (result.stats.status == "target_met") {
    verdict.value = VerdictValue::True;
  } else if (result.stats.status == "all_relu_split" &&
             config.split_strategy == SplitStrategy::ReLU) {
    verdict.value = VerdictValue::False;
    verdict.residual_gap = property.p - phat;
  } else {
    verdict.value = VerdictValue::Unknown;
  }
  return verdict;
}

}  // namespace premap

#endif  // PREMAP_QUANT_HPP
