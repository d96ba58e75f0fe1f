#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "premap/premap.hpp"

namespace {

using namespace premap;

int default_threads() {
  if (const char* env = std::getenv("PREMAP_THREADS")) {
    const int t = std::atoi(env);
    if (t > 0) return t;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

struct ApproxArgs {
  std::string model, problem, out, svg;
  std::string mode = "under";
  std::string split = "input";
  double target_coverage = 0.9;
  int max_iters = 100;
  int samples = 10000;
  int opt_steps = 20;
  std::uint64_t seed = 0;
  int threads = default_threads();
};

int run_approx(const ApproxArgs& args) {
  const Network net = load_network(args.model);
  const Problem problem = problem_from_json(load_json(args.problem));

  RefineConfig config;
  config.approx.mode = args.mode == "over" ? ApproxMode::Over : ApproxMode::Under;
  config.split_strategy = args.split == "relu" ? SplitStrategy::ReLU : SplitStrategy::Input;
  config.target_coverage = args.target_coverage;
  config.max_iterations = args.max_iters;
  config.approx.n_samples = static_cast<std::size_t>(args.samples);
  config.approx.opt_steps = args.opt_steps;
  config.approx.threads = args.threads;
  config.seed = args.seed;

  detail::Refiner refiner(net, problem.output_spec, problem.input_box,
                          problem.input_halfspaces, config);
  detail::RefineGoal goal;
  goal.target_ratio = config.target_coverage;
  const RefineResult result = refiner.run(goal);

  Json out = union_to_json(result.approximation);
  out["stats"] = stats_to_json(result.stats);
  write_json(args.out, out);

  if (!args.svg.empty()) {
    std::ofstream svg_out(args.svg);
    if (!svg_out) throw Error("cannot open SVG output: " + args.svg);
    write_svg(svg_out, problem.input_box, result.approximation, net,
              problem.output_spec, problem.input_halfspaces, args.seed);
  }

  if (result.stats.status == "target_met") return 0;
  if (result.stats.status == "empty_preimage") return 3;
  return 2;  // budget_exhausted or all_relu_split
}

struct VerifyArgs {
  std::string model, property, out;
  std::string split = "input";
  int max_iters = 100;
  int samples = 10000;
  int opt_steps = 20;
  std::uint64_t seed = 0;
  int threads = default_threads();
};

int run_verify(const VerifyArgs& args) {
  const Network net = load_network(args.model);
  const QuantProperty property = property_from_json(load_json(args.property));

  RefineConfig config;
  config.split_strategy = args.split == "relu" ? SplitStrategy::ReLU : SplitStrategy::Input;
  config.max_iterations = args.max_iters;
  config.approx.n_samples = static_cast<std::size_t>(args.samples);
  config.approx.opt_steps = args.opt_steps;
  config.approx.threads = args.threads;
  config.seed = args.seed;

  const Verdict verdict = verify(net, property, config);
  write_json(args.out, verdict_to_json(verdict));

  switch (verdict.value) {
    case VerdictValue::True: return 0;
    case VerdictValue::False: return 4;
    default: return 5;
  }
}

struct OracleArgs {
  std::string model, problem, out;
  std::uint64_t seed = 0;
};

int run_oracle(const OracleArgs& args) {
  const Network net = load_network(args.model);
  const Problem problem = problem_from_json(load_json(args.problem));

  ExactPreimage exact;
  try {
    exact = exact_preimage(net, problem.input_box, problem.output_spec,
                           kOracleNeuronCap, args.seed);
  } catch (const CapExceededError& e) {
    std::cerr << "premap oracle: " << e.what() << "\n";
    return 6;
  }
  // The exact preimage is restricted to I when half-spaces are present.
  if (!problem.input_halfspaces.empty()) {
    for (auto& poly : exact.approximation.polytopes)
      poly.halfspaces.insert(poly.halfspaces.end(), problem.input_halfspaces.begin(),
                             problem.input_halfspaces.end());
    if (exact.exact_area) {
      exact.area = 0.0;
      for (const auto& poly : exact.approximation.polytopes)
        exact.area += polygon_area_2d(poly.box, poly.halfspaces);
    }
  }

  Json out = union_to_json(exact.approximation);
  out["num_pieces"] = exact.num_pieces;
  out["sampling_decided"] = exact.sampling_decided;
  if (exact.exact_area) out["area"] = exact.area;
  write_json(args.out, out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Preimage approximation and quantitative verification for ReLU networks"};
  app.require_subcommand(1);

  ApproxArgs approx_args;
  CLI::App* approx_cmd =
      app.add_subcommand("approx", "Refine an under-/over-approximation of the preimage");
  approx_cmd->add_option("--model", approx_args.model, "Network JSON")->required();
  approx_cmd->add_option("--problem", approx_args.problem, "Problem JSON")->required();
  approx_cmd->add_option("--mode", approx_args.mode, "under|over")
      ->check(CLI::IsMember({"under", "over"}));
  approx_cmd->add_option("--split", approx_args.split, "input|relu")
      ->check(CLI::IsMember({"input", "relu"}));
  approx_cmd->add_option("--target-coverage", approx_args.target_coverage, "Coverage target");
  approx_cmd->add_option("--max-iters", approx_args.max_iters, "Refinement budget");
  approx_cmd->add_option("--samples", approx_args.samples, "Samples per subregion");
  approx_cmd->add_option("--opt-steps", approx_args.opt_steps, "Gradient steps per region");
  approx_cmd->add_option("--seed", approx_args.seed, "RNG seed");
  approx_cmd->add_option("--out", approx_args.out, "Result JSON path")->required();
  approx_cmd->add_option("--svg", approx_args.svg, "SVG plot path (2-D only)");
  approx_cmd->add_option("--threads", approx_args.threads, "Worker pool cap");

  VerifyArgs verify_args;
  CLI::App* verify_cmd =
      app.add_subcommand("verify", "Verify a quantitative property (I, O, p)");
  verify_cmd->add_option("--model", verify_args.model, "Network JSON")->required();
  verify_cmd->add_option("--property", verify_args.property, "Property JSON")->required();
  verify_cmd->add_option("--split", verify_args.split, "input|relu")
      ->check(CLI::IsMember({"input", "relu"}));
  verify_cmd->add_option("--max-iters", verify_args.max_iters, "Refinement budget");
  verify_cmd->add_option("--samples", verify_args.samples, "Samples per subregion");
  verify_cmd->add_option("--opt-steps", verify_args.opt_steps, "Gradient steps per region");
  verify_cmd->add_option("--seed", verify_args.seed, "RNG seed");
  verify_cmd->add_option("--out", verify_args.out, "Verdict JSON path")->required();
  verify_cmd->add_option("--threads", verify_args.threads, "Worker pool cap");

  OracleArgs oracle_args;
  CLI::App* oracle_cmd =
      app.add_subcommand("oracle", "Exact preimage by activation-pattern enumeration");
  oracle_cmd->add_option("--model", oracle_args.model, "Network JSON")->required();
  oracle_cmd->add_option("--problem", oracle_args.problem, "Problem JSON")->required();
  oracle_cmd->add_option("--seed", oracle_args.seed, "RNG seed");
  oracle_cmd->add_option("--out", oracle_args.out, "Result JSON path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (approx_cmd->parsed()) return run_approx(approx_args);
    if (verify_cmd->parsed()) return run_verify(verify_args);
    if (oracle_cmd->parsed()) return run_oracle(oracle_args);
  } catch (const std::exception& e) {
    std::cerr << "premap: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
