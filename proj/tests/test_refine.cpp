#include <catch2/catch_amalgamated.hpp>

#include "premap/json_io.hpp"
#include "premap/refine.hpp"
#include "test_util.hpp"

using namespace premap;
using premap::testing::argmax_spec;
using premap::testing::fixture_path;
using premap::testing::random_network;

namespace {

Subregion box_region(const Box& box, std::uint64_t id = 1) {
  Subregion r;
  r.box = box;
  r.id = id;
  return r;
}

DomainNode make_node(const Network& net, const OutputSpec& spec, const Subregion& region,
                     const ApproxConfig& config, std::uint64_t seed) {
  SubregionJob job;
  job.region = region;
  auto res = gen_approx(net, spec, {job}, config, seed);
  DomainNode node;
  node.region = region;
  node.approx = std::move(res[0]);
  node.preimage_flags.assign(node.approx.samples.size(), 0);
  for (std::size_t i = 0; i < node.approx.samples.size(); ++i) {
    if (spec.satisfied(net.forward(node.approx.samples[i]))) {
      node.preimage_flags[i] = 1;
      ++node.flagged;
    }
  }
  node.priority_raw = calc_priority(node, config.mode);
  node.priority = std::max(0.0, node.priority_raw);
  return node;
}

}  // namespace

TEST_CASE("calc_priority") {
  DomainNode node;
  node.region = box_region(Box(Vec::Zero(2), Vec::Constant(2, 2.0)));  // volume 4
  node.approx.samples = sample_box(node.region.box, 100, 1);

  SECTION("polytope covering exactly the flagged samples scores zero") {
    node.flagged = 40;
    node.approx.inside_count = 40;
    CHECK(calc_priority(node, ApproxMode::Under) == 0.0);
  }
  SECTION("empty polytope under a full preimage scores the box volume") {
    node.flagged = 100;
    node.approx.inside_count = 0;
    CHECK(calc_priority(node, ApproxMode::Under) == Catch::Approx(4.0));
  }
  SECTION("over mode: full polytope with empty preimage scores the box volume") {
    node.flagged = 0;
    node.approx.inside_count = 100;
    CHECK(calc_priority(node, ApproxMode::Over) == Catch::Approx(4.0));
  }
}

TEST_CASE("select_input_feature") {
  ApproxConfig aconfig;
  aconfig.n_samples = 2000;
  aconfig.opt_steps = 0;
  RefineConfig config;
  config.approx = aconfig;

  SECTION("an ignored feature is never selected") {
    Network net = random_network(701, {2, 12, 2});
    net.layers[0].weights.col(1).setZero();  // x2 is irrelevant
    const OutputSpec spec = argmax_spec(2, 0);
    const Network composed = compose_spec(net, spec);
    const auto node = make_node(net, spec, box_region(Box(Vec::Constant(2, -1.0), Vec::Ones(2))),
                                aconfig, 1);
    CHECK(select_input_feature(composed, node, config) == 0);
  }

  SECTION("one-dimensional input always selects feature 0") {
    const Network net = random_network(702, {1, 6, 2});
    const OutputSpec spec = argmax_spec(2, 0);
    const auto node =
        make_node(net, spec, box_region(Box(Vec::Constant(1, -1.0), Vec::Ones(1))), aconfig, 2);
    CHECK(select_input_feature(compose_spec(net, spec), node, config) == 0);
  }

  SECTION("symmetric nets break ties toward the lowest feature") {
    Network net = random_network(703, {2, 10, 2});
    // make every hidden neuron weigh both inputs identically: the network is
    // invariant under swapping x1 and x2
    for (int j = 0; j < 10; ++j) {
      const double w = net.layers[0].weights(j, 0);
      net.layers[0].weights(j, 1) = w;
    }
    const OutputSpec spec = argmax_spec(2, 0);
    const auto node = make_node(net, spec, box_region(Box(Vec::Constant(2, -1.0), Vec::Ones(2))),
                                aconfig, 3);
    CHECK(select_input_feature(compose_spec(net, spec), node, config) == 0);
  }

  SECTION("longest edge fallback") {
    config.input_select = InputSelect::LongestEdge;
    const Network net = random_network(704, {2, 6, 2});
    const OutputSpec spec = argmax_spec(2, 0);
    Box box(Vec::Zero(2), (Vec(2) << 1.0, 3.0).finished());
    const auto node = make_node(net, spec, box_region(box), aconfig, 4);
    CHECK(select_input_feature(compose_spec(net, spec), node, config) == 1);
  }

  SECTION("zero-width features are excluded") {
    const Network net = random_network(705, {2, 6, 2});
    const OutputSpec spec = argmax_spec(2, 0);
    Box box((Vec(2) << 0.0, 1.0).finished(), (Vec(2) << 2.0, 1.0).finished());
    const auto node = make_node(net, spec, box_region(box), aconfig, 5);
    CHECK(select_input_feature(compose_spec(net, spec), node, config) == 0);

    Box degenerate(Vec::Ones(2), Vec::Ones(2));
    const auto deg_node = make_node(net, spec, box_region(degenerate), aconfig, 6);
    CHECK_THROWS_AS(select_input_feature(compose_spec(net, spec), deg_node, config), Error);
  }
}

TEST_CASE("select_relu_node") {
  SECTION("the most sign-balanced unstable neuron wins") {
    // h0 = x - 1 (balanced on [0, 2]), h1 = x - 1.9 (lopsided)
    Network net;
    net.input_dim = 1;
    net.output_dim = 1;
    Mat w1(2, 1);
    w1 << 1, 1;
    net.layers.push_back({w1, (Vec(2) << -1.0, -1.9).finished(), Activation::ReLU});
    net.layers.push_back({Mat::Ones(1, 2), Vec::Zero(1), Activation::None});
    net.validate();
    OutputSpec spec;
    spec.constraints.push_back({Vec::Ones(1), 0.0});
    ApproxConfig aconfig;
    aconfig.n_samples = 5000;
    aconfig.opt_steps = 0;
    const auto node = make_node(net, spec,
                                box_region(Box(Vec::Zero(1), Vec::Constant(1, 2.0))), aconfig, 7);
    const auto picked = select_relu_node(compose_spec(net, spec), node);
    REQUIRE(picked.has_value());
    CHECK(picked->first == 0);
    CHECK(picked->second == 0);
  }

  SECTION("all-stable regions signal AllReLUSplit") {
    Network net;
    net.input_dim = 1;
    net.output_dim = 1;
    net.layers.push_back({Mat::Constant(1, 1, 1.0), Vec::Constant(1, 5.0), Activation::ReLU});
    net.layers.push_back({Mat::Constant(1, 1, 1.0), Vec::Zero(1), Activation::None});
    net.validate();
    OutputSpec spec;
    spec.constraints.push_back({Vec::Ones(1), 0.0});
    ApproxConfig aconfig;
    aconfig.n_samples = 200;
    aconfig.opt_steps = 0;
    const auto node =
        make_node(net, spec, box_region(Box(Vec::Zero(1), Vec::Ones(1))), aconfig, 8);
    CHECK_FALSE(select_relu_node(compose_spec(net, spec), node).has_value());
  }

  SECTION("already-split neurons are skipped") {
    Network net;
    net.input_dim = 1;
    net.output_dim = 1;
    Mat w1(2, 1);
    w1 << 1, 1;
    net.layers.push_back({w1, (Vec(2) << -1.0, -1.2).finished(), Activation::ReLU});
    net.layers.push_back({Mat::Ones(1, 2), Vec::Zero(1), Activation::None});
    net.validate();
    OutputSpec spec;
    spec.constraints.push_back({Vec::Ones(1), 0.0});
    ApproxConfig aconfig;
    aconfig.n_samples = 1000;
    aconfig.opt_steps = 0;
    Subregion region = box_region(Box(Vec::Zero(1), Vec::Constant(1, 2.0)));
    region.splits.push_back({0, 0, SplitSign::NonNeg});
    const auto node = make_node(net, spec, region, aconfig, 9);
    const auto picked = select_relu_node(compose_spec(net, spec), node);
    REQUIRE(picked.has_value());
    CHECK(picked->second == 1);
  }
}

TEST_CASE("split_subregion") {
  const Subregion region = box_region(Box(Vec::Zero(2), Vec::Constant(2, 2.0)), 5);

  SECTION("feature bisection") {
    SplitChoice choice;
    choice.kind = SplitChoice::Feature;
    choice.feature = 0;
    const auto [a, b] = split_subregion(region, choice);
    CHECK(a.box.upper[0] == 1.0);
    CHECK(a.box.upper[1] == 2.0);
    CHECK(b.box.lower[0] == 1.0);
    CHECK(a.id == 10);
    CHECK(b.id == 11);
  }

  SECTION("relu split extends the split lists by one") {
    SplitChoice choice;
    choice.kind = SplitChoice::Neuron;
    choice.layer = 0;
    choice.neuron = 3;
    const auto [a, b] = split_subregion(region, choice);
    REQUIRE(a.splits.size() == 1);
    REQUIRE(b.splits.size() == 1);
    CHECK(a.splits[0].sign == SplitSign::NonNeg);
    CHECK(b.splits[0].sign == SplitSign::Neg);
    CHECK(a.box.volume() == region.box.volume());

    SECTION("re-splitting the same neuron is rejected") {
      CHECK_THROWS_AS(split_subregion(a, choice), Error);
    }
  }
}

TEST_CASE("split_halfspaces") {
  SECTION("exact affine pre-activation reduces to a single plane") {
    // first-layer neuron: bounds coincide with the function itself
    AffineBound h{(Vec(2) << -0.99, -1.0).finished(), 0.97};
    const auto [under_pos, under_neg] = split_halfspaces(h, h, ApproxMode::Under);
    const auto [over_pos, over_neg] = split_halfspaces(h, h, ApproxMode::Over);
    CHECK(under_pos.a == h.a);
    CHECK(under_pos.b == h.b);
    CHECK(under_neg.a == (-h.a).eval());
    CHECK(under_neg.b == -h.b);
    CHECK(over_pos.a == under_pos.a);
    CHECK(over_neg.b == under_neg.b);
  }

  SECTION("under-mode children exclude each other") {
    AffineBound lo{(Vec(2) << 1.0, 0.2).finished(), -0.6};
    AffineBound hi{(Vec(2) << 1.0, 0.2).finished(), -0.2};  // hi >= lo pointwise
    const auto [pos, neg] = split_halfspaces(lo, hi, ApproxMode::Under);
    const Box box(Vec::Zero(2), Vec::Ones(2));
    for (const auto& x : sample_box(box, 10000, 11)) {
      CHECK_FALSE((pos.satisfied(x) && neg.satisfied(x)));
    }
  }

  SECTION("over-mode children jointly cover the region") {
    AffineBound lo{(Vec(2) << 1.0, 0.2).finished(), -0.6};
    AffineBound hi{(Vec(2) << 1.0, 0.2).finished(), -0.2};
    const auto [pos, neg] = split_halfspaces(lo, hi, ApproxMode::Over);
    const Box box(Vec::Zero(2), Vec::Ones(2));
    for (const auto& x : sample_box(box, 10000, 12)) {
      CHECK((pos.satisfied(x) || neg.satisfied(x)));
    }
  }
}

TEST_CASE("refine_preimage") {
  SECTION("zero iterations returns the root polytope alone") {
    const Network net = random_network(801, {2, 12, 2});
    const OutputSpec spec = argmax_spec(2, 0);
    RefineConfig config;
    config.max_iterations = 0;
    config.approx.n_samples = 1000;
    config.target_coverage = 0.99;
    const auto res =
        refine_preimage(net, spec, Box(Vec::Constant(2, -1.0), Vec::Ones(2)), config);
    CHECK(res.stats.num_polytopes == 1);
    CHECK(res.stats.iterations == 0);
  }

  SECTION("affine network reaches full coverage at iteration zero") {
    Network net;
    net.input_dim = 2;
    net.output_dim = 1;
    Mat w(1, 2);
    w << 1, -1;
    net.layers.push_back({w, Vec::Zero(1), Activation::None});
    net.validate();
    OutputSpec spec;
    spec.constraints.push_back({Vec::Ones(1), 0.0});
    RefineConfig config;
    config.approx.n_samples = 1000;
    config.target_coverage = 1.0;
    const auto res = refine_preimage(net, spec, Box(Vec::Zero(2), Vec::Ones(2)), config);
    CHECK(res.stats.status == "target_met");
    CHECK(res.stats.iterations == 0);
    CHECK(res.stats.coverage_trace.front() == 1.0);
  }

  SECTION("empty preimage terminates with the distinguished status") {
    const Network net = random_network(802, {2, 8, 2});
    OutputSpec spec;
    spec.constraints.push_back({Vec::Zero(2), -1.0});  // infeasible
    RefineConfig config;
    config.approx.n_samples = 500;
    const auto res = refine_preimage(net, spec, Box(Vec::Zero(2), Vec::Ones(2)), config);
    CHECK(res.stats.status == "empty_preimage");
  }

  SECTION("input refinement on the parking net meets the coverage target") {
    const Network net = load_network(fixture_path("parking_2x20x4.json"));
    const OutputSpec spec = argmax_spec(4, 0);
    RefineConfig config;
    config.target_coverage = 0.9;
    config.max_iterations = 200;
    config.approx.n_samples = 4000;
    config.seed = 7;
    const auto res =
        refine_preimage(net, spec, Box(Vec::Zero(2), Vec::Constant(2, 2.0)), config);
    CHECK(res.stats.status == "target_met");
    CHECK(res.final_ratio >= 0.9);
    // trace may wiggle by sampling noise only
    const double se = std::sqrt(0.25 / static_cast<double>(res.denom_hits));
    for (std::size_t i = 1; i < res.stats.coverage_trace.size(); ++i)
      CHECK(res.stats.coverage_trace[i] >=
            res.stats.coverage_trace[i - 1] - 2.0 * se);

    SECTION("leaf boxes tile the root box") {
      double total = 0.0;
      for (const auto& poly : res.approximation.polytopes) total += poly.box.volume();
      CHECK(total == Catch::Approx(4.0).margin(1e-9));
      for (const auto& x : sample_box(Box(Vec::Zero(2), Vec::Constant(2, 2.0)), 500, 3)) {
        int strictly_inside = 0;
        for (const auto& poly : res.approximation.polytopes) {
          bool strict = true;
          for (int i = 0; i < 2; ++i)
            if (x[i] <= poly.box.lower[i] || x[i] >= poly.box.upper[i]) strict = false;
          if (strict) ++strictly_inside;
        }
        CHECK(strictly_inside <= 1);
      }
    }
  }

  SECTION("monotone coverage trace with opt_steps = 0") {
    for (std::uint64_t seed : {811u, 812u}) {
      const Network net = random_network(seed, {2, 16, 2});
      const OutputSpec spec = argmax_spec(2, 0);
      RefineConfig config;
      config.target_coverage = 1.0;
      config.max_iterations = 30;
      config.approx.n_samples = 1000;
      config.approx.opt_steps = 0;
      config.seed = seed;
      const auto res =
          refine_preimage(net, spec, Box(Vec::Constant(2, -1.0), Vec::Ones(2)), config);
      for (std::size_t i = 1; i < res.stats.coverage_trace.size(); ++i)
        CHECK(res.stats.coverage_trace[i] >= res.stats.coverage_trace[i - 1]);
    }
  }

  SECTION("relu-split refinement is sound and can stabilize fully") {
    const Network net = random_network(821, {2, 6, 2});
    const OutputSpec spec = argmax_spec(2, 0);
    RefineConfig config;
    config.split_strategy = SplitStrategy::ReLU;
    config.target_coverage = 1.0;
    config.max_iterations = 400;
    config.approx.n_samples = 1500;
    config.seed = 5;
    const auto res =
        refine_preimage(net, spec, Box(Vec::Constant(2, -1.0), Vec::Ones(2)), config);
    CHECK((res.stats.status == "all_relu_split" || res.stats.status == "target_met"));
    std::size_t overlaps = 0;
    for (const auto& x : sample_box(Box(Vec::Constant(2, -1.0), Vec::Ones(2)), 20000, 6)) {
      if (res.approximation.contains(x)) CHECK(spec.satisfied(net.forward(x)));
      // members of an under-mode union may only share boundary points
      int strictly_inside = 0;
      for (const auto& poly : res.approximation.polytopes) {
        bool strict = poly.box.contains(x);
        for (const auto& h : poly.halfspaces)
          if (h.a.dot(x) + h.b <= 0.0) strict = false;
        if (strict) ++strictly_inside;
      }
      if (strictly_inside > 1) ++overlaps;
    }
    CHECK(overlaps == 0);
  }

  SECTION("over mode with relu splits keeps covering the preimage") {
    const Network net = random_network(821, {2, 6, 2});
    const OutputSpec spec = argmax_spec(2, 0);
    RefineConfig config;
    config.approx.mode = ApproxMode::Over;
    config.split_strategy = SplitStrategy::ReLU;
    config.target_coverage = 1.05;
    config.max_iterations = 100;
    config.approx.n_samples = 1500;
    config.seed = 21;
    const Box box(Vec::Constant(2, -1.0), Vec::Ones(2));
    const auto res = refine_preimage(net, spec, box, config);
    std::size_t missed = 0;
    for (const auto& x : sample_box(box, 20000, 22)) {
      if (spec.satisfied(net.forward(x)) && !res.approximation.contains(x)) ++missed;
    }
    CHECK(missed == 0);
  }

  SECTION("over mode shrinks toward the preimage") {
    const Network net = random_network(831, {2, 12, 2});
    const OutputSpec spec = argmax_spec(2, 0);
    RefineConfig config;
    config.approx.mode = ApproxMode::Over;
    config.target_coverage = 1.1;
    config.max_iterations = 60;
    config.approx.n_samples = 2000;
    config.seed = 9;
    const Box box(Vec::Constant(2, -1.0), Vec::Ones(2));
    const auto res = refine_preimage(net, spec, box, config);
    // soundness: nothing in the true preimage is missed
    for (const auto& x : sample_box(box, 20000, 10)) {
      if (spec.satisfied(net.forward(x))) CHECK(res.approximation.contains(x));
    }
    if (res.stats.status == "target_met") CHECK(res.final_ratio <= 1.1);
  }

  SECTION("identical seeds give identical unions") {
    const Network net = random_network(841, {2, 10, 2});
    const OutputSpec spec = argmax_spec(2, 1);
    RefineConfig config;
    config.target_coverage = 0.95;
    config.max_iterations = 12;
    config.approx.n_samples = 800;
    config.seed = 4242;
    const Box box(Vec::Constant(2, -1.0), Vec::Ones(2));
    const auto a = refine_preimage(net, spec, box, config);
    const auto b = refine_preimage(net, spec, box, config);
    const Json ja = union_to_json(a.approximation);
    const Json jb = union_to_json(b.approximation);
    CHECK(ja.dump() == jb.dump());
  }
}
