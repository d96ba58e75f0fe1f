#ifndef PREMAP_TESTS_TEST_UTIL_HPP
#define PREMAP_TESTS_TEST_UTIL_HPP

#include <cmath>
#include <string>
#include <vector>

#include "premap/model.hpp"
#include "premap/rng.hpp"

namespace premap::testing {

inline std::string fixture_path(const std::string& name) {
  return std::string(PREMAP_FIXTURE_DIR) + "/" + name;
}

class Gaussian {
 public:
  explicit Gaussian(std::uint64_t seed) : rng_(seed) {}

  double operator()() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = rng_.uniform();
    while (u1 <= 0.0) u1 = rng_.uniform();
    const double u2 = rng_.uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    have_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }

 private:
  Rng rng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// Fully-connected ReLU net with Gaussian weights, std sqrt(2/fan_in).
inline Network random_network(std::uint64_t seed, const std::vector<int>& widths) {
  Gaussian g(seed);
  Network net;
  net.input_dim = widths.front();
  net.output_dim = widths.back();
  for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
    const int in = widths[k], out = widths[k + 1];
    Mat w(out, in);
    Vec b(out);
    const double scale = std::sqrt(2.0 / in);
    for (int r = 0; r < out; ++r) {
      for (int c = 0; c < in; ++c) w(r, c) = scale * g();
      b[r] = 0.2 * g();
    }
    const bool last = (k + 2 == widths.size());
    net.layers.push_back({std::move(w), std::move(b),
                          last ? Activation::None : Activation::ReLU});
  }
  net.validate();
  return net;
}

/// All constraints y_k - y_i >= 0, i != k (argmax-class output set).
inline OutputSpec argmax_spec(int num_outputs, int k) {
  OutputSpec spec;
  for (int i = 0; i < num_outputs; ++i) {
    if (i == k) continue;
    Vec c = Vec::Zero(num_outputs);
    c[k] = 1.0;
    c[i] = -1.0;
    spec.constraints.push_back({std::move(c), 0.0});
  }
  return spec;
}

/// Plain per-neuron re-evaluation with scalar loops; deliberately avoids the
/// library's Eigen-based forward path.
inline std::vector<double> forward_scalar_oracle(const Network& net,
                                                 const std::vector<double>& x) {
  std::vector<double> cur = x;
  for (const auto& layer : net.layers) {
    std::vector<double> next(layer.out_width(), 0.0);
    for (int r = 0; r < layer.out_width(); ++r) {
      double acc = layer.bias[r];
      for (int c = 0; c < layer.in_width(); ++c) acc += layer.weights(r, c) * cur[c];
      if (layer.activation == Activation::ReLU && acc < 0.0) acc = 0.0;
      next[r] = acc;
    }
    cur = std::move(next);
  }
  return cur;
}

}  // namespace premap::testing

#endif  // PREMAP_TESTS_TEST_UTIL_HPP
