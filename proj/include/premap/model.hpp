#ifndef PREMAP_MODEL_HPP
#define PREMAP_MODEL_HPP

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "premap/common.hpp"

namespace premap {

enum class Activation { ReLU, None };

struct AffineLayer {
  Mat weights;  // rows = output width, cols = input width
  Vec bias;
  Activation activation = Activation::None;

  int in_width() const { return static_cast<int>(weights.cols()); }
  int out_width() const { return static_cast<int>(weights.rows()); }
};

/// Sequential fully-connected ReLU network: every hidden layer is affine
/// followed by ReLU, the final layer is affine with no activation.
struct Network {
  std::vector<AffineLayer> layers;
  int input_dim = 0;
  int output_dim = 0;

  int num_hidden() const { return static_cast<int>(layers.size()) - 1; }

  /// Throws LoadError naming the offending layer if any invariant fails.
  void validate() const {
    if (layers.empty()) throw LoadError("network has no layers");
    int prev = input_dim;
    for (std::size_t k = 0; k < layers.size(); ++k) {
      const auto& layer = layers[k];
      if (layer.in_width() != prev)
        throw LoadError("layer " + std::to_string(k) + " expects input width " +
                        std::to_string(layer.in_width()) + " but layer " +
                        std::to_string(static_cast<int>(k) - 1) + " produces " +
                        std::to_string(prev));
      if (layer.bias.size() != layer.weights.rows())
        throw LoadError("layer " + std::to_string(k) + " bias length " +
                        std::to_string(layer.bias.size()) + " does not match " +
                        std::to_string(layer.weights.rows()) + " weight rows");
      if (!layer.weights.allFinite() || !layer.bias.allFinite())
        throw LoadError("layer " + std::to_string(k) + " contains a non-finite entry");
      const bool last = (k + 1 == layers.size());
      if (last && layer.activation != Activation::None)
        throw LoadError("final layer " + std::to_string(k) + " must have no activation");
      if (!last && layer.activation != Activation::ReLU)
        throw LoadError("hidden layer " + std::to_string(k) + " must use relu activation");
      prev = layer.out_width();
    }
    if (prev != output_dim)
      throw LoadError("last layer produces width " + std::to_string(prev) +
                      ", expected output_dim " + std::to_string(output_dim));
  }

  Vec forward(const Vec& x) const {
    if (x.size() != input_dim)
      throw DimensionError("forward: input has length " + std::to_string(x.size()) +
                           ", expected " + std::to_string(input_dim));
    Vec z = x;
    for (const auto& layer : layers) {
      z = layer.weights * z + layer.bias;
      if (layer.activation == Activation::ReLU) z = z.cwiseMax(0.0);
    }
    return z;
  }

  /// Pre-activation values of every hidden layer, in order.
  std::vector<Vec> preactivations(const Vec& x) const {
    std::vector<Vec> pre;
    pre.reserve(layers.size());
    Vec z = x;
    for (std::size_t k = 0; k + 1 < layers.size(); ++k) {
      z = layers[k].weights * z + layers[k].bias;
      pre.push_back(z);
      z = z.cwiseMax(0.0);
    }
    return pre;
  }
};

/// Conjunction of output half-space constraints c.y + d >= 0.
struct OutputSpec {
  struct Constraint {
    Vec c;
    double d = 0.0;
  };
  std::vector<Constraint> constraints;

  int size() const { return static_cast<int>(constraints.size()); }

  bool satisfied(const Vec& y) const {
    for (const auto& cons : constraints)
      if (cons.c.dot(y) + cons.d < 0.0) return false;
    return true;
  }
};

/// Appends a linear layer mapping y -> (c_i.y + d_i)_i, so the returned
/// network computes every spec margin g_i(x) = c_i.f(x) + d_i at once.
inline Network compose_spec(const Network& net, const OutputSpec& spec) {
  if (spec.constraints.empty()) throw Error("output spec must have at least one constraint");
  const int k = spec.size();
  Mat w(k, net.output_dim);
  Vec d(k);
  for (int i = 0; i < k; ++i) {
    if (spec.constraints[i].c.size() != net.output_dim)
      throw DimensionError("spec constraint " + std::to_string(i) + " has length " +
                           std::to_string(spec.constraints[i].c.size()) + ", expected " +
                           std::to_string(net.output_dim));
    w.row(i) = spec.constraints[i].c.transpose();
    d[i] = spec.constraints[i].d;
  }
  Network composed = net;
  composed.layers.push_back({std::move(w), std::move(d), Activation::None});
  composed.output_dim = k;
  // Merging into the former output layer would also work; keeping a genuine
  // extra affine layer lets bound propagation treat the margins uniformly.
  return composed;
}

}  // namespace premap

#endif  // PREMAP_MODEL_HPP
