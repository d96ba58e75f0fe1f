#ifndef PREMAP_JSON_IO_HPP
#define PREMAP_JSON_IO_HPP

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "premap/common.hpp"
#include "premap/geometry.hpp"
#include "premap/model.hpp"
#include "premap/quant.hpp"
#include "premap/refine.hpp"

namespace premap {

using Json = nlohmann::json;

namespace detail {

inline Vec vec_from_json(const Json& j) {
  Vec v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v[i] = j[i].get<double>();
  return v;
}

inline Json vec_to_json(const Vec& v) {
  Json j = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(v[i]);
  return j;
}

}  // namespace detail

/// Parses the network JSON format:
/// {"input_dim": int, "layers": [{"weights": [[...]], "bias": [...],
///   "activation": "relu"|"none"}]}
/// Weights are row-major: one inner list per output neuron.
inline Network network_from_json(const Json& j) {
  Network net;
  if (!j.contains("input_dim") || !j.contains("layers"))
    throw LoadError("network JSON must contain input_dim and layers");
  net.input_dim = j.at("input_dim").get<int>();
  const Json& layers = j.at("layers");
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const Json& lj = layers[k];
    AffineLayer layer;
    try {
      const Json& rows = lj.at("weights");
      const std::size_t out_w = rows.size();
      const std::size_t in_w = out_w > 0 ? rows[0].size() : 0;
      layer.weights = Mat(out_w, in_w);
      for (std::size_t r = 0; r < out_w; ++r) {
        if (rows[r].size() != in_w)
          throw LoadError("ragged weight rows");
        for (std::size_t c = 0; c < in_w; ++c)
          layer.weights(r, c) = rows[r][c].get<double>();
      }
      layer.bias = detail::vec_from_json(lj.at("bias"));
      const std::string act = lj.at("activation").get<std::string>();
      if (act == "relu")
        layer.activation = Activation::ReLU;
      else if (act == "none")
        layer.activation = Activation::None;
      else
        throw LoadError("unsupported activation \"" + act + "\"");
    } catch (const Json::exception& e) {
      throw LoadError("layer " + std::to_string(k) + ": " + e.what());
    } catch (const LoadError& e) {
      throw LoadError("layer " + std::to_string(k) + ": " + e.what());
    }
    net.layers.push_back(std::move(layer));
  }
  if (net.layers.empty()) throw LoadError("network JSON has no layers");
  net.output_dim = net.layers.back().out_width();
  net.validate();
  return net;
}

inline Json network_to_json(const Network& net) {
  Json j;
  j["input_dim"] = net.input_dim;
  Json layers = Json::array();
  for (const auto& layer : net.layers) {
    Json lj;
    Json rows = Json::array();
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      Json row = Json::array();
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c)
        row.push_back(layer.weights(r, c));
      rows.push_back(std::move(row));
    }
    lj["weights"] = std::move(rows);
    lj["bias"] = detail::vec_to_json(layer.bias);
    lj["activation"] = layer.activation == Activation::ReLU ? "relu" : "none";
    layers.push_back(std::move(lj));
  }
  j["layers"] = std::move(layers);
  return j;
}

inline Network load_network(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open network file: " + path);
  Json j;
  try {
    in >> j;
  } catch (const Json::exception& e) {
    throw LoadError("parse failure in " + path + ": " + e.what());
  }
  return network_from_json(j);
}

inline Json box_to_json(const Box& box) {
  return Json{{"lower", detail::vec_to_json(box.lower)},
              {"upper", detail::vec_to_json(box.upper)}};
}

inline Box box_from_json(const Json& j) {
  return Box(detail::vec_from_json(j.at("lower")), detail::vec_from_json(j.at("upper")));
}

inline Json halfspace_to_json(const HalfSpace& h) {
  return Json{{"a", detail::vec_to_json(h.a)}, {"b", h.b}};
}

inline HalfSpace halfspace_from_json(const Json& j) {
  return {detail::vec_from_json(j.at("a")), j.at("b").get<double>()};
}

inline Json union_to_json(const PolytopeUnion& u) {
  Json j;
  j["mode"] = to_string(u.mode);
  Json polys = Json::array();
  for (const auto& p : u.polytopes) {
    Json pj;
    pj["box"] = box_to_json(p.box);
    Json hs = Json::array();
    for (const auto& h : p.halfspaces) hs.push_back(halfspace_to_json(h));
    pj["halfspaces"] = std::move(hs);
    polys.push_back(std::move(pj));
  }
  j["polytopes"] = std::move(polys);
  return j;
}

inline PolytopeUnion union_from_json(const Json& j) {
  PolytopeUnion u;
  u.mode = j.at("mode").get<std::string>() == "over" ? ApproxMode::Over : ApproxMode::Under;
  for (const auto& pj : j.at("polytopes")) {
    Polytope p;
    p.box = box_from_json(pj.at("box"));
    for (const auto& hj : pj.at("halfspaces")) p.halfspaces.push_back(halfspace_from_json(hj));
    u.polytopes.push_back(std::move(p));
  }
  return u;
}

inline Json stats_to_json(const RunStats& stats) {
  Json j;
  j["iterations"] = stats.iterations;
  j["coverage_trace"] = stats.coverage_trace;
  j["num_polytopes"] = stats.num_polytopes;
  j["wall_ms"] = stats.wall_ms;
  j["status"] = stats.status;
  return j;
}

inline Json output_spec_to_json(const OutputSpec& spec) {
  Json arr = Json::array();
  for (const auto& cons : spec.constraints)
    arr.push_back(Json{{"c", detail::vec_to_json(cons.c)}, {"d", cons.d}});
  return arr;
}

inline OutputSpec output_spec_from_json(const Json& j) {
  OutputSpec spec;
  for (const auto& cj : j)
    spec.constraints.push_back({detail::vec_from_json(cj.at("c")), cj.at("d").get<double>()});
  return spec;
}

/// Problem file: input box, optional input half-spaces, output constraints.
struct Problem {
  Box input_box;
  std::vector<HalfSpace> input_halfspaces;
  OutputSpec output_spec;
};

inline Problem problem_from_json(const Json& j) {
  Problem p;
  p.input_box = box_from_json(j.at("input_box"));
  if (j.contains("input_halfspaces"))
    for (const auto& hj : j.at("input_halfspaces"))
      p.input_halfspaces.push_back(halfspace_from_json(hj));
  p.output_spec = output_spec_from_json(j.at("output_constraints"));
  return p;
}

inline QuantProperty property_from_json(const Json& j) {
  QuantProperty prop;
  prop.input_box = box_from_json(j.at("input_box"));
  if (j.contains("input_halfspaces"))
    for (const auto& hj : j.at("input_halfspaces"))
      prop.input_halfspaces.push_back(halfspace_from_json(hj));
  prop.output_spec = output_spec_from_json(j.at("output_constraints"));
  prop.p = j.at("p").get<double>();
  return prop;
}

inline Json verdict_to_json(const Verdict& v) {
  Json j;
  j["verdict"] = to_string(v.value);
  j["achieved_proportion"] = v.achieved_proportion;
  j["standard_error"] = v.standard_error;
  if (v.value == VerdictValue::False) j["residual_gap"] = v.residual_gap;
  j["stats"] = stats_to_json(v.stats);
  return j;
}

inline Json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open file: " + path);
  Json j;
  try {
    in >> j;
  } catch (const Json::exception& e) {
    throw Error("parse failure in " + path + ": " + e.what());
  }
  return j;
}

inline void write_json(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open file for writing: " + path);
  out << j.dump(2) << "\n";
}

}  // namespace premap

#endif  // PREMAP_JSON_IO_HPP
