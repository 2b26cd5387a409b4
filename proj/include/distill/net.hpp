#pragma once

// Declarative sequential networks: specs, seeded instantiation, forward
// passes with named-layer taps, splitting, and freezing.

#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "distill/ops.hpp"
#include "distill/rng.hpp"
#include "distill/tensor.hpp"

namespace distill {

enum class LayerKind { conv, maxpool, relu, linear, flatten, scale };

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::relu: return "relu";
    case LayerKind::linear: return "linear";
    case LayerKind::flatten: return "flatten";
    case LayerKind::scale: return "scale";
  }
  return "?";
}

inline LayerKind layer_kind_from_name(const std::string& s) {
  if (s == "conv") return LayerKind::conv;
  if (s == "maxpool") return LayerKind::maxpool;
  if (s == "relu") return LayerKind::relu;
  if (s == "linear") return LayerKind::linear;
  if (s == "flatten") return LayerKind::flatten;
  if (s == "scale") return LayerKind::scale;
  throw std::invalid_argument("unknown layer kind '" + s + "'");
}

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::relu;
  int out_channels = 0;  // conv
  int kernel = 0;        // conv, maxpool
  int stride = 1;        // conv, maxpool
  int pad = 0;           // conv
  int out_features = 0;  // linear

  static LayerSpec conv(std::string name, int out_channels, int kernel,
                        int stride = 1, int pad = 0) {
    LayerSpec l;
    l.name = std::move(name);
    l.kind = LayerKind::conv;
    l.out_channels = out_channels;
    l.kernel = kernel;
    l.stride = stride;
    l.pad = pad;
    return l;
  }
  static LayerSpec maxpool(std::string name, int kernel, int stride) {
    LayerSpec l;
    l.name = std::move(name);
    l.kind = LayerKind::maxpool;
    l.kernel = kernel;
    l.stride = stride;
    return l;
  }
  static LayerSpec relu(std::string name) {
    LayerSpec l;
    l.name = std::move(name);
    l.kind = LayerKind::relu;
    return l;
  }
  static LayerSpec linear(std::string name, int out_features) {
    LayerSpec l;
    l.name = std::move(name);
    l.kind = LayerKind::linear;
    l.out_features = out_features;
    return l;
  }
  static LayerSpec flatten(std::string name) {
    LayerSpec l;
    l.name = std::move(name);
    l.kind = LayerKind::flatten;
    return l;
  }
  static LayerSpec scale(std::string name) {
    LayerSpec l;
    l.name = std::move(name);
    l.kind = LayerKind::scale;
    return l;
  }
};

/// Ordered layer sequence plus the per-sample input shape (CHW for image
/// networks, a single dimension for vector inputs).
struct NetworkSpec {
  Shape input_shape;
  std::vector<LayerSpec> layers;

  int index_of(const std::string& name) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].name == name) return static_cast<int>(i);
    }
    return -1;
  }

  bool has_layer(const std::string& name) const { return index_of(name) >= 0; }
};

/// Per-sample output shape of every layer, checked symbolically. Throws
/// naming the offending layer when shapes do not compose.
inline std::vector<Shape> propagate_shapes(const NetworkSpec& spec) {
  auto fail = [](const LayerSpec& l, const std::string& why) {
    throw std::invalid_argument("layer '" + l.name + "' (" +
                                layer_kind_name(l.kind) + "): " + why);
  };
  if (spec.input_shape.empty()) {
    throw std::invalid_argument("network spec: input_shape is empty");
  }
  std::set<std::string> names;
  for (const auto& l : spec.layers) {
    if (l.name.empty()) throw std::invalid_argument("network spec: unnamed layer");
    if (!names.insert(l.name).second) {
      throw std::invalid_argument("network spec: duplicate layer name '" +
                                  l.name + "'");
    }
  }

  std::vector<Shape> out;
  Shape cur = spec.input_shape;
  for (const auto& l : spec.layers) {
    switch (l.kind) {
      case LayerKind::conv: {
        if (cur.size() != 3) fail(l, "needs a CxHxW input, got " + shape_str(cur));
        if (l.out_channels < 1 || l.kernel < 1 || l.stride < 1 || l.pad < 0) {
          fail(l, "invalid hyperparameters");
        }
        const int H = cur[1] + 2 * l.pad, W = cur[2] + 2 * l.pad;
        if (H < l.kernel || W < l.kernel) {
          fail(l, "kernel " + std::to_string(l.kernel) +
                      " exceeds padded input " + shape_str(cur));
        }
        cur = {l.out_channels, (H - l.kernel) / l.stride + 1,
               (W - l.kernel) / l.stride + 1};
        break;
      }
      case LayerKind::maxpool: {
        if (cur.size() != 3) fail(l, "needs a CxHxW input, got " + shape_str(cur));
        if (l.kernel < 1 || l.stride < 1) fail(l, "invalid hyperparameters");
        if (cur[1] < l.kernel || cur[2] < l.kernel) {
          fail(l, "window " + std::to_string(l.kernel) + " exceeds input " +
                      shape_str(cur));
        }
        cur = {cur[0], (cur[1] - l.kernel) / l.stride + 1,
               (cur[2] - l.kernel) / l.stride + 1};
        break;
      }
      case LayerKind::relu:
      case LayerKind::scale:
        break;
      case LayerKind::flatten: {
        int n = 1;
        for (int d : cur) n *= d;
        cur = {n};
        break;
      }
      case LayerKind::linear: {
        if (cur.size() != 1) {
          fail(l, "needs a flattened input, got " + shape_str(cur));
        }
        if (l.out_features < 1) fail(l, "invalid hyperparameters");
        cur = {l.out_features};
        break;
      }
    }
    out.push_back(cur);
  }
  return out;
}

enum class InitKind { gaussian_fan_in, zeros };

/// An instantiated network: spec plus named parameter tensors.
struct Network {
  NetworkSpec spec;
  // layer name -> param name ("weight", "bias", "scale") -> tensor
  std::map<std::string, std::map<std::string, Tensor>> params;
  std::string modality_tag;

  /// Parameters in layer order, names "layer.param".
  NamedParams parameters() const {
    NamedParams out;
    for (const auto& l : spec.layers) {
      auto it = params.find(l.name);
      if (it == params.end()) continue;
      for (const char* pname : {"weight", "bias", "scale"}) {
        auto jt = it->second.find(pname);
        if (jt != it->second.end()) {
          out.emplace_back(l.name + "." + pname, jt->second);
        }
      }
    }
    return out;
  }

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : parameters()) n += t.numel();
    return n;
  }
};

/// Instantiates parameters from the spec. Conv and linear weights draw from
/// N(0, 2/fan_in) via one SplitMix64 stream seeded with `seed`, consumed in
/// layer order, element order, two u64 draws per gaussian; biases start at 0
/// and scale layers at 1. The same (spec, seed) always yields bit-identical
/// parameters.
inline Network build_network(const NetworkSpec& spec, InitKind init,
                             std::uint64_t seed, std::string modality_tag = "") {
  const auto shapes = propagate_shapes(spec);
  Network net;
  net.spec = spec;
  net.modality_tag = std::move(modality_tag);
  SplitMix64 rng(seed);

  Shape cur = spec.input_shape;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    if (l.kind == LayerKind::conv) {
      const int fan_in = cur[0] * l.kernel * l.kernel;
      Tensor w = Tensor::zeros({l.out_channels, cur[0], l.kernel, l.kernel});
      if (init == InitKind::gaussian_fan_in) {
        const double std_dev = std::sqrt(2.0 / fan_in);
        for (auto& v : w.data()) v = std_dev * rng.next_gaussian();
      }
      w.set_requires_grad(true);
      Tensor b = Tensor::zeros({l.out_channels});
      b.set_requires_grad(true);
      net.params[l.name] = {{"weight", w}, {"bias", b}};
    } else if (l.kind == LayerKind::linear) {
      const int fan_in = cur[0];
      Tensor w = Tensor::zeros({fan_in, l.out_features});
      if (init == InitKind::gaussian_fan_in) {
        const double std_dev = std::sqrt(2.0 / fan_in);
        for (auto& v : w.data()) v = std_dev * rng.next_gaussian();
      }
      w.set_requires_grad(true);
      Tensor b = Tensor::zeros({l.out_features});
      b.set_requires_grad(true);
      net.params[l.name] = {{"weight", w}, {"bias", b}};
    } else if (l.kind == LayerKind::scale) {
      Tensor s = Tensor::filled({1}, 1.0);
      s.set_requires_grad(true);
      net.params[l.name] = {{"scale", s}};
    }
    cur = shapes[i];
  }
  return net;
}

struct ForwardResult {
  Tensor output;
  std::map<std::string, Tensor> features;  // post-layer outputs of the taps
};

namespace detail {

inline Tensor apply_layer(const Network& net, const LayerSpec& l, const Tensor& x) {
  switch (l.kind) {
    case LayerKind::conv:
      return conv2d(x, net.params.at(l.name).at("weight"),
                    net.params.at(l.name).at("bias"), l.stride, l.pad);
    case LayerKind::maxpool:
      return maxpool2d(x, l.kernel, l.stride);
    case LayerKind::relu:
      return relu(x);
    case LayerKind::flatten:
      return flatten2d(x);
    case LayerKind::linear:
      return linear(x, net.params.at(l.name).at("weight"),
                    net.params.at(l.name).at("bias"));
    case LayerKind::scale:
      return scale_mul(x, net.params.at(l.name).at("scale"));
  }
  throw std::logic_error("unreachable layer kind");
}

}  // namespace detail

/// Runs the network on a batch (leading N dimension prepended to the spec's
/// per-sample input shape) and returns the final output plus the
/// post-activation tensor of every tapped layer.
inline ForwardResult forward(const Network& net, const Tensor& input,
                             const std::set<std::string>& taps = {}) {
  const auto& is = input.shape();
  Shape per_sample(is.begin() + 1, is.end());
  if (is.size() < 2 || per_sample != net.spec.input_shape) {
    throw std::invalid_argument("forward: input " + shape_str(is) +
                                " does not match spec input " +
                                shape_str(net.spec.input_shape) +
                                " with a leading batch dimension");
  }
  for (const auto& t : taps) {
    if (!net.spec.has_layer(t)) {
      throw std::invalid_argument("forward: unknown tap layer '" + t + "'");
    }
  }
  ForwardResult res;
  Tensor x = input;
  for (const auto& l : net.spec.layers) {
    x = detail::apply_layer(net, l, x);
    if (taps.count(l.name)) res.features[l.name] = x;
  }
  res.output = x;
  return res;
}

/// Splits into (layers[0..at], layers[at+1..]). Parameter tensors are shared
/// views, not copies, so recomposition is exact and frozen flags propagate.
inline std::pair<Network, Network> split_network(const Network& net,
                                                 const std::string& at) {
  const int idx = net.spec.index_of(at);
  if (idx < 0) {
    throw std::invalid_argument("split_network: unknown layer '" + at + "'");
  }
  if (idx == 0 || idx + 1 == static_cast<int>(net.spec.layers.size())) {
    throw std::invalid_argument(
        "split_network: cannot split at boundary layer '" + at + "'");
  }
  const auto shapes = propagate_shapes(net.spec);

  Network lower, upper;
  lower.spec.input_shape = net.spec.input_shape;
  lower.modality_tag = net.modality_tag;
  upper.spec.input_shape = shapes[idx];
  upper.modality_tag = net.modality_tag;
  for (int i = 0; i < static_cast<int>(net.spec.layers.size()); ++i) {
    const auto& l = net.spec.layers[i];
    Network& dst = i <= idx ? lower : upper;
    dst.spec.layers.push_back(l);
    auto it = net.params.find(l.name);
    if (it != net.params.end()) dst.params[l.name] = it->second;
  }
  return {std::move(lower), std::move(upper)};
}

/// Marks parameters of layers[0..at] as frozen; sgd_step leaves them
/// bit-unchanged thereafter.
inline Network& freeze(Network& net, const std::string& below_and_including) {
  const int idx = net.spec.index_of(below_and_including);
  if (idx < 0) {
    throw std::invalid_argument("freeze: unknown layer '" + below_and_including +
                                "'");
  }
  for (int i = 0; i <= idx; ++i) {
    auto it = net.params.find(net.spec.layers[i].name);
    if (it == net.params.end()) continue;
    for (auto& [pname, t] : it->second) t.set_requires_grad(false);
  }
  return net;
}

// --- spec JSON (used by checkpoints and config files) ---

inline nlohmann::json layer_to_json(const LayerSpec& l) {
  nlohmann::json j;
  j["name"] = l.name;
  j["kind"] = layer_kind_name(l.kind);
  switch (l.kind) {
    case LayerKind::conv:
      j["out_channels"] = l.out_channels;
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      j["pad"] = l.pad;
      break;
    case LayerKind::maxpool:
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      break;
    case LayerKind::linear:
      j["out_features"] = l.out_features;
      break;
    default:
      break;
  }
  return j;
}

inline nlohmann::json spec_to_json(const NetworkSpec& spec) {
  nlohmann::json j;
  j["input_shape"] = spec.input_shape;
  j["layers"] = nlohmann::json::array();
  for (const auto& l : spec.layers) j["layers"].push_back(layer_to_json(l));
  return j;
}

inline LayerSpec layer_from_json(const nlohmann::json& j) {
  LayerSpec l;
  l.name = j.at("name").get<std::string>();
  l.kind = layer_kind_from_name(j.at("kind").get<std::string>());
  switch (l.kind) {
    case LayerKind::conv:
      l.out_channels = j.at("out_channels").get<int>();
      l.kernel = j.at("kernel").get<int>();
      l.stride = j.value("stride", 1);
      l.pad = j.value("pad", 0);
      break;
    case LayerKind::maxpool:
      l.kernel = j.at("kernel").get<int>();
      l.stride = j.at("stride").get<int>();
      break;
    case LayerKind::linear:
      l.out_features = j.at("out_features").get<int>();
      break;
    default:
      break;
  }
  return l;
}

inline NetworkSpec spec_from_json(const nlohmann::json& j) {
  NetworkSpec spec;
  spec.input_shape = j.at("input_shape").get<Shape>();
  for (const auto& lj : j.at("layers")) spec.layers.push_back(layer_from_json(lj));
  return spec;
}

}  // namespace distill
