#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "permadrop/neuron.hpp"
#include "permadrop/rng.hpp"

namespace permadrop {

enum class Activation { softlif, linear };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::softlif: return "softlif";
    case Activation::linear: return "linear";
  }
  return "unknown";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "softlif") return Activation::softlif;
  if (s == "linear") return Activation::linear;
  throw std::invalid_argument("unsupported activation '" + s + "'");
}

inline bool is_supported(Activation a) {
  return a == Activation::softlif || a == Activation::linear;
}

struct LayerSpec {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  Activation activation = Activation::softlif;
  double keep_prob = 1.0;  // Bernoulli probability that a unit stays active

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct InputSlice {
  std::string name;
  std::size_t offset = 0;
  std::size_t length = 0;

  friend bool operator==(const InputSlice&, const InputSlice&) = default;
};

/// A tower of layers reading the concatenation of the named input slices.
/// Encoders carrying the same non-empty share_tag use one parameter set.
struct EncoderSpec {
  std::vector<std::string> slices;
  std::vector<LayerSpec> layers;
  std::string share_tag;

  friend bool operator==(const EncoderSpec&, const EncoderSpec&) = default;
};

/// Encoders run side by side and their outputs are concatenated (in
/// encoder order) into the head. With no encoders the head reads the raw
/// input vector. The last head layer is the output layer and never drops.
struct NetworkSpec {
  std::vector<InputSlice> input_slices;
  std::vector<EncoderSpec> encoders;
  std::vector<LayerSpec> head;
  std::size_t output_dim = 1;

  std::size_t input_dim() const {
    std::size_t n = 0;
    for (const auto& s : input_slices) n += s.length;
    return n;
  }

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

/// Dense row-major matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

struct LayerParams {
  Matrix weight;  // out_dim x in_dim
  std::vector<double> bias;

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

/// Learned parameters keyed by parameter key (see param_key). Shared
/// encoder layers appear once.
struct WeightStore {
  std::map<std::string, LayerParams> layers;

  LayerParams& at(const std::string& key) {
    auto it = layers.find(key);
    if (it == layers.end()) throw std::out_of_range("no parameters for layer '" + key + "'");
    return it->second;
  }
  const LayerParams& at(const std::string& key) const {
    auto it = layers.find(key);
    if (it == layers.end()) throw std::out_of_range("no parameters for layer '" + key + "'");
    return it->second;
  }

  friend bool operator==(const WeightStore&, const WeightStore&) = default;
};

/// One binary vector per dropout-bearing layer instance (every layer except
/// the output layer), in layer_sites order. 1 = active, 0 = dropped.
struct DropMasks {
  std::vector<std::vector<std::uint8_t>> layers;

  friend bool operator==(const DropMasks&, const DropMasks&) = default;
};

inline constexpr std::size_t no_mask = static_cast<std::size_t>(-1);

/// A concrete use of a layer: towers that share weights yield separate
/// sites with the same param_key but their own mask slot.
struct LayerSite {
  std::string param_key;
  LayerSpec layer;
  std::ptrdiff_t encoder = -1;  // -1 for the head
  std::size_t depth = 0;
  bool is_output = false;
  std::size_t mask_slot = no_mask;
};

inline std::string encoder_param_key(const EncoderSpec& enc, std::size_t encoder_index,
                                     std::size_t depth) {
  if (!enc.share_tag.empty()) return "shared:" + enc.share_tag + "/" + std::to_string(depth);
  return "encoder" + std::to_string(encoder_index) + "/" + std::to_string(depth);
}

inline std::string head_param_key(std::size_t depth) { return "head/" + std::to_string(depth); }

/// Returns the first violated structural invariant, or nullopt if the NetworkSpec
/// is well formed.
inline std::optional<std::string> validate(const NetworkSpec& spec) {
  auto check_layer = [](const LayerSpec& l, const std::string& where) -> std::optional<std::string> {
    if (l.in_dim == 0 || l.out_dim == 0) return where + ": dimensions must be positive";
    if (!(l.keep_prob > 0.0 && l.keep_prob <= 1.0)) return where + ": keep_prob must be in (0, 1]";
    if (!is_supported(l.activation)) return where + ": unsupported activation";
    return std::nullopt;
  };
  auto check_chain = [&](const std::vector<LayerSpec>& layers, std::size_t in_dim,
                         const std::string& where) -> std::optional<std::string> {
    std::size_t prev = in_dim;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::string at = where + " layer " + std::to_string(i);
      if (auto err = check_layer(layers[i], at)) return err;
      if (layers[i].in_dim != prev) return at + ": input dimension mismatch";
      prev = layers[i].out_dim;
    }
    return std::nullopt;
  };

  if (spec.input_slices.empty()) return "no input slices";
  // Slices must tile [0, input_dim) without gaps or overlaps.
  std::vector<InputSlice> sorted = spec.input_slices;
  std::sort(sorted.begin(), sorted.end(),
            [](const InputSlice& a, const InputSlice& b) { return a.offset < b.offset; });
  std::size_t cursor = 0;
  for (const auto& s : sorted) {
    if (s.length == 0) return "input slice '" + s.name + "' is empty";
    if (s.offset < cursor) return "overlapping slices at '" + s.name + "'";
    if (s.offset > cursor) return "input slices leave a gap before '" + s.name + "'";
    cursor = s.offset + s.length;
  }
  for (std::size_t i = 0; i < spec.input_slices.size(); ++i)
    for (std::size_t j = i + 1; j < spec.input_slices.size(); ++j)
      if (spec.input_slices[i].name == spec.input_slices[j].name)
        return "duplicate slice name '" + spec.input_slices[i].name + "'";

  std::map<std::string, const EncoderSpec*> shared;
  std::size_t encoded_dim = 0;
  for (std::size_t e = 0; e < spec.encoders.size(); ++e) {
    const auto& enc = spec.encoders[e];
    const std::string where = "encoder " + std::to_string(e);
    if (enc.slices.empty()) return where + ": reads no slices";
    std::size_t in_dim = 0;
    for (const auto& name : enc.slices) {
      auto it = std::find_if(spec.input_slices.begin(), spec.input_slices.end(),
                             [&](const InputSlice& s) { return s.name == name; });
      if (it == spec.input_slices.end()) return where + ": unknown slice '" + name + "'";
      in_dim += it->length;
    }
    if (auto err = check_chain(enc.layers, in_dim, where)) return err;
    if (!enc.share_tag.empty()) {
      auto [it, inserted] = shared.emplace(enc.share_tag, &enc);
      if (!inserted) {
        const auto& other = it->second->layers;
        bool same = other.size() == enc.layers.size();
        for (std::size_t i = 0; same && i < other.size(); ++i)
          same = other[i].in_dim == enc.layers[i].in_dim &&
                 other[i].out_dim == enc.layers[i].out_dim &&
                 other[i].activation == enc.layers[i].activation;
        if (!same) return "shared shape conflict for share_tag '" + enc.share_tag + "'";
      }
    }
    encoded_dim += enc.layers.empty() ? in_dim : enc.layers.back().out_dim;
  }
  if (spec.encoders.empty()) encoded_dim = spec.input_dim();

  if (spec.head.empty()) return "head has no layers";
  if (spec.head.front().in_dim != encoded_dim) return "head dimension mismatch";
  if (auto err = check_chain(spec.head, encoded_dim, "head")) return err;
  if (spec.output_dim == 0) return "output_dim must be positive";
  if (spec.head.back().out_dim != spec.output_dim) return "output layer width differs from output_dim";
  if (spec.head.back().keep_prob != 1.0) return "output layer cannot carry dropout";
  return std::nullopt;
}

inline void require_valid(const NetworkSpec& spec) {
  if (auto err = validate(spec)) throw std::invalid_argument("invalid network spec: " + *err);
}

/// Flattened evaluation plan: layer sites in execution order plus the input
/// index list each encoder gathers.
struct Topology {
  std::vector<LayerSite> sites;
  std::vector<std::vector<std::size_t>> encoder_inputs;
  std::size_t input_dim = 0;
  std::size_t mask_count = 0;
};

inline Topology make_topology(const NetworkSpec& spec) {
  require_valid(spec);
  Topology topo;
  topo.input_dim = spec.input_dim();
  std::size_t slot = 0;
  for (std::size_t e = 0; e < spec.encoders.size(); ++e) {
    const auto& enc = spec.encoders[e];
    std::vector<std::size_t> idx;
    for (const auto& name : enc.slices) {
      const auto& s = *std::find_if(spec.input_slices.begin(), spec.input_slices.end(),
                                    [&](const InputSlice& x) { return x.name == name; });
      for (std::size_t i = 0; i < s.length; ++i) idx.push_back(s.offset + i);
    }
    topo.encoder_inputs.push_back(std::move(idx));
    for (std::size_t d = 0; d < enc.layers.size(); ++d)
      topo.sites.push_back({encoder_param_key(enc, e, d), enc.layers[d],
                            static_cast<std::ptrdiff_t>(e), d, false, slot++});
  }
  for (std::size_t d = 0; d < spec.head.size(); ++d) {
    const bool out = d + 1 == spec.head.size();
    topo.sites.push_back({head_param_key(d), spec.head[d], -1, d, out, out ? no_mask : slot++});
  }
  topo.mask_count = slot;
  return topo;
}

inline std::vector<LayerSite> layer_sites(const NetworkSpec& spec) { return make_topology(spec).sites; }

/// Zero-mean Gaussian weights with variance 2 / in_dim; biases at the
/// firing threshold. Deterministic in `seed`.
inline WeightStore init_weights(const NetworkSpec& spec, std::uint64_t seed,
                                const NeuronParams& params = {}) {
  const Topology topo = make_topology(spec);
  auto engine = make_engine(seed, stream::weights);
  WeightStore store;
  for (const auto& site : topo.sites) {
    if (store.layers.count(site.param_key)) continue;  // shared, already drawn
    const auto& l = site.layer;
    LayerParams p;
    p.weight = Matrix(l.out_dim, l.in_dim);
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(l.in_dim)));
    for (double& w : p.weight.data) w = dist(engine);
    p.bias.assign(l.out_dim, params.v_th);
    store.layers.emplace(site.param_key, std::move(p));
  }
  return store;
}

/// Each entry independently Bernoulli(keep_prob) of its layer; layers with
/// keep_prob == 1 get all-ones masks. Deterministic in `seed`.
inline DropMasks sample_masks(const Topology& topo, std::uint64_t seed) {
  auto engine = make_engine(seed, stream::masks);
  DropMasks masks;
  masks.layers.reserve(topo.mask_count);
  for (const auto& site : topo.sites) {
    if (site.mask_slot == no_mask) continue;
    std::vector<std::uint8_t> m(site.layer.out_dim, 1);
    if (site.layer.keep_prob < 1.0)
      for (auto& bit : m) bit = uniform01(engine) < site.layer.keep_prob ? 1 : 0;
    masks.layers.push_back(std::move(m));
  }
  return masks;
}

inline DropMasks sample_masks(const NetworkSpec& spec, std::uint64_t seed) {
  return sample_masks(make_topology(spec), seed);
}

inline DropMasks all_ones_masks(const Topology& topo) {
  DropMasks masks;
  for (const auto& site : topo.sites)
    if (site.mask_slot != no_mask) masks.layers.emplace_back(site.layer.out_dim, 1);
  return masks;
}

inline void check_masks(const Topology& topo, const DropMasks& masks) {
  if (masks.layers.size() != topo.mask_count)
    throw std::invalid_argument("mask count " + std::to_string(masks.layers.size()) +
                                " does not match " + std::to_string(topo.mask_count) +
                                " dropout layers");
  for (const auto& site : topo.sites)
    if (site.mask_slot != no_mask && masks.layers[site.mask_slot].size() != site.layer.out_dim)
      throw std::invalid_argument("mask width mismatch at layer '" + site.param_key + "'");
}

/// Per-site values kept for backpropagation. `outputs` are post-mask.
struct ForwardCache {
  std::vector<std::vector<double>> inputs;
  std::vector<std::vector<double>> currents;
  std::vector<std::vector<double>> outputs;
  std::optional<DropMasks> masks;
};

struct ForwardResult {
  std::vector<double> output;
  ForwardCache cache;
};

namespace detail {

inline void affine(const LayerParams& p, std::span<const double> in, std::vector<double>& out) {
  out.resize(p.weight.rows);
  for (std::size_t r = 0; r < p.weight.rows; ++r) {
    const double* w = p.weight.data.data() + r * p.weight.cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < p.weight.cols; ++c) acc += w[c] * in[c];
    out[r] = p.bias[r] + acc;
  }
}

}  // namespace detail

/// Analog forward pass. With masks, each dropout layer's activations are
/// multiplied by mask / keep_prob (inverted dropout).
inline ForwardResult forward(const Topology& topo, const WeightStore& weights,
                             std::span<const double> input, const DropMasks* masks,
                             const NeuronParams& params) {
  if (input.size() != topo.input_dim)
    throw std::invalid_argument("input has " + std::to_string(input.size()) + " features, expected " +
                                std::to_string(topo.input_dim));
  if (masks) check_masks(topo, *masks);

  ForwardResult res;
  auto& cache = res.cache;
  const std::size_t n = topo.sites.size();
  cache.inputs.resize(n);
  cache.currents.resize(n);
  cache.outputs.resize(n);
  if (masks) cache.masks = *masks;

  std::vector<double> flowing;
  auto run_site = [&](std::size_t k) {
    const auto& site = topo.sites[k];
    cache.inputs[k] = flowing;
    detail::affine(weights.at(site.param_key), flowing, cache.currents[k]);
    auto& out = cache.outputs[k];
    out = cache.currents[k];
    if (site.layer.activation == Activation::softlif)
      for (double& v : out) v = params.amplitude * softlif_rate(v, params);
    if (masks && site.mask_slot != no_mask) {
      const auto& m = masks->layers[site.mask_slot];
      const double scale = 1.0 / site.layer.keep_prob;
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = m[i] ? out[i] * scale : 0.0;
    }
    flowing = out;
  };

  // Encoders without layers pass their gathered slices straight through.
  std::vector<double> head_input;
  std::size_t k = 0;
  for (std::size_t e = 0; e < topo.encoder_inputs.size(); ++e) {
    flowing.clear();
    for (std::size_t i : topo.encoder_inputs[e]) flowing.push_back(input[i]);
    for (; k < n && topo.sites[k].encoder == static_cast<std::ptrdiff_t>(e); ++k) run_site(k);
    head_input.insert(head_input.end(), flowing.begin(), flowing.end());
  }
  if (topo.encoder_inputs.empty()) head_input.assign(input.begin(), input.end());

  flowing = std::move(head_input);
  for (; k < n; ++k) run_site(k);
  res.output = std::move(flowing);
  return res;
}

inline ForwardResult forward(const NetworkSpec& spec, const WeightStore& weights,
                             std::span<const double> input, const NeuronParams& params) {
  return forward(make_topology(spec), weights, input, nullptr, params);
}

inline ForwardResult forward(const NetworkSpec& spec, const WeightStore& weights,
                             std::span<const double> input, const DropMasks& masks,
                             const NeuronParams& params) {
  return forward(make_topology(spec), weights, input, &masks, params);
}

/// Checks that every layer the NetworkSpec needs is present with the right shape
/// and that all entries are finite.
inline void check_weights(const NetworkSpec& spec, const WeightStore& weights) {
  const Topology topo = make_topology(spec);
  std::size_t distinct = 0;
  std::map<std::string, bool> seen;
  for (const auto& site : topo.sites) {
    const auto& p = weights.at(site.param_key);
    if (p.weight.rows != site.layer.out_dim || p.weight.cols != site.layer.in_dim ||
        p.weight.data.size() != p.weight.rows * p.weight.cols || p.bias.size() != site.layer.out_dim)
      throw std::invalid_argument("weight shape mismatch at layer '" + site.param_key + "'");
    for (double w : p.weight.data)
      if (!std::isfinite(w)) throw std::invalid_argument("non-finite weight in '" + site.param_key + "'");
    for (double b : p.bias)
      if (!std::isfinite(b)) throw std::invalid_argument("non-finite bias in '" + site.param_key + "'");
    if (!seen[site.param_key]) {
      seen[site.param_key] = true;
      ++distinct;
    }
  }
  if (distinct != weights.layers.size()) throw std::invalid_argument("weight store has unused layers");
}

/// Analog network: structure, learned parameters and neuron constants.
struct AnalogNetwork {
  NetworkSpec spec;
  WeightStore weights;
  NeuronParams params;

  friend bool operator==(const AnalogNetwork&, const AnalogNetwork&) = default;
};

}  // namespace permadrop
