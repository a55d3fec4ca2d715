#pragma once

#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "permadrop/network.hpp"

namespace permadrop {

using json = nlohmann::json;

/// Per-feature affine normalization applied to raw inputs before the
/// network sees them: x' = (x - mean) / scale.
struct Scaler {
  std::vector<double> mean;
  std::vector<double> scale;

  bool empty() const { return mean.empty(); }
  friend bool operator==(const Scaler&, const Scaler&) = default;
};

enum class ModelKind { analog, spiking };

/// Everything a model file holds. See docs/model_format.md.
struct ModelDocument {
  ModelKind kind = ModelKind::analog;
  NetworkSpec spec;
  NeuronParams neuron_params;
  WeightStore weights;
  Scaler scaler;
};

inline constexpr const char* model_format_name = "permadrop-model";
inline constexpr int model_format_version = 1;

// --- spec ------------------------------------------------------------------

inline json layer_to_json(const LayerSpec& l) {
  return {{"in_dim", l.in_dim},
          {"out_dim", l.out_dim},
          {"activation", to_string(l.activation)},
          {"keep_prob", l.keep_prob}};
}

inline LayerSpec layer_from_json(const json& j) {
  LayerSpec l;
  l.in_dim = j.at("in_dim").get<std::size_t>();
  l.out_dim = j.at("out_dim").get<std::size_t>();
  l.activation = activation_from_string(j.at("activation").get<std::string>());
  l.keep_prob = j.value("keep_prob", 1.0);
  return l;
}

inline json spec_to_json(const NetworkSpec& spec) {
  json slices = json::array();
  for (const auto& s : spec.input_slices)
    slices.push_back({{"name", s.name}, {"offset", s.offset}, {"length", s.length}});
  json encoders = json::array();
  for (const auto& e : spec.encoders) {
    json layers = json::array();
    for (const auto& l : e.layers) layers.push_back(layer_to_json(l));
    json enc = {{"slices", e.slices}, {"layers", layers}};
    enc["share_tag"] = e.share_tag.empty() ? json(nullptr) : json(e.share_tag);
    encoders.push_back(std::move(enc));
  }
  json head = json::array();
  for (const auto& l : spec.head) head.push_back(layer_to_json(l));
  return {{"input_slices", slices}, {"encoders", encoders}, {"head", head}, {"output_dim", spec.output_dim}};
}

inline NetworkSpec spec_from_json(const json& j) {
  NetworkSpec spec;
  for (const auto& s : j.at("input_slices"))
    spec.input_slices.push_back(
        {s.at("name").get<std::string>(), s.at("offset").get<std::size_t>(), s.at("length").get<std::size_t>()});
  if (j.contains("encoders")) {
    for (const auto& e : j.at("encoders")) {
      EncoderSpec enc;
      enc.slices = e.at("slices").get<std::vector<std::string>>();
      for (const auto& l : e.at("layers")) enc.layers.push_back(layer_from_json(l));
      if (e.contains("share_tag") && !e.at("share_tag").is_null())
        enc.share_tag = e.at("share_tag").get<std::string>();
      spec.encoders.push_back(std::move(enc));
    }
  }
  for (const auto& l : j.at("head")) spec.head.push_back(layer_from_json(l));
  spec.output_dim = j.value("output_dim", spec.head.empty() ? std::size_t{1} : spec.head.back().out_dim);
  return spec;
}

// --- neuron params -----------------------------------------------------------

inline json params_to_json(const NeuronParams& p) {
  return {{"tau_ref", p.tau_ref}, {"tau_rc", p.tau_rc}, {"v_th", p.v_th}, {"gamma", p.gamma}, {"amplitude", p.amplitude}};
}

inline NeuronParams params_from_json(const json& j) {
  NeuronParams p;
  p.tau_ref = j.value("tau_ref", p.tau_ref);
  p.tau_rc = j.value("tau_rc", p.tau_rc);
  p.v_th = j.value("v_th", p.v_th);
  p.gamma = j.value("gamma", p.gamma);
  p.amplitude = j.value("amplitude", p.amplitude);
  p.validate();
  return p;
}

// --- weights -------------------------------------------------------------------

inline json weights_to_json(const WeightStore& w) {
  json out = json::object();
  for (const auto& [key, p] : w.layers) {
    json rows = json::array();
    for (std::size_t r = 0; r < p.weight.rows; ++r) {
      auto row = p.weight.row(r);
      rows.push_back(std::vector<double>(row.begin(), row.end()));
    }
    out[key] = {{"weight", rows}, {"bias", p.bias}};
  }
  return out;
}

inline WeightStore weights_from_json(const json& j) {
  WeightStore w;
  for (const auto& [key, layer] : j.items()) {
    LayerParams p;
    const auto& rows = layer.at("weight");
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.at(0).size();
    p.weight = Matrix(r, c);
    for (std::size_t i = 0; i < r; ++i) {
      if (rows.at(i).size() != c) throw std::invalid_argument("ragged weight matrix in '" + key + "'");
      for (std::size_t k = 0; k < c; ++k) p.weight(i, k) = rows.at(i).at(k).get<double>();
    }
    p.bias = layer.at("bias").get<std::vector<double>>();
    w.layers.emplace(key, std::move(p));
  }
  return w;
}

// --- documents -------------------------------------------------------------------

inline json model_to_json(const ModelDocument& doc) {
  json j = {{"format", model_format_name},
            {"version", model_format_version},
            {"kind", doc.kind == ModelKind::analog ? "analog" : "spiking"},
            {"spec", spec_to_json(doc.spec)},
            {"neuron_params", params_to_json(doc.neuron_params)},
            {"weights", weights_to_json(doc.weights)}};
  if (!doc.scaler.empty()) j["scaler"] = {{"mean", doc.scaler.mean}, {"scale", doc.scaler.scale}};
  return j;
}

inline ModelDocument model_from_json(const json& j) {
  if (j.value("format", std::string{}) != model_format_name)
    throw std::invalid_argument("not a permadrop model document");
  if (j.value("version", 0) != model_format_version)
    throw std::invalid_argument("unsupported model format version");
  ModelDocument doc;
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "analog") doc.kind = ModelKind::analog;
  else if (kind == "spiking") doc.kind = ModelKind::spiking;
  else throw std::invalid_argument("unknown model kind '" + kind + "'");
  doc.spec = spec_from_json(j.at("spec"));
  doc.neuron_params = params_from_json(j.at("neuron_params"));
  doc.weights = weights_from_json(j.at("weights"));
  if (j.contains("scaler")) {
    doc.scaler.mean = j.at("scaler").at("mean").get<std::vector<double>>();
    doc.scaler.scale = j.at("scaler").at("scale").get<std::vector<double>>();
    if (doc.scaler.mean.size() != doc.spec.input_dim() || doc.scaler.scale.size() != doc.spec.input_dim())
      throw std::invalid_argument("scaler width does not match input dimension");
  }
  check_weights(doc.spec, doc.weights);
  return doc;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("'" + path + "' is not valid JSON: " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
  if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

inline void save_model(const std::string& path, const ModelDocument& doc) {
  write_text_file(path, model_to_json(doc).dump(1) + "\n");
}

inline ModelDocument load_model(const std::string& path) { return model_from_json(read_json_file(path)); }

}  // namespace permadrop
