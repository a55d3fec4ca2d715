#pragma once

#include <stdexcept>

#include "permadrop/model_io.hpp"
#include "permadrop/network.hpp"

namespace permadrop {

/// Spiking counterpart of an analog network. Structure and weights are the
/// analog ones unchanged; softlif layers become LIF populations (gamma is
/// not used at simulation time) and linear layers stay affine readouts.
struct SpikingNetwork {
  NetworkSpec spec;
  WeightStore weights;
  NeuronParams neuron_params;

  friend bool operator==(const SpikingNetwork&, const SpikingNetwork&) = default;
};

inline SpikingNetwork convert(const NetworkSpec& spec, const WeightStore& weights, const NeuronParams& params) {
  for (const auto& enc : spec.encoders)
    for (const auto& l : enc.layers)
      if (!is_supported(l.activation)) throw std::invalid_argument("cannot convert: unsupported activation");
  for (const auto& l : spec.head)
    if (!is_supported(l.activation)) throw std::invalid_argument("cannot convert: unsupported activation");
  require_valid(spec);
  params.validate();
  check_weights(spec, weights);
  return {spec, weights, params};
}

inline SpikingNetwork convert(const AnalogNetwork& net) { return convert(net.spec, net.weights, net.params); }

inline AnalogNetwork as_analog(const ModelDocument& doc) { return {doc.spec, doc.weights, doc.neuron_params}; }

/// Spiking view of a model document of either kind.
inline SpikingNetwork as_spiking(const ModelDocument& doc) {
  return convert(doc.spec, doc.weights, doc.neuron_params);
}

inline ModelDocument to_spiking_document(ModelDocument doc) {
  convert(doc.spec, doc.weights, doc.neuron_params);
  doc.kind = ModelKind::spiking;
  return doc;
}

}  // namespace permadrop
