#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "permadrop/network.hpp"

namespace permadrop {

// Output scale for trained networks (activation = amplitude * rate).
inline constexpr double default_amplitude = 0.002;

/// NeuronParams with default constants and the training amplitude.
inline NeuronParams default_training_params() {
  NeuronParams p;
  p.amplitude = default_amplitude;
  return p;
}

struct ComboShape {
  std::size_t encoder_width = 32;
  std::size_t head_width = 32;
  double keep_prob = 0.9;
};

/// Two-drug layout: a cell tower, one drug tower shared by both drugs, and
/// a head with one hidden SoftLIF layer and a linear output.
inline NetworkSpec combo_spec(std::size_t cell_dim, std::size_t drug_dim, const ComboShape& shape = {}) {
  NetworkSpec spec;
  spec.input_slices = {{"cell", 0, cell_dim}, {"drug_a", cell_dim, drug_dim}, {"drug_b", cell_dim + drug_dim, drug_dim}};
  const LayerSpec cell{cell_dim, shape.encoder_width, Activation::softlif, shape.keep_prob};
  const LayerSpec drug{drug_dim, shape.encoder_width, Activation::softlif, shape.keep_prob};
  spec.encoders = {{{"cell"}, {cell}, ""}, {{"drug_a"}, {drug}, "drug"}, {{"drug_b"}, {drug}, "drug"}};
  spec.head = {{3 * shape.encoder_width, shape.head_width, Activation::softlif, shape.keep_prob},
               {shape.head_width, 1, Activation::linear, 1.0}};
  spec.output_dim = 1;
  return spec;
}

/// Plain feedforward net over every input slice: `hidden` SoftLIF layers
/// then a linear output.
inline NetworkSpec mlp_spec(const std::vector<InputSlice>& slices, const std::vector<std::size_t>& hidden,
                            double keep_prob = 0.9) {
  NetworkSpec spec;
  spec.input_slices = slices;
  std::size_t prev = spec.input_dim();
  for (std::size_t w : hidden) {
    spec.head.push_back({prev, w, Activation::softlif, keep_prob});
    prev = w;
  }
  spec.head.push_back({prev, 1, Activation::linear, 1.0});
  spec.output_dim = 1;
  return spec;
}

/// Combo layout when the slices are exactly cell / drug_a / drug_b with
/// equal drug widths, otherwise a two-hidden-layer MLP.
inline NetworkSpec default_spec_for(const std::vector<InputSlice>& slices, const ComboShape& shape = {}) {
  auto find = [&](const std::string& n) {
    return std::find_if(slices.begin(), slices.end(), [&](const InputSlice& s) { return s.name == n; });
  };
  const auto cell = find("cell");
  const auto a = find("drug_a");
  const auto b = find("drug_b");
  if (slices.size() == 3 && cell != slices.end() && a != slices.end() && b != slices.end() &&
      a->length == b->length && cell->offset == 0 && a->offset == cell->length &&
      b->offset == a->offset + a->length) {
    return combo_spec(cell->length, a->length, shape);
  }
  return mlp_spec(slices, {shape.encoder_width, shape.head_width}, shape.keep_prob);
}

}  // namespace permadrop
