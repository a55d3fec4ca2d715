#pragma once

#include <cmath>
#include <cstdint>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "permadrop/convert.hpp"
#include "permadrop/network.hpp"
#include "permadrop/neuron.hpp"
#include "permadrop/rng.hpp"

namespace permadrop {

struct SimConfig {
  double dt = 0.001;               // seconds per tick
  std::size_t n_steps = 1000;
  std::size_t burn_in_steps = 200;
  double tau_syn = 0.005;          // synaptic lowpass; 0 = unfiltered impulses
  std::uint64_t init_seed = 0;     // 0: all voltages start at 0

  void validate() const {
    if (!(dt > 0.0)) throw std::invalid_argument("dt must be > 0");
    if (burn_in_steps >= n_steps) throw std::invalid_argument("burn_in_steps must be < n_steps");
    if (!(tau_syn >= 0.0)) throw std::invalid_argument("tau_syn must be >= 0");
  }
};

/// Output potential per tick, row-major (tick, channel).
struct OutputTrace {
  std::vector<double> values;
  std::size_t channels = 1;
  double dt = 0.001;

  std::size_t size() const { return channels == 0 ? 0 : values.size() / channels; }
  double at(std::size_t tick, std::size_t channel = 0) const { return values[tick * channels + channel]; }
};

/// Clock-driven simulator for one SpikingNetwork. Holds scratch buffers so
/// repeated simulations avoid reallocation; one instance per thread. The
/// network must outlive the simulator.
class Simulator {
 public:
  explicit Simulator(const SpikingNetwork& net) : net_(net), topo_(make_topology(net.spec)) {}

  const Topology& topology() const { return topo_; }

  /// `layer_means`, when given, receives for every layer site the mean of
  /// its (masked, scaled) output over the post-burn-in ticks.
  /// `masks` == nullptr runs without dropout (no masking, no rescaling).
  OutputTrace run(std::span<const double> input, const DropMasks* masks, const SimConfig& sim,
                  std::vector<std::vector<double>>* layer_means = nullptr) {
    sim.validate();
    if (input.size() != topo_.input_dim)
      throw std::invalid_argument("input has " + std::to_string(input.size()) + " features, expected " +
                                  std::to_string(topo_.input_dim));
    if (masks) check_masks(topo_, *masks);
    reset(input, sim);
    if (layer_means) {
      layer_means->assign(topo_.sites.size(), {});
      for (std::size_t k = 0; k < topo_.sites.size(); ++k) (*layer_means)[k].assign(topo_.sites[k].layer.out_dim, 0.0);
    }

    OutputTrace trace;
    trace.channels = net_.spec.output_dim;
    trace.dt = sim.dt;
    trace.values.reserve(sim.n_steps * trace.channels);
    const double alpha = sim.tau_syn > 0.0 ? sim.dt / sim.tau_syn : 1.0;
    const double impulse = net_.neuron_params.amplitude / sim.dt;

    for (std::size_t tick = 0; tick < sim.n_steps; ++tick) {
      std::span<const double> flowing;
      head_input_.clear();
      std::size_t k = 0;
      for (std::size_t e = 0; e < topo_.encoder_inputs.size(); ++e) {
        flowing = encoder_input_[e];
        for (; k < topo_.sites.size() && topo_.sites[k].encoder == static_cast<std::ptrdiff_t>(e); ++k)
          flowing = advance(k, flowing, masks, alpha, impulse, sim.dt);
        head_input_.insert(head_input_.end(), flowing.begin(), flowing.end());
      }
      if (topo_.encoder_inputs.empty()) head_input_.assign(input.begin(), input.end());
      flowing = head_input_;
      for (; k < topo_.sites.size(); ++k) flowing = advance(k, flowing, masks, alpha, impulse, sim.dt);
      trace.values.insert(trace.values.end(), flowing.begin(), flowing.end());
      if (layer_means && tick >= sim.burn_in_steps)
        for (std::size_t s = 0; s < states_.size(); ++s)
          for (std::size_t i = 0; i < states_[s].output.size(); ++i) (*layer_means)[s][i] += states_[s].output[i];
    }
    if (layer_means) {
      const double n = static_cast<double>(sim.n_steps - sim.burn_in_steps);
      for (auto& v : *layer_means)
        for (double& x : v) x /= n;
    }
    return trace;
  }

 private:
  struct SiteState {
    std::vector<LifState> neurons;
    std::vector<double> filtered;   // synaptic trace, Hz
    std::vector<double> current;
    std::vector<double> output;     // filtered * mask / keep_prob
    bool constant_drive = false;    // input is the raw feature vector
  };

  void reset(std::span<const double> input, const SimConfig& sim) {
    states_.resize(topo_.sites.size());
    encoder_input_.resize(topo_.encoder_inputs.size());
    for (std::size_t e = 0; e < topo_.encoder_inputs.size(); ++e) {
      encoder_input_[e].clear();
      for (std::size_t i : topo_.encoder_inputs[e]) encoder_input_[e].push_back(input[i]);
    }
    auto engine = make_engine(sim.init_seed, stream::sim_init);
    std::size_t first_head = 0;
    for (std::size_t k = 0; k < topo_.sites.size(); ++k)
      if (topo_.sites[k].encoder >= 0) first_head = k + 1;
    for (std::size_t k = 0; k < topo_.sites.size(); ++k) {
      const auto& site = topo_.sites[k];
      auto& st = states_[k];
      const std::size_t n = site.layer.out_dim;
      st.neurons.assign(n, LifState{});
      st.filtered.assign(n, 0.0);
      st.output.assign(n, 0.0);
      st.current.assign(n, 0.0);
      if (sim.init_seed != 0 && site.layer.activation == Activation::softlif)
        for (auto& s : st.neurons) s.voltage = uniform01(engine) * net_.neuron_params.v_th;
      const bool raw_encoder_input = site.encoder >= 0 && site.depth == 0;
      const bool raw_head_input = site.encoder < 0 && k == first_head && topo_.encoder_inputs.empty();
      st.constant_drive = raw_encoder_input || raw_head_input;
      if (st.constant_drive) {
        std::span<const double> src =
            raw_encoder_input ? std::span<const double>(encoder_input_[static_cast<std::size_t>(site.encoder)])
                              : input;
        detail::affine(net_.weights.at(site.param_key), src, st.current);
      }
    }
  }

  std::span<const double> advance(std::size_t k, std::span<const double> in, const DropMasks* masks,
                                  double alpha, double impulse, double dt) {
    const auto& site = topo_.sites[k];
    auto& st = states_[k];
    if (!st.constant_drive) detail::affine(net_.weights.at(site.param_key), in, st.current);

    const bool has_mask = masks && site.mask_slot != no_mask;
    const std::uint8_t* mask = has_mask ? masks->layers[site.mask_slot].data() : nullptr;
    const double scale = 1.0 / site.layer.keep_prob;

    if (site.layer.activation == Activation::linear) {
      for (std::size_t i = 0; i < st.output.size(); ++i)
        st.output[i] = (mask && !mask[i]) ? 0.0 : st.current[i] * (has_mask ? scale : 1.0);
      return st.output;
    }

    for (std::size_t i = 0; i < st.neurons.size(); ++i) {
      if (mask && !mask[i]) continue;  // frozen: output stays 0
      const auto step = lif_step(st.neurons[i], st.current[i], dt, net_.neuron_params);
      st.neurons[i] = step.state;
      const double drive = step.spiked ? impulse : 0.0;
      st.filtered[i] += alpha * (drive - st.filtered[i]);
      st.output[i] = st.filtered[i] * (has_mask ? scale : 1.0);
    }
    return st.output;
  }

  const SpikingNetwork& net_;
  Topology topo_;
  std::vector<SiteState> states_;
  std::vector<std::vector<double>> encoder_input_;
  std::vector<double> head_input_;
};

/// Runs one simulation of `net` on a constant input under a fixed mask.
inline OutputTrace simulate(const SpikingNetwork& net, std::span<const double> input, const DropMasks& masks,
                            const SimConfig& sim) {
  Simulator s(net);
  return s.run(input, &masks, sim);
}

/// Runs one simulation without dropout.
inline OutputTrace simulate(const SpikingNetwork& net, std::span<const double> input, const SimConfig& sim) {
  Simulator s(net);
  return s.run(input, nullptr, sim);
}

/// Mean of the trace (one channel) over ticks after the burn-in window.
inline double summarize_trace(const OutputTrace& trace, std::size_t burn_in_steps, std::size_t channel = 0) {
  const std::size_t n = trace.size();
  if (burn_in_steps >= n)
    throw std::invalid_argument("burn-in of " + std::to_string(burn_in_steps) + " ticks leaves nothing of a " +
                                std::to_string(n) + "-tick trace");
  if (channel >= trace.channels) throw std::invalid_argument("trace channel out of range");
  double acc = 0.0;
  for (std::size_t t = burn_in_steps; t < n; ++t) acc += trace.at(t, channel);
  return acc / static_cast<double>(n - burn_in_steps);
}

/// CSV dump: tick,time_s,output_potential (one column per channel beyond
/// the first is suffixed with its index).
inline void write_trace_csv(std::ostream& out, const OutputTrace& trace) {
  out << "tick,time_s,output_potential";
  for (std::size_t c = 1; c < trace.channels; ++c) out << ",output_potential_" << c;
  out << '\n';
  out.precision(17);
  for (std::size_t t = 0; t < trace.size(); ++t) {
    out << t << ',' << static_cast<double>(t + 1) * trace.dt;
    for (std::size_t c = 0; c < trace.channels; ++c) out << ',' << trace.at(t, c);
    out << '\n';
  }
}

}  // namespace permadrop
