#include <cmath>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "permadrop/data.hpp"
#include "permadrop/presets.hpp"
#include "permadrop/snn.hpp"
#include "permadrop/training.hpp"
#include "test_support.hpp"

using namespace permadrop;
using namespace testing_support;

namespace {

// One input, one LIF neuron driven by its bias, identity readout.
SpikingNetwork single_neuron(double drive) {
  const auto spec = mlp(1, 1);
  auto w = init_weights(spec, 0);
  w.at("head/0").weight(0, 0) = 0.0;
  w.at("head/0").bias[0] = drive;
  w.at("head/1").weight(0, 0) = 1.0;
  w.at("head/1").bias[0] = 0.0;
  return convert(spec, w, NeuronParams{});
}

OutputTrace constant_trace(std::vector<double> v) {
  OutputTrace t;
  t.values = std::move(v);
  return t;
}

}  // namespace

TEST(SimConfig, DefaultsAndValidation) {
  SimConfig s;
  EXPECT_DOUBLE_EQ(s.dt, 0.001);
  EXPECT_EQ(s.n_steps, 1000u);
  EXPECT_EQ(s.burn_in_steps, 200u);
  EXPECT_DOUBLE_EQ(s.tau_syn, 0.005);
  EXPECT_NO_THROW(s.validate());
  s.burn_in_steps = 1000;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = {};
  s.dt = 0.0;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = {};
  s.tau_syn = -1.0;
  EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(Simulate, ZeroNetworkGivesZeroTrace) {
  const auto spec = combo_spec(3, 2, {4, 4, 0.8});
  auto w = init_weights(spec, 1);
  for (auto& [k, p] : w.layers) {
    std::fill(p.weight.data.begin(), p.weight.data.end(), 0.0);
    std::fill(p.bias.begin(), p.bias.end(), 0.0);
  }
  const auto net = convert(spec, w, NeuronParams{});
  const auto trace = simulate(net, random_vector(1, 7), sample_masks(spec, 3), SimConfig{});
  ASSERT_EQ(trace.size(), 1000u);
  for (double v : trace.values) EXPECT_EQ(v, 0.0);
}

TEST(Simulate, SingleNeuronFilteredRateMatchesClosedForm) {
  const auto net = single_neuron(2.0);
  SimConfig sim;
  sim.dt = 1e-4;
  sim.n_steps = 100000;
  sim.burn_in_steps = 0;
  const double mean = summarize_trace(simulate(net, std::vector<double>{0.0}, sim), 0);
  EXPECT_NEAR(mean, 63.04, 0.02 * 63.04);
}

TEST(Simulate, HiddenNeuronRatesMatchClosedForm) {
  const auto spec = mlp(3, 12);
  const auto w = random_weights(spec, 4, 0.8);
  const auto net = convert(spec, w, NeuronParams{});
  const auto x = random_vector(5, 3);
  SimConfig sim;
  sim.dt = 1e-4;
  sim.n_steps = 100000;
  sim.burn_in_steps = 2000;
  Simulator s(net);
  std::vector<std::vector<double>> means;
  s.run(x, nullptr, sim, &means);
  const auto currents = forward(spec, w, x, NeuronParams{}).cache.currents[0];
  int checked = 0;
  for (std::size_t i = 0; i < currents.size(); ++i) {
    if (currents[i] < 1.1) continue;
    const double expect = lif_rate(currents[i], net.neuron_params);
    EXPECT_NEAR(means[0][i], expect, 0.02 * expect) << "neuron " << i << " current " << currents[i];
    ++checked;
  }
  EXPECT_GE(checked, 3);
}

TEST(Simulate, MaskEqualsEditedNetwork) {
  const double keep = 0.6;
  const auto spec = mlp2(3, 6, 5, keep);
  const auto w = random_weights(spec, 9, 0.6);
  NeuronParams p;
  p.amplitude = 0.02;
  const auto net = convert(spec, w, p);
  const auto x = random_vector(10, 3);
  SimConfig sim;
  sim.n_steps = 600;
  sim.burn_in_steps = 100;

  for (std::size_t dropped : {0u, 3u, 5u}) {
    auto masks = all_ones_masks(make_topology(spec));
    masks.layers[0][dropped] = 0;
    const auto masked = simulate(net, x, masks, sim);

    // Edited network: outgoing weights of the dropped unit removed and every
    // other unit's contribution rescaled by 1/keep, simulated without masks.
    auto edited = w;
    auto& next = edited.at("head/1").weight;
    for (std::size_t r = 0; r < next.rows; ++r)
      for (std::size_t c = 0; c < next.cols; ++c) next(r, c) = c == dropped ? 0.0 : next(r, c) / keep;
    for (double& v : edited.at("head/2").weight.data) v /= keep;
    const auto plain = simulate(convert(spec, edited, p), x, sim);
    ASSERT_EQ(masked.values.size(), plain.values.size());
    for (std::size_t t = 0; t < masked.values.size(); ++t)
      ASSERT_NEAR(masked.values[t], plain.values[t], 1e-9 * std::max(1.0, std::abs(plain.values[t])))
          << "tick " << t;
  }
}

TEST(Simulate, DroppedNeuronsStayFrozen) {
  const auto spec = mlp(3, 6, 1, 0.5);
  const auto net = convert(spec, random_weights(spec, 2), NeuronParams{});
  DropMasks m{{{1, 0, 1, 0, 1, 1}}};
  Simulator s(net);
  std::vector<std::vector<double>> means;
  s.run(random_vector(3, 3), &m, SimConfig{}, &means);
  EXPECT_EQ(means[0][1], 0.0);
  EXPECT_EQ(means[0][3], 0.0);
}

TEST(Simulate, DeterministicAndReusable) {
  const auto spec = combo_spec(3, 2, {5, 4, 0.7});
  const auto net = convert(spec, random_weights(spec, 6), NeuronParams{});
  const auto x = random_vector(7, 7);
  const auto m = sample_masks(spec, 8);
  Simulator s(net);
  const auto a = s.run(x, &m, SimConfig{});
  const auto other = random_vector(9, 7);
  s.run(other, nullptr, SimConfig{});
  const auto b = s.run(x, &m, SimConfig{});
  EXPECT_EQ(a.values, b.values);
  EXPECT_EQ(simulate(net, x, m, SimConfig{}).values, a.values);
}

TEST(Simulate, RandomInitialVoltages) {
  const auto net = single_neuron(1.5);
  SimConfig sim;
  sim.init_seed = 12;
  const auto a = simulate(net, std::vector<double>{0.0}, sim);
  const auto b = simulate(net, std::vector<double>{0.0}, sim);
  EXPECT_EQ(a.values, b.values);
  sim.init_seed = 0;
  const auto c = simulate(net, std::vector<double>{0.0}, sim);
  EXPECT_NE(a.values, c.values);
}

TEST(Simulate, UnfilteredSpikesAreImpulses) {
  const auto net = single_neuron(3.0);
  SimConfig sim;
  sim.tau_syn = 0.0;
  const auto t = simulate(net, std::vector<double>{0.0}, sim);
  for (double v : t.values) EXPECT_TRUE(v == 0.0 || std::abs(v - 1.0 / sim.dt) < 1e-9);
}

TEST(Simulate, InputAndMaskShapesChecked) {
  const auto spec = mlp(3, 4, 1, 0.5);
  const auto net = convert(spec, init_weights(spec, 1), NeuronParams{});
  EXPECT_THROW(simulate(net, std::vector<double>(2, 0.0), SimConfig{}), std::invalid_argument);
  EXPECT_THROW(simulate(net, std::vector<double>(3, 0.0), DropMasks{}, SimConfig{}), std::invalid_argument);
}

TEST(Simulate, TrainedNetworkRippleIsSmall) {
  SynthConfig sc;
  sc.n = 600;
  const auto st = standardize(synth_combo(sc));
  TrainConfig cfg;
  cfg.epochs = 10;
  const auto spec = combo_spec(8, 8);
  const auto params = default_training_params();
  const auto r = train(spec, to_training_data(st.train), cfg, params);
  const auto net = convert(spec, r.weights, params);
  // Shot noise from 32 head neurons at 5 ms gives sd near 0.2; 20 ms brings it to 0.05.
  SimConfig sim;
  sim.tau_syn = 0.02;
  for (std::size_t i = 0; i < 5; ++i) {
    const auto& x = st.train.features[i];
    const double analog = forward(spec, r.weights, x, params).output[0];
    const auto trace = simulate(net, x, sim);
    const double mean = summarize_trace(trace, sim.burn_in_steps);
    double ss = 0.0;
    for (std::size_t t = sim.burn_in_steps; t < trace.size(); ++t) ss += (trace.at(t) - mean) * (trace.at(t) - mean);
    const double sd = std::sqrt(ss / static_cast<double>(trace.size() - sim.burn_in_steps));
    EXPECT_LT(sd, 0.1 * std::abs(analog) + 0.1) << "row " << i;
  }
}

TEST(SummarizeTrace, Examples) {
  EXPECT_EQ(summarize_trace(constant_trace(std::vector<double>(10, 2.5)), 3), 2.5);
  EXPECT_EQ(summarize_trace(constant_trace({100, 100, 5, 5}), 2), 5.0);
  std::vector<double> ramp(1000);
  for (std::size_t i = 0; i < ramp.size(); ++i) ramp[i] = static_cast<double>(i);
  EXPECT_DOUBLE_EQ(summarize_trace(constant_trace(ramp), 200), 599.5);
}

TEST(SummarizeTrace, BurnInMustLeaveTicks) {
  EXPECT_THROW(summarize_trace(constant_trace({1, 2}), 2), std::invalid_argument);
  EXPECT_THROW(summarize_trace(constant_trace({}), 0), std::invalid_argument);
}

TEST(TraceCsv, Format) {
  OutputTrace t;
  t.values = {0.5, 1.25};
  t.dt = 0.001;
  std::ostringstream out;
  write_trace_csv(out, t);
  EXPECT_EQ(out.str(), "tick,time_s,output_potential\n0,0.001,0.5\n1,0.002,1.25\n");
}
