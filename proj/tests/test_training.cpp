#include <cmath>
#include <functional>
#include <vector>

#include <gtest/gtest.h>

#include "permadrop/data.hpp"
#include "permadrop/presets.hpp"
#include "permadrop/training.hpp"
#include "test_support.hpp"

using namespace permadrop;
using namespace testing_support;

namespace {

double loss_at(const NetworkSpec& spec, const WeightStore& w, const std::vector<double>& x,
               const std::vector<double>& y, const DropMasks* m, const NeuronParams& p) {
  return loss_mse(forward(make_topology(spec), w, x, m, p).output, y);
}

// Largest relative gap between analytic and central-difference gradients.
double worst_gradient_error(const NetworkSpec& spec, const WeightStore& w, const std::vector<double>& x,
                            const std::vector<double>& y, const DropMasks* m, const NeuronParams& p) {
  const auto fwd = forward(make_topology(spec), w, x, m, p);
  const auto g = backward(spec, w, fwd, y, p);
  const double h = 1e-5;
  double worst = 0.0;
  auto check = [&](double& param, double analytic) {
    const double keep = param;
    param = keep + h;
    const double up = loss_at(spec, w, x, y, m, p);
    param = keep - h;
    const double down = loss_at(spec, w, x, y, m, p);
    param = keep;
    const double fd = (up - down) / (2.0 * h);
    const double err = std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-6});
    worst = std::max(worst, err);
  };
  auto& mw = const_cast<WeightStore&>(w);
  for (auto& [key, lp] : mw.layers) {
    const auto& gl = g.at(key);
    for (std::size_t i = 0; i < lp.weight.data.size(); ++i) check(lp.weight.data[i], gl.weight.data[i]);
    for (std::size_t i = 0; i < lp.bias.size(); ++i) check(lp.bias[i], gl.bias[i]);
  }
  return worst;
}

}  // namespace

TEST(LossMse, Examples) {
  EXPECT_EQ(loss_mse(std::vector<double>{1, 2}, std::vector<double>{1, 2}), 0.0);
  EXPECT_EQ(loss_mse(std::vector<double>{0}, std::vector<double>{2}), 4.0);
  EXPECT_NEAR(loss_mse(std::vector<double>{1, 2, 3}, std::vector<double>{2, 2, 2}), 2.0 / 3.0, 1e-15);
  EXPECT_THROW(loss_mse(std::vector<double>{1}, std::vector<double>{1, 2}), std::invalid_argument);
}

TEST(Backward, MatchesFiniteDifferencesOnTinyNet) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto spec = mlp(3, 4, 1, 0.75);
    auto w = random_weights(spec, seed, 0.8);
    const auto x = random_vector(seed + 100, 3);
    const std::vector<double> y{0.3};
    const auto m = sample_masks(spec, seed);
    NeuronParams p;
    p.amplitude = 0.01;
    EXPECT_LT(worst_gradient_error(spec, w, x, y, &m, p), 1e-4) << "seed " << seed;
  }
}

TEST(Backward, MatchesFiniteDifferencesThroughSharedTowers) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto spec = shared_towers(3, 4, 0.8);
    auto w = random_weights(spec, seed, 0.6);
    const auto x = random_vector(seed + 7, 6);
    const std::vector<double> y{-0.4};
    const auto m = sample_masks(spec, seed + 1);
    NeuronParams p;
    p.amplitude = 0.01;
    EXPECT_LT(worst_gradient_error(spec, w, x, y, &m, p), 1e-4) << "seed " << seed;
    EXPECT_LT(worst_gradient_error(spec, w, x, y, nullptr, p), 1e-4) << "seed " << seed;
  }
}

TEST(Backward, MatchesFiniteDifferencesOnComboLayout) {
  const auto spec = combo_spec(3, 2, {4, 5, 0.9});
  auto w = random_weights(spec, 31, 0.5);
  const auto x = random_vector(32, 7);
  const auto m = sample_masks(spec, 33);
  NeuronParams p;
  p.amplitude = 0.01;
  EXPECT_LT(worst_gradient_error(spec, w, x, {1.1}, &m, p), 1e-4);
}

TEST(Backward, MaskedNeuronHasZeroGradients) {
  const auto spec = mlp(3, 4, 1, 0.5);
  const auto w = random_weights(spec, 3);
  DropMasks m{{{1, 0, 1, 1}}};
  NeuronParams p;
  p.amplitude = 0.01;
  const auto fwd = forward(spec, w, random_vector(9, 3), m, p);
  const auto g = backward(spec, w, fwd, std::vector<double>{2.0}, p);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(g.at("head/0").weight(1, c), 0.0);
  EXPECT_EQ(g.at("head/0").bias[1], 0.0);
  EXPECT_EQ(g.at("head/1").weight(0, 1), 0.0);
  EXPECT_NE(g.at("head/1").weight(0, 0), 0.0);
}

TEST(Backward, SharedLayerAccumulatesBothTowers) {
  // With the head weighting both towers identically and the same features on
  // both slices, each tower contributes the same gradient.
  const std::size_t d = 3, width = 4;
  const auto shared = shared_towers(d, width);
  auto w = random_weights(shared, 12, 0.5);
  auto& head = w.at("head/0").weight;
  for (std::size_t r = 0; r < head.rows; ++r)
    for (std::size_t c = 0; c < width; ++c) head(r, width + c) = head(r, c);

  auto separate = shared;
  separate.encoders[0].share_tag.clear();
  separate.encoders[1].share_tag.clear();
  WeightStore ws = w;
  ws.layers.erase("shared:drug/0");
  ws.layers["encoder0/0"] = w.at("shared:drug/0");
  ws.layers["encoder1/0"] = w.at("shared:drug/0");

  const auto half = random_vector(13, d);
  std::vector<double> x = half;
  x.insert(x.end(), half.begin(), half.end());
  NeuronParams p;
  p.amplitude = 0.01;
  const std::vector<double> y{0.7};
  const auto gs = backward(shared, w, forward(shared, w, x, p), y, p);
  const auto gu = backward(separate, ws, forward(separate, ws, x, p), y, p);
  const auto& a = gs.at("shared:drug/0");
  const auto& single = gu.at("encoder0/0");
  for (std::size_t i = 0; i < a.weight.data.size(); ++i)
    EXPECT_NEAR(a.weight.data[i], 2.0 * single.weight.data[i], 1e-12 * std::max(1.0, std::abs(a.weight.data[i])));
  for (std::size_t i = 0; i < a.bias.size(); ++i)
    EXPECT_NEAR(a.bias[i], 2.0 * single.bias[i], 1e-12 * std::max(1.0, std::abs(a.bias[i])));
}

TEST(Backward, AllOnesMasksAtKeepOneMatchUnmasked) {
  const auto spec = mlp2(3, 5, 4, 1.0);
  const auto w = random_weights(spec, 4);
  const auto x = random_vector(5, 3);
  NeuronParams p;
  p.amplitude = 0.01;
  const auto ones = all_ones_masks(make_topology(spec));
  const auto g1 = backward(spec, w, forward(spec, w, x, p), std::vector<double>{0.2}, p);
  const auto g2 = backward(spec, w, forward(spec, w, x, ones, p), std::vector<double>{0.2}, p);
  EXPECT_EQ(g1, g2);
}

TEST(Backward, TargetWidthChecked) {
  const auto spec = mlp(3, 4);
  const auto w = init_weights(spec, 1);
  const auto fwd = forward(spec, w, random_vector(1, 3), NeuronParams{});
  EXPECT_THROW(backward(spec, w, fwd, std::vector<double>{1.0, 2.0}, NeuronParams{}), std::invalid_argument);
}

TEST(Adam, ZeroGradientLeavesWeightsUnchanged) {
  const auto spec = mlp(3, 4);
  auto w = random_weights(spec, 6);
  const auto before = w;
  AdamOptimizer adam(w, TrainConfig{});
  adam.step(w, zeros_like(w));
  EXPECT_EQ(w, before);
}

TEST(Train, LinearLeastSquaresConverges) {
  NetworkSpec spec;
  spec.input_slices = {{"x", 0, 3}};
  spec.head = {{3, 1, Activation::linear, 1.0}};
  TrainingData data;
  const std::vector<double> truth{0.5, -1.25, 2.0};
  for (std::uint64_t i = 0; i < 200; ++i) {
    auto x = random_vector(i, 3);
    data.targets.push_back({truth[0] * x[0] + truth[1] * x[1] + truth[2] * x[2]});
    data.inputs.push_back(std::move(x));
  }
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.learning_rate = 1e-2;
  cfg.seed = 1;
  const auto r = train(spec, data, cfg, NeuronParams{});
  EXPECT_LT(r.history.back().train_mse, 1e-4);
  EXPECT_EQ(r.history.size(), 201u);
  EXPECT_TRUE(std::isnan(r.history.back().test_mse));
}

TEST(Train, DeterministicInSeed) {
  SynthConfig sc;
  sc.n = 200;
  const auto ds = synth_combo(sc);
  const auto data = to_training_data(ds);
  const auto spec = combo_spec(8, 8, {8, 8, 0.8});
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.seed = 5;
  const auto a = train(spec, data, cfg, default_training_params(), &data);
  const auto b = train(spec, data, cfg, default_training_params(), &data);
  EXPECT_EQ(a.history, b.history);
  EXPECT_EQ(a.weights, b.weights);
  cfg.seed = 6;
  const auto c = train(spec, data, cfg, default_training_params(), &data);
  EXPECT_NE(a.weights, c.weights);
}

TEST(Train, LossDecreasesOnSyntheticTask) {
  SynthConfig sc;
  sc.n = 500;
  const auto data = to_training_data(synth_combo(sc));
  TrainConfig cfg;
  cfg.epochs = 10;
  const auto r = train(combo_spec(8, 8), data, cfg, default_training_params());
  EXPECT_LT(r.history.back().train_mse, 0.7 * r.history.front().train_mse);
}

TEST(Train, DivergenceIsReported) {
  NetworkSpec spec;
  spec.input_slices = {{"x", 0, 1}};
  spec.head = {{1, 1, Activation::linear, 1.0}};
  TrainingData data;
  for (int i = 0; i < 20; ++i) {
    data.inputs.push_back({1e152 * (i + 1)});
    data.targets.push_back({1e152});
  }
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.learning_rate = 1e3;
  EXPECT_THROW(train(spec, data, cfg, NeuronParams{}), TrainingDiverged);
}

TEST(Train, RejectsBadConfigAndData) {
  const auto spec = mlp(2, 3);
  TrainingData empty;
  EXPECT_THROW(train(spec, empty, TrainConfig{}, NeuronParams{}), std::invalid_argument);
  TrainConfig cfg;
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.learning_rate = 0.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.beta1 = 1.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Train, HistoryCsv) {
  std::vector<EpochLoss> h{{0, 1.5, 2.0}, {1, 0.5, std::nan("")}};
  std::ostringstream out;
  write_loss_history(out, h);
  const auto s = out.str();
  EXPECT_EQ(s.substr(0, s.find('\n')), "epoch,train_mse,test_mse");
  EXPECT_NE(s.find("0,1.5,2\n"), std::string::npos);
  EXPECT_NE(s.find("1,0.5,"), std::string::npos);
}
