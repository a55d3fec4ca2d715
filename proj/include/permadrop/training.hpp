#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "permadrop/network.hpp"
#include "permadrop/rng.hpp"

namespace permadrop {

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw std::invalid_argument("Adam betas must lie in [0, 1)");
  }
};

/// Features (already normalized) and regression targets, one row per
/// observation. Targets have output_dim entries per row.
struct TrainingData {
  std::vector<std::vector<double>> inputs;
  std::vector<std::vector<double>> targets;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline double loss_mse(std::span<const double> predictions, std::span<const double> targets) {
  if (predictions.size() != targets.size())
    throw std::invalid_argument("loss_mse: " + std::to_string(predictions.size()) + " predictions vs " +
                                std::to_string(targets.size()) + " targets");
  if (predictions.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double r = predictions[i] - targets[i];
    acc += r * r;
  }
  return acc / static_cast<double>(predictions.size());
}

/// Gradient store with the same keys and shapes as `weights`, zeroed.
inline WeightStore zeros_like(const WeightStore& weights) {
  WeightStore g;
  for (const auto& [key, p] : weights.layers) {
    LayerParams z;
    z.weight = Matrix(p.weight.rows, p.weight.cols);
    z.bias.assign(p.bias.size(), 0.0);
    g.layers.emplace(key, std::move(z));
  }
  return g;
}

/// Accumulates `scale` * d loss_mse(output, target) / d params into `grads`
/// for one forward pass. Shared layers receive the sum over every tower
/// that uses them; dropped units pass no gradient.
inline void accumulate_gradients(const Topology& topo, const WeightStore& weights,
                                 const ForwardResult& fwd, std::span<const double> targets,
                                 const NeuronParams& params, double scale, WeightStore& grads) {
  const auto& cache = fwd.cache;
  if (targets.size() != fwd.output.size())
    throw std::invalid_argument("backward: target width does not match network output");
  if (cache.outputs.size() != topo.sites.size())
    throw std::invalid_argument("backward: cache does not come from this network");

  const std::size_t n_sites = topo.sites.size();
  const double n_out = static_cast<double>(fwd.output.size());

  // Gradient w.r.t. the post-mask output of each site, filled back to front.
  std::vector<std::vector<double>> upstream(n_sites);
  upstream[n_sites - 1].resize(fwd.output.size());
  for (std::size_t i = 0; i < fwd.output.size(); ++i)
    upstream[n_sites - 1][i] = scale * 2.0 * (fwd.output[i] - targets[i]) / n_out;

  // Where each encoder's output lands inside the head input.
  const std::size_t n_enc = topo.encoder_inputs.size();
  std::vector<std::ptrdiff_t> encoder_last(n_enc, -1);
  std::vector<std::size_t> encoder_offset(n_enc, 0);
  std::size_t first_head = 0;
  for (std::size_t k = 0; k < n_sites; ++k) {
    if (topo.sites[k].encoder >= 0) {
      encoder_last[static_cast<std::size_t>(topo.sites[k].encoder)] = static_cast<std::ptrdiff_t>(k);
      first_head = k + 1;
    }
  }
  {
    std::size_t off = 0;
    for (std::size_t e = 0; e < n_enc; ++e) {
      encoder_offset[e] = off;
      off += encoder_last[e] >= 0 ? topo.sites[static_cast<std::size_t>(encoder_last[e])].layer.out_dim
                                  : topo.encoder_inputs[e].size();
    }
  }

  std::vector<double> g_current;
  for (std::size_t kk = n_sites; kk-- > 0;) {
    const auto& site = topo.sites[kk];
    const auto& p = weights.at(site.param_key);
    auto& g = grads.at(site.param_key);
    const auto& in = cache.inputs[kk];
    const auto& cur = cache.currents[kk];
    const auto& g_out = upstream[kk];

    g_current.assign(site.layer.out_dim, 0.0);
    const bool masked = cache.masks && site.mask_slot != no_mask;
    const double inv_keep = 1.0 / site.layer.keep_prob;
    for (std::size_t i = 0; i < site.layer.out_dim; ++i) {
      double gi = g_out[i];
      if (masked) gi = cache.masks->layers[site.mask_slot][i] ? gi * inv_keep : 0.0;
      if (site.layer.activation == Activation::softlif && gi != 0.0) gi *= params.amplitude * softlif_rate_grad(cur[i], params);
      g_current[i] = gi;
    }

    for (std::size_t i = 0; i < site.layer.out_dim; ++i) {
      const double gi = g_current[i];
      if (gi == 0.0) continue;
      g.bias[i] += gi;
      double* row = g.weight.data.data() + i * g.weight.cols;
      for (std::size_t c = 0; c < in.size(); ++c) row[c] += gi * in[c];
    }

    // Route the input gradient to whichever site produced this input.
    const bool first_in_encoder = site.encoder >= 0 && site.depth == 0;
    const bool first_in_head = site.encoder < 0 && kk == first_head;
    if (first_in_encoder) continue;  // raw features, nothing to propagate
    std::vector<double> g_in(site.layer.in_dim, 0.0);
    for (std::size_t i = 0; i < site.layer.out_dim; ++i) {
      const double gi = g_current[i];
      if (gi == 0.0) continue;
      const double* row = p.weight.data.data() + i * p.weight.cols;
      for (std::size_t c = 0; c < g_in.size(); ++c) g_in[c] += gi * row[c];
    }
    if (!first_in_head) {
      upstream[kk - 1] = std::move(g_in);
      continue;
    }
    for (std::size_t e = 0; e < n_enc; ++e) {
      if (encoder_last[e] < 0) continue;
      const auto last = static_cast<std::size_t>(encoder_last[e]);
      const std::size_t width = topo.sites[last].layer.out_dim;
      upstream[last].assign(g_in.begin() + static_cast<std::ptrdiff_t>(encoder_offset[e]),
                            g_in.begin() + static_cast<std::ptrdiff_t>(encoder_offset[e] + width));
    }
  }
}

/// Gradient of loss_mse(forward output, targets) w.r.t. every parameter,
/// using the activations and masks cached by `fwd`.
inline WeightStore backward(const NetworkSpec& spec, const WeightStore& weights, const ForwardResult& fwd,
                            std::span<const double> targets, const NeuronParams& params) {
  const Topology topo = make_topology(spec);
  WeightStore grads = zeros_like(weights);
  accumulate_gradients(topo, weights, fwd, targets, params, 1.0, grads);
  return grads;
}

/// Adam with bias correction, one moment pair per parameter.
class AdamOptimizer {
 public:
  AdamOptimizer(const WeightStore& like, const TrainConfig& cfg)
      : cfg_(cfg), m_(zeros_like(like)), v_(zeros_like(like)) {}

  void step(WeightStore& weights, const WeightStore& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    auto update = [&](std::vector<double>& w, const std::vector<double>& g, std::vector<double>& m,
                      std::vector<double>& v) {
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        w[i] -= cfg_.learning_rate * m_hat / (std::sqrt(v_hat) + cfg_.adam_eps);
      }
    };
    for (auto& [key, p] : weights.layers) {
      const auto& g = grads.at(key);
      auto& m = m_.at(key);
      auto& v = v_.at(key);
      update(p.weight.data, g.weight.data, m.weight.data, v.weight.data);
      update(p.bias, g.bias, m.bias, v.bias);
    }
  }

  std::uint64_t steps() const { return t_; }

 private:
  TrainConfig cfg_;
  WeightStore m_;
  WeightStore v_;
  std::uint64_t t_ = 0;
};

/// Deterministic (no dropout) mean squared error over a data set.
inline double evaluate_mse(const Topology& topo, const WeightStore& weights, const TrainingData& data,
                           const NeuronParams& params) {
  if (data.inputs.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < data.inputs.size(); ++i) {
    auto fwd = forward(topo, weights, data.inputs[i], nullptr, params);
    acc += loss_mse(fwd.output, data.targets[i]);
  }
  return acc / static_cast<double>(data.inputs.size());
}

struct EpochLoss {
  std::size_t epoch = 0;
  double train_mse = 0.0;
  double test_mse = 0.0;  // NaN when no test set was given

  friend bool operator==(const EpochLoss&, const EpochLoss&) = default;
};

struct TrainResult {
  WeightStore weights;
  std::vector<EpochLoss> history;  // entry 0 is the untrained network
};

/// Minibatch Adam on MSE with a fresh dropout mask set per minibatch. The
/// history records deterministic-forward MSE before training and after
/// every epoch.
inline TrainResult train(const NetworkSpec& spec, const TrainingData& train_set, const TrainConfig& cfg,
                         const NeuronParams& params, const TrainingData* test_set = nullptr,
                         const WeightStore* initial = nullptr) {
  cfg.validate();
  params.validate();
  if (train_set.inputs.empty()) throw std::invalid_argument("training set is empty");
  if (train_set.inputs.size() != train_set.targets.size())
    throw std::invalid_argument("training inputs and targets differ in length");
  const Topology topo = make_topology(spec);

  TrainResult result;
  result.weights = initial ? *initial : init_weights(spec, cfg.seed, params);
  check_weights(spec, result.weights);
  AdamOptimizer adam(result.weights, cfg);

  auto record = [&](std::size_t epoch) {
    EpochLoss e;
    e.epoch = epoch;
    e.train_mse = evaluate_mse(topo, result.weights, train_set, params);
    e.test_mse = test_set ? evaluate_mse(topo, result.weights, *test_set, params)
                          : std::numeric_limits<double>::quiet_NaN();
    if (!std::isfinite(e.train_mse)) {
      std::ostringstream msg;
      msg << "training diverged: train MSE is " << e.train_mse << " after epoch " << epoch
          << " (learning rate " << cfg.learning_rate << ")";
      throw TrainingDiverged(msg.str());
    }
    result.history.push_back(e);
  };
  record(0);

  std::vector<std::size_t> order(train_set.inputs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto shuffle_engine = make_engine(cfg.seed, stream::shuffle);
  WeightStore grads = zeros_like(result.weights);
  std::uint64_t batch_counter = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    // Fisher-Yates on uniform01 draws.
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform01(shuffle_engine) * static_cast<double>(i));
      std::swap(order[i - 1], order[std::min(j, i - 1)]);
    }
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const DropMasks masks =
          sample_masks(topo, mix_seed(cfg.seed) ^ mix_seed(0x7a11ULL + batch_counter++));
      for (auto& [key, g] : grads.layers) {
        std::fill(g.weight.data.begin(), g.weight.data.end(), 0.0);
        std::fill(g.bias.begin(), g.bias.end(), 0.0);
      }
      const double scale = 1.0 / static_cast<double>(stop - start);
      for (std::size_t b = start; b < stop; ++b) {
        const std::size_t row = order[b];
        auto fwd = forward(topo, result.weights, train_set.inputs[row], &masks, params);
        accumulate_gradients(topo, result.weights, fwd, train_set.targets[row], params, scale, grads);
      }
      adam.step(result.weights, grads);
    }
    record(epoch);
  }
  return result;
}

/// Loss history as CSV: epoch,train_mse,test_mse.
inline void write_loss_history(std::ostream& out, const std::vector<EpochLoss>& history) {
  out << "epoch,train_mse,test_mse\n";
  out.precision(17);
  for (const auto& e : history) {
    out << e.epoch << ',' << e.train_mse << ',';
    if (std::isfinite(e.test_mse)) out << e.test_mse;
    out << '\n';
  }
}

}  // namespace permadrop
