#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "permadrop/convert.hpp"
#include "permadrop/network.hpp"
#include "permadrop/parallel.hpp"
#include "permadrop/snn.hpp"

namespace permadrop {

enum class Backend { analog, spiking };

inline const char* to_string(Backend b) { return b == Backend::analog ? "analog" : "spiking"; }

inline Backend backend_from_string(const std::string& s) {
  if (s == "analog") return Backend::analog;
  if (s == "spiking") return Backend::spiking;
  throw std::invalid_argument("unknown backend '" + s + "' (expected analog or spiking)");
}

/// Monte-Carlo predictive draws for one observation. Draw k used the masks
/// sampled from seed base_seed + k.
struct SampleSet {
  std::size_t observation_id = 0;
  std::vector<double> draws;
  Backend backend = Backend::analog;
  std::uint64_t base_seed = 0;

  friend bool operator==(const SampleSet&, const SampleSet&) = default;
};

struct DistributionSummary {
  double mean = 0.0;
  double std = 0.0;
  double q025 = 0.0;
  double q50 = 0.0;
  double q975 = 0.0;
};

inline std::uint64_t draw_seed(std::uint64_t base_seed, std::size_t draw) { return base_seed + draw; }

/// Analog permanent-dropout draws: one masked forward pass per draw.
inline SampleSet predictive_distribution(const AnalogNetwork& net, std::span<const double> observation,
                                         std::size_t n_draws, std::uint64_t base_seed,
                                         std::size_t observation_id = 0) {
  if (n_draws < 1) throw std::invalid_argument("n_draws must be >= 1");
  const Topology topo = make_topology(net.spec);
  SampleSet out{observation_id, {}, Backend::analog, base_seed};
  out.draws.reserve(n_draws);
  for (std::size_t k = 0; k < n_draws; ++k) {
    const DropMasks masks = sample_masks(topo, draw_seed(base_seed, k));
    out.draws.push_back(forward(topo, net.weights, observation, &masks, net.params).output.at(0));
  }
  return out;
}

/// Spiking permanent-dropout draws: one simulation per draw under that
/// draw's masks, summarized by its post-burn-in mean. Masks match the
/// analog backend draw for draw.
inline SampleSet predictive_distribution(const SpikingNetwork& net, std::span<const double> observation,
                                         std::size_t n_draws, std::uint64_t base_seed, const SimConfig& sim,
                                         std::size_t observation_id = 0) {
  if (n_draws < 1) throw std::invalid_argument("n_draws must be >= 1");
  Simulator simulator(net);
  SampleSet out{observation_id, {}, Backend::spiking, base_seed};
  out.draws.reserve(n_draws);
  for (std::size_t k = 0; k < n_draws; ++k) {
    const DropMasks masks = sample_masks(simulator.topology(), draw_seed(base_seed, k));
    out.draws.push_back(summarize_trace(simulator.run(observation, &masks, sim), sim.burn_in_steps));
  }
  return out;
}

/// Linear-interpolation quantile of sorted data (position q * (n - 1)).
inline double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline DistributionSummary summarize(std::span<const double> draws) {
  if (draws.empty()) throw std::invalid_argument("cannot summarize an empty sample");
  DistributionSummary s;
  const double n = static_cast<double>(draws.size());
  double sum = 0.0;
  for (double x : draws) sum += x;
  s.mean = sum / n;
  double ss = 0.0;
  for (double x : draws) ss += (x - s.mean) * (x - s.mean);
  s.std = draws.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  std::vector<double> sorted(draws.begin(), draws.end());
  std::sort(sorted.begin(), sorted.end());
  s.q025 = quantile_sorted(sorted, 0.025);
  s.q50 = quantile_sorted(sorted, 0.5);
  s.q975 = quantile_sorted(sorted, 0.975);
  return s;
}

inline DistributionSummary summarize(const SampleSet& samples) { return summarize(samples.draws); }

/// Runs predictive_distribution over many observations in parallel.
/// Observation i uses base seed seed + i * n_draws, so every
/// (observation, draw) pair gets its own mask set and the result order is
/// observation-major regardless of scheduling.
inline std::vector<SampleSet> predictive_distributions(const AnalogNetwork& net,
                                                       const std::vector<std::vector<double>>& observations,
                                                       std::size_t n_draws, std::uint64_t seed,
                                                       std::size_t threads = 1) {
  std::vector<SampleSet> out(observations.size());
  parallel_for(observations.size(), threads, [&](std::size_t, std::size_t i) {
    out[i] = predictive_distribution(net, observations[i], n_draws, seed + i * n_draws, i);
  });
  return out;
}

inline std::vector<SampleSet> predictive_distributions(const SpikingNetwork& net,
                                                       const std::vector<std::vector<double>>& observations,
                                                       std::size_t n_draws, std::uint64_t seed,
                                                       const SimConfig& sim, std::size_t threads = 1) {
  std::vector<SampleSet> out(observations.size());
  parallel_for(observations.size(), threads, [&](std::size_t, std::size_t i) {
    out[i] = predictive_distribution(net, observations[i], n_draws, seed + i * n_draws, sim, i);
  });
  return out;
}

// --- samples file ------------------------------------------------------------
//
// Comment lines start with '#'. Columns: observation_id,draw_id,backend,prediction

inline void write_samples_csv(std::ostream& out, const std::vector<SampleSet>& sets,
                              const std::vector<std::string>& comments = {}) {
  for (const auto& c : comments) out << "# " << c << '\n';
  out << "observation_id,draw_id,backend,prediction\n";
  out.precision(17);
  for (const auto& s : sets)
    for (std::size_t k = 0; k < s.draws.size(); ++k)
      out << s.observation_id << ',' << k << ',' << to_string(s.backend) << ',' << s.draws[k] << '\n';
}

/// Groups rows by observation id (ascending). Draws keep file order.
inline std::vector<SampleSet> read_samples_csv(std::istream& in) {
  std::string line;
  bool header_seen = false;
  std::map<std::size_t, SampleSet> by_obs;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (line != "observation_id,draw_id,backend,prediction")
        throw std::runtime_error("samples file: unexpected header '" + line + "'");
      header_seen = true;
      continue;
    }
    std::stringstream ss(line);
    std::string obs, draw, backend, pred;
    if (!std::getline(ss, obs, ',') || !std::getline(ss, draw, ',') || !std::getline(ss, backend, ',') ||
        !std::getline(ss, pred))
      throw std::runtime_error("samples file line " + std::to_string(line_no) + ": expected 4 fields");
    try {
      const auto id = static_cast<std::size_t>(std::stoull(obs));
      auto& set = by_obs[id];
      set.observation_id = id;
      set.backend = backend_from_string(backend);
      set.draws.push_back(std::stod(pred));
    } catch (const std::invalid_argument&) {
      throw std::runtime_error("samples file line " + std::to_string(line_no) + ": malformed value");
    }
  }
  if (!header_seen) throw std::runtime_error("samples file has no header");
  std::vector<SampleSet> out;
  for (auto& [id, s] : by_obs) out.push_back(std::move(s));
  return out;
}

}  // namespace permadrop
