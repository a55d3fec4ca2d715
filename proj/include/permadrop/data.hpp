#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "permadrop/model_io.hpp"
#include "permadrop/network.hpp"
#include "permadrop/rng.hpp"
#include "permadrop/training.hpp"

namespace permadrop {

/// Rows of features with one regression target each.
struct Dataset {
  std::vector<std::vector<double>> features;
  std::vector<double> targets;
  std::vector<std::string> feature_names;
  std::string target_name = "target";
  std::vector<InputSlice> slices;

  std::size_t rows() const { return features.size(); }
  std::size_t cols() const { return feature_names.size(); }
};

/// Groups feature columns into input slices by name: "drug_a_3" belongs to
/// slice "drug_a"; a name without a numeric suffix is its own slice.
/// Only contiguous runs share a slice.
inline std::vector<InputSlice> infer_slices(const std::vector<std::string>& names) {
  auto stem = [](const std::string& n) {
    const auto pos = n.rfind('_');
    if (pos == std::string::npos || pos + 1 == n.size()) return n;
    const bool digits = std::all_of(n.begin() + static_cast<std::ptrdiff_t>(pos) + 1, n.end(),
                                    [](char c) { return c >= '0' && c <= '9'; });
    return digits ? n.substr(0, pos) : n;
  };
  std::vector<InputSlice> out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const std::string s = stem(names[i]);
    if (!out.empty() && out.back().name == s && out.back().offset + out.back().length == i) {
      ++out.back().length;
      continue;
    }
    std::string name = s;
    const bool taken = std::any_of(out.begin(), out.end(), [&](const InputSlice& x) { return x.name == s; });
    if (taken) name += "@" + std::to_string(i);
    out.push_back({name, i, 1});
  }
  return out;
}

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    cells.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

inline void append_double(std::string& out, double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, ptr);
}

}  // namespace detail

/// Parses comma-separated text with a header row. All cells must be finite
/// decimal numbers; `target_column` is pulled out as the target. With
/// require_target false a file lacking that column loads with every column
/// as a feature and an empty target vector.
inline Dataset parse_csv(std::istream& in, const std::string& target_column = "target",
                         bool require_target = true) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("CSV is empty");
  const auto header = detail::split_csv_line(line);
  std::vector<std::string> names;
  for (auto h : header) names.emplace_back(detail::trim(h));
  const auto target_it = std::find(names.begin(), names.end(), target_column);
  const bool has_target = target_it != names.end();
  if (!has_target && require_target)
    throw std::runtime_error("CSV has no target column '" + target_column + "'");
  const std::size_t target_idx = has_target ? static_cast<std::size_t>(target_it - names.begin()) : names.size();

  Dataset ds;
  ds.target_name = target_column;
  for (std::size_t c = 0; c < names.size(); ++c)
    if (c != target_idx) ds.feature_names.push_back(names[c]);

  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++row;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != names.size())
      throw std::runtime_error("CSV row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                               " cells, header has " + std::to_string(names.size()));
    std::vector<double> features;
    features.reserve(names.size() - 1);
    double target = 0.0;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      double v = 0.0;
      if (!detail::parse_double(cells[c], v))
        throw std::runtime_error("CSV row " + std::to_string(row) + ", column '" + names[c] +
                                 "': not a finite number: '" + std::string(detail::trim(cells[c])) + "'");
      if (c == target_idx) target = v;
      else features.push_back(v);
    }
    ds.features.push_back(std::move(features));
    if (has_target) ds.targets.push_back(target);
  }
  ds.slices = infer_slices(ds.feature_names);
  return ds;
}

inline Dataset load_csv(const std::string& path, const std::string& target_column = "target",
                        bool require_target = true) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return parse_csv(in, target_column, require_target);
}

/// Feature columns in order, then the target column. Values use the
/// shortest representation that parses back to the same double.
inline std::string to_csv(const Dataset& ds) {
  std::string out;
  for (const auto& n : ds.feature_names) out += n + ",";
  out += ds.target_name + "\n";
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    for (double v : ds.features[r]) {
      detail::append_double(out, v);
      out += ',';
    }
    detail::append_double(out, ds.targets[r]);
    out += '\n';
  }
  return out;
}

inline void save_csv(const std::string& path, const Dataset& ds) { write_text_file(path, to_csv(ds)); }

// --- synthetic two-drug data ---------------------------------------------------

struct SynthConfig {
  std::size_t n = 2000;
  std::size_t cell_dim = 8;
  std::size_t drug_dim = 8;
  double noise_std = 0.1;
  std::uint64_t seed = 0;
};

namespace synth {

// Cell response: (1/sqrt(dc)) sum sin(c_i).
inline double cell_effect(std::span<const double> c) {
  double s = 0.0;
  for (double x : c) s += std::sin(x);
  return s / std::sqrt(static_cast<double>(c.size()));
}

// Single-drug response: (1/sqrt(dd)) sum (0.5 d_j + 0.25 (d_j^2 - 1)).
inline double drug_effect(std::span<const double> d) {
  double s = 0.0;
  for (double x : d) s += 0.5 * x + 0.25 * (x * x - 1.0);
  return s / std::sqrt(static_cast<double>(d.size()));
}

// Pair synergy: (0.5/sqrt(dd)) sum a_j b_j.
inline double interaction(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) s += a[j] * b[j];
  return 0.5 * s / std::sqrt(static_cast<double>(a.size()));
}

/// Target variance for standard-normal features:
/// (1 - e^-2)/2 + 2 * 0.375 + 0.25 + noise^2.
inline double target_variance(double noise_std) {
  return (1.0 - std::exp(-2.0)) / 2.0 + 2.0 * 0.375 + 0.25 + noise_std * noise_std;
}

}  // namespace synth

/// Noise-free target for one synthetic row.
inline double combo_target(std::span<const double> x, const SynthConfig& cfg) {
  const auto cell = x.subspan(0, cfg.cell_dim);
  const auto a = x.subspan(cfg.cell_dim, cfg.drug_dim);
  const auto b = x.subspan(cfg.cell_dim + cfg.drug_dim, cfg.drug_dim);
  return synth::cell_effect(cell) + (synth::drug_effect(a) + synth::drug_effect(b)) + synth::interaction(a, b);
}

/// Features [cell | drug_a | drug_b], all standard normal, with a target
/// symmetric under swapping the two drugs.
inline Dataset synth_combo(const SynthConfig& cfg) {
  if (cfg.cell_dim < 1 || cfg.drug_dim < 1) throw std::invalid_argument("synth_combo dims must be >= 1");
  Dataset ds;
  for (std::size_t i = 0; i < cfg.cell_dim; ++i) ds.feature_names.push_back("cell_" + std::to_string(i));
  for (std::size_t i = 0; i < cfg.drug_dim; ++i) ds.feature_names.push_back("drug_a_" + std::to_string(i));
  for (std::size_t i = 0; i < cfg.drug_dim; ++i) ds.feature_names.push_back("drug_b_" + std::to_string(i));
  ds.slices = {{"cell", 0, cfg.cell_dim},
               {"drug_a", cfg.cell_dim, cfg.drug_dim},
               {"drug_b", cfg.cell_dim + cfg.drug_dim, cfg.drug_dim}};

  auto engine = make_engine(cfg.seed, stream::data);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t width = cfg.cell_dim + 2 * cfg.drug_dim;
  for (std::size_t r = 0; r < cfg.n; ++r) {
    std::vector<double> x(width);
    for (double& v : x) v = normal(engine);
    const double eps = normal(engine);
    ds.targets.push_back(combo_target(x, cfg) + cfg.noise_std * eps);
    ds.features.push_back(std::move(x));
  }
  return ds;
}

// --- normalization and splitting -------------------------------------------------

inline Scaler fit_scaler(const Dataset& train) {
  if (train.rows() == 0) throw std::invalid_argument("cannot fit a scaler on an empty data set");
  const std::size_t d = train.features.front().size();
  Scaler s;
  s.mean.assign(d, 0.0);
  s.scale.assign(d, 1.0);
  const double n = static_cast<double>(train.rows());
  for (std::size_t c = 0; c < d; ++c) {
    double sum = 0.0;
    for (const auto& row : train.features) sum += row[c];
    const double mean = sum / n;
    double ss = 0.0;
    for (const auto& row : train.features) ss += (row[c] - mean) * (row[c] - mean);
    const double sd = std::sqrt(ss / n);
    // Constant columns pass through untouched.
    if (sd > 1e-12 * std::max(1.0, std::abs(mean))) {
      s.mean[c] = mean;
      s.scale[c] = sd;
    }
  }
  return s;
}

inline std::vector<double> apply_scaler(const Scaler& s, std::span<const double> x) {
  if (s.empty()) return {x.begin(), x.end()};
  if (x.size() != s.mean.size()) throw std::invalid_argument("scaler width does not match row width");
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - s.mean[i]) / s.scale[i];
  return out;
}

inline std::vector<double> invert_scaler(const Scaler& s, std::span<const double> z) {
  if (s.empty()) return {z.begin(), z.end()};
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] * s.scale[i] + s.mean[i];
  return out;
}

inline Dataset transform(const Dataset& ds, const Scaler& s) {
  Dataset out = ds;
  for (auto& row : out.features) row = apply_scaler(s, row);
  return out;
}

struct Standardized {
  Dataset train;
  std::vector<Dataset> others;
  Scaler scaler;
};

/// Per-feature zero mean / unit variance using train statistics only.
inline Standardized standardize(const Dataset& train, const std::vector<Dataset>& others = {}) {
  Standardized out;
  out.scaler = fit_scaler(train);
  out.train = transform(train, out.scaler);
  for (const auto& o : others) out.others.push_back(transform(o, out.scaler));
  return out;
}

inline Dataset select_rows(const Dataset& ds, const std::vector<std::size_t>& rows) {
  Dataset out;
  out.feature_names = ds.feature_names;
  out.target_name = ds.target_name;
  out.slices = ds.slices;
  for (std::size_t r : rows) {
    out.features.push_back(ds.features.at(r));
    out.targets.push_back(ds.targets.at(r));
  }
  return out;
}

/// Seeded shuffle then split; the two parts partition the rows.
inline std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw std::invalid_argument("test fraction must be in [0, 1)");
  std::vector<std::size_t> idx(ds.rows());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto engine = make_engine(seed, stream::split);
  for (std::size_t i = idx.size(); i > 1; --i) {
    const auto j = std::min(i - 1, static_cast<std::size_t>(uniform01(engine) * static_cast<double>(i)));
    std::swap(idx[i - 1], idx[j]);
  }
  const auto n_test = static_cast<std::size_t>(std::round(test_fraction * static_cast<double>(ds.rows())));
  std::vector<std::size_t> test(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> train(idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {select_rows(ds, train), select_rows(ds, test)};
}

inline TrainingData to_training_data(const Dataset& ds) {
  TrainingData td;
  td.inputs = ds.features;
  for (double t : ds.targets) td.targets.push_back({t});
  return td;
}

}  // namespace permadrop
