#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace permadrop {

struct KsResult {
  double statistic_d = 0.0;
  double p_value = 1.0;
  std::size_t n = 0;
  std::size_t m = 0;
};

/// sup_x |F_a(x) - F_b(x)| for right-continuous empirical CDFs. Ties are
/// consumed on both sides before the gap is measured.
inline double ecdf_sup_distance(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("ecdf_sup_distance needs two non-empty samples");
  std::vector<double> x(a.begin(), a.end());
  std::vector<double> y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const double n = static_cast<double>(x.size());
  const double m = static_cast<double>(y.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < x.size() && j < y.size()) {
    const double v = std::min(x[i], y[j]);
    while (i < x.size() && x[i] == v) ++i;
    while (j < y.size() && y[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / n - static_cast<double>(j) / m));
  }
  // Past the end of either sample the remaining gap only shrinks.
  return d;
}

/// Asymptotic Kolmogorov survival function Q(lambda) = 2 sum_k (-1)^(k-1)
/// exp(-2 k^2 lambda^2). Terms are summed until they drop below 1e-12
/// (at most 100); a series that has not converged by then means lambda is
/// small enough that Q is 1.
inline double kolmogorov_survival(double lambda) {
  const double a = -2.0 * lambda * lambda;
  double sum = 0.0;
  double sign = 1.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(a * k * k);
    sum += sign * term;
    if (term < 1e-12) return std::clamp(2.0 * sum, 0.0, 1.0);
    sign = -sign;
  }
  return 1.0;
}

/// Two-sample asymptotic p-value, effective size n*m/(n+m), no continuity
/// correction.
inline double ks_p_value(double d, std::size_t n, std::size_t m) {
  if (n == 0 || m == 0) throw std::invalid_argument("ks_p_value needs positive sample sizes");
  const double ne = static_cast<double>(n) * static_cast<double>(m) / static_cast<double>(n + m);
  return kolmogorov_survival(std::sqrt(ne) * d);
}

inline KsResult ks_two_sample(std::span<const double> a, std::span<const double> b) {
  KsResult r;
  r.statistic_d = ecdf_sup_distance(a, b);
  r.n = a.size();
  r.m = b.size();
  r.p_value = ks_p_value(r.statistic_d, r.n, r.m);
  return r;
}

struct UniformityReport {
  double fraction_below_005 = 0.0;
  double ks_vs_uniform_d = 0.0;
  double ks_vs_uniform_p = 1.0;
  std::array<std::size_t, 10> histogram{};  // counts over [0,1] in tenths; 1.0 lands in the last bin
};

/// One-sample KS distance of sorted data against the Uniform(0,1) CDF.
inline double uniform_sup_distance(std::span<const double> values) {
  std::vector<double> s(values.begin(), values.end());
  std::sort(s.begin(), s.end());
  const double n = static_cast<double>(s.size());
  double d = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double x = std::clamp(s[i], 0.0, 1.0);
    d = std::max({d, static_cast<double>(i + 1) / n - x, x - static_cast<double>(i) / n});
  }
  return d;
}

/// How close a collection of p-values is to Uniform(0,1).
inline UniformityReport pvalue_uniformity(std::span<const double> pvalues) {
  if (pvalues.empty()) throw std::invalid_argument("pvalue_uniformity needs at least one p-value");
  UniformityReport r;
  std::size_t below = 0;
  for (double p : pvalues) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("p-value " + std::to_string(p) + " outside [0, 1]");
    if (p < 0.05) ++below;
    const auto bin = std::min<std::size_t>(9, static_cast<std::size_t>(p * 10.0));
    ++r.histogram[bin];
  }
  r.fraction_below_005 = static_cast<double>(below) / static_cast<double>(pvalues.size());
  r.ks_vs_uniform_d = uniform_sup_distance(pvalues);
  r.ks_vs_uniform_p = kolmogorov_survival(std::sqrt(static_cast<double>(pvalues.size())) * r.ks_vs_uniform_d);
  return r;
}

}  // namespace permadrop
