#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace permadrop {

/// Constants shared by the LIF rate curve, its SoftLIF smoothing and the
/// spiking simulator. Times are in seconds, currents and voltages are
/// dimensionless (threshold-normalized).
struct NeuronParams {
  double tau_ref = 0.002;  // refractory period
  double tau_rc = 0.02;    // membrane time constant
  double v_th = 1.0;       // firing threshold
  double gamma = 0.02;     // softplus smoothing, training only
  // Network-level output scale: a layer emits amplitude * rate and a spike
  // carries area amplitude / dt. The rate functions below stay in Hz.
  double amplitude = 1.0;

  void validate() const {
    if (!(tau_ref >= 0.0)) throw std::invalid_argument("tau_ref must be >= 0");
    if (!(tau_rc > 0.0)) throw std::invalid_argument("tau_rc must be > 0");
    if (!(v_th > 0.0)) throw std::invalid_argument("v_th must be > 0");
    if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be > 0");
    if (!(amplitude > 0.0)) throw std::invalid_argument("amplitude must be > 0");
  }

  friend bool operator==(const NeuronParams&, const NeuronParams&) = default;
};

/// Membrane state of one LIF neuron between simulation steps.
struct LifState {
  double voltage = 0.0;
  double refractory_remaining = 0.0;
};

namespace detail {

// ln(1 + e^t) without overflow for large t or underflow to 0 for small t.
inline double log1p_exp(double t) {
  if (t > 0.0) return t + std::log1p(std::exp(-t));
  return std::log1p(std::exp(t));
}

// ln(ln(1 + e^t)); for very negative t the inner term is e^t to double
// precision, so the result is t itself.
inline double log_log1p_exp(double t) {
  if (t < -30.0) return t;
  return std::log(log1p_exp(t));
}

inline double logistic(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

}  // namespace detail

/// Steady-state firing rate (Hz) of a LIF neuron driven by a constant
/// current. Zero at and below threshold.
inline double lif_rate(double current, const NeuronParams& p) {
  const double excess = current - p.v_th;
  if (excess <= 0.0) return 0.0;
  return 1.0 / (p.tau_ref + p.tau_rc * std::log1p(p.v_th / excess));
}

/// Smooth rectifier gamma * ln(1 + e^(x / gamma)); tends to max(0, x) as
/// gamma -> 0.
inline double softplus_gamma(double x, double gamma) {
  return gamma * detail::log1p_exp(x / gamma);
}

/// LIF rate curve with the hard rectifier replaced by softplus_gamma.
/// Strictly positive and monotone increasing for every finite current.
inline double softlif_rate(double current, const NeuronParams& p) {
  const double t = (current - p.v_th) / p.gamma;
  // ln(v_th / sigma), carried in log space so tiny sigma does not underflow.
  const double log_ratio = std::log(p.v_th) - std::log(p.gamma) - detail::log_log1p_exp(t);
  const double log_term = detail::log1p_exp(log_ratio);
  return 1.0 / (p.tau_ref + p.tau_rc * log_term);
}

/// d softlif_rate / d current, analytic.
inline double softlif_rate_grad(double current, const NeuronParams& p) {
  const double t = (current - p.v_th) / p.gamma;
  const double rate = softlif_rate(current, p);
  // logistic(t) / sigma and sigma + v_th, both finite for any t.
  double logistic_over_sigma;
  double sigma_plus_vth;
  if (t < -30.0) {
    logistic_over_sigma = 1.0 / p.gamma;
    sigma_plus_vth = p.v_th;
  } else {
    const double sigma = softplus_gamma(current - p.v_th, p.gamma);
    logistic_over_sigma = detail::logistic(t) / sigma;
    sigma_plus_vth = sigma + p.v_th;
  }
  return rate * rate * p.tau_rc * p.v_th * logistic_over_sigma / sigma_plus_vth;
}

struct LifStepResult {
  LifState state;
  bool spiked = false;
};

/// Advance one neuron by dt using the exact exponential solution of the
/// membrane equation for a constant current over the step. A step that
/// ends the refractory period integrates only the remainder of dt. A spike
/// is reported at the end of the step in which the threshold is crossed,
/// but the refractory period is timed from the interpolated crossing, so
/// inter-spike intervals are not rounded up to whole steps. The voltage is
/// clamped at 0 from below.
inline LifStepResult lif_step(LifState state, double input_current, double dt,
                              const NeuronParams& p) {
  double integrate_dt = dt;
  if (state.refractory_remaining > 0.0) {
    if (state.refractory_remaining >= dt) {
      state.refractory_remaining -= dt;
      return {state, false};
    }
    integrate_dt = dt - state.refractory_remaining;
    state.refractory_remaining = 0.0;
  }

  const double decay = std::exp(-integrate_dt / p.tau_rc);
  double v = input_current + (state.voltage - input_current) * decay;
  v = std::max(v, 0.0);

  if (v >= p.v_th) {
    // Time between the crossing and the end of the step.
    double since_crossing = 0.0;
    if (input_current > v)
      since_crossing = p.tau_rc * std::log((input_current - p.v_th) / (input_current - v));
    since_crossing = std::clamp(since_crossing, 0.0, integrate_dt);
    state.voltage = 0.0;
    state.refractory_remaining = std::max(0.0, p.tau_ref - since_crossing);
    return {state, true};
  }
  state.voltage = v;
  return {state, false};
}

}  // namespace permadrop
