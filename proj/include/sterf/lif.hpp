#pragma once

#include <cmath>
#include <string>

#include "sterf/errors.hpp"

namespace sterf {

enum class ResetKind { Soft, Hard };

// Neuron modes:
//   Spike: Heaviside forward (fires at exact threshold), rectangle
//          surrogate backward.
//   Soft:  clamp((v - theta)/a + 1/2, 0, 1) forward -- the antiderivative
//          of the rectangle surrogate, so finite differences of the
//          forward pass validate the same gradient the spike mode uses.
enum class NeuronMode { Spike, Soft };

struct LifParams {
  double beta = 0.5;    // membrane decay, in (0, 1]
  double theta = 1.0;   // firing threshold, > 0
  ResetKind reset = ResetKind::Soft;
  double a = 1.0;       // surrogate window width, > 0
  NeuronMode mode = NeuronMode::Spike;

  void validate() const {
    if (!(beta > 0.0) || !(beta <= 1.0))
      throw ConfigError("LifParams: beta must be in (0,1], got " +
                        std::to_string(beta));
    if (!(theta > 0.0))
      throw ConfigError("LifParams: theta must be > 0, got " +
                        std::to_string(theta));
    if (!(a > 0.0))
      throw ConfigError("LifParams: surrogate width a must be > 0, got " +
                        std::to_string(a));
  }
};

namespace lif {

// Firing nonlinearity applied to the membrane v.
inline double fire(double v, const LifParams& p) {
  if (p.mode == NeuronMode::Spike) return v - p.theta >= 0.0 ? 1.0 : 0.0;
  double s = (v - p.theta) / p.a + 0.5;
  if (s < 0.0) return 0.0;
  if (s > 1.0) return 1.0;
  return s;
}

// Rectangle surrogate: ds/dv = (1/a) * 1[|v - theta| < a/2]. In soft mode
// this is the exact derivative of fire() away from the clamp boundary.
inline double surrogate(double v, const LifParams& p) {
  return std::fabs(v - p.theta) < 0.5 * p.a ? 1.0 / p.a : 0.0;
}

// Post-spike membrane update h[t] given pre-reset membrane v and spike s.
inline double reset(double v, double s, const LifParams& p) {
  if (p.reset == ResetKind::Soft) return p.beta * v - p.theta * s;
  return v * (1.0 - s);
}

// Partials of reset() with s held fixed / v held fixed.
inline double reset_dv(double v, double s, const LifParams& p) {
  (void)v;
  return p.reset == ResetKind::Soft ? p.beta : 1.0 - s;
}
inline double reset_ds(double v, const LifParams& p) {
  return p.reset == ResetKind::Soft ? -p.theta : -v;
}

}  // namespace lif

// Elementwise rectangle-surrogate factors for a membrane tensor; exposed
// as a standalone op for tests and analysis.
template <typename TensorT>
TensorT surrogate_grad(const TensorT& v, const LifParams& p) {
  TensorT out(v.shape());
  for (std::size_t i = 0; i < v.numel(); ++i) out[i] = lif::surrogate(v[i], p);
  return out;
}

}  // namespace sterf
