#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <string>
#include <vector>

#include "sterf/erf.hpp"
#include "sterf/network.hpp"
#include "sterf/tensor.hpp"

namespace sterf {
namespace oracle {

// Independent verification machinery. jacobian_aggregate re-derives the
// loss-derived shortcut from its definition (one backward pass per output
// element); finite_difference avoids the backward rules entirely and only
// re-evaluates forward passes.

struct ComparisonReport {
  double max_abs_diff = 0.0;
  double max_rel_diff = 0.0;
  std::array<std::size_t, 5> worst_index{};  // of max_abs_diff
  bool pass = true;
  double atol = 0.0, rtol = 0.0;

  std::string str() const {
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "max_abs=%.3e max_rel=%.3e worst=(%zu,%zu,%zu,%zu,%zu) %s",
                  max_abs_diff, max_rel_diff, worst_index[0], worst_index[1],
                  worst_index[2], worst_index[3], worst_index[4],
                  pass ? "PASS" : "FAIL");
    return buf;
  }
};

// Elementwise rule: an element passes if |a-b| <= atol or
// |a-b| <= rtol * max(|a|,|b|); the report passes if every element does.
inline ComparisonReport compare(const Tensor5& a, const Tensor5& b,
                                double atol, double rtol) {
  if (a.shape() != b.shape())
    throw ShapeError("compare: shape mismatch " + a.shape().str() + " vs " +
                     b.shape().str());
  ComparisonReport rep;
  rep.atol = atol;
  rep.rtol = rtol;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double diff = std::fabs(a[i] - b[i]);
    const double mag = std::max(std::fabs(a[i]), std::fabs(b[i]));
    const double rel = mag > 0.0 ? diff / mag : 0.0;
    if (diff > rep.max_abs_diff) {
      rep.max_abs_diff = diff;
      rep.worst_index = a.unravel(i);
    }
    rep.max_rel_diff = std::max(rep.max_rel_diff, rel);
    if (!(diff <= atol || diff <= rtol * mag)) rep.pass = false;
  }
  return rep;
}

inline ComparisonReport compare(const std::vector<double>& a,
                                const std::vector<double>& b, double atol,
                                double rtol) {
  if (a.size() != b.size())
    throw ShapeError("compare: length mismatch");
  Tensor5 ta(Shape5{1, 1, 1, 1, a.size()}, a);
  Tensor5 tb(Shape5{1, 1, 1, 1, b.size()}, b);
  return compare(ta, tb, atol, rtol);
}

// Definitional ST-ERF aggregation: one one-hot backward pass per output
// element carrying nonzero stimulus weight, accumulated in output-index
// order. Shares only the forward evaluator and per-op backward rules with
// the single-pass path; the stimulus-seeding shortcut itself is bypassed.
inline Tensor5 jacobian_aggregate(const Network& net,
                                  const std::string& stimulus_boundary,
                                  const Tensor5& stimulus,
                                  const Tensor5& input,
                                  const std::string& read = "input") {
  Network::RunResult run = net.run(input, stimulus_boundary);
  const int probe_id = run.boundary(stimulus_boundary);
  const int read_id = run.boundary(read);
  const Tensor5& out = run.tape.value(probe_id);
  if (stimulus.shape() != out.shape())
    throw ShapeError("jacobian_aggregate: stimulus shape mismatch");
  if (out.numel() > 4096)
    throw ConfigError("jacobian_aggregate: instance too large (" +
                      std::to_string(out.numel()) + " output elements > 4096)");

  Tensor5 acc(run.tape.value(read_id).shape());
  Tensor5 onehot(out.shape());
  BackwardOptions bo;
  bo.keep_adjoints.push_back(read_id);
  for (std::size_t i = 0; i < stimulus.numel(); ++i) {
    if (stimulus[i] == 0.0) continue;
    onehot[i] = 1.0;
    BackwardResult back = run.tape.backward_from_stimulus(probe_id, onehot, bo);
    onehot[i] = 0.0;
    auto it = back.kept.find(read_id);
    if (it == back.kept.end()) continue;
    const Tensor5& g = it->second;
    for (std::size_t j = 0; j < acc.numel(); ++j)
      acc[j] += stimulus[i] * g[j];
  }
  return acc;
}

// Central differences of the scalar <stimulus, boundary value> with respect
// to every input element. Only meaningful against the soft-mode forward.
inline Tensor5 finite_difference(const Network& net,
                                 const std::string& stimulus_boundary,
                                 const Tensor5& stimulus, const Tensor5& input,
                                 double h = 1e-5) {
  if (net.spec().neuron.mode == NeuronMode::Spike)
    throw ConfigError(
        "finite_difference: spike mode requested; finite differences are "
        "meaningless on the Heaviside forward (use soft mode)");
  if (!(h >= 1e-7 && h <= 1e-3))
    throw ConfigError("finite_difference: step h must be in [1e-7, 1e-3]");

  auto objective = [&](const Tensor5& x) {
    Network::RunResult run = net.run(x, stimulus_boundary);
    const Tensor5& out = run.tape.value(run.boundary(stimulus_boundary));
    if (stimulus.shape() != out.shape())
      throw ShapeError("finite_difference: stimulus shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < out.numel(); ++i) acc += stimulus[i] * out[i];
    return acc;
  };

  Tensor5 grad(input.shape());
  Tensor5 x = input;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double fp = objective(x);
    x[i] = x0 - h;
    const double fm = objective(x);
    x[i] = x0;
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

// Influence of x[T-tau] on the membrane v[T] in a sub-threshold soft-reset
// chain: each step multiplies by the decay constant, nothing else.
inline double lif_chain_closed_form(const LifParams& params, std::size_t T,
                                    std::size_t tau) {
  if (tau >= T)
    throw ConfigError("lif_chain_closed_form: tau must be < T");
  double acc = 1.0;
  for (std::size_t i = 0; i < tau; ++i) acc *= params.beta;
  return acc;
}

}  // namespace oracle
}  // namespace sterf
