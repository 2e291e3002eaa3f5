#pragma once

// Shared test helpers: finite-difference and brute-force Jacobian oracles
// over raw tape builders, plus generators for randomized small networks.
// These deliberately re-derive gradients without touching the backward
// rules, so tape/oracle divergence pinpoints backward bugs.

#include <cmath>
#include <functional>
#include <vector>

#include "sterf/sterf.hpp"

namespace testsup {

using namespace sterf;

// Builds a fresh tape around `input` and returns the output node id.
using TapeBuilder = std::function<int(Tape&, int input_node)>;

inline double objective(const ParamStore& params, const TapeBuilder& build,
                        const Tensor5& input, const Tensor5& stimulus) {
  Tape tape(&params);
  const int in = tape.input(input);
  const int out = build(tape, in);
  const Tensor5& y = tape.value(out);
  double acc = 0.0;
  for (std::size_t i = 0; i < y.numel(); ++i) acc += stimulus[i] * y[i];
  return acc;
}

// Central differences of <stimulus, output> w.r.t. every input element.
inline Tensor5 fd_input_gradient(const ParamStore& params,
                                 const TapeBuilder& build, Tensor5 input,
                                 const Tensor5& stimulus, double h = 1e-5) {
  Tensor5 grad(input.shape());
  for (std::size_t i = 0; i < input.numel(); ++i) {
    const double x0 = input[i];
    input[i] = x0 + h;
    const double fp = objective(params, build, input, stimulus);
    input[i] = x0 - h;
    const double fm = objective(params, build, input, stimulus);
    input[i] = x0;
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

// Central differences w.r.t. one named parameter tensor.
inline std::vector<double> fd_param_gradient(ParamStore& params,
                                             const TapeBuilder& build,
                                             const Tensor5& input,
                                             const Tensor5& stimulus,
                                             int param_id, double h = 1e-5) {
  ParamTensor& p = params.at(param_id);
  std::vector<double> grad(p.data.size(), 0.0);
  for (std::size_t i = 0; i < p.data.size(); ++i) {
    const double w0 = p.data[i];
    p.data[i] = w0 + h;
    const double fp = objective(params, build, input, stimulus);
    p.data[i] = w0 - h;
    const double fm = objective(params, build, input, stimulus);
    p.data[i] = w0;
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

// Full dense Jacobian d(output)/d(input) via one-hot backward passes.
// Row r = gradient of output element r.
inline std::vector<Tensor5> brute_jacobian_rows(const ParamStore& params,
                                                const TapeBuilder& build,
                                                const Tensor5& input) {
  Tape tape(&params);
  const int in = tape.input(input);
  const int out = build(tape, in);
  const Tensor5& y = tape.value(out);
  std::vector<Tensor5> rows;
  rows.reserve(y.numel());
  Tensor5 onehot(y.shape());
  for (std::size_t r = 0; r < y.numel(); ++r) {
    onehot[r] = 1.0;
    auto res = tape.backward_from_stimulus(out, onehot);
    onehot[r] = 0.0;
    rows.push_back(std::move(res.input_adjoints[0]));
  }
  return rows;
}

inline double max_abs(const Tensor5& a) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::fabs(a[i]));
  return m;
}

inline double max_abs_diff(const Tensor5& a, const Tensor5& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

// Chebyshev distance from the spatial center of an (H, W) grid.
inline std::size_t chebyshev_from_center(std::size_t h, std::size_t w,
                                         std::size_t r, std::size_t c) {
  const long dr = static_cast<long>(r) - static_cast<long>(h / 2);
  const long dc = static_cast<long>(c) - static_cast<long>(w / 2);
  return static_cast<std::size_t>(std::max(std::labs(dr), std::labs(dc)));
}

// Smallest distance of any membrane value to the surrogate window edges
// across every Lif node of a run; FD tests require this to stay well above
// the step size so no kink is crossed.
inline double min_window_margin(const Tape& tape, const LifParams& p) {
  double margin = 1e300;
  for (std::size_t id = 0; id < tape.size(); ++id) {
    const Node& n = tape.node(static_cast<int>(id));
    if (n.op != OpKind::Lif) continue;
    const Tensor5& v = std::get<LifAttrs>(n.attrs).membrane;
    for (std::size_t i = 0; i < v.numel(); ++i) {
      const double d = std::fabs(std::fabs(v[i] - p.theta) - 0.5 * p.a);
      margin = std::min(margin, d);
    }
  }
  return margin;
}

// Randomized one-stage architecture for the oracle-equivalence sweeps:
// small enough for element-by-element aggregation, still covering every
// mixer kind, both token mixers, both resets and strides.
inline ArchSpec random_small_arch(std::uint64_t seed, NeuronMode mode) {
  Rng rng(seed);
  auto pick = [&](std::size_t n) {
    return static_cast<std::size_t>(rng.next_u64() % n);
  };
  ArchSpec s;
  s.timesteps = 1 + pick(3);            // T <= 3
  s.in_c = 1 + pick(2);
  s.in_h = 8 + 2 * pick(5);             // 8..16
  s.in_w = s.in_h;
  s.seed = rng.next_u64();
  s.neuron.mode = mode;
  s.neuron.beta = 0.3 + 0.2 * static_cast<double>(pick(3));
  s.neuron.reset = pick(2) ? ResetKind::Soft : ResetKind::Hard;
  s.neuron.a = mode == NeuronMode::Soft ? 4.0 : 1.0 + static_cast<double>(pick(2));
  StageSpec st;
  st.kernel = pick(2) ? 3 : 7;
  st.stride = 1 + pick(2);
  st.dim = 2 + 2 * pick(2);             // 2 or 4
  const MixerTag tags[3] = {MixerTag::ConvK3, MixerTag::Mlpixer, MixerTag::Srb};
  BlockSpec blk;
  blk.token_mixer = pick(4) == 0 ? TokenMixer::AttentionStandin : TokenMixer::Ssc;
  blk.channel_mixer = {tags[pick(3)], 2.0};
  st.blocks.push_back(blk);
  s.stages.push_back(st);
  return s;
}

}  // namespace testsup
