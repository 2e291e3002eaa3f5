#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "sterf/network.hpp"
#include "sterf/rng.hpp"
#include "sterf/tape.hpp"
#include "sterf/tensor.hpp"

namespace sterf {

// Loss-derived ST-ERF measurement. A gradient stimulus is hand-planted on
// the probed boundary's adjoint and one backward pass yields the full
// aggregated receptive field; the oracle module re-derives the same
// quantity element by element to certify this shortcut.

// Unit adjoint at the center spatial position for every (t, b, c). The
// spatial-ERF stimulus of the measurement protocol.
inline Tensor5 make_spatial_stimulus(Shape5 out_shape) {
  Tensor5 s(out_shape);
  const std::size_t ch = out_shape.h / 2, cw = out_shape.w / 2;
  for (std::size_t t = 0; t < out_shape.t; ++t)
    for (std::size_t b = 0; b < out_shape.b; ++b)
      for (std::size_t c = 0; c < out_shape.c; ++c)
        s.at(t, b, c, ch, cw) = 1.0;
  return s;
}

// Unit adjoint at every spatial position of the final timestep only.
inline Tensor5 make_temporal_stimulus(Shape5 out_shape) {
  Tensor5 s(out_shape);
  const std::size_t t = out_shape.t - 1;
  for (std::size_t b = 0; b < out_shape.b; ++b)
    for (std::size_t c = 0; c < out_shape.c; ++c)
      for (std::size_t h = 0; h < out_shape.h; ++h)
        for (std::size_t w = 0; w < out_shape.w; ++w)
          s.at(t, b, c, h, w) = 1.0;
  return s;
}

enum class ChannelAgg { Sum, Mean };

struct ErfOptions {
  std::string probe = "output";  // boundary receiving the stimulus
  std::string read = "input";    // boundary whose adjoint is aggregated
  std::size_t samples = 60;      // per the measurement protocol
  std::uint64_t seed = 42;
  ChannelAgg channels = ChannelAgg::Sum;
  std::size_t threads = 0;       // 0: hardware limit, capped by STERF_THREADS
};

struct ErfMeta {
  std::size_t samples = 0;
  std::uint64_t seed = 0;
  std::string probe, read;
  std::size_t timesteps = 0;
};

struct ErfSpatial {
  std::vector<double> grid;  // signed, row-major H x W
  std::size_t h = 0, w = 0;
  ErfMeta meta;

  double at(std::size_t r, std::size_t c) const { return grid[r * w + c]; }
};

struct ErfTemporal {
  std::vector<double> values;  // indexed by delay tau = 0..T-1
  ErfMeta meta;
};

namespace detail {

inline std::size_t resolve_threads(std::size_t requested, std::size_t jobs) {
  std::size_t n = requested;
  if (n == 0) {
    n = std::thread::hardware_concurrency();
    if (n == 0) n = 1;
  }
  if (const char* env = std::getenv("STERF_THREADS")) {
    char* end = nullptr;
    const unsigned long cap = std::strtoul(env, &end, 10);
    if (end != env && cap > 0) n = std::min<std::size_t>(n, cap);
  }
  return std::max<std::size_t>(1, std::min(n, jobs));
}

// Runs fn(k) for k in [0, jobs) on a small pool. Results must be written
// into per-k slots by the caller; reduction stays sequential so thread
// count never changes output bits.
template <typename Fn>
void parallel_for(std::size_t jobs, std::size_t threads, Fn&& fn) {
  const std::size_t n = resolve_threads(threads, jobs);
  if (n <= 1) {
    for (std::size_t k = 0; k < jobs; ++k) fn(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr err;
  std::mutex err_mu;
  pool.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    pool.emplace_back([&] {
      while (true) {
        const std::size_t k = next.fetch_add(1);
        if (k >= jobs) return;
        try {
          fn(k);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mu);
          if (!err) err = std::current_exception();
          return;
        }
      }
    });
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

// Average over t, aggregate channels, mean over batch -> signed H x W grid.
inline std::vector<double> reduce_spatial(const Tensor5& grad,
                                          ChannelAgg channels) {
  const Shape5& s = grad.shape();
  std::vector<double> grid(s.h * s.w, 0.0);
  for (std::size_t t = 0; t < s.t; ++t)
    for (std::size_t b = 0; b < s.b; ++b)
      for (std::size_t c = 0; c < s.c; ++c)
        for (std::size_t h = 0; h < s.h; ++h)
          for (std::size_t w = 0; w < s.w; ++w)
            grid[h * s.w + w] += grad.at(t, b, c, h, w);
  double scale = 1.0 / static_cast<double>(s.t * s.b);
  if (channels == ChannelAgg::Mean) scale /= static_cast<double>(s.c);
  for (double& v : grid) v *= scale;
  return grid;
}

// Sum over (b, c, h, w) per delay tau; values[tau] aggregates input
// timestep T - tau (array index T-1-tau).
inline std::vector<double> reduce_temporal(const Tensor5& grad) {
  const Shape5& s = grad.shape();
  std::vector<double> values(s.t, 0.0);
  const std::size_t step = s.b * s.c * s.h * s.w;
  for (std::size_t tau = 0; tau < s.t; ++tau) {
    const double* p = grad.data() + (s.t - 1 - tau) * step;
    double acc = 0.0;
    for (std::size_t i = 0; i < step; ++i) acc += p[i];
    values[tau] = acc;
  }
  return values;
}

enum class StimulusKind { Spatial, Temporal };

// One sample of the protocol: draw input, forward to the probed boundary,
// plant the stimulus, backward, read the adjoint at the read boundary.
inline Tensor5 erf_sample_gradient(const Network& net, const ErfOptions& opt,
                                   std::uint64_t sample_seed,
                                   StimulusKind kind) {
  const Tensor5 input = randn(net.input_shape(), sample_seed);
  Network::RunResult run = net.run(input, opt.probe);
  const int probe_id = run.boundary(opt.probe);
  const int read_id = run.boundary(opt.read);
  const Tensor5 stimulus = kind == StimulusKind::Spatial
                               ? make_spatial_stimulus(run.tape.value(probe_id).shape())
                               : make_temporal_stimulus(run.tape.value(probe_id).shape());
  BackwardOptions bo;
  bo.keep_adjoints.push_back(read_id);
  BackwardResult back = run.tape.backward_from_stimulus(probe_id, stimulus, bo);
  auto it = back.kept.find(read_id);
  if (it != back.kept.end()) return it->second;
  return Tensor5(run.tape.value(read_id).shape());  // no path: zero gradient
}

}  // namespace detail

// Single-sample spatial ERF with an explicit stream seed; the multi-sample
// protocol averages these in sample order.
inline std::vector<double> spatial_erf_single(const Network& net,
                                              const ErfOptions& opt,
                                              std::uint64_t sample_seed) {
  return detail::reduce_spatial(
      detail::erf_sample_gradient(net, opt, sample_seed,
                                  detail::StimulusKind::Spatial),
      opt.channels);
}

inline std::vector<double> temporal_erf_single(const Network& net,
                                               const ErfOptions& opt,
                                               std::uint64_t sample_seed) {
  return detail::reduce_temporal(detail::erf_sample_gradient(
      net, opt, sample_seed, detail::StimulusKind::Temporal));
}

inline ErfSpatial spatial_erf(const Network& net, const ErfOptions& opt) {
  if (opt.samples == 0) throw ConfigError("spatial_erf: samples must be >= 1");
  std::vector<std::vector<double>> per_sample(opt.samples);
  Shape5 read_shape;  // grid dims follow the read boundary
  detail::parallel_for(opt.samples, opt.threads, [&](std::size_t k) {
    const Tensor5 grad = detail::erf_sample_gradient(
        net, opt, derive_seed(opt.seed, k), detail::StimulusKind::Spatial);
    if (k == 0) read_shape = grad.shape();
    per_sample[k] = detail::reduce_spatial(grad, opt.channels);
  });

  ErfSpatial out;
  out.grid.assign(per_sample[0].size(), 0.0);
  for (std::size_t k = 0; k < opt.samples; ++k)
    for (std::size_t i = 0; i < out.grid.size(); ++i)
      out.grid[i] += per_sample[k][i];
  for (double& v : out.grid) v /= static_cast<double>(opt.samples);

  out.h = read_shape.h;
  out.w = read_shape.w;
  out.meta = {opt.samples, opt.seed, opt.probe, opt.read, net.spec().timesteps};
  for (double v : out.grid)
    if (!std::isfinite(v)) throw NumericError("spatial_erf: non-finite grid");
  return out;
}

inline ErfTemporal temporal_erf(const Network& net, const ErfOptions& opt) {
  if (opt.samples == 0) throw ConfigError("temporal_erf: samples must be >= 1");
  std::vector<std::vector<double>> per_sample(opt.samples);
  detail::parallel_for(opt.samples, opt.threads, [&](std::size_t k) {
    per_sample[k] = temporal_erf_single(net, opt, derive_seed(opt.seed, k));
  });

  ErfTemporal out;
  out.values.assign(per_sample[0].size(), 0.0);
  for (std::size_t k = 0; k < opt.samples; ++k)
    for (std::size_t i = 0; i < out.values.size(); ++i)
      out.values[i] += per_sample[k][i];
  for (double& v : out.values) v /= static_cast<double>(opt.samples);
  out.meta = {opt.samples, opt.seed, opt.probe, opt.read, net.spec().timesteps};
  for (double v : out.values)
    if (!std::isfinite(v)) throw NumericError("temporal_erf: non-finite values");
  return out;
}

// ---- spread metrics ----

struct SpreadReport {
  double r95 = 0.0;             // radius around the centroid holding 95% mass
  double centroid_row = 0.0, centroid_col = 0.0;
  double mass_entropy = 0.0;    // Shannon entropy (nats) of normalized |grid|
  bool zero_mass = false;
};

inline SpreadReport spread_metrics(const ErfSpatial& erf) {
  SpreadReport rep;
  const std::size_t n = erf.grid.size();
  double mass = 0.0;
  for (double v : erf.grid) mass += std::fabs(v);
  if (mass == 0.0) {
    rep.zero_mass = true;
    rep.centroid_row = static_cast<double>(erf.h - 1) / 2.0;
    rep.centroid_col = static_cast<double>(erf.w - 1) / 2.0;
    return rep;
  }

  std::vector<double> m(n);
  for (std::size_t i = 0; i < n; ++i) m[i] = std::fabs(erf.grid[i]) / mass;

  for (std::size_t r = 0; r < erf.h; ++r)
    for (std::size_t c = 0; c < erf.w; ++c) {
      rep.centroid_row += m[r * erf.w + c] * static_cast<double>(r);
      rep.centroid_col += m[r * erf.w + c] * static_cast<double>(c);
    }

  std::vector<std::pair<double, double>> by_dist;  // (distance, mass)
  by_dist.reserve(n);
  for (std::size_t r = 0; r < erf.h; ++r)
    for (std::size_t c = 0; c < erf.w; ++c) {
      const double dr = static_cast<double>(r) - rep.centroid_row;
      const double dc = static_cast<double>(c) - rep.centroid_col;
      by_dist.emplace_back(std::sqrt(dr * dr + dc * dc), m[r * erf.w + c]);
    }
  std::sort(by_dist.begin(), by_dist.end());
  double acc = 0.0;
  for (const auto& [d, mm] : by_dist) {
    acc += mm;
    if (acc >= 0.95 - 1e-12) {
      rep.r95 = d;
      break;
    }
  }

  for (double mi : m)
    if (mi > 0.0) rep.mass_entropy -= mi * std::log(mi);
  return rep;
}

// Heatmap normalization: (|g| / max|g|)^gamma; gamma < 1 lifts the tails.
inline std::vector<double> normalize_for_viz(const ErfSpatial& erf,
                                             double gamma = 0.5) {
  if (!(gamma > 0.0) || gamma > 1.0)
    throw ConfigError("normalize_for_viz: gamma must be in (0, 1]");
  std::vector<double> out(erf.grid.size(), 0.0);
  double peak = 0.0;
  for (double v : erf.grid) peak = std::max(peak, std::fabs(v));
  if (peak == 0.0) return out;
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::pow(std::fabs(erf.grid[i]) / peak, gamma);
  return out;
}

}  // namespace sterf
