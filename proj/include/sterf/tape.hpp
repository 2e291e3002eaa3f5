#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "sterf/errors.hpp"
#include "sterf/lif.hpp"
#include "sterf/params.hpp"
#include "sterf/tensor.hpp"

namespace sterf {

// Tape-based reverse-mode autodiff over Tensor5 values.
//
// Every operation evaluates eagerly and records a node; node inputs always
// reference smaller ids, so one reverse sweep in id order is a valid
// topological backward pass. A tape belongs to a single thread for the
// duration of a forward/backward; distinct tapes only share the read-only
// ParamStore.

enum class OpKind {
  Input,
  Conv2d,
  PixelwiseLinear,
  BatchNorm,
  Add,
  Scale,
  Hadamard,
  Lif,
  LifMembrane,
  ReduceHw,
  BroadcastHw,
};

struct ConvAttrs {
  std::size_t kernel = 1, stride = 1, pad = 0, groups = 1;
  int weight = -1;  // ParamStore id, shape (C_out, C_in/groups, k, k)
};

struct LinearAttrs {
  int weight = -1;  // (C_out, C_in)
  int bias = -1;    // (C_out) or -1
};

struct BnAttrs {
  int gamma = -1, beta = -1;  // (C)
  double eps = 1e-5;
  bool full_backward = true;  // false freezes statistics in the backward pass
  std::vector<double> mean, rstd;  // saved per-channel forward statistics
};

struct ScaleAttrs {
  double factor = 1.0;
};

struct LifAttrs {
  LifParams params;
  Tensor5 membrane;  // pre-reset v[t], saved for surrogate factors and probes
};

struct Node {
  OpKind op;
  int in0 = -1, in1 = -1;
  Tensor5 value;
  std::variant<std::monostate, ConvAttrs, LinearAttrs, BnAttrs, ScaleAttrs,
               LifAttrs>
      attrs;
};

struct BackwardOptions {
  bool param_grads = false;           // also accumulate d<stimulus,out>/dw
  std::vector<int> keep_adjoints;     // extra node ids whose adjoints to keep
};

struct BackwardResult {
  std::vector<Tensor5> input_adjoints;               // one per tape input node
  std::unordered_map<int, Tensor5> kept;             // requested adjoints
  std::unordered_map<int, std::vector<double>> param_grads;  // by param id
};

class Tape {
 public:
  explicit Tape(const ParamStore* params = nullptr) : params_(params) {}

  const Tensor5& value(int id) const { return node(id).value; }
  const Node& node(int id) const {
    if (id < 0 || id >= static_cast<int>(nodes_.size()))
      throw ShapeError("Tape: node id " + std::to_string(id) + " not on tape");
    return nodes_[static_cast<std::size_t>(id)];
  }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<int>& input_ids() const { return input_ids_; }

  // ---- graph construction (forward runs eagerly) ----

  int input(Tensor5 x) {
    int id = push(OpKind::Input, -1, -1, std::move(x), std::monostate{});
    input_ids_.push_back(id);
    return id;
  }

  int conv2d(int x, int weight, std::size_t stride, std::size_t pad,
             std::size_t groups = 1) {
    const Tensor5& in = value(x);
    const ParamTensor& w = param(weight);
    if (w.shape.size() != 4)
      throw ShapeError("conv2d: weight must be (C_out, C_in/groups, k, k)");
    const std::size_t c_out = w.shape[0], c_in_g = w.shape[1], k = w.shape[2];
    if (w.shape[3] != k) throw ShapeError("conv2d: non-square kernel");
    if (stride == 0) throw ShapeError("conv2d: stride must be positive");
    if (groups == 0 || in.shape().c % groups != 0)
      throw ShapeError("conv2d: groups must divide input channels");
    if (in.shape().c / groups != c_in_g)
      throw ShapeError("conv2d: weight expects " + std::to_string(c_in_g) +
                       " channels/group, input has " +
                       std::to_string(in.shape().c / groups));
    if (c_out % groups != 0)
      throw ShapeError("conv2d: groups must divide output channels");
    const std::size_t h_in = in.shape().h, w_in = in.shape().w;
    if (h_in + 2 * pad < k || w_in + 2 * pad < k)
      throw ShapeError("conv2d: kernel larger than padded input");
    Shape5 os{in.shape().t, in.shape().b, c_out,
              (h_in + 2 * pad - k) / stride + 1,
              (w_in + 2 * pad - k) / stride + 1};
    Tensor5 out(os);
    conv_forward(in, w, out, k, stride, pad, groups);
    ConvAttrs a{k, stride, pad, groups, weight};
    return push(OpKind::Conv2d, x, -1, std::move(out), a);
  }

  // y[t,b,:,h,w] = W x[t,b,:,h,w] + bias. Backs the paper's "MLP", "FC",
  // "PWConv" and "1x1 Conv" labels alike; they are the same per-pixel map.
  int pixelwise_linear(int x, int weight, int bias = -1) {
    const Tensor5& in = value(x);
    const ParamTensor& w = param(weight);
    if (w.shape.size() != 2)
      throw ShapeError("pixelwise_linear: weight must be (C_out, C_in)");
    const std::size_t c_out = w.shape[0], c_in = w.shape[1];
    if (c_in != in.shape().c)
      throw ShapeError("pixelwise_linear: weight expects " +
                       std::to_string(c_in) + " channels, input has " +
                       std::to_string(in.shape().c));
    if (bias >= 0 && (param(bias).shape.size() != 1 ||
                      param(bias).shape[0] != c_out))
      throw ShapeError("pixelwise_linear: bias must be (C_out)");
    Shape5 os = in.shape();
    os.c = c_out;
    Tensor5 out(os);
    const std::size_t hw = os.h * os.w, tb = os.t * os.b;
    const double* bp = bias >= 0 ? param(bias).data.data() : nullptr;
    for (std::size_t n = 0; n < tb; ++n) {
      const double* xin = in.data() + n * in.shape().c * hw;
      double* yout = out.data() + n * c_out * hw;
      for (std::size_t co = 0; co < c_out; ++co) {
        const double* wr = w.data.data() + co * c_in;
        double* yrow = yout + co * hw;
        const double b0 = bp ? bp[co] : 0.0;
        for (std::size_t p = 0; p < hw; ++p) yrow[p] = b0;
        for (std::size_t ci = 0; ci < c_in; ++ci) {
          const double wv = wr[ci];
          if (wv == 0.0) continue;
          const double* xrow = xin + ci * hw;
          for (std::size_t p = 0; p < hw; ++p) yrow[p] += wv * xrow[p];
        }
      }
    }
    LinearAttrs a{weight, bias};
    return push(OpKind::PixelwiseLinear, x, -1, std::move(out), a);
  }

  // Per-channel statistics over all of (T*B, H, W): timesteps fold into the
  // batch. full_backward=true differentiates through mean/variance (the
  // training-mode rule that couples every position of a channel).
  int batchnorm(int x, int gamma, int beta, double eps,
                bool full_backward = true) {
    if (!(eps > 0.0)) throw ConfigError("batchnorm: eps must be > 0");
    const Tensor5& in = value(x);
    const std::size_t c = in.shape().c;
    if (param(gamma).numel() != c || param(beta).numel() != c)
      throw ShapeError("batchnorm: affine parameters must have length C");
    BnAttrs a;
    a.gamma = gamma;
    a.beta = beta;
    a.eps = eps;
    a.full_backward = full_backward;
    a.mean.assign(c, 0.0);
    a.rstd.assign(c, 0.0);

    const std::size_t hw = in.shape().h * in.shape().w;
    const std::size_t tb = in.shape().t * in.shape().b;
    const double n = static_cast<double>(tb * hw);
    for (std::size_t ci = 0; ci < c; ++ci) {
      double sum = 0.0, sq = 0.0;
      for (std::size_t m = 0; m < tb; ++m) {
        const double* row = in.data() + (m * c + ci) * hw;
        for (std::size_t p = 0; p < hw; ++p) {
          sum += row[p];
          sq += row[p] * row[p];
        }
      }
      const double mu = sum / n;
      const double var = sq / n - mu * mu;  // biased
      a.mean[ci] = mu;
      a.rstd[ci] = 1.0 / std::sqrt(var + eps);
    }

    Tensor5 out(in.shape());
    const double* g = param(gamma).data.data();
    const double* be = param(beta).data.data();
    for (std::size_t m = 0; m < tb; ++m)
      for (std::size_t ci = 0; ci < c; ++ci) {
        const double* row = in.data() + (m * c + ci) * hw;
        double* orow = out.data() + (m * c + ci) * hw;
        const double mu = a.mean[ci], r = a.rstd[ci];
        for (std::size_t p = 0; p < hw; ++p)
          orow[p] = g[ci] * (row[p] - mu) * r + be[ci];
      }
    return push(OpKind::BatchNorm, x, -1, std::move(out), std::move(a));
  }

  int add(int x, int y) {
    const Tensor5& a = value(x);
    const Tensor5& b = value(y);
    if (a.shape() != b.shape())
      throw ShapeError("add: shape mismatch " + a.shape().str() + " vs " +
                       b.shape().str());
    Tensor5 out = a;
    out += b;
    return push(OpKind::Add, x, y, std::move(out), std::monostate{});
  }

  int scale(int x, double k) {
    Tensor5 out = value(x);
    out *= k;
    return push(OpKind::Scale, x, -1, std::move(out), ScaleAttrs{k});
  }

  int hadamard(int x, int y) {
    const Tensor5& a = value(x);
    const Tensor5& b = value(y);
    if (a.shape() != b.shape())
      throw ShapeError("hadamard: shape mismatch " + a.shape().str() + " vs " +
                       b.shape().str());
    Tensor5 out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] * b[i];
    return push(OpKind::Hadamard, x, y, std::move(out), std::monostate{});
  }

  // Unrolled LIF dynamics over the full T axis of x. Per step:
  //   v[t] = h[t-1] + x[t],  s[t] = fire(v[t]),  h[t] = reset(v[t], s[t])
  // with h[0] = 0. The node value is the spike train; membranes are saved
  // so backward can run BPTT and lif_membrane() can expose v.
  int lif(int x, const LifParams& p) {
    p.validate();
    const Tensor5& in = value(x);
    if (in.shape().t == 0) throw ShapeError("lif: zero timesteps");
    Tensor5 spikes(in.shape());
    Tensor5 membrane(in.shape());
    const std::size_t step = in.shape().b * in.shape().c * in.shape().h *
                             in.shape().w;
    std::vector<double> h(step, 0.0);
    for (std::size_t t = 0; t < in.shape().t; ++t) {
      const double* xt = in.data() + t * step;
      double* vt = membrane.data() + t * step;
      double* st = spikes.data() + t * step;
      for (std::size_t i = 0; i < step; ++i) {
        const double v = h[i] + xt[i];
        const double s = lif::fire(v, p);
        vt[i] = v;
        st[i] = s;
        h[i] = lif::reset(v, s, p);
      }
    }
    LifAttrs a{p, std::move(membrane)};
    return push(OpKind::Lif, x, -1, std::move(spikes), std::move(a));
  }

  // View of the pre-reset membrane stack of a Lif node. Its adjoint is
  // routed into the same BPTT sweep as the spike adjoint.
  int lif_membrane(int lif_node) {
    const Node& n = node(lif_node);
    if (n.op != OpKind::Lif)
      throw ShapeError("lif_membrane: node is not a Lif node");
    Tensor5 v = std::get<LifAttrs>(n.attrs).membrane;
    return push(OpKind::LifMembrane, lif_node, -1, std::move(v),
                std::monostate{});
  }

  int reduce_hw(int x) {
    const Tensor5& in = value(x);
    Shape5 os = in.shape();
    os.h = 1;
    os.w = 1;
    Tensor5 out(os);
    const std::size_t hw = in.shape().h * in.shape().w;
    for (std::size_t m = 0; m < os.t * os.b * os.c; ++m) {
      const double* row = in.data() + m * hw;
      double s = 0.0;
      for (std::size_t p = 0; p < hw; ++p) s += row[p];
      out[m] = s;
    }
    return push(OpKind::ReduceHw, x, -1, std::move(out), std::monostate{});
  }

  int broadcast_hw(int x, std::size_t h, std::size_t w) {
    const Tensor5& in = value(x);
    if (in.shape().h != 1 || in.shape().w != 1)
      throw ShapeError("broadcast_hw: input must have 1x1 spatial dims");
    Shape5 os = in.shape();
    os.h = h;
    os.w = w;
    Tensor5 out(os);
    for (std::size_t m = 0; m < os.t * os.b * os.c; ++m) {
      double* row = out.data() + m * h * w;
      for (std::size_t p = 0; p < h * w; ++p) row[p] = in[m];
    }
    return push(OpKind::BroadcastHw, x, -1, std::move(out), std::monostate{});
  }

  // ---- reverse pass ----

  // Seeds the adjoint of output_node with `stimulus` and sweeps the tape in
  // reverse id order. The returned input adjoints are exactly
  // d<stimulus, output>/d(input), including every cross-timestep path.
  BackwardResult backward_from_stimulus(int output_node,
                                        const Tensor5& stimulus,
                                        const BackwardOptions& opt = {}) const {
    const Node& out = node(output_node);
    if (stimulus.shape() != out.value.shape())
      throw ShapeError("backward_from_stimulus: stimulus shape " +
                       stimulus.shape().str() + " does not match output " +
                       out.value.shape().str());

    std::vector<Tensor5> adj(nodes_.size());
    std::vector<Tensor5> membrane_adj(nodes_.size());  // LifMembrane seeds
    adj[static_cast<std::size_t>(output_node)] = stimulus;

    BackwardResult res;
    std::vector<bool> keep(nodes_.size(), false);
    for (int id : input_ids_) keep[static_cast<std::size_t>(id)] = true;
    for (int id : opt.keep_adjoints)
      if (id >= 0 && id < static_cast<int>(nodes_.size()))
        keep[static_cast<std::size_t>(id)] = true;

    for (int id = output_node; id >= 0; --id) {
      const std::size_t i = static_cast<std::size_t>(id);
      const Node& n = nodes_[i];
      const bool has_adj = !adj[i].empty();
      const bool has_vadj = n.op == OpKind::Lif && !membrane_adj[i].empty();
      if (!has_adj && !has_vadj) continue;
      if (has_adj && !adj[i].all_finite())
        throw NumericError("non-finite adjoint at node " + std::to_string(id),
                           id);
      if (has_adj || has_vadj) propagate(id, adj, membrane_adj, res, opt);
      if (keep[i] && has_adj) res.kept[id] = adj[i];
      if (!keep[i]) adj[i] = Tensor5();  // release
      membrane_adj[i] = Tensor5();
    }

    res.input_adjoints.reserve(input_ids_.size());
    for (int id : input_ids_) {
      auto it = res.kept.find(id);
      if (it != res.kept.end())
        res.input_adjoints.push_back(it->second);
      else
        res.input_adjoints.push_back(Tensor5(node(id).value.shape()));
    }
    return res;
  }

 private:
  const ParamTensor& param(int id) const {
    if (!params_) throw ConfigError("Tape: no ParamStore bound");
    return params_->at(id);
  }

  int push(OpKind op, int in0, int in1, Tensor5 value,
           std::variant<std::monostate, ConvAttrs, LinearAttrs, BnAttrs,
                        ScaleAttrs, LifAttrs>
               attrs) {
    if (!value.all_finite())
      throw NumericError("non-finite forward value at node " +
                             std::to_string(nodes_.size()),
                         static_cast<long>(nodes_.size()));
    Node n;
    n.op = op;
    n.in0 = in0;
    n.in1 = in1;
    n.value = std::move(value);
    n.attrs = std::move(attrs);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  static void conv_forward(const Tensor5& x, const ParamTensor& w, Tensor5& y,
                           std::size_t k, std::size_t stride, std::size_t pad,
                           std::size_t groups) {
    const Shape5& xs = x.shape();
    const Shape5& ys = y.shape();
    const std::size_t c_in_g = xs.c / groups;
    const std::size_t c_out_g = ys.c / groups;
    for (std::size_t t = 0; t < xs.t; ++t)
      for (std::size_t b = 0; b < xs.b; ++b)
        for (std::size_t co = 0; co < ys.c; ++co) {
          const std::size_t g = co / c_out_g;
          for (std::size_t oh = 0; oh < ys.h; ++oh)
            for (std::size_t ow = 0; ow < ys.w; ++ow) {
              double acc = 0.0;
              for (std::size_t cg = 0; cg < c_in_g; ++cg) {
                const std::size_t ci = g * c_in_g + cg;
                for (std::size_t kh = 0; kh < k; ++kh) {
                  const long ih = static_cast<long>(oh * stride + kh) -
                                  static_cast<long>(pad);
                  if (ih < 0 || ih >= static_cast<long>(xs.h)) continue;
                  const double* xrow =
                      x.data() + x.index(t, b, ci, static_cast<std::size_t>(ih), 0);
                  const double* wrow =
                      w.data.data() + ((co * c_in_g + cg) * k + kh) * k;
                  for (std::size_t kw = 0; kw < k; ++kw) {
                    const long iw = static_cast<long>(ow * stride + kw) -
                                    static_cast<long>(pad);
                    if (iw < 0 || iw >= static_cast<long>(xs.w)) continue;
                    acc += wrow[kw] * xrow[iw];
                  }
                }
              }
              y.at(t, b, co, oh, ow) = acc;
            }
        }
  }

  void propagate(int id, std::vector<Tensor5>& adj,
                 std::vector<Tensor5>& membrane_adj, BackwardResult& res,
                 const BackwardOptions& opt) const {
    const std::size_t i = static_cast<std::size_t>(id);
    const Node& n = nodes_[i];
    const Tensor5& g = adj[i];

    auto accum = [&](int target, Tensor5&& delta) {
      if (target < 0) return;
      Tensor5& slot = adj[static_cast<std::size_t>(target)];
      if (slot.empty())
        slot = std::move(delta);
      else
        slot += delta;
    };

    switch (n.op) {
      case OpKind::Input:
        break;

      case OpKind::Conv2d: {
        const auto& a = std::get<ConvAttrs>(n.attrs);
        const Tensor5& x = value(n.in0);
        const ParamTensor& w = param(a.weight);
        Tensor5 gx(x.shape());
        std::vector<double>* gw = nullptr;
        if (opt.param_grads) {
          auto& slot = res.param_grads[a.weight];
          if (slot.empty()) slot.assign(w.data.size(), 0.0);
          gw = &slot;
        }
        conv_backward(x, w, g, gx, gw, a);
        accum(n.in0, std::move(gx));
        break;
      }

      case OpKind::PixelwiseLinear: {
        const auto& a = std::get<LinearAttrs>(n.attrs);
        const Tensor5& x = value(n.in0);
        const ParamTensor& w = param(a.weight);
        const std::size_t c_out = w.shape[0], c_in = w.shape[1];
        const std::size_t hw = x.shape().h * x.shape().w;
        const std::size_t tb = x.shape().t * x.shape().b;
        Tensor5 gx(x.shape());
        for (std::size_t m = 0; m < tb; ++m) {
          const double* grow = g.data() + m * c_out * hw;
          double* gxrow = gx.data() + m * c_in * hw;
          for (std::size_t co = 0; co < c_out; ++co) {
            const double* wr = w.data.data() + co * c_in;
            const double* gr = grow + co * hw;
            for (std::size_t ci = 0; ci < c_in; ++ci) {
              const double wv = wr[ci];
              if (wv == 0.0) continue;
              double* gxr = gxrow + ci * hw;
              for (std::size_t p = 0; p < hw; ++p) gxr[p] += wv * gr[p];
            }
          }
        }
        if (opt.param_grads) {
          auto& gw = res.param_grads[a.weight];
          if (gw.empty()) gw.assign(w.data.size(), 0.0);
          for (std::size_t m = 0; m < tb; ++m) {
            const double* grow = g.data() + m * c_out * hw;
            const double* xrow = x.data() + m * c_in * hw;
            for (std::size_t co = 0; co < c_out; ++co)
              for (std::size_t ci = 0; ci < c_in; ++ci) {
                double acc = 0.0;
                const double* gr = grow + co * hw;
                const double* xr = xrow + ci * hw;
                for (std::size_t p = 0; p < hw; ++p) acc += gr[p] * xr[p];
                gw[co * c_in + ci] += acc;
              }
          }
          if (a.bias >= 0) {
            auto& gb = res.param_grads[a.bias];
            if (gb.empty()) gb.assign(c_out, 0.0);
            for (std::size_t m = 0; m < tb; ++m)
              for (std::size_t co = 0; co < c_out; ++co) {
                const double* gr = g.data() + (m * c_out + co) * hw;
                double acc = 0.0;
                for (std::size_t p = 0; p < hw; ++p) acc += gr[p];
                gb[co] += acc;
              }
          }
        }
        accum(n.in0, std::move(gx));
        break;
      }

      case OpKind::BatchNorm: {
        const auto& a = std::get<BnAttrs>(n.attrs);
        const Tensor5& x = value(n.in0);
        const std::size_t c = x.shape().c;
        const std::size_t hw = x.shape().h * x.shape().w;
        const std::size_t tb = x.shape().t * x.shape().b;
        const double nelem = static_cast<double>(tb * hw);
        const double* gam = param(a.gamma).data.data();
        Tensor5 gx(x.shape());
        std::vector<double> s1(c, 0.0), s2(c, 0.0);
        if (a.full_backward || opt.param_grads) {
          for (std::size_t m = 0; m < tb; ++m)
            for (std::size_t ci = 0; ci < c; ++ci) {
              const double* gr = g.data() + (m * c + ci) * hw;
              const double* xr = x.data() + (m * c + ci) * hw;
              const double mu = a.mean[ci], r = a.rstd[ci];
              double acc1 = 0.0, acc2 = 0.0;
              for (std::size_t p = 0; p < hw; ++p) {
                acc1 += gr[p];
                acc2 += gr[p] * (xr[p] - mu) * r;
              }
              s1[ci] += acc1;
              s2[ci] += acc2;
            }
        }
        for (std::size_t m = 0; m < tb; ++m)
          for (std::size_t ci = 0; ci < c; ++ci) {
            const double* gr = g.data() + (m * c + ci) * hw;
            const double* xr = x.data() + (m * c + ci) * hw;
            double* gxr = gx.data() + (m * c + ci) * hw;
            const double mu = a.mean[ci], r = a.rstd[ci];
            const double gr_scale = gam[ci] * r;
            if (a.full_backward) {
              const double m1 = s1[ci] / nelem, m2 = s2[ci] / nelem;
              for (std::size_t p = 0; p < hw; ++p) {
                const double xhat = (xr[p] - mu) * r;
                gxr[p] += gr_scale * (gr[p] - m1 - xhat * m2);
              }
            } else {
              for (std::size_t p = 0; p < hw; ++p) gxr[p] += gr_scale * gr[p];
            }
          }
        if (opt.param_grads) {
          auto& gg = res.param_grads[a.gamma];
          auto& gb = res.param_grads[a.beta];
          if (gg.empty()) gg.assign(c, 0.0);
          if (gb.empty()) gb.assign(c, 0.0);
          for (std::size_t ci = 0; ci < c; ++ci) {
            gg[ci] += s2[ci];
            gb[ci] += s1[ci];
          }
        }
        accum(n.in0, std::move(gx));
        break;
      }

      case OpKind::Add: {
        Tensor5 ga = g;
        Tensor5 gb = g;
        accum(n.in0, std::move(ga));
        accum(n.in1, std::move(gb));
        break;
      }

      case OpKind::Scale: {
        const auto& a = std::get<ScaleAttrs>(n.attrs);
        Tensor5 gx = g;
        gx *= a.factor;
        accum(n.in0, std::move(gx));
        break;
      }

      case OpKind::Hadamard: {
        const Tensor5& xa = value(n.in0);
        const Tensor5& xb = value(n.in1);
        Tensor5 ga(xa.shape());
        Tensor5 gb(xb.shape());
        for (std::size_t p = 0; p < g.numel(); ++p) {
          ga[p] = g[p] * xb[p];
          gb[p] = g[p] * xa[p];
        }
        accum(n.in0, std::move(ga));
        accum(n.in1, std::move(gb));
        break;
      }

      case OpKind::Lif: {
        const auto& a = std::get<LifAttrs>(n.attrs);
        const Tensor5& spikes = n.value;
        const Tensor5& v = a.membrane;
        const Shape5& s = spikes.shape();
        const std::size_t step = s.b * s.c * s.h * s.w;
        const bool has_s = !adj[i].empty();
        const bool has_v = !membrane_adj[i].empty();
        Tensor5 gx(s);
        std::vector<double> hbar(step, 0.0);
        // Reverse BPTT: v[t] = h[t-1] + x[t]; s = fire(v); h = reset(v, s).
        for (std::size_t tr = s.t; tr-- > 0;) {
          const double* vt = v.data() + tr * step;
          const double* st = spikes.data() + tr * step;
          const double* gs = has_s ? adj[i].data() + tr * step : nullptr;
          const double* gv = has_v ? membrane_adj[i].data() + tr * step : nullptr;
          double* gxt = gx.data() + tr * step;
          for (std::size_t e = 0; e < step; ++e) {
            const double sbar =
                (gs ? gs[e] : 0.0) + lif::reset_ds(vt[e], a.params) * hbar[e];
            const double vbar = (gv ? gv[e] : 0.0) +
                                lif::reset_dv(vt[e], st[e], a.params) * hbar[e] +
                                lif::surrogate(vt[e], a.params) * sbar;
            gxt[e] = vbar;
            hbar[e] = vbar;
          }
        }
        accum(n.in0, std::move(gx));
        break;
      }

      case OpKind::LifMembrane: {
        // Route the adjoint into the Lif node's membrane seed slot.
        Tensor5& slot = membrane_adj[static_cast<std::size_t>(n.in0)];
        if (slot.empty())
          slot = g;
        else
          slot += g;
        break;
      }

      case OpKind::ReduceHw: {
        const Tensor5& x = value(n.in0);
        Tensor5 gx(x.shape());
        const std::size_t hw = x.shape().h * x.shape().w;
        for (std::size_t m = 0; m < g.numel(); ++m) {
          double* row = gx.data() + m * hw;
          for (std::size_t p = 0; p < hw; ++p) row[p] = g[m];
        }
        accum(n.in0, std::move(gx));
        break;
      }

      case OpKind::BroadcastHw: {
        const Tensor5& x = value(n.in0);
        Tensor5 gx(x.shape());
        const std::size_t hw = n.value.shape().h * n.value.shape().w;
        for (std::size_t m = 0; m < gx.numel(); ++m) {
          const double* row = g.data() + m * hw;
          double s = 0.0;
          for (std::size_t p = 0; p < hw; ++p) s += row[p];
          gx[m] = s;
        }
        accum(n.in0, std::move(gx));
        break;
      }
    }
  }

  void conv_backward(const Tensor5& x, const ParamTensor& w, const Tensor5& g,
                     Tensor5& gx, std::vector<double>* gw,
                     const ConvAttrs& a) const {
    const Shape5& xs = x.shape();
    const Shape5& ys = g.shape();
    const std::size_t k = a.kernel;
    const std::size_t c_in_g = xs.c / a.groups;
    const std::size_t c_out_g = ys.c / a.groups;
    for (std::size_t t = 0; t < xs.t; ++t)
      for (std::size_t b = 0; b < xs.b; ++b)
        for (std::size_t co = 0; co < ys.c; ++co) {
          const std::size_t grp = co / c_out_g;
          for (std::size_t oh = 0; oh < ys.h; ++oh)
            for (std::size_t ow = 0; ow < ys.w; ++ow) {
              const double gv = g.at(t, b, co, oh, ow);
              if (gv == 0.0) continue;
              for (std::size_t cg = 0; cg < c_in_g; ++cg) {
                const std::size_t ci = grp * c_in_g + cg;
                for (std::size_t kh = 0; kh < k; ++kh) {
                  const long ih = static_cast<long>(oh * a.stride + kh) -
                                  static_cast<long>(a.pad);
                  if (ih < 0 || ih >= static_cast<long>(xs.h)) continue;
                  for (std::size_t kw = 0; kw < k; ++kw) {
                    const long iw = static_cast<long>(ow * a.stride + kw) -
                                    static_cast<long>(a.pad);
                    if (iw < 0 || iw >= static_cast<long>(xs.w)) continue;
                    const std::size_t widx = ((co * c_in_g + cg) * k + kh) * k + kw;
                    gx.at(t, b, ci, static_cast<std::size_t>(ih),
                          static_cast<std::size_t>(iw)) += w.data[widx] * gv;
                    if (gw)
                      (*gw)[widx] += gv * x.at(t, b, ci,
                                               static_cast<std::size_t>(ih),
                                               static_cast<std::size_t>(iw));
                  }
                }
              }
            }
        }
  }

  const ParamStore* params_;
  std::vector<Node> nodes_;
  std::vector<int> input_ids_;
};

}  // namespace sterf
