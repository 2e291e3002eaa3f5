#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "sterf/arch.hpp"
#include "sterf/errors.hpp"
#include "sterf/params.hpp"
#include "sterf/rng.hpp"
#include "sterf/tape.hpp"
#include "sterf/tensor.hpp"

namespace sterf {

// A Network is an ArchSpec compiled once into a flat instruction program
// plus an initialized ParamStore. Running it replays the program onto a
// fresh tape, so concurrent runs share nothing mutable. Named boundaries
// (input, stage1.., output) mark where stimuli can be applied and
// gradients read.

namespace netir {

struct ConvI {
  int weight;
  std::size_t stride, pad, groups;
};
struct LinearI {
  int weight, bias;
};
struct BnI {
  int gamma, beta;
};
struct ScaleI {
  double factor;
};
struct BroadcastI {
  std::size_t h, w;
};

struct Instr {
  OpKind op;
  int a = -1, b = -1;  // operand slots (previous instruction indices)
  std::variant<std::monostate, ConvI, LinearI, BnI, ScaleI, BroadcastI> args;
};

}  // namespace netir

struct ParamCounts {
  std::size_t weights = 0;    // conv kernels, linear maps, biases
  std::size_t bn_affine = 0;  // gamma/beta
  std::size_t total() const { return weights + bn_affine; }
};

// Emits instructions, creates seeded Kaiming-initialized weights, and
// tracks the running (C, H, W) so configs fail at build time. The block
// emitters below are the published block equations.
class GraphBuilder {
 public:
  explicit GraphBuilder(const ArchSpec& meta)
      : meta_(meta), rng_(meta.seed), c_(meta.in_c), h_(meta.in_h), w_(meta.in_w) {}

  std::size_t channels() const { return c_; }
  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }

  int input() {
    const int id = emit({OpKind::Input, -1, -1, std::monostate{}});
    mark_boundary("input", id);
    return id;
  }

  int conv(const std::string& name, int x, std::size_t c_out, std::size_t k,
           std::size_t stride, std::size_t groups = 1) {
    const std::size_t c_in = c_;
    if (groups == 0 || c_in % groups != 0 || c_out % groups != 0)
      throw ConfigError(name + ": groups must divide channel counts");
    const std::size_t pad = k / 2;
    const int w_id = kaiming(name + ".w", {c_out, c_in / groups, k, k},
                             (c_in / groups) * k * k);
    if (h_ + 2 * pad < k || w_ + 2 * pad < k)
      throw ConfigError(name + ": kernel exceeds padded input");
    h_ = (h_ + 2 * pad - k) / stride + 1;
    w_ = (w_ + 2 * pad - k) / stride + 1;
    c_ = c_out;
    if (h_ == 0 || w_ == 0)
      throw ConfigError(name + ": spatial dims reduced to zero");
    return emit({OpKind::Conv2d, x, -1, netir::ConvI{w_id, stride, pad, groups}});
  }

  int linear(const std::string& name, int x, std::size_t c_out) {
    const int w_id = kaiming(name + ".w", {c_out, c_}, c_);
    c_ = c_out;
    return emit({OpKind::PixelwiseLinear, x, -1, netir::LinearI{w_id, -1}});
  }

  int bn(const std::string& name, int x) {
    const int g = constant(name + ".gamma", c_, 1.0);
    const int b = constant(name + ".bn_beta", c_, 0.0);
    return emit({OpKind::BatchNorm, x, -1, netir::BnI{g, b}});
  }

  int lif(int x) { return emit({OpKind::Lif, x, -1, std::monostate{}}); }
  int lif_membrane(int x) {
    return emit({OpKind::LifMembrane, x, -1, std::monostate{}});
  }
  int add(int a, int b) { return emit({OpKind::Add, a, b, std::monostate{}}); }
  int scale(int x, double k) {
    return emit({OpKind::Scale, x, -1, netir::ScaleI{k}});
  }
  int hadamard(int a, int b) {
    return emit({OpKind::Hadamard, a, b, std::monostate{}});
  }

  // Spike-driven separable convolution token mixer:
  //   PWConv2(SN(DWConv7x7(SN(PWConv1(SN(X))))))  with C -> rC -> C.
  int ssc_block(const std::string& name, int x) {
    const std::size_t c_in = c_;
    const double midf = meta_.ssc_ratio * static_cast<double>(c_in);
    const std::size_t mid = static_cast<std::size_t>(midf + 0.5);
    int y = lif(x);
    y = linear(name + ".pw1", y, mid);
    y = lif(y);
    y = conv(name + ".dw", y, mid, 7, 1, /*groups=*/mid);
    y = lif(y);
    y = linear(name + ".pw2", y, c_in);
    return y;
  }

  // Channel mixers share the template BN(op2(SN(BN(op1(SN(X)))))) with
  // C -> eps*C -> C; only op1/op2 differ:
  //   conv_k3:  two 3x3 convolutions
  //   mlpixer:  two pixel-wise FC layers
  //   srb:      1x1 convolution, then a pixel-wise FC layer
  int channel_mixer(const std::string& name, int x, const MixerKind& kind) {
    const std::size_t c_in = c_;
    const std::size_t mid = kind.mid_channels(c_in, name);
    int y = lif(x);
    switch (kind.tag) {
      case MixerTag::ConvK3:
        y = conv(name + ".conv1", y, mid, 3, 1);
        break;
      case MixerTag::Mlpixer:
        y = linear(name + ".fc1", y, mid);
        break;
      case MixerTag::Srb:
        y = linear(name + ".conv1x1", y, mid);
        break;
    }
    y = bn(name + ".bn1", y);
    y = lif(y);
    if (kind.tag == MixerTag::ConvK3)
      y = conv(name + ".conv2", y, c_in, 3, 1);
    else
      y = linear(name + ".fc2", y, c_in);
    y = bn(name + ".bn2", y);
    return y;
  }

  // Stand-in for the spike-driven self-attention used by the reference
  // architecture's late stages (spiking linear attention with token-global
  // coupling). Not one of the analyzed paper blocks.
  int attention_standin(const std::string& name, int x) {
    const std::size_t c_in = c_;
    const std::size_t hh = h_, ww = w_;
    int q = lif(linear(name + ".wq", x, c_in));
    c_ = c_in;
    int k = lif(linear(name + ".wk", x, c_in));
    c_ = c_in;
    int v = linear(name + ".wv", x, c_in);
    c_ = c_in;
    int kv = emit({OpKind::ReduceHw, hadamard(k, v), -1, std::monostate{}});
    kv = emit({OpKind::BroadcastHw, kv, -1, netir::BroadcastI{hh, ww}});
    int out = linear(name + ".wo", hadamard(q, kv), c_in);
    out = bn(name + ".bn", out);
    return out;
  }

  // Membrane-shortcut block: X' = X + Token(X); X'' = X' + Mixer(X').
  // Residuals add the real-valued feature maps, keeping downstream
  // convolution inputs spike-driven.
  int snn_block(const std::string& name, int x, const BlockSpec& b) {
    const int tm = b.token_mixer == TokenMixer::Ssc
                       ? ssc_block(name + ".ssc", x)
                       : attention_standin(name + ".attn", x);
    const int x1 = add(x, tm);
    const int cm = channel_mixer(name + ".mixer", x1, b.channel_mixer);
    return add(x1, cm);
  }

  void mark_boundary(const std::string& name, int instr) {
    boundaries_.emplace_back(name, instr);
  }

 private:
  friend class Network;

  int emit(netir::Instr ins) {
    instrs_.push_back(std::move(ins));
    return static_cast<int>(instrs_.size()) - 1;
  }

  int kaiming(const std::string& name, std::vector<std::size_t> shape,
              std::size_t fan_in) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    std::vector<double> data(n);
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& v : data) v = std * rng_.next_normal();
    return params_.add(name, std::move(shape), std::move(data));
  }

  int constant(const std::string& name, std::size_t n, double v) {
    return params_.add(name, {n}, std::vector<double>(n, v));
  }

  ArchSpec meta_;
  Rng rng_;
  ParamStore params_;
  std::vector<netir::Instr> instrs_;
  std::vector<std::pair<std::string, int>> boundaries_;
  std::size_t c_, h_, w_;
};

class Network {
 public:
  struct RunResult {
    Tape tape;
    int input_id = -1;
    int output_id = -1;
    std::vector<std::pair<std::string, int>> boundaries;  // name -> node id

    int boundary(const std::string& name) const {
      for (const auto& [n, id] : boundaries)
        if (n == name) return id;
      std::string names;
      for (const auto& [n, id] : boundaries) names += " " + n;
      throw ConfigError("unknown probe '" + name + "'; valid probes:" + names);
    }
  };

  explicit Network(ArchSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    GraphBuilder b(spec_);
    compile_spec(b);
    adopt(std::move(b));
  }

  // Custom program (tests, isolated-block analysis). The builder must have
  // emitted an input(); the last boundary named "output" (or the last
  // instruction) is the output.
  Network(ArchSpec meta, GraphBuilder&& builder, int output_instr)
      : spec_(std::move(meta)), output_instr_(output_instr) {
    adopt(std::move(builder));
    bool has_output = false;
    for (const auto& [n, idx] : boundaries_)
      if (n == "output") has_output = true;
    if (!has_output) boundaries_.emplace_back("output", output_instr_);
  }

  const ArchSpec& spec() const { return spec_; }
  const ParamStore& params() const { return params_; }
  ParamStore& mutable_params() { return params_; }

  Shape5 input_shape(std::size_t batch = 1) const {
    return Shape5{spec_.timesteps, batch, spec_.in_c, spec_.in_h, spec_.in_w};
  }

  std::vector<std::string> probe_names() const {
    std::vector<std::string> names;
    names.reserve(boundaries_.size());
    for (const auto& [n, idx] : boundaries_) names.push_back(n);
    return names;
  }

  // Replays the program on a fresh tape. `stop_at` truncates the forward
  // pass right after the named boundary.
  RunResult run(const Tensor5& input, const std::string& stop_at = "") const {
    if (input.shape().t != spec_.timesteps || input.shape().c != spec_.in_c ||
        input.shape().h != spec_.in_h || input.shape().w != spec_.in_w)
      throw ShapeError("Network::run: input shape " + input.shape().str() +
                       " does not match architecture input " +
                       input_shape(input.shape().b).str());
    int stop_instr = -1;
    if (!stop_at.empty()) {
      for (const auto& [n, idx] : boundaries_)
        if (n == stop_at) stop_instr = idx;
      if (stop_instr < 0) {
        std::string names;
        for (const auto& [n, idx] : boundaries_) names += " " + n;
        throw ConfigError("unknown probe '" + stop_at + "'; valid probes:" +
                          names);
      }
    }

    RunResult res{Tape(&params_), -1, -1, {}};
    std::vector<int> reg(instrs_.size(), -1);
    for (std::size_t i = 0; i < instrs_.size(); ++i) {
      const netir::Instr& ins = instrs_[i];
      const auto in0 = [&] { return reg[static_cast<std::size_t>(ins.a)]; };
      const auto in1 = [&] { return reg[static_cast<std::size_t>(ins.b)]; };
      int id = -1;
      switch (ins.op) {
        case OpKind::Input:
          id = res.tape.input(input);
          break;
        case OpKind::Conv2d: {
          const auto& a = std::get<netir::ConvI>(ins.args);
          id = res.tape.conv2d(in0(), a.weight, a.stride, a.pad, a.groups);
          break;
        }
        case OpKind::PixelwiseLinear: {
          const auto& a = std::get<netir::LinearI>(ins.args);
          id = res.tape.pixelwise_linear(in0(), a.weight, a.bias);
          break;
        }
        case OpKind::BatchNorm: {
          const auto& a = std::get<netir::BnI>(ins.args);
          id = res.tape.batchnorm(in0(), a.gamma, a.beta, 1e-5,
                                  spec_.bn_full_backward);
          break;
        }
        case OpKind::Add:
          id = res.tape.add(in0(), in1());
          break;
        case OpKind::Scale:
          id = res.tape.scale(in0(), std::get<netir::ScaleI>(ins.args).factor);
          break;
        case OpKind::Hadamard:
          id = res.tape.hadamard(in0(), in1());
          break;
        case OpKind::Lif:
          id = res.tape.lif(in0(), spec_.neuron);
          break;
        case OpKind::LifMembrane:
          id = res.tape.lif_membrane(in0());
          break;
        case OpKind::ReduceHw:
          id = res.tape.reduce_hw(in0());
          break;
        case OpKind::BroadcastHw: {
          const auto& a = std::get<netir::BroadcastI>(ins.args);
          id = res.tape.broadcast_hw(in0(), a.h, a.w);
          break;
        }
      }
      reg[i] = id;
      if (static_cast<int>(i) == stop_instr) break;
    }

    res.input_id = reg[0];
    for (const auto& [name, idx] : boundaries_) {
      if (reg[static_cast<std::size_t>(idx)] < 0) continue;  // past stop_at
      res.boundaries.emplace_back(name, reg[static_cast<std::size_t>(idx)]);
    }
    res.output_id = reg[static_cast<std::size_t>(output_instr_)] >= 0
                        ? reg[static_cast<std::size_t>(output_instr_)]
                        : res.boundaries.back().second;
    return res;
  }

  // Parameter accounting; `prefix` restricts to one component's names
  // (e.g. "stage1.block1.mixer").
  ParamCounts parameter_counts(const std::string& prefix = "") const {
    ParamCounts c;
    for (const auto& p : params_.entries()) {
      if (!prefix.empty() && !p.name.starts_with(prefix)) continue;
      if (p.name.ends_with(".gamma") || p.name.ends_with(".bn_beta"))
        c.bn_affine += p.numel();
      else
        c.weights += p.numel();
    }
    return c;
  }

 private:
  void compile_spec(GraphBuilder& b) {
    int x = b.input();
    switch (spec_.kind) {
      case NetKind::Identity:
        output_instr_ = x;
        break;

      case NetKind::LifChain: {
        int y = b.scale(x, spec_.input_gain);
        output_instr_ = b.lif_membrane(b.lif(y));
        break;
      }

      case NetKind::Stages: {
        int y = x;
        if (spec_.input_gain != 1.0) y = b.scale(y, spec_.input_gain);
        for (std::size_t si = 0; si < spec_.stages.size(); ++si) {
          const StageSpec& st = spec_.stages[si];
          const std::string sname = "stage" + std::to_string(si + 1);
          // The stem conv eats the raw input; later downsamples eat spikes.
          if (si > 0) y = b.lif(y);
          y = b.conv(sname + ".down", y, st.dim, st.kernel, st.stride);
          y = b.bn(sname + ".down_bn", y);
          for (std::size_t bi = 0; bi < st.blocks.size(); ++bi)
            y = b.snn_block(sname + ".block" + std::to_string(bi + 1), y,
                            st.blocks[bi]);
          b.mark_boundary(sname, y);
        }
        output_instr_ = y;
        break;
      }
    }
    b.mark_boundary("output", output_instr_);
  }

  void adopt(GraphBuilder&& b) {
    params_ = std::move(b.params_);
    instrs_ = std::move(b.instrs_);
    boundaries_ = std::move(b.boundaries_);
  }

  ArchSpec spec_;
  ParamStore params_;
  std::vector<netir::Instr> instrs_;
  std::vector<std::pair<std::string, int>> boundaries_;
  int output_instr_ = -1;
};

}  // namespace sterf
