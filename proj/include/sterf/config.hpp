#pragma once

#include <cstdint>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "sterf/arch.hpp"
#include "sterf/errors.hpp"

namespace sterf {

// Line-oriented declarative config. One `key value...` per line; `name {`
// opens a nested section; `}` closes it; `#` starts a comment. Example:
//
//   timesteps 4
//   input 3 64 64
//   seed 7
//   neuron {
//     beta 0.5
//     theta 1.0
//     reset soft
//     a 1.0
//     mode spike
//   }
//   stage {
//     downsample { kernel 7  stride 2  dim 8 }   # also valid split on lines
//     block { token_mixer ssc  channel_mixer conv_k3  epsilon 4 }
//   }
//
// Optional top-level keys: kind (stages|identity|lif-chain), bn_stats
// (on|off), input_gain, ssc_ratio. Unknown keys are rejected.

namespace detail {

struct Tok {
  std::string text;
  int line;
};

inline std::vector<Tok> tokenize_config(const std::string& text) {
  std::vector<Tok> toks;
  int line = 1;
  std::string cur;
  auto flush = [&]() {
    if (!cur.empty()) {
      toks.push_back({cur, line});
      cur.clear();
    }
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (ch == '#') {
      flush();
      while (i < text.size() && text[i] != '\n') ++i;
      ++line;
      continue;
    }
    if (ch == '\n') {
      flush();
      ++line;
    } else if (ch == ' ' || ch == '\t' || ch == '\r') {
      flush();
    } else if (ch == '{' || ch == '}') {
      flush();
      toks.push_back({std::string(1, ch), line});
    } else {
      cur += ch;
    }
  }
  flush();
  return toks;
}

class ConfigParser {
 public:
  explicit ConfigParser(const std::string& text)
      : toks_(tokenize_config(text)) {}

  ArchSpec parse() {
    ArchSpec spec;
    spec.stages.clear();
    while (!eof()) {
      const Tok t = next();
      if (t.text == "kind") spec.kind = parse_kind(next_value("kind"));
      else if (t.text == "timesteps") spec.timesteps = parse_size(next_value("timesteps"));
      else if (t.text == "input") {
        spec.in_c = parse_size(next_value("input"));
        spec.in_h = parse_size(next_value("input"));
        spec.in_w = parse_size(next_value("input"));
      } else if (t.text == "seed") spec.seed = parse_u64(next_value("seed"));
      else if (t.text == "bn_stats") spec.bn_full_backward = parse_on_off(next_value("bn_stats"));
      else if (t.text == "input_gain") spec.input_gain = parse_double(next_value("input_gain"));
      else if (t.text == "ssc_ratio") spec.ssc_ratio = parse_double(next_value("ssc_ratio"));
      else if (t.text == "neuron") parse_neuron(spec.neuron, t.line);
      else if (t.text == "stage") parse_stage(spec, t.line);
      else
        fail(t.line, "unknown top-level key '" + t.text + "'");
    }
    try {
      spec.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("config semantic error: ") + e.what());
    }
    return spec;
  }

 private:
  void parse_neuron(LifParams& p, int open_line) {
    expect_open(open_line);
    while (true) {
      const Tok t = next();
      if (t.text == "}") break;
      if (t.text == "beta") p.beta = parse_double(next_value("beta"));
      else if (t.text == "theta") p.theta = parse_double(next_value("theta"));
      else if (t.text == "a") p.a = parse_double(next_value("a"));
      else if (t.text == "reset") {
        const Tok v = next_value("reset");
        if (v.text == "soft") p.reset = ResetKind::Soft;
        else if (v.text == "hard") p.reset = ResetKind::Hard;
        else fail(v.line, "reset must be soft|hard");
      } else if (t.text == "mode") {
        const Tok v = next_value("mode");
        if (v.text == "spike") p.mode = NeuronMode::Spike;
        else if (v.text == "soft") p.mode = NeuronMode::Soft;
        else fail(v.line, "mode must be spike|soft");
      } else
        fail(t.line, "unknown neuron key '" + t.text + "'");
    }
  }

  void parse_stage(ArchSpec& spec, int open_line) {
    expect_open(open_line);
    StageSpec st;
    const std::string where = "stage " + std::to_string(spec.stages.size() + 1);
    while (true) {
      const Tok t = next();
      if (t.text == "}") break;
      if (t.text == "downsample") {
        expect_open(t.line);
        while (true) {
          const Tok d = next();
          if (d.text == "}") break;
          if (d.text == "kernel") st.kernel = parse_size(next_value("kernel"));
          else if (d.text == "stride") st.stride = parse_size(next_value("stride"));
          else if (d.text == "dim") st.dim = parse_size(next_value("dim"));
          else fail(d.line, where + ": unknown downsample key '" + d.text + "'");
        }
      } else if (t.text == "block") {
        expect_open(t.line);
        BlockSpec blk;
        while (true) {
          const Tok b = next();
          if (b.text == "}") break;
          if (b.text == "token_mixer") {
            const Tok v = next_value("token_mixer");
            if (v.text == "ssc") blk.token_mixer = TokenMixer::Ssc;
            else if (v.text == "attention_standin")
              blk.token_mixer = TokenMixer::AttentionStandin;
            else fail(v.line, where + ": token_mixer must be ssc|attention_standin");
          } else if (b.text == "channel_mixer") {
            const Tok v = next_value("channel_mixer");
            if (v.text == "conv_k3") blk.channel_mixer.tag = MixerTag::ConvK3;
            else if (v.text == "mlpixer") blk.channel_mixer.tag = MixerTag::Mlpixer;
            else if (v.text == "srb") blk.channel_mixer.tag = MixerTag::Srb;
            else fail(v.line, where + ": channel_mixer must be conv_k3|mlpixer|srb");
          } else if (b.text == "epsilon") {
            blk.channel_mixer.epsilon = parse_double(next_value("epsilon"));
          } else
            fail(b.line, where + ": unknown block key '" + b.text + "'");
        }
        st.blocks.push_back(blk);
      } else
        fail(t.line, where + ": unknown stage key '" + t.text + "'");
    }
    spec.stages.push_back(std::move(st));
  }

  NetKind parse_kind(const Tok& v) {
    if (v.text == "stages") return NetKind::Stages;
    if (v.text == "identity") return NetKind::Identity;
    if (v.text == "lif-chain") return NetKind::LifChain;
    fail(v.line, "kind must be stages|identity|lif-chain");
    return NetKind::Stages;
  }

  bool parse_on_off(const Tok& v) {
    if (v.text == "on") return true;
    if (v.text == "off") return false;
    fail(v.line, "expected on|off, got '" + v.text + "'");
    return true;
  }

  std::size_t parse_size(const Tok& v) {
    const std::uint64_t u = parse_u64(v);
    return static_cast<std::size_t>(u);
  }

  std::uint64_t parse_u64(const Tok& v) {
    try {
      std::size_t pos = 0;
      const std::uint64_t u = std::stoull(v.text, &pos);
      if (pos != v.text.size()) throw std::invalid_argument("");
      return u;
    } catch (...) {
      fail(v.line, "expected an unsigned integer, got '" + v.text + "'");
    }
    return 0;
  }

  double parse_double(const Tok& v) {
    try {
      std::size_t pos = 0;
      const double d = std::stod(v.text, &pos);
      if (pos != v.text.size()) throw std::invalid_argument("");
      return d;
    } catch (...) {
      fail(v.line, "expected a number, got '" + v.text + "'");
    }
    return 0.0;
  }

  void expect_open(int line) {
    const Tok t = next();
    if (t.text != "{") fail(line, "expected '{'");
  }

  Tok next_value(const std::string& key) {
    if (eof()) fail(last_line_, "missing value for '" + key + "'");
    Tok t = next();
    if (t.text == "{" || t.text == "}")
      fail(t.line, "missing value for '" + key + "'");
    return t;
  }

  Tok next() {
    if (eof()) fail(last_line_, "unexpected end of config");
    last_line_ = toks_[pos_].line;
    return toks_[pos_++];
  }

  bool eof() const { return pos_ >= toks_.size(); }

  [[noreturn]] void fail(int line, const std::string& msg) const {
    throw ConfigError("config syntax error at line " + std::to_string(line) +
                      ": " + msg);
  }

  std::vector<Tok> toks_;
  std::size_t pos_ = 0;
  int last_line_ = 1;
};

}  // namespace detail

inline ArchSpec parse_arch_config(const std::string& text) {
  return detail::ConfigParser(text).parse();
}

// Shortest decimal form that round-trips a double exactly.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string serialize_arch(const ArchSpec& spec) {
  std::ostringstream os;
  os << "kind " << to_string(spec.kind) << "\n";
  os << "timesteps " << spec.timesteps << "\n";
  os << "input " << spec.in_c << " " << spec.in_h << " " << spec.in_w << "\n";
  os << "seed " << spec.seed << "\n";
  os << "bn_stats " << (spec.bn_full_backward ? "on" : "off") << "\n";
  os << "input_gain " << format_double(spec.input_gain) << "\n";
  os << "ssc_ratio " << format_double(spec.ssc_ratio) << "\n";
  os << "neuron {\n";
  os << "  beta " << format_double(spec.neuron.beta) << "\n";
  os << "  theta " << format_double(spec.neuron.theta) << "\n";
  os << "  reset " << to_string(spec.neuron.reset) << "\n";
  os << "  a " << format_double(spec.neuron.a) << "\n";
  os << "  mode " << to_string(spec.neuron.mode) << "\n";
  os << "}\n";
  for (const StageSpec& st : spec.stages) {
    os << "stage {\n";
    os << "  downsample { kernel " << st.kernel << " stride " << st.stride
       << " dim " << st.dim << " }\n";
    for (const BlockSpec& b : st.blocks) {
      os << "  block { token_mixer " << to_string(b.token_mixer)
         << " channel_mixer " << to_string(b.channel_mixer.tag) << " epsilon "
         << format_double(b.channel_mixer.epsilon) << " }\n";
    }
    os << "}\n";
  }
  return os.str();
}

}  // namespace sterf
