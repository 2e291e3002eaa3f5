#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sterf/errors.hpp"
#include "sterf/lif.hpp"

namespace sterf {

enum class TokenMixer { Ssc, AttentionStandin };
enum class MixerTag { ConvK3, Mlpixer, Srb };

struct MixerKind {
  MixerTag tag = MixerTag::ConvK3;
  double epsilon = 4.0;  // intermediate channel expansion ratio

  // epsilon * C must land on an integer channel count.
  std::size_t mid_channels(std::size_t c, const std::string& where) const {
    const double mid = epsilon * static_cast<double>(c);
    const double rounded = std::round(mid);
    if (!(epsilon > 1.0) || std::fabs(mid - rounded) > 1e-9 || rounded < 1.0)
      throw ConfigError(where + ": epsilon " + std::to_string(epsilon) +
                        " does not give an integer expanded channel count for C=" +
                        std::to_string(c));
    return static_cast<std::size_t>(rounded);
  }
};

struct BlockSpec {
  TokenMixer token_mixer = TokenMixer::Ssc;
  MixerKind channel_mixer;
};

struct StageSpec {
  std::size_t kernel = 3, stride = 2, dim = 0;  // downsampling conv
  std::vector<BlockSpec> blocks;
};

// Diagnostic network kinds exist so the analytic oracles (identity Jacobian,
// sub-threshold membrane chain) are reachable from the CLI as ordinary
// configs.
enum class NetKind { Stages, Identity, LifChain };

struct ArchSpec {
  NetKind kind = NetKind::Stages;
  std::size_t timesteps = 4;
  std::size_t in_c = 3, in_h = 64, in_w = 64;
  LifParams neuron;
  std::uint64_t seed = 1;
  bool bn_full_backward = true;  // BN backward through batch statistics
  double input_gain = 1.0;       // fixed input scaling (LifChain presets)
  double ssc_ratio = 2.0;        // SepConv internal expansion
  std::vector<StageSpec> stages;

  void validate() const {
    neuron.validate();
    if (timesteps == 0) throw ConfigError("timesteps must be >= 1");
    if (in_c == 0 || in_h == 0 || in_w == 0)
      throw ConfigError("input dims must be >= 1");
    if (kind == NetKind::Stages) {
      if (stages.empty()) throw ConfigError("config error: empty stage list");
      std::size_t h = in_h, w = in_w;
      for (std::size_t i = 0; i < stages.size(); ++i) {
        const StageSpec& s = stages[i];
        const std::string where = "stage " + std::to_string(i + 1);
        if (s.dim == 0) throw ConfigError(where + ": dim must be >= 1");
        if (s.stride == 0) throw ConfigError(where + ": stride must be >= 1");
        if (s.kernel == 0 || s.kernel % 2 == 0)
          throw ConfigError(where + ": downsample kernel must be odd");
        const std::size_t pad = s.kernel / 2;
        h = (h + 2 * pad - s.kernel) / s.stride + 1;
        w = (w + 2 * pad - s.kernel) / s.stride + 1;
        if (h == 0 || w == 0)
          throw ConfigError(where + ": downsampling drives spatial dims to zero");
        for (std::size_t bi = 0; bi < s.blocks.size(); ++bi)
          s.blocks[bi].channel_mixer.mid_channels(
              s.dim, where + " block " + std::to_string(bi + 1));
      }
    }
  }
};

inline const char* to_string(TokenMixer t) {
  return t == TokenMixer::Ssc ? "ssc" : "attention_standin";
}
inline const char* to_string(MixerTag t) {
  switch (t) {
    case MixerTag::ConvK3: return "conv_k3";
    case MixerTag::Mlpixer: return "mlpixer";
    default: return "srb";
  }
}
inline const char* to_string(ResetKind r) {
  return r == ResetKind::Soft ? "soft" : "hard";
}
inline const char* to_string(NeuronMode m) {
  return m == NeuronMode::Spike ? "spike" : "soft";
}
inline const char* to_string(NetKind k) {
  switch (k) {
    case NetKind::Stages: return "stages";
    case NetKind::Identity: return "identity";
    default: return "lif-chain";
  }
}

}  // namespace sterf
