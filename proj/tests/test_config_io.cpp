#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "support.hpp"

using namespace sterf;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  static int counter = 0;
  fs::path p = fs::temp_directory_path() /
               ("sterf_io_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter++));
  fs::create_directories(p);
  return p;
}

bool specs_equal(const ArchSpec& a, const ArchSpec& b) {
  return serialize_arch(a) == serialize_arch(b);
}

}  // namespace

TEST_CASE("config round-trip: serialize(parse(text)) is stable") {
  for (const auto& name : preset_names()) {
    const ArchSpec spec = preset_arch(name);
    const std::string text = serialize_arch(spec);
    const ArchSpec re = parse_arch_config(text);
    REQUIRE(specs_equal(spec, re));
  }
}

TEST_CASE("preset srb variant reproduces the reference stage dims") {
  ArchSpec s = preset_arch("meta-sdt-tiny");
  apply_mixer(s, MixerTag::Srb, 4.0);
  const std::size_t expect[5] = {16, 32, 64, 128, 192};
  REQUIRE(s.stages.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    REQUIRE(s.stages[i].dim == expect[i]);
    for (const BlockSpec& b : s.stages[i].blocks)
      if (b.token_mixer == TokenMixer::Ssc) {
        REQUIRE(b.channel_mixer.tag == MixerTag::Srb);
        REQUIRE(b.channel_mixer.epsilon == 4.0);
      }
  }
}

TEST_CASE("config parser rejects bad input with located errors") {
  // Degenerate geometry is a semantic error naming the stage.
  const std::string shrink =
      "timesteps 1\ninput 1 4 4\nseed 1\n"
      "stage { downsample { kernel 3 stride 8 dim 2 } }\n";
  try {
    parse_arch_config(shrink);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    REQUIRE(std::string(e.what()).find("stage 1") != std::string::npos);
  }

  // Unknown keys are rejected with a line number.
  try {
    parse_arch_config("timesteps 2\nbogus_key 7\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    REQUIRE(msg.find("line 2") != std::string::npos);
    REQUIRE(msg.find("bogus_key") != std::string::npos);
  }

  REQUIRE_THROWS_AS(parse_arch_config("neuron { beta nope }"), ConfigError);
  REQUIRE_THROWS_AS(parse_arch_config("stage {"), ConfigError);

  // Unknown presets list the available names.
  try {
    preset_arch("no-such-preset");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    REQUIRE(std::string(e.what()).find("meta-sdt-tiny") != std::string::npos);
  }
}

TEST_CASE("csv cells survive the text round-trip") {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const double v = rng.next_normal() * std::pow(10.0, (i % 13) - 6);
    const std::string cell = io::csv_cell(v);
    REQUIRE(std::stod(cell) == v);
  }
  // Grid layout: rows end with CRLF, cells joined by commas.
  const std::string csv = io::grid_to_csv({1.0, 2.0, 3.0, 4.0}, 2, 2);
  REQUIRE(csv == "1,2\r\n3,4\r\n");
}

TEST_CASE("pgm writer: values, zero grid, and round-trip") {
  const fs::path dir = temp_dir();
  const fs::path p = dir / "t.pgm";
  io::write_pgm({0.0, 1.0, 0.5, 0.25}, 2, 2, p.string());
  const std::string raw = io::read_file(p.string());
  REQUIRE(raw.substr(0, 3) == "P5\n");
  // 16-bit big-endian pixels: 0, 65535, 32768, 16384.
  const std::size_t off = raw.size() - 8;
  auto pix = [&](std::size_t i) {
    return (static_cast<unsigned>(static_cast<unsigned char>(raw[off + 2 * i]))
            << 8) |
           static_cast<unsigned>(static_cast<unsigned char>(raw[off + 2 * i + 1]));
  };
  REQUIRE(pix(0) == 0);
  REQUIRE(pix(1) == 65535);
  REQUIRE(pix(2) == 32768);
  REQUIRE(pix(3) == 16384);

  std::size_t h = 0, w = 0;
  const auto back = io::read_pgm(p.string(), h, w);
  REQUIRE(h == 2);
  REQUIRE(w == 2);
  const double vals[4] = {0.0, 1.0, 0.5, 0.25};
  for (std::size_t i = 0; i < 4; ++i)
    REQUIRE(std::fabs(back[i] - vals[i]) <= 1.0 / 65535.0);

  io::write_pgm({0.0, 0.0, 0.0, 0.0}, 2, 2, (dir / "z.pgm").string());
  const auto zero = io::read_pgm((dir / "z.pgm").string(), h, w);
  for (double v : zero) REQUIRE(v == 0.0);

  REQUIRE_THROWS_AS(io::write_pgm({2.0}, 1, 1, (dir / "bad.pgm").string()),
                    ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("weight files round-trip bit-exactly") {
  const fs::path dir = temp_dir();
  const fs::path wf = dir / "weights.bin";

  Network net(preset_arch("meta-sdt-tiny-desk"));
  io::save_weights(net.params(), wf.string());

  Network other(preset_arch("meta-sdt-tiny-desk"));
  // Perturb, then restore from file.
  for (ParamTensor& p : other.mutable_params().entries())
    for (double& v : p.data) v += 1.0;
  io::load_weights(other.mutable_params(), wf.string());
  for (std::size_t i = 0; i < net.params().size(); ++i) {
    const auto& a = net.params().at(static_cast<int>(i));
    const auto& b = other.params().at(static_cast<int>(i));
    REQUIRE(a.name == b.name);
    REQUIRE(a.data == b.data);
  }

  // Mismatched destination shape is an error.
  Network tiny(preset_arch("identity"));
  REQUIRE_THROWS_AS(io::load_weights(tiny.mutable_params(), wf.string()),
                    ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("weight loading changes network outputs deterministically") {
  const fs::path dir = temp_dir();
  const fs::path wf = dir / "w.bin";
  ArchSpec s = preset_arch("meta-sdt-tiny-desk");
  s.stages.resize(1);
  s.in_h = 16;
  s.in_w = 16;

  Network a(s);
  io::save_weights(a.params(), wf.string());
  ArchSpec s2 = s;
  s2.seed = 999;  // different random init
  Network b2(s2);
  const Tensor5 x = randn(a.input_shape(), 3);
  auto ra = a.run(x);
  auto rb = b2.run(x);
  REQUIRE(testsup::max_abs_diff(ra.tape.value(ra.output_id),
                                rb.tape.value(rb.output_id)) > 0.0);
  io::load_weights(b2.mutable_params(), wf.string());
  auto rb2 = b2.run(x);
  REQUIRE(testsup::max_abs_diff(ra.tape.value(ra.output_id),
                                rb2.tape.value(rb2.output_id)) == 0.0);
  fs::remove_all(dir);
}

TEST_CASE("fnv1a64 is stable") {
  REQUIRE(io::fnv1a64("") == 0xCBF29CE484222325ull);
  REQUIRE(io::fnv1a64_hex("a") == "af63dc4c8601ec8c");
}

TEST_CASE("optional config keys and diagnostics") {
  const ArchSpec chain = parse_arch_config(
      "kind lif-chain\ntimesteps 5\ninput 1 8 8\nseed 1\ninput_gain 0.01\n"
      "neuron { beta 0.5 theta 1 reset soft a 1 mode soft }\n");
  REQUIRE(chain.kind == NetKind::LifChain);
  REQUIRE(chain.input_gain == 0.01);

  const ArchSpec off = parse_arch_config(
      "timesteps 1\ninput 1 8 8\nseed 1\nbn_stats off\n"
      "stage { downsample { kernel 3 stride 1 dim 2 } }\n");
  REQUIRE_FALSE(off.bn_full_backward);
}
