// sterf: spatio-temporal effective receptive field analysis for spiking
// networks. Subcommands: spatial, temporal, compare, verify, rerun.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sterf/sterf.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sterf;

namespace {

struct ArchInput {
  std::string source;  // "preset:<name>" or "file:<path>"
  std::string label;   // short name for output files
  ArchSpec spec;
};

struct Options {
  std::vector<std::string> archs;
  std::string mixer;
  double epsilon = 0.0;
  std::string probe = "output";
  std::string read = "input";
  std::size_t samples = 60;
  std::uint64_t seed = 42;
  std::string bn_stats;
  std::string mode;
  std::string attention;
  std::string channels = "sum";
  double gamma = 0.5;
  std::string weights;
  std::string out;
};

std::string sanitize_label(const std::string& s) {
  std::string out;
  for (char c : s)
    out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_')
               ? c
               : '_';
  return out;
}

ArchInput resolve_arch(const std::string& name, const Options& opt) {
  ArchInput a;
  bool is_preset = false;
  for (const auto& p : preset_names())
    if (p == name) is_preset = true;
  if (is_preset) {
    a.source = "preset:" + name;
    a.label = sanitize_label(name);
    a.spec = preset_arch(name);
  } else {
    a.source = "file:" + name;
    a.label = sanitize_label(fs::path(name).stem().string());
    a.spec = parse_arch_config(io::read_file(name));
  }

  if (!opt.mixer.empty()) {
    MixerTag tag;
    if (opt.mixer == "conv_k3") tag = MixerTag::ConvK3;
    else if (opt.mixer == "mlpixer") tag = MixerTag::Mlpixer;
    else if (opt.mixer == "srb") tag = MixerTag::Srb;
    else throw ConfigError("--mixer must be conv_k3|mlpixer|srb");
    double eps = opt.epsilon > 0.0 ? opt.epsilon : 4.0;
    apply_mixer(a.spec, tag, eps);
  } else if (opt.epsilon > 0.0) {
    for (StageSpec& st : a.spec.stages)
      for (BlockSpec& b : st.blocks)
        if (b.token_mixer == TokenMixer::Ssc)
          b.channel_mixer.epsilon = opt.epsilon;
  }
  if (!opt.bn_stats.empty()) {
    if (opt.bn_stats == "on") a.spec.bn_full_backward = true;
    else if (opt.bn_stats == "off") a.spec.bn_full_backward = false;
    else throw ConfigError("--bn-stats must be on|off");
  }
  if (!opt.mode.empty()) {
    if (opt.mode == "spike") a.spec.neuron.mode = NeuronMode::Spike;
    else if (opt.mode == "soft") a.spec.neuron.mode = NeuronMode::Soft;
    else throw ConfigError("--mode must be spike|soft");
  }
  if (!opt.attention.empty()) {
    if (opt.attention == "ssc") apply_all_conv(a.spec);
    else if (opt.attention != "standin")
      throw ConfigError("--attention must be standin|ssc");
  }
  a.spec.validate();
  return a;
}

ChannelAgg parse_channels(const std::string& s) {
  if (s == "sum") return ChannelAgg::Sum;
  if (s == "mean") return ChannelAgg::Mean;
  throw ConfigError("--channels must be sum|mean");
}

void ensure_out_dir(const std::string& out) {
  if (out.empty()) throw ConfigError("--out directory is required");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory: " + out);
}

std::string maybe_load_weights(Network& net, const std::string& path) {
  if (path.empty()) return "random-init";
  const std::string raw = io::read_file(path);
  io::load_weights(net.mutable_params(), path);
  return io::fnv1a64_hex(raw);
}

json spread_to_json(const SpreadReport& rep) {
  return json{{"r95", rep.r95},
              {"centroid", {rep.centroid_row, rep.centroid_col}},
              {"mass_entropy", rep.mass_entropy},
              {"zero_mass", rep.zero_mass}};
}

json manifest_base(const std::string& command, const Options& opt,
                   const std::vector<ArchInput>& archs) {
  json m;
  m["tool"] = "sterf";
  m["version"] = kVersion;
  m["command"] = command;
  json alist = json::array();
  for (const auto& a : archs)
    alist.push_back({{"source", a.source},
                     {"label", a.label},
                     {"config", serialize_arch(a.spec)}});
  m["archs"] = alist;
  m["samples"] = opt.samples;
  m["seed"] = opt.seed;
  m["probe"] = opt.probe;
  m["read"] = opt.read;
  m["channels"] = opt.channels;
  m["gamma"] = opt.gamma;
  m["weights_file"] = opt.weights.empty() ? "" : opt.weights;
  return m;
}

void write_manifest(json m, const std::string& out_dir,
                    std::chrono::steady_clock::time_point t0) {
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
  m["wall_ms"] = ms;
  io::write_file((fs::path(out_dir) / "manifest.json").string(), m.dump(2) + "\n");
}

ErfOptions erf_options(const Options& opt) {
  ErfOptions eo;
  eo.probe = opt.probe;
  eo.read = opt.read;
  eo.samples = opt.samples;
  eo.seed = opt.seed;
  eo.channels = parse_channels(opt.channels);
  return eo;
}

int cmd_spatial(const Options& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  ensure_out_dir(opt.out);
  ArchInput arch = resolve_arch(opt.archs.at(0), opt);
  Network net(arch.spec);
  const std::string whash = maybe_load_weights(net, opt.weights);

  ErfSpatial erf = spatial_erf(net, erf_options(opt));
  SpreadReport rep = spread_metrics(erf);

  const fs::path dir(opt.out);
  io::write_file((dir / "grid.csv").string(),
                 io::grid_to_csv(erf.grid, erf.h, erf.w));
  io::write_pgm(normalize_for_viz(erf, opt.gamma), erf.h, erf.w,
                (dir / "heatmap.pgm").string());
  io::write_file((dir / "spread.json").string(),
                 spread_to_json(rep).dump(2) + "\n");

  json m = manifest_base("spatial", opt, {arch});
  m["stimulus"] = "spatial-center-unit";
  m["probe_points"] = net.probe_names();
  m["weights"] = whash;
  m["outputs"] = {{"grid_csv", "grid.csv"},
                  {"heatmap_pgm", "heatmap.pgm"},
                  {"spread_json", "spread.json"}};
  write_manifest(m, opt.out, t0);
  std::printf("spatial ERF %zux%zu  r95=%.3f  entropy=%.3f  -> %s\n", erf.h,
              erf.w, rep.r95, rep.mass_entropy, opt.out.c_str());
  return 0;
}

int cmd_temporal(const Options& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  ensure_out_dir(opt.out);
  ArchInput arch = resolve_arch(opt.archs.at(0), opt);
  Network net(arch.spec);
  const std::string whash = maybe_load_weights(net, opt.weights);

  ErfTemporal erf = temporal_erf(net, erf_options(opt));
  const fs::path dir(opt.out);
  io::write_file((dir / "temporal.csv").string(),
                 io::temporal_to_csv(erf.values));

  json m = manifest_base("temporal", opt, {arch});
  m["stimulus"] = "temporal-final-unit";
  m["probe_points"] = net.probe_names();
  m["weights"] = whash;
  m["outputs"] = {{"temporal_csv", "temporal.csv"}};
  write_manifest(m, opt.out, t0);
  std::printf("temporal ERF T=%zu  -> %s\n", erf.values.size(), opt.out.c_str());
  return 0;
}

int cmd_compare(const Options& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  if (opt.archs.size() < 2)
    throw ConfigError("compare needs at least two --arch configs");
  ensure_out_dir(opt.out);

  std::vector<ArchInput> archs;
  for (const auto& name : opt.archs) archs.push_back(resolve_arch(name, opt));
  for (std::size_t i = 1; i < archs.size(); ++i) {
    const ArchSpec& a = archs[0].spec;
    const ArchSpec& b = archs[i].spec;
    if (a.in_c != b.in_c || a.in_h != b.in_h || a.in_w != b.in_w ||
        a.timesteps != b.timesteps)
      throw ConfigError("compare: input shapes of configs differ (" +
                        archs[0].label + " vs " + archs[i].label + ")");
  }
  // Deduplicate labels.
  for (std::size_t i = 0; i < archs.size(); ++i) {
    int dup = 0;
    for (std::size_t j = 0; j < i; ++j)
      if (archs[j].label == archs[i].label) ++dup;
    if (dup) archs[i].label += "_" + std::to_string(dup + 1);
  }

  const fs::path dir(opt.out);
  std::string csv;
  std::string txt = "config,probe -> r95, mass_entropy\n";
  json rows = json::array();
  for (const auto& arch : archs) {
    Network net(arch.spec);
    maybe_load_weights(net, opt.weights);
    std::vector<std::string> probes;
    if (opt.probe == "stages") {
      for (const auto& p : net.probe_names())
        if (p.rfind("stage", 0) == 0) probes.push_back(p);
    } else {
      probes.push_back(opt.probe);
    }
    for (const auto& probe : probes) {
      ErfOptions eo = erf_options(opt);
      eo.probe = probe;
      ErfSpatial erf = spatial_erf(net, eo);
      SpreadReport rep = spread_metrics(erf);
      csv += arch.label + "," + probe + "," + io::csv_cell(rep.r95) + "," +
             io::csv_cell(rep.mass_entropy) + "\r\n";
      char line[256];
      std::snprintf(line, sizeof(line), "%-28s %-8s r95=%8.3f  entropy=%7.3f\n",
                    arch.label.c_str(), probe.c_str(), rep.r95,
                    rep.mass_entropy);
      txt += line;
      rows.push_back({{"config", arch.label},
                      {"probe", probe},
                      {"r95", rep.r95},
                      {"mass_entropy", rep.mass_entropy}});
      io::write_pgm(normalize_for_viz(erf, opt.gamma), erf.h, erf.w,
                    (dir / ("heatmap_" + arch.label + "_" + probe + ".pgm"))
                        .string());
    }
  }
  io::write_file((dir / "compare.csv").string(), csv);
  io::write_file((dir / "compare.txt").string(), txt);
  std::fputs(txt.c_str(), stdout);

  json m = manifest_base("compare", opt, archs);
  m["stimulus"] = "spatial-center-unit";
  m["rows"] = rows;
  m["outputs"] = {{"compare_csv", "compare.csv"}, {"compare_txt", "compare.txt"}};
  write_manifest(m, opt.out, t0);
  return 0;
}

// Re-executes a recorded run; archs come from the embedded config text so
// the original inputs are not needed.
int cmd_rerun(const std::string& manifest_path, const std::string& out) {
  const json m = json::parse(io::read_file(manifest_path));
  Options opt;
  opt.samples = m.at("samples").get<std::size_t>();
  opt.seed = m.at("seed").get<std::uint64_t>();
  opt.probe = m.at("probe").get<std::string>();
  opt.read = m.at("read").get<std::string>();
  opt.channels = m.at("channels").get<std::string>();
  opt.gamma = m.at("gamma").get<double>();
  opt.weights = m.value("weights_file", std::string());
  opt.out = out;

  // Write the embedded configs to temp files so resolve_arch re-parses the
  // exact architecture that ran, without preset/flag re-application.
  ensure_out_dir(out);
  const fs::path dir(out);
  std::size_t idx = 0;
  for (const auto& a : m.at("archs")) {
    const fs::path cfg = dir / ("rerun_arch" + std::to_string(++idx) + ".cfg");
    io::write_file(cfg.string(), a.at("config").get<std::string>());
    opt.archs.push_back(cfg.string());
  }

  const std::string command = m.at("command").get<std::string>();
  if (command == "spatial") return cmd_spatial(opt);
  if (command == "temporal") return cmd_temporal(opt);
  if (command == "compare") return cmd_compare(opt);
  throw ConfigError("rerun: unsupported command '" + command + "'");
}

// Built-in oracle suite: prints one comparison per check.
int cmd_verify() {
  int failures = 0;
  auto report = [&](const std::string& name,
                    const oracle::ComparisonReport& rep) {
    std::printf("%-44s %s\n", name.c_str(), rep.str().c_str());
    if (!rep.pass) ++failures;
  };

  {
    // Loss-derived shortcut vs definitional aggregation on a small mixer net.
    ArchSpec s;
    s.timesteps = 3;
    s.in_c = 2;
    s.in_h = 9;
    s.in_w = 9;
    s.seed = 7;
    StageSpec st;
    st.kernel = 3;
    st.stride = 1;
    st.dim = 4;
    BlockSpec blk;
    blk.token_mixer = TokenMixer::Ssc;
    blk.channel_mixer = {MixerTag::Srb, 2.0};
    st.blocks.push_back(blk);
    s.stages.push_back(st);
    Network net(s);
    const Tensor5 input = randn(net.input_shape(), 99);
    Network::RunResult run = net.run(input);
    const Tensor5 stim = make_spatial_stimulus(run.tape.value(run.output_id).shape());
    BackwardOptions bo;
    bo.keep_adjoints.push_back(run.input_id);
    const Tensor5 fast =
        run.tape.backward_from_stimulus(run.output_id, stim, bo)
            .kept.at(run.input_id);
    const Tensor5 slow = oracle::jacobian_aggregate(net, "output", stim, input);
    report("loss-derived vs element aggregation",
           oracle::compare(fast, slow, 1e-10, 0.0));
  }

  {
    // Soft-mode tape gradient vs central finite differences.
    ArchSpec s;
    s.timesteps = 2;
    s.in_c = 2;
    s.in_h = 6;
    s.in_w = 6;
    s.seed = 3;
    s.neuron.mode = NeuronMode::Soft;
    s.neuron.a = 4.0;
    StageSpec st;
    st.kernel = 3;
    st.stride = 1;
    st.dim = 3;
    BlockSpec blk;
    blk.token_mixer = TokenMixer::Ssc;
    blk.channel_mixer = {MixerTag::Mlpixer, 2.0};
    st.blocks.push_back(blk);
    s.stages.push_back(st);
    Network net(s);
    const Tensor5 input = randn(net.input_shape(), 5);
    Network::RunResult run = net.run(input);
    Tensor5 stim(run.tape.value(run.output_id).shape());
    Rng rng(17);
    for (std::size_t i = 0; i < stim.numel(); ++i) stim[i] = rng.next_normal();
    BackwardOptions bo;
    bo.keep_adjoints.push_back(run.input_id);
    const Tensor5 tape_grad =
        run.tape.backward_from_stimulus(run.output_id, stim, bo)
            .kept.at(run.input_id);
    const Tensor5 fd = oracle::finite_difference(net, "output", stim, input);
    report("soft-mode tape vs finite differences",
           oracle::compare(tape_grad, fd, 1e-8, 1e-5));
  }

  {
    // Sub-threshold temporal decay vs closed form.
    ArchSpec s = preset_arch("lif-chain");
    Network net(s);
    ErfOptions eo;
    eo.samples = 1;
    eo.seed = 11;
    ErfTemporal erf = temporal_erf(net, eo);
    std::vector<double> ratios, expect;
    for (std::size_t tau = 0; tau < erf.values.size(); ++tau) {
      ratios.push_back(erf.values[tau] / erf.values[0]);
      expect.push_back(oracle::lif_chain_closed_form(s.neuron, s.timesteps, tau));
    }
    report("temporal decay vs beta^tau",
           oracle::compare(ratios, expect, 1e-9, 0.0));
  }

  std::printf(failures ? "verify: %d check(s) FAILED\n" : "verify: all checks passed\n",
              failures);
  return failures ? 2 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatio-temporal effective receptive field analysis for SNNs"};
  app.require_subcommand(1);

  Options opt;
  std::string manifest_path;

  auto add_common = [&](CLI::App* cmd, bool multi_arch) {
    if (multi_arch)
      cmd->add_option("--arch", opt.archs, "architecture preset or config file")
          ->required();
    else
      cmd->add_option("--arch", opt.archs, "architecture preset or config file")
          ->required()
          ->expected(1);
    cmd->add_option("--mixer", opt.mixer, "override channel mixer: conv_k3|mlpixer|srb");
    cmd->add_option("--epsilon", opt.epsilon, "override mixer expansion ratio (e.g. 4 or 6)");
    cmd->add_option("--probe", opt.probe, "stimulus boundary (default: output)");
    cmd->add_option("--read", opt.read, "gradient read boundary (default: input)");
    cmd->add_option("--samples", opt.samples, "protocol samples (default: 60)");
    cmd->add_option("--seed", opt.seed, "input sampling seed (default: 42)");
    cmd->add_option("--bn-stats", opt.bn_stats, "BN-statistics backward: on|off");
    cmd->add_option("--mode", opt.mode, "neuron mode override: spike|soft");
    cmd->add_option("--attention", opt.attention, "late stages: standin|ssc");
    cmd->add_option("--channels", opt.channels, "channel aggregation: sum|mean");
    cmd->add_option("--gamma", opt.gamma, "heatmap gamma (default: 0.5)");
    cmd->add_option("--weights", opt.weights, "weight file to load");
    cmd->add_option("--out", opt.out, "output directory")->required();
  };

  CLI::App* spatial = app.add_subcommand("spatial", "spatial ERF grid + heatmap");
  add_common(spatial, false);
  CLI::App* temporal = app.add_subcommand("temporal", "temporal ERF per delay");
  add_common(temporal, false);
  CLI::App* compare = app.add_subcommand("compare", "r95/entropy table across configs");
  add_common(compare, true);
  compare->get_option("--probe")->default_str("stages");
  CLI::App* verify = app.add_subcommand("verify", "run the oracle suite");
  CLI::App* rerun = app.add_subcommand("rerun", "re-execute a recorded manifest");
  rerun->add_option("--manifest", manifest_path, "manifest.json path")->required();
  rerun->add_option("--out", opt.out, "output directory")->required();

  // compare defaults to probing every stage
  try {
    app.parse(argc, argv);
    if (spatial->parsed()) return cmd_spatial(opt);
    if (temporal->parsed()) return cmd_temporal(opt);
    if (compare->parsed()) {
      if (opt.probe == "output" && !compare->get_option("--probe")->count())
        opt.probe = "stages";
      return cmd_compare(opt);
    }
    if (verify->parsed()) return cmd_verify();
    if (rerun->parsed()) return cmd_rerun(manifest_path, opt.out);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
