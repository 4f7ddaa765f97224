// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The uc3d Authors

// Command-line front end: synthetic data, pre-training, gradient checks,
// matching evaluation and metrics export.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "uc3d/gradcheck_suite.hpp"
#include "uc3d/uc3d.hpp"

namespace fs = std::filesystem;
using namespace uc3d;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot open " + p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::map<std::string, std::string> parse_overrides(const std::vector<std::string>& items) {
  std::map<std::string, std::string> kv;
  for (const std::string& s : items) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + s + "'");
    kv[s.substr(0, eq)] = s.substr(eq + 1);
  }
  return kv;
}

TrainData load_data(const std::string& source, const TrainConfig& cfg) {
  if (source == "synth") return synthetic_data(cfg);
  return directory_data(source, cfg.strategy.kind);
}

int run_synth(std::size_t frames, std::uint64_t seed, const std::string& out) {
  io::write_frames(out, generate_frames(frames, seed));
  std::cout << "wrote " << frames << " frames to " << out << "\n";
  return 0;
}

int run_pretrain(const std::string& strategy, const std::string& config, const std::string& data_src,
                 const std::string& out, bool no_local, bool no_global, const std::vector<std::string>& sets) {
  TrainConfig cfg;
  if (!config.empty()) cfg = read_train_config(config);
  if (!strategy.empty()) cfg.strategy.kind = parse_strategy(strategy);
  cfg = parse_train_config(parse_overrides(sets), cfg);
  if (no_local) cfg.strategy.use_local = false;
  if (no_global) cfg.strategy.use_global = false;
  cfg.validate();
  const TrainData data = load_data(data_src, cfg);
  PretrainOptions opt;
  if (!out.empty()) opt.out_dir = out;
  opt.log = [](const std::string& line) { std::cout << line << std::endl; };
  const PretrainResult r = pretrain(cfg, data, opt);
  std::printf("done: %zu steps in %.1f s\n", r.metrics.rows.size(), r.metrics.wall_seconds);
  return 0;
}

int run_checkgrad(std::size_t seeds) {
  bool ok = true;
  run_gradient_suite(seeds, [&](const GradCaseReport& r) {
    const bool pass = r.max_relative_error < 1e-4;
    ok = ok && pass;
    std::printf("%-28s %s max rel err %.3e over %zu seeds, %zu coords, %zu skipped at kinks\n", r.name.c_str(),
                pass ? "ok  " : "FAIL", r.max_relative_error, r.seeds, r.checked, r.skipped_at_kinks);
  });
  return ok ? 0 : 1;
}

int run_eval(const std::string& ckpt, const std::string& config, const std::string& data_src, std::size_t frames,
             std::uint64_t seed) {
  const fs::path ckpt_path(ckpt);
  const fs::path cfg_path = config.empty() ? ckpt_path.parent_path() / "config.txt" : fs::path(config);
  const TrainConfig cfg = read_train_config(cfg_path);
  Rng rng(0);
  DualEncoderState state = build_strategy(cfg.strategy, rng);
  load_state_tensors(state, dm::load_checkpoint(ckpt_path));
  const std::vector<PosedFrame> held = data_src == "synth" ? generate_frames(frames, seed) : io::read_frames(data_src);
  const EvalResult r = eval_matching(state, held, cfg.strategy, seed);
  std::printf("frames %zu pairs %zu accuracy %.4f chance %.4f ratio %.2f\n", r.frames_used, r.pairs, r.accuracy,
              r.chance, r.chance > 0 ? r.accuracy / r.chance : 0.0);
  return 0;
}

int run_export(const std::string& run_dir, bool epochs, bool csv) {
  const fs::path p = fs::path(run_dir) / (epochs ? "epochs.csv" : "metrics.csv");
  const std::string text = read_file(p);
  if (csv) {
    std::cout << text;
    return 0;
  }
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    for (char& c : line) {
      if (c == ',') c = '\t';
    }
    std::cout << line << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"uc3d: contrastive pre-training across 3D data formats"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "Render synthetic posed RGB-D frames to a directory");
  std::size_t synth_frames = 200;
  std::uint64_t synth_seed = 1;
  std::string synth_out;
  synth->add_option("--frames", synth_frames, "Number of frames")->capture_default_str();
  synth->add_option("--seed", synth_seed, "Generator seed")->capture_default_str();
  synth->add_option("--out", synth_out, "Output directory")->required();

  auto* pre = app.add_subcommand("pretrain", "Run contrastive pre-training");
  std::string strategy, config, data_src = "synth", out;
  bool no_local = false, no_global = false;
  std::vector<std::string> sets;
  pre->add_option("--strategy", strategy, "dpco, dvco, pvco, ppco, ipco, pointcontrast or ddco");
  pre->add_option("--config", config, "key=value config file");
  pre->add_option("--data", data_src, "Frame directory or 'synth'")->capture_default_str();
  pre->add_option("--out", out, "Run directory for metrics and checkpoints");
  pre->add_flag("--no-local", no_local, "Disable the local term");
  pre->add_flag("--no-global", no_global, "Disable the global term");
  pre->add_option("--set", sets, "Config override key=value (repeatable)");

  auto* cg = app.add_subcommand("checkgrad", "Finite-difference gradient checks for every op");
  std::size_t cg_seeds = 10;
  cg->add_option("--seeds", cg_seeds, "Seeds per case")->capture_default_str();

  auto* ev = app.add_subcommand("eval-matching", "Top-1 local matching accuracy of a checkpoint");
  std::string ev_ckpt, ev_config, ev_data = "synth";
  std::size_t ev_frames = 50;
  std::uint64_t ev_seed = 999;
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint file")->required();
  ev->add_option("--config", ev_config, "Config file (default: config.txt next to the checkpoint)");
  ev->add_option("--data", ev_data, "Frame directory or 'synth'")->capture_default_str();
  ev->add_option("--frames", ev_frames, "Synthetic held-out frames")->capture_default_str();
  ev->add_option("--seed", ev_seed, "Held-out frame and augmentation seed")->capture_default_str();

  auto* ex = app.add_subcommand("export-metrics", "Print the metrics of a run directory");
  std::string ex_run;
  bool ex_csv = false, ex_epochs = false;
  ex->add_option("--run", ex_run, "Run directory")->required();
  ex->add_flag("--csv", ex_csv, "Comma-separated output");
  ex->add_flag("--epochs", ex_epochs, "Per-epoch summary instead of per-step rows");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) return run_synth(synth_frames, synth_seed, synth_out);
    if (*pre) return run_pretrain(strategy, config, data_src, out, no_local, no_global, sets);
    if (*cg) return run_checkgrad(cg_seeds);
    if (*ev) return run_eval(ev_ckpt, ev_config, ev_data, ev_frames, ev_seed);
    if (*ex) return run_export(ex_run, ex_epochs, ex_csv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
