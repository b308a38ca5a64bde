/* Copyright 2026 The RC2L Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
// Command-line entry point: make-data, train, eval, ablate, plot.
//
// Exit codes: 0 success, 2 usage, 3 configuration, 4 data or I/O,
// 5 numerical failure, 1 anything else.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "rc2l/plot.hpp"
#include "rc2l/trainer.hpp"

namespace fs = std::filesystem;
using namespace rc2l;

namespace {

constexpr int kExitUsage = 2;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument:
    case ErrorKind::kConfig:
      return 3;
    case ErrorKind::kData:
    case ErrorKind::kIo:
      return 4;
    case ErrorKind::kNumerical:
      return 5;
  }
  return 1;
}

const char* kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid argument";
    case ErrorKind::kConfig: return "config error";
    case ErrorKind::kData: return "data error";
    case ErrorKind::kIo: return "io error";
    case ErrorKind::kNumerical: return "numerical error";
  }
  return "error";
}

// Options shared by every subcommand.
struct Common {
  std::optional<std::uint64_t> seed;
  std::string config_path;
  std::string preset = "desk";
  std::vector<std::string> overrides;

  void attach(CLI::App* app) {
    app->add_option("--seed", seed, "Random seed");
    app->add_option("--config", config_path, "Config file of key = value lines")->check(CLI::ExistingFile);
    app->add_option("--preset", preset, "Base preset: desk, desk-tuned or paper");
    app->add_option("--set", overrides, "Override a config key (key=value); repeatable");
  }

  TrainConfig resolve(bool seed_is_data) const {
    TrainConfig c = preset_config();
    if (!config_path.empty()) c = load_config(config_path, c);
    for (const std::string& o : overrides) apply_override(c, o);
    if (seed) (seed_is_data ? c.data.seed : c.seed) = *seed;
    c.data.scene.num_classes = c.arch.num_classes;
    return c;
  }

  TrainConfig preset_config() const { return rc2l::preset(preset); }
};

Dataset open_dataset(const fs::path& root) { return load_dataset(load_manifest(root)); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << text;
}

int run_make_data(const Common& common, const fs::path& out, bool force) {
  const TrainConfig c = common.resolve(true);
  const DatasetManifest m = build_dataset(out, c.data, force);
  std::printf("wrote %zu samples to %s (labeled %zu, unlabeled %zu, val %zu)\n", m.entries.size(),
              out.string().c_str(), m.ids(Split::kLabeled).size(), m.ids(Split::kUnlabeled).size(),
              m.ids(Split::kValidation).size());
  return 0;
}

int run_train(const Common& common, const fs::path& data, const fs::path& runs, const std::string& run_dir) {
  const TrainConfig c = common.resolve(false);
  c.validate();
  const Dataset ds = open_dataset(data);
  const fs::path dir = run_dir.empty() ? default_run_dir(runs, c) : fs::path(run_dir);
  std::printf("run directory: %s\n", dir.string().c_str());
  const RunReport r = train(c, ds, dir);
  std::cout << format_report(r.final_miou, ds.manifest.class_names);
  std::printf("wall time %.1f s\n", r.wall_seconds);
  return 0;
}

int run_eval(const Common& common, const fs::path& checkpoint, const fs::path& data, const std::string& split,
             bool exclude_background, const std::string& kv_path) {
  (void)common.resolve(false);  // validates --config and --set even though the checkpoint fixes the model
  const ArchConfig arch = read_checkpoint_arch(checkpoint);
  const ModelParams params = load_checkpoint(checkpoint, arch);
  const Dataset ds = open_dataset(data);
  const std::vector<Sample>* samples = nullptr;
  if (split == "val") samples = &ds.validation;
  else if (split == "labeled") samples = &ds.labeled;
  else fail(ErrorKind::kConfig, "--split must be 'val' or 'labeled'");
  std::vector<int> excluded;
  if (exclude_background) excluded.push_back(1);
  const MiouResult r = evaluate(params, arch, *samples, excluded);
  std::cout << format_report(r, ds.manifest.class_names);
  if (!kv_path.empty()) write_text(kv_path, format_report_kv(r, ds.manifest.class_names));
  return 0;
}

int run_ablate(const Common& common, const fs::path& data, const fs::path& out, const std::string& grid_name) {
  const TrainConfig c = common.resolve(false);
  const Dataset ds = open_dataset(data);
  const std::vector<std::string> grids = grid_name == "all"
                                             ? std::vector<std::string>{"components", "alpha", "queries", "temperature"}
                                             : std::vector<std::string>{grid_name};
  for (const std::string& g : grids) {
    const auto rows = ablation(c, ablation_grid(g), ds, out / g);
    std::printf("[%s]\n%s\n", g.c_str(), format_ablation(rows).c_str());
  }
  return 0;
}

int run_plot(const Common& common, const std::string& run, const std::string& ablation_dir, int window) {
  (void)common.resolve(false);
  if (run.empty() == ablation_dir.empty()) fail(ErrorKind::kConfig, "plot needs exactly one of --run or --ablation");
  if (!run.empty()) {
    const fs::path dir(run);
    auto series = loss_series(read_metrics(dir / "metrics.tsv"));
    for (Series& s : series) s.y = moving_average(s.y, window);
    write_ppm(dir / "loss_curves.ppm", render_panels(series));
    write_text(dir / "loss_curves.txt", format_series_summary(series, window));
    std::printf("wrote %s and %s\n", (dir / "loss_curves.ppm").string().c_str(),
                (dir / "loss_curves.txt").string().c_str());
    return 0;
  }
  const fs::path dir(ablation_dir);
  std::ifstream in(dir / "ablation.tsv");
  if (!in) fail(ErrorKind::kIo, "cannot open " + (dir / "ablation.tsv").string());
  std::string line;
  std::getline(in, line);
  std::vector<double> miou;
  std::string table;
  while (std::getline(in, line)) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos) continue;
    miou.push_back(std::stod(line.substr(tab + 1)));
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%2zu  %-22s %8.4f\n", miou.size() - 1, line.substr(0, tab).c_str(), miou.back());
    table += buf;
  }
  write_ppm(dir / "ablation_bars.ppm", render_bars(miou));
  write_text(dir / "ablation_bars.txt", "bar config                  mIoU\n" + table);
  std::printf("wrote %s\n", (dir / "ablation_bars.ppm").string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Region-level contrastive and consistency learning for semi-supervised segmentation"};
  app.require_subcommand(1);

  Common mk_common, tr_common, ev_common, ab_common, pl_common;
  std::string data, out = "data", runs = "runs", run_dir, checkpoint, split = "val", kv, grid = "components", run,
                    ablation_dir;
  bool force = false, exclude_background = false;
  int window = 50;

  auto* mk = app.add_subcommand("make-data", "Generate the synthetic shapes dataset");
  mk_common.attach(mk);
  mk->add_option("--out", out, "Dataset root")->required();
  mk->add_flag("--force", force, "Overwrite an existing dataset");

  auto* tr = app.add_subcommand("train", "Train student and teacher");
  tr_common.attach(tr);
  tr->add_option("--data", data, "Dataset root")->required();
  tr->add_option("--runs", runs, "Parent directory for timestamped run directories");
  tr->add_option("--run-dir", run_dir, "Explicit run directory");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev_common.attach(ev);
  ev->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", data, "Dataset root")->required();
  ev->add_option("--split", split, "val or labeled");
  ev->add_flag("--exclude-background", exclude_background, "Leave class 1 out of the mean");
  ev->add_option("--kv", kv, "Also write key=value results to this file");

  auto* ab = app.add_subcommand("ablate", "Run an ablation grid");
  ab_common.attach(ab);
  ab->add_option("--data", data, "Dataset root")->required();
  ab->add_option("--out", out, "Output directory")->required();
  ab->add_option("--grid", grid, "components, alpha, queries, temperature or all")
      ->check(CLI::IsMember({"components", "alpha", "queries", "temperature", "all"}));

  auto* pl = app.add_subcommand("plot", "Render loss curves or ablation bars");
  pl_common.attach(pl);
  pl->add_option("--run", run, "Run directory holding metrics.tsv");
  pl->add_option("--ablation", ablation_dir, "Ablation directory holding ablation.tsv");
  pl->add_option("--window", window, "Moving-average window")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::fprintf(stderr, "\n%s", app.help().c_str());
    return kExitUsage;
  }

  try {
    if (*mk) return run_make_data(mk_common, out, force);
    if (*tr) return run_train(tr_common, data, runs, run_dir);
    if (*ev) return run_eval(ev_common, checkpoint, data, split, exclude_background, kv);
    if (*ab) return run_ablate(ab_common, data, out, grid);
    if (*pl) return run_plot(pl_common, run, ablation_dir, window);
  } catch (const Error& e) {
    std::fprintf(stderr, "%s: %s\n", kind_name(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return kExitUsage;
}
