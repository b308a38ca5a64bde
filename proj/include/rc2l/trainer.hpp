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
#ifndef RC2L_TRAINER_HPP_
#define RC2L_TRAINER_HPP_

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "rc2l/eval.hpp"
#include "rc2l/semi.hpp"

namespace rc2l {

struct TrainConfig {
  ArchConfig arch;
  LossWeights losses;
  LossToggles enable;
  EmaConfig ema;
  PseudoLabelConfig pseudo;
  AugmentConfig augment;
  DatasetConfig data;  // used by make-data; scene classes follow arch.num_classes

  double lr = 1e-4;
  double weight_decay = 1e-4;
  double power = 0.9;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  bool decay_biases = false;

  int labeled_batch = 4;
  int unlabeled_batch = 4;
  int max_iter = 2000;
  int rampup_steps = 0;  // alpha grows linearly from 0 over this many steps; 0: no ramp
  std::uint64_t seed = 0;
  int log_interval = 1;
  int checkpoint_interval = 0;  // 0: final checkpoint only
  bool evaluate_teacher = true;
  bool exclude_background = false;

  void validate() const;
};

// Named presets: "desk" (defaults), "desk-tuned" (desk with beta2 = 1 and a
// 1500-step ramp) and "paper" (batch 16, 512 crops, 120K iterations, 50 queries).
TrainConfig preset(const std::string& name);

// Flat `section.key = value` view used by config files and --set.
void apply_override(TrainConfig& config, const std::string& key, const std::string& value);
void apply_override(TrainConfig& config, const std::string& assignment);  // "key=value"
std::vector<std::pair<std::string, std::string>> to_pairs(const TrainConfig& config);
std::string to_text(const TrainConfig& config);
TrainConfig parse_config(const std::string& text, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {});
std::string config_hash(const TrainConfig& config);

// base * (1 - iter / max_iter)^power
double poly_lr(double base, int iter, int max_iter, double power);

// Decoupled weight decay Adam.
class AdamW {
 public:
  AdamW(const ModelParams& like, double beta1, double beta2, double eps, double weight_decay, bool decay_biases);
  void step(ModelParams& params, const ModelParams& grads, double lr);

 private:
  std::vector<Matrix> m_, v_;
  double beta1_, beta2_, eps_, weight_decay_;
  bool decay_biases_;
  long t_ = 0;
};

struct StepMetrics {
  int step = 0;
  double lr = 0;
  double label = 0;
  UnlabeledParts parts;
  double total = 0;
  PseudoStats pseudo;
};

std::string metrics_header(int num_classes);
std::string format_metrics(const StepMetrics& m);
std::vector<StepMetrics> read_metrics(const std::filesystem::path& path);

struct RunReport {
  MiouResult final_miou;
  std::filesystem::path run_dir;
  std::filesystem::path metrics_log;
  std::vector<std::filesystem::path> checkpoints;
  double wall_seconds = 0;
  std::string config_snapshot;
  std::vector<double> totals;  // per-step total loss
  UnlabeledParts mean_parts;
  double mean_label = 0;
  long degenerate_events = 0;
};

// Optional hook to observe every step (used by tests).
struct TrainHooks {
  std::function<void(int step, const ModelParams& student, const ModelParams& teacher)> after_step;
};

RunReport train(const TrainConfig& config, const Dataset& dataset, const std::filesystem::path& run_dir,
                const TrainHooks& hooks = {});

// runs/<UTC timestamp>_<config hash>
std::filesystem::path default_run_dir(const std::filesystem::path& parent, const TrainConfig& config);

// True when the mean total loss over the last `window` of the first `horizon`
// steps is below the mean over the first `window` steps.
bool smoothed_decreasing(const std::vector<double>& totals, int window = 50, int horizon = 200);

struct AblationRow {
  std::string label;
  std::vector<std::pair<std::string, std::string>> overrides;
};

struct AblationResult {
  std::string label;
  double miou = 0;
  double mean_label = 0;
  UnlabeledParts mean_parts;
  bool finite = true;
  bool decreasing = false;
};

// "components" (cumulative SMC, RCC, RMC, RFC), "alpha", "queries",
// "temperature".
std::vector<AblationRow> ablation_grid(const std::string& name);

std::vector<AblationResult> ablation(const TrainConfig& base, const std::vector<AblationRow>& grid,
                                     const Dataset& dataset, const std::filesystem::path& out_dir);

std::string format_ablation(const std::vector<AblationResult>& rows);
std::string format_ablation_tsv(const std::vector<AblationResult>& rows);

}  // namespace rc2l

#endif  // RC2L_TRAINER_HPP_
