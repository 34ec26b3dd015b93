#pragma once

#include <string>

#include "combo/gridworld.hpp"
#include "combo/planner.hpp"

namespace combo::harness {

struct ModelSettings {
  int hidden = 256;
  int cond_embed = 128;
  int temb_dim = 32;
  int n_hidden = 2;
  int t_diff = 100;
  double beta_min = 1e-4;
  double beta_max = 0.2;
  int ddim_steps = 25;
  double omega = 5.0;
  double p_null = 0.1;
  int inpainter_hidden = 192;
  int submodule_hidden = 256;
};

struct TrainingSettings {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int batch_size = 64;
  int stage1_epochs = 4;
  int stage2_epochs = 2;
  int inpainter_epochs = 3;
  int proposer_epochs = 6;
  int intent_epochs = 6;
  int evaluator_epochs = 6;
  int max_single_samples = 60000;
  int max_multi_samples = 24000;
  int max_inpainter_samples = 20000;
  int max_submodule_samples = 40000;
  bool adls = true;
  double adls_weight = 2.0;
};

struct CollectSettings {
  int episodes = 2000;
  double epsilon = 0.1;  // random legal action injection
};

struct EvalSettings {
  int episodes = 20;
  int horizon = 30;
};

struct ExperimentConfig {
  gridworld::EpisodeConfig environment;
  ModelSettings model;
  TrainingSettings training;
  planner::PlannerConfig planner;
  CollectSettings collect;
  EvalSettings evaluation;
  std::uint64_t seed = 0;
};

ExperimentConfig default_config();
ExperimentConfig load_config(const std::string& path);
void save_config(const ExperimentConfig& cfg, const std::string& path);
std::string config_to_json_string(const ExperimentConfig& cfg);
ExperimentConfig config_from_json_string(const std::string& text);

/// Apply a "section.key=value" override; throws on unknown keys.
void apply_override(ExperimentConfig& cfg, const std::string& assignment);

}  // namespace combo::harness
