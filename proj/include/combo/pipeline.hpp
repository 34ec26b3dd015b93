#pragma once

#include <iostream>

#include "combo/dataset.hpp"
#include "combo/metrics.hpp"
#include "combo/planner.hpp"

namespace combo::harness {

struct ModelBundle {
  gridworld::EpisodeConfig env;
  ModelSettings model_settings;
  cwm::EncodingLayout layout;
  planner::ActionTable table;
  diffusion::NoiseSchedule sched;

  diffusion::DenoiserModel cwm_stage1;  // kept for stage-2 ablations
  diffusion::DenoiserModel cwm_model;   // stage-2 fine-tuned
  diffusion::DenoiserModel inpainter;
  planner::SubmoduleNets nets;
  bool has_stage1 = false;
  bool has_cwm = false;
  bool has_inpainter = false;
  bool has_nets = false;

  nlohmann::json training_metrics;

  diffusion::SampleConfig sample_config() const;
};

cwm::EncodingLayout layout_for(const gridworld::EpisodeConfig& env);

/// Stage-1 CWM, stage-2 fine-tune, inpainter, and the three sub-module heads
/// in sequence, with validation metrics per model. Fully seeded.
ModelBundle train_all(const Dataset& ds, const ExperimentConfig& cfg,
                      std::ostream* log = nullptr);

void save_bundle(const ModelBundle& bundle, const std::string& dir);
ModelBundle load_bundle(const std::string& dir);

struct EvalProtocol {
  gridworld::CooperatorKind kind = gridworld::CooperatorKind::clockwise;
  int episodes = 20;
  int horizon = 30;
  planner::PlannerConfig planner_cfg;
  planner::ModuleMode proposer = planner::ModuleMode::oracle;
  planner::ModuleMode intent = planner::ModuleMode::oracle;
  planner::ModuleMode evaluator = planner::ModuleMode::oracle;
  bool learned_world_model = false;
  bool learned_perception = false;
  bool intents_all_wait = false;
  std::uint64_t seed_base = 10000;
  int threads = 2;
};

/// COMBO controller in seat 0, scripted cooperators elsewhere; an episode
/// succeeds iff the goal state is reached before the horizon.
MetricsReport run_protocol(const ModelBundle& bundle, const EvalProtocol& proto);

/// Sub-module head trainers; exposed for targeted tests.
nn::Network train_proposer(const std::vector<ProposerRow>& rows, const ModelBundle& shapes,
                           const TrainingSettings& ts, std::uint64_t seed, double* val_top1,
                           const std::vector<ProposerRow>* val_rows = nullptr);
nn::Network train_intent(const std::vector<IntentRow>& rows, const ModelBundle& shapes,
                         const TrainingSettings& ts, std::uint64_t seed, double* val_top1,
                         const std::vector<IntentRow>* val_rows = nullptr);
nn::Network train_evaluator(const std::vector<EvaluatorRow>& rows, const ModelBundle& shapes,
                            const TrainingSettings& ts, std::uint64_t seed, double* val_mae,
                            const std::vector<EvaluatorRow>* val_rows = nullptr);

}  // namespace combo::harness
