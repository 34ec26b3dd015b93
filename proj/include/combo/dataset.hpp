#pragma once

#include <json.hpp>

#include "combo/config.hpp"
#include "combo/cwm.hpp"
#include "combo/perception.hpp"

namespace combo::harness {

enum class Split : int { train = 0, val = 1, test = 2 };
Split split_of_episode(int episode_index);

struct EpisodeRecord {
  gridworld::EpisodeConfig config;
  std::uint64_t seed = 0;
  std::vector<gridworld::CooperatorKind> kinds;
  gridworld::GridState initial;
  std::vector<gridworld::JointAction> actions;
  bool success = false;
  std::string final_key;  // placement digest for integrity checks
};

std::string state_key(const gridworld::GridState& s);

struct ProposerRow {
  gridworld::GridState s;
  int agent = 0;
  std::vector<int> label_ids;  // multi-hot over the action table
};

struct IntentRow {
  std::vector<gridworld::GridState> stack;  // k consecutive states, oldest first
  std::vector<int> next_action_ids;         // executed action id per agent
};

struct EvaluatorRow {
  gridworld::GridState s;
  double steps_left = 0.0;
};

struct Manifest {
  int version = 1;
  int n_episodes = 0;
  int n_train = 0, n_val = 0, n_test = 0;
  long total_steps = 0;
  std::string environment_json;
};

struct Dataset {
  Manifest manifest;
  std::vector<EpisodeRecord> episodes;

  void rebuild_manifest(const gridworld::EpisodeConfig& env);
  void verify() const;  // manifest counts and per-episode replay digests
};

/// Scripted-policy rollouts with epsilon-random action injection.
Dataset collect(const ExperimentConfig& cfg, int n_episodes, std::uint64_t seed);

void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

struct DerivedCaps {
  int max_singles = 0;  // 0 = unlimited
  int max_multis = 0;
  int max_inpainter = 0;
  int max_submodule = 0;
  int intent_history = 3;
  int evaluator_cap = 60;  // steps-left values clipped here for regression
};

struct DerivedTables {
  std::vector<cwm::TransitionSample> singles;
  std::vector<cwm::TransitionSample> multis;
  std::vector<perception::InpainterSample> inpainter;
  std::vector<ProposerRow> proposer;
  std::vector<IntentRow> intent;
  std::vector<EvaluatorRow> evaluator;
};

/// Deterministic replay of the selected split into training tables. Single-
/// agent rows include wait-padded counterfactuals recomputed by the
/// simulator plus explicit all-wait identity transitions.
DerivedTables derive_tables(const Dataset& ds, Split split, const DerivedCaps& caps,
                            std::uint64_t seed);

nlohmann::json state_to_json(const gridworld::GridState& s);
gridworld::GridState state_from_json(const nlohmann::json& j);
nlohmann::json action_to_json(const gridworld::Action& a);
gridworld::Action action_from_json(const nlohmann::json& j);

}  // namespace combo::harness
