#pragma once

#include "combo/perception.hpp"

namespace combo::planner {

inline constexpr double kGuardSentinel = 1e18;

struct PlannerConfig {
  int proposals = 3;       // P
  int beams = 3;           // B
  int depth = 3;           // D
  int intent_history = 3;  // k
  double guard_tau = 0.0;  // 0 = n_agents + 1
};

/// Deterministic action-id table: wait, pick_up per piece, place per
/// (piece, cell), cut per piece (cook only).
struct ActionTable {
  gridworld::Variant variant = gridworld::Variant::game;
  int n_pieces = 0;
  int board_cells = 0;

  int size() const;
  gridworld::Action action(int id) const;
  int id_of(const gridworld::Action& a) const;

  static ActionTable enumerate(const gridworld::EpisodeConfig& cfg);
};

/// Static goal encoding: per board cell [is_slot | shape one-hot | color
/// one-hot | requires_cut], +-1 valued.
nn::Tensor encode_goal(const gridworld::GridState& reference, const cwm::EncodingLayout& layout);
int goal_dim(const cwm::EncodingLayout& layout);

struct SubmoduleNets {
  nn::Network proposer;   // state + goal + agent one-hot -> action logits
  nn::Network intent;     // k stacked states + goal -> per-agent action logits
  nn::Network evaluator;  // state + goal -> steps-left estimate
};

nn::Tensor proposer_input(const gridworld::GridState& s, int agent,
                          const cwm::EncodingLayout& layout, const nn::Tensor& goal);
nn::Tensor intent_input(const std::vector<const gridworld::GridState*>& history_k,
                        const cwm::EncodingLayout& layout, const nn::Tensor& goal);
nn::Tensor evaluator_input(const gridworld::GridState& s, const cwm::EncodingLayout& layout,
                           const nn::Tensor& goal);

enum class ModuleMode : int { learned = 0, oracle = 1 };

struct Plan {
  std::vector<gridworld::GridState> states;
  std::vector<gridworld::Action> own_actions;
  double score = 0.0;
  int creation_order = 0;
};

struct PlanTraceEntry {
  int depth = 0;
  int parent = -1;
  gridworld::Action own_action;
  double raw_score = 0.0;
  double accepted_score = 0.0;
  bool guard_fired = false;
  bool valid = true;
};

struct PlanTrace {
  std::vector<PlanTraceEntry> entries;
  int world_model_calls = 0;
  int guard_fires = 0;
};

/// Everything a planning call needs; non-owning.
struct PlannerContext {
  const cwm::EncodingLayout* layout = nullptr;
  const ActionTable* table = nullptr;
  nn::Tensor goal;
  int self_agent = 0;

  ModuleMode proposer_mode = ModuleMode::oracle;
  ModuleMode intent_mode = ModuleMode::oracle;
  ModuleMode evaluator_mode = ModuleMode::oracle;
  const SubmoduleNets* nets = nullptr;

  bool use_learned_world_model = false;
  const diffusion::DenoiserModel* cwm_model = nullptr;
  const diffusion::NoiseSchedule* sched = nullptr;
  diffusion::SampleConfig sampling;

  /// Cooperator kind per agent for the oracle intent tracker (test hook).
  std::vector<gridworld::CooperatorKind> oracle_kinds;
  bool intents_all_wait = false;  // ablation: force all-wait intents
};

std::vector<gridworld::Action> propose(const PlannerContext& ctx, const gridworld::GridState& s,
                                       int proposals);

/// Predicted action per agent (self entry is wait); learned predictions are
/// projected onto the target agent's legal set.
std::vector<gridworld::Action> infer_intents(const PlannerContext& ctx,
                                             const std::vector<const gridworld::GridState*>&
                                                 history_k);

double evaluate(const PlannerContext& ctx, const gridworld::GridState& s, bool valid);

/// Artificial-exploitation guard: reject improbable one-step improvements
/// and invalid decodes by keeping the parent's score.
double guard(double prev_score, double new_score, bool new_state_valid, double tau);

Plan plan(const PlannerContext& ctx, const gridworld::GridState& s0,
          const std::vector<gridworld::GridState>& base_history, const PlannerConfig& cfg,
          std::mt19937_64& rng, PlanTrace* trace = nullptr);

// --- per-agent replanning controller ----------------------------------------

struct ControllerModules {
  ModuleMode proposer = ModuleMode::oracle;
  ModuleMode intent = ModuleMode::oracle;
  ModuleMode evaluator = ModuleMode::oracle;
  bool learned_world_model = false;
  bool learned_perception = false;
  const SubmoduleNets* nets = nullptr;
  const diffusion::DenoiserModel* cwm_model = nullptr;
  const diffusion::DenoiserModel* inpainter = nullptr;
  std::vector<gridworld::CooperatorKind> oracle_kinds;
  bool intents_all_wait = false;
};

/// Decentralized COMBO controller for one seat: fuse -> estimate -> plan ->
/// first own action, rerun every environment step. Shares nothing with other
/// controllers.
class Controller {
 public:
  Controller(int agent, const gridworld::GridState& reference, const cwm::EncodingLayout& layout,
             const ActionTable& table, const PlannerConfig& planner_cfg,
             const diffusion::SampleConfig& sampling, const diffusion::NoiseSchedule* sched,
             const ControllerModules& modules, int horizon, std::uint64_t seed);

  /// `truth` is required while perception runs in oracle mode.
  gridworld::Action act(const gridworld::PartialObservation& obs,
                        const gridworld::GridState* truth);

  const PlanTrace& last_trace() const { return last_trace_; }
  long guard_fires_total() const { return guard_fires_total_; }
  const gridworld::GridState& last_estimate() const { return estimate_history_.back(); }

 private:
  int agent_;
  gridworld::GridState reference_;
  const cwm::EncodingLayout& layout_;
  const ActionTable& table_;
  PlannerConfig planner_cfg_;
  diffusion::SampleConfig sampling_;
  const diffusion::NoiseSchedule* sched_;
  ControllerModules modules_;
  int horizon_;
  std::uint64_t seed_;
  std::vector<gridworld::PartialObservation> obs_history_;
  std::vector<gridworld::GridState> estimate_history_;
  PlanTrace last_trace_;
  long guard_fires_total_ = 0;
};

}  // namespace combo::planner
