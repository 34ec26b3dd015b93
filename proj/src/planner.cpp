#include "combo/planner.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace combo::planner {

using cwm::EncodingLayout;
using gridworld::Action;
using gridworld::GridState;
using gridworld::JointAction;
using gridworld::Verb;
using nn::Tensor;

int ActionTable::size() const {
  int n = 1 + n_pieces + n_pieces * board_cells;
  if (variant == gridworld::Variant::cook) n += n_pieces;
  return n;
}

Action ActionTable::action(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("action table: bad id");
  if (id == 0) return gridworld::wait_action();
  id -= 1;
  if (id < n_pieces) return gridworld::pick_action(id);
  id -= n_pieces;
  if (id < n_pieces * board_cells)
    return gridworld::place_action(id / board_cells, id % board_cells);
  id -= n_pieces * board_cells;
  return gridworld::cut_action(id);
}

int ActionTable::id_of(const Action& a) const {
  switch (a.verb) {
    case Verb::wait: return 0;
    case Verb::pick_up: return 1 + a.piece;
    case Verb::place: return 1 + n_pieces + a.piece * board_cells + a.target;
    case Verb::cut:
      if (variant != gridworld::Variant::cook) return -1;
      return 1 + n_pieces + n_pieces * board_cells + a.piece;
  }
  return -1;
}

ActionTable ActionTable::enumerate(const gridworld::EpisodeConfig& cfg) {
  ActionTable t;
  t.variant = cfg.variant;
  t.n_pieces = cfg.n_pieces;
  t.board_cells = cfg.width * cfg.height;
  return t;
}

int goal_dim(const EncodingLayout& layout) { return layout.board_cells() * 10; }

Tensor encode_goal(const GridState& reference, const EncodingLayout& layout) {
  Tensor out(1, goal_dim(layout));
  out.fill(-1.0);
  double* row = out.row(0);
  for (const auto& slot : reference.slots) {
    double* base = row + static_cast<size_t>(slot.cell) * 10;
    base[0] = 1.0;
    base[1 + std::min(slot.shape, 3)] = 1.0;
    base[5 + std::min(slot.color, 3)] = 1.0;
    if (slot.requires_cut) base[9] = 1.0;
  }
  return out;
}

Tensor proposer_input(const GridState& s, int agent, const EncodingLayout& layout,
                      const Tensor& goal) {
  Tensor enc = cwm::encode_state(s, layout);
  Tensor agent_oh(1, layout.n_agents_max);
  agent_oh.fill(-1.0);
  agent_oh.at(0, agent) = 1.0;
  return nn::concat_cols({&enc, &goal, &agent_oh});
}

Tensor intent_input(const std::vector<const GridState*>& history_k, const EncodingLayout& layout,
                    const Tensor& goal) {
  if (history_k.empty()) throw std::invalid_argument("intent_input: empty history");
  std::vector<Tensor> encs;
  for (const GridState* s : history_k) encs.push_back(cwm::encode_state(*s, layout));
  std::vector<const Tensor*> parts;
  for (const auto& e : encs) parts.push_back(&e);
  parts.push_back(&goal);
  return nn::concat_cols(parts);
}

Tensor evaluator_input(const GridState& s, const EncodingLayout& layout, const Tensor& goal) {
  Tensor enc = cwm::encode_state(s, layout);
  return nn::concat_cols({&enc, &goal});
}

namespace {

// Next state when only `agent` acts; used by the oracle proposer.
GridState solo_step(const GridState& s, int agent, const Action& a) {
  JointAction joint(s.n_agents, gridworld::wait_action());
  joint[agent] = a;
  return gridworld::step(s, joint);
}

}  // namespace

std::vector<Action> propose(const PlannerContext& ctx, const GridState& s, int proposals) {
  if (proposals < 1) throw std::invalid_argument("propose: P must be >= 1");
  int agent = ctx.self_agent;
  auto legal = gridworld::legal_actions(s, agent);
  std::vector<Action> out;
  if (ctx.proposer_mode == ModuleMode::oracle) {
    int h0 = gridworld::heuristic_steps_left(s);
    std::vector<std::pair<double, int>> ranked;  // (-improvement, id)
    for (const Action& a : legal) {
      int h1 = gridworld::heuristic_steps_left(solo_step(s, agent, a));
      double improvement = h0 >= gridworld::kUnreachable || h1 >= gridworld::kUnreachable
                               ? -1e9
                               : static_cast<double>(h0 - h1);
      ranked.push_back({-improvement, ctx.table->id_of(a)});
    }
    std::sort(ranked.begin(), ranked.end());
    for (const auto& [negimp, id] : ranked) {
      if (static_cast<int>(out.size()) >= proposals) break;
      out.push_back(ctx.table->action(id));
    }
  } else {
    nn::Workspace ws;
    Tensor logits = ctx.nets->proposer.forward(proposer_input(s, agent, *ctx.layout, ctx.goal), ws);
    std::vector<std::pair<double, int>> ranked;  // (-score, id)
    for (const Action& a : legal) {
      int id = ctx.table->id_of(a);
      if (id < 0) continue;
      ranked.push_back({-logits.at(0, id), id});
    }
    std::sort(ranked.begin(), ranked.end());
    for (const auto& [negscore, id] : ranked) {
      if (static_cast<int>(out.size()) >= proposals) break;
      out.push_back(ctx.table->action(id));
    }
  }
  while (static_cast<int>(out.size()) < proposals) out.push_back(gridworld::wait_action());
  return out;
}

std::vector<Action> infer_intents(const PlannerContext& ctx,
                                  const std::vector<const GridState*>& history_k) {
  if (history_k.empty()) throw std::invalid_argument("infer_intents: empty history");
  const GridState& s = *history_k.back();
  std::vector<Action> out(s.n_agents, gridworld::wait_action());
  if (ctx.intents_all_wait) return out;
  if (ctx.intent_mode == ModuleMode::oracle) {
    std::mt19937_64 dummy(0);
    for (int j = 0; j < s.n_agents; ++j) {
      if (j == ctx.self_agent) continue;
      gridworld::CooperatorKind kind =
          j < static_cast<int>(ctx.oracle_kinds.size()) ? ctx.oracle_kinds[j]
                                                        : gridworld::CooperatorKind::clockwise;
      out[j] = gridworld::cooperator_policy(kind, s, j, dummy);
    }
    return out;
  }
  nn::Workspace ws;
  Tensor logits = ctx.nets->intent.forward(intent_input(history_k, *ctx.layout, ctx.goal), ws);
  int T = ctx.table->size();
  for (int j = 0; j < s.n_agents; ++j) {
    if (j == ctx.self_agent) continue;
    int best = 0;
    for (int id = 1; id < T; ++id)
      if (logits.at(0, j * T + id) > logits.at(0, j * T + best)) best = id;
    Action a = ctx.table->action(best);
    out[j] = gridworld::is_legal(s, j, a) ? a : gridworld::wait_action();
  }
  return out;
}

double evaluate(const PlannerContext& ctx, const GridState& s, bool valid) {
  if (!valid) return kGuardSentinel;
  if (ctx.evaluator_mode == ModuleMode::oracle) {
    int h = gridworld::heuristic_steps_left(s);
    return h >= gridworld::kUnreachable ? kGuardSentinel : static_cast<double>(h);
  }
  nn::Workspace ws;
  Tensor v = ctx.nets->evaluator.forward(evaluator_input(s, *ctx.layout, ctx.goal), ws);
  return v.at(0, 0);
}

double guard(double prev_score, double new_score, bool new_state_valid, double tau) {
  if (!new_state_valid) return prev_score;
  if (prev_score - new_score > tau) return prev_score;
  return new_score;
}

Plan plan(const PlannerContext& ctx, const GridState& s0,
          const std::vector<GridState>& base_history, const PlannerConfig& cfg,
          std::mt19937_64& rng, PlanTrace* trace) {
  // Auto threshold: one atomic action can legitimately shorten the
  // steps-left count by 2 per slot sharing the moved piece, so n+1 clamps
  // genuine passes; 2n+2 still rejects teleport-grade jumps.
  double tau = cfg.guard_tau > 0.0 ? cfg.guard_tau : 2.0 * s0.n_agents + 2.0;
  Plan root;
  root.states = {s0};
  root.score = evaluate(ctx, s0, true);
  root.creation_order = 0;
  int created = 1;
  std::vector<Plan> new_plans = {root};

  auto by_score = [](const Plan& a, const Plan& b) {
    if (a.score != b.score) return a.score < b.score;
    return a.creation_order < b.creation_order;
  };

  for (int d = 1; d <= cfg.depth; ++d) {
    std::sort(new_plans.begin(), new_plans.end(), by_score);
    if (static_cast<int>(new_plans.size()) > cfg.beams) new_plans.resize(cfg.beams);
    std::vector<Plan> plans = std::move(new_plans);
    new_plans.clear();

    struct Candidate {
      int parent;
      JointAction joint;
      Action own;
    };
    std::vector<Candidate> candidates;
    for (size_t pi = 0; pi < plans.size(); ++pi) {
      const GridState& s = plans[pi].states.back();
      if (gridworld::is_success(s)) {
        // Finished plans pass through unexpanded.
        new_plans.push_back(plans[pi]);
        continue;
      }
      auto proposals = propose(ctx, s, cfg.proposals);
      // Wait-padding can repeat actions; expanding a duplicate proposal
      // would only clone an existing child into the beam.
      std::vector<Action> unique_proposals;
      for (const Action& a : proposals)
        if (std::find(unique_proposals.begin(), unique_proposals.end(), a) ==
            unique_proposals.end())
          unique_proposals.push_back(a);
      std::vector<const GridState*> history;
      for (const auto& h : base_history) history.push_back(&h);
      for (size_t k = 1; k < plans[pi].states.size(); ++k) history.push_back(&plans[pi].states[k]);
      if (static_cast<int>(history.size()) > cfg.intent_history)
        history.erase(history.begin(),
                      history.end() - cfg.intent_history);
      while (static_cast<int>(history.size()) < cfg.intent_history)
        history.insert(history.begin(), history.front());
      auto intents = infer_intents(ctx, history);
      for (const Action& own : unique_proposals) {
        JointAction joint = intents;
        joint[ctx.self_agent] = gridworld::is_legal(s, ctx.self_agent, own)
                                    ? own
                                    : gridworld::wait_action();
        candidates.push_back({static_cast<int>(pi), joint, joint[ctx.self_agent]});
      }
    }

    // Simulate all expansions for this depth in one world-model call.
    std::vector<GridState> next_states(candidates.size());
    std::vector<bool> next_valid(candidates.size(), true);
    if (ctx.use_learned_world_model) {
      std::vector<const GridState*> states;
      std::vector<const JointAction*> joints;
      for (const auto& c : candidates) {
        states.push_back(&plans[c.parent].states.back());
        joints.push_back(&c.joint);
      }
      auto preds = cwm::predict_next_batch(*ctx.cwm_model, *ctx.layout, states, joints,
                                           *ctx.sched, ctx.sampling, rng);
      for (size_t i = 0; i < preds.size(); ++i) {
        next_states[i] = std::move(preds[i].state);
        next_valid[i] = preds[i].valid;
      }
    } else {
      for (size_t i = 0; i < candidates.size(); ++i)
        next_states[i] = gridworld::step(plans[candidates[i].parent].states.back(),
                                         candidates[i].joint);
    }
    if (trace) trace->world_model_calls += static_cast<int>(candidates.size());

    for (size_t i = 0; i < candidates.size(); ++i) {
      const Plan& parent = plans[candidates[i].parent];
      double raw = evaluate(ctx, next_states[i], next_valid[i]);
      double accepted = guard(parent.score, raw, next_valid[i], tau);
      bool fired = accepted != raw || !next_valid[i];
      Plan child = parent;
      child.states.push_back(next_states[i]);
      child.own_actions.push_back(candidates[i].own);
      child.score = accepted;
      child.creation_order = created++;
      if (trace) {
        trace->entries.push_back({d, candidates[i].parent, candidates[i].own, raw, accepted,
                                  fired, next_valid[i]});
        if (fired) trace->guard_fires += 1;
      }
      new_plans.push_back(std::move(child));
    }
  }

  std::sort(new_plans.begin(), new_plans.end(), by_score);
  return new_plans.front();
}

// --- controller ---------------------------------------------------------------

Controller::Controller(int agent, const GridState& reference, const EncodingLayout& layout,
                       const ActionTable& table, const PlannerConfig& planner_cfg,
                       const diffusion::SampleConfig& sampling,
                       const diffusion::NoiseSchedule* sched, const ControllerModules& modules,
                       int horizon, std::uint64_t seed)
    : agent_(agent),
      reference_(reference),
      layout_(layout),
      table_(table),
      planner_cfg_(planner_cfg),
      sampling_(sampling),
      sched_(sched),
      modules_(modules),
      horizon_(horizon),
      seed_(seed) {}

gridworld::Action Controller::act(const gridworld::PartialObservation& obs,
                                  const GridState* truth) {
  if (obs.step >= horizon_) throw std::runtime_error("episode failed: horizon exhausted");
  obs_history_.push_back(obs);

  GridState estimate;
  bool estimate_valid = true;
  if (modules_.learned_perception) {
    auto fused = perception::fuse(obs_history_, reference_.width, reference_.height,
                                  reference_.n_agents, agent_);
    std::mt19937_64 rng(seed_ * 7919 + obs.step * 13 + 1);
    auto est = perception::estimate(*modules_.inpainter, layout_, fused, reference_, *sched_,
                                    sampling_, rng);
    estimate = std::move(est.state);
    estimate_valid = est.valid;
  } else {
    if (!truth) throw std::invalid_argument("oracle perception needs the true state");
    estimate = *truth;
  }
  (void)estimate_valid;
  estimate_history_.push_back(estimate);
  if (static_cast<int>(estimate_history_.size()) > std::max(planner_cfg_.intent_history, 1) + 1)
    estimate_history_.erase(estimate_history_.begin());

  if (gridworld::is_success(estimate)) {
    last_trace_ = PlanTrace{};
    return gridworld::wait_action();
  }

  PlannerContext ctx;
  ctx.layout = &layout_;
  ctx.table = &table_;
  ctx.goal = encode_goal(reference_, layout_);
  ctx.self_agent = agent_;
  ctx.proposer_mode = modules_.proposer;
  ctx.intent_mode = modules_.intent;
  ctx.evaluator_mode = modules_.evaluator;
  ctx.nets = modules_.nets;
  ctx.use_learned_world_model = modules_.learned_world_model;
  ctx.cwm_model = modules_.cwm_model;
  ctx.sched = sched_;
  ctx.sampling = sampling_;
  ctx.oracle_kinds = modules_.oracle_kinds;
  ctx.intents_all_wait = modules_.intents_all_wait;

  std::mt19937_64 rng(seed_ * 104729 + obs.step * 31 + 7);
  last_trace_ = PlanTrace{};
  Plan best = plan(ctx, estimate, estimate_history_, planner_cfg_, rng, &last_trace_);
  guard_fires_total_ += last_trace_.guard_fires;
  if (best.own_actions.empty()) return gridworld::wait_action();
  return best.own_actions.front();
}

}  // namespace combo::planner
