#include "combo/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

namespace combo::harness {

using gridworld::Action;
using gridworld::CooperatorKind;
using gridworld::GridState;
using gridworld::JointAction;
using nlohmann::json;

Split split_of_episode(int episode_index) {
  int slot = episode_index % 10;
  if (slot == 0) return Split::test;
  if (slot == 1) return Split::val;
  return Split::train;
}

std::string state_key(const GridState& s) {
  std::string k;
  for (int c : s.cells) k += std::to_string(c) + ",";
  k += "|";
  for (int h : s.hands) k += std::to_string(h) + ",";
  k += "|";
  for (const auto& p : s.pieces) k += p.state == gridworld::PieceState::cut ? "c" : "w";
  return k;
}

json action_to_json(const Action& a) {
  return json{{"v", static_cast<int>(a.verb)}, {"p", a.piece}, {"t", a.target}};
}

Action action_from_json(const json& j) {
  Action a;
  a.verb = static_cast<gridworld::Verb>(j.at("v").get<int>());
  a.piece = j.at("p").get<int>();
  a.target = j.at("t").get<int>();
  return a;
}

json state_to_json(const GridState& s) {
  json slots = json::array();
  for (const auto& slot : s.slots)
    slots.push_back({{"cell", slot.cell},
                     {"owner", slot.owner},
                     {"shape", slot.shape},
                     {"color", slot.color},
                     {"cut", slot.requires_cut}});
  json pieces = json::array();
  for (const auto& p : s.pieces)
    pieces.push_back(
        {{"id", p.id}, {"shape", p.shape}, {"color", p.color}, {"cut", p.state == gridworld::PieceState::cut}});
  return json{{"variant", static_cast<int>(s.variant)},
              {"width", s.width},
              {"height", s.height},
              {"n_agents", s.n_agents},
              {"cells", s.cells},
              {"pieces", pieces},
              {"slots", slots},
              {"cutting_board", s.cutting_board},
              {"regions", s.regions},
              {"hands", s.hands},
              {"turn", s.turn}};
}

GridState state_from_json(const json& j) {
  GridState s;
  s.variant = static_cast<gridworld::Variant>(j.at("variant").get<int>());
  s.width = j.at("width").get<int>();
  s.height = j.at("height").get<int>();
  s.n_agents = j.at("n_agents").get<int>();
  s.cells = j.at("cells").get<std::vector<int>>();
  for (const auto& pj : j.at("pieces")) {
    gridworld::Piece p;
    p.id = pj.at("id").get<int>();
    p.shape = pj.at("shape").get<int>();
    p.color = pj.at("color").get<int>();
    p.state = pj.at("cut").get<bool>() ? gridworld::PieceState::cut : gridworld::PieceState::whole;
    s.pieces.push_back(p);
  }
  for (const auto& sj : j.at("slots")) {
    gridworld::GoalSlot slot;
    slot.cell = sj.at("cell").get<int>();
    slot.owner = sj.at("owner").get<int>();
    slot.shape = sj.at("shape").get<int>();
    slot.color = sj.at("color").get<int>();
    slot.requires_cut = sj.at("cut").get<bool>();
    s.slots.push_back(slot);
  }
  s.cutting_board = j.at("cutting_board").get<int>();
  s.regions = j.at("regions").get<std::vector<std::vector<int>>>();
  s.hands = j.at("hands").get<std::vector<int>>();
  s.turn = j.at("turn").get<int>();
  s.rebuild_masks();
  return s;
}

void Dataset::rebuild_manifest(const gridworld::EpisodeConfig& env) {
  manifest = Manifest{};
  manifest.n_episodes = static_cast<int>(episodes.size());
  for (size_t i = 0; i < episodes.size(); ++i) {
    switch (split_of_episode(static_cast<int>(i))) {
      case Split::train: manifest.n_train += 1; break;
      case Split::val: manifest.n_val += 1; break;
      case Split::test: manifest.n_test += 1; break;
    }
    manifest.total_steps += static_cast<long>(episodes[i].actions.size());
  }
  gridworld::EpisodeConfig echo = env;
  echo.seed = 0;
  json j{{"variant", static_cast<int>(echo.variant)},
         {"n_agents", echo.n_agents},
         {"width", echo.width},
         {"height", echo.height},
         {"n_pieces", echo.n_pieces},
         {"horizon", echo.horizon}};
  manifest.environment_json = j.dump();
}

void Dataset::verify() const {
  int train = 0, val = 0, test = 0;
  long steps = 0;
  for (size_t i = 0; i < episodes.size(); ++i) {
    switch (split_of_episode(static_cast<int>(i))) {
      case Split::train: ++train; break;
      case Split::val: ++val; break;
      case Split::test: ++test; break;
    }
    steps += static_cast<long>(episodes[i].actions.size());
    // Replay digest: deterministic simulation must land on the stored key.
    GridState s = episodes[i].initial;
    for (const auto& joint : episodes[i].actions) s = gridworld::step(s, joint);
    if (state_key(s) != episodes[i].final_key)
      throw std::runtime_error("dataset: replay mismatch in episode " + std::to_string(i));
  }
  if (train != manifest.n_train || val != manifest.n_val || test != manifest.n_test ||
      static_cast<int>(episodes.size()) != manifest.n_episodes || steps != manifest.total_steps)
    throw std::runtime_error("dataset: manifest counts do not match contents");
}

namespace {

CooperatorKind draw_kind(gridworld::Variant variant, std::mt19937_64& rng) {
  if (variant == gridworld::Variant::game)
    return rng() % 2 == 0 ? CooperatorKind::clockwise : CooperatorKind::counter_clockwise;
  return rng() % 2 == 0 ? CooperatorKind::selfish : CooperatorKind::altruistic;
}

}  // namespace

Dataset collect(const ExperimentConfig& cfg, int n_episodes, std::uint64_t seed) {
  Dataset ds;
  for (int ep = 0; ep < n_episodes; ++ep) {
    EpisodeRecord rec;
    rec.config = cfg.environment;
    rec.config.seed = seed * 1000003ull + ep;
    rec.seed = rec.config.seed;
    std::mt19937_64 rng(rec.seed ^ 0x9e3779b97f4a7c15ull);
    for (int a = 0; a < cfg.environment.n_agents; ++a)
      rec.kinds.push_back(draw_kind(cfg.environment.variant, rng));
    rec.initial = gridworld::new_game(rec.config);
    GridState s = rec.initial;
    for (int t = 0; t < cfg.environment.horizon && !gridworld::is_success(s); ++t) {
      JointAction joint;
      for (int a = 0; a < s.n_agents; ++a) {
        Action chosen = gridworld::cooperator_policy(rec.kinds[a], s, a, rng);
        if (nn::uniform01(rng) < cfg.collect.epsilon) {
          auto legal = gridworld::legal_actions(s, a);
          chosen = legal[rng() % legal.size()];
        }
        joint.push_back(chosen);
      }
      rec.actions.push_back(joint);
      s = gridworld::step(s, joint);
    }
    rec.success = gridworld::is_success(s);
    rec.final_key = state_key(s);
    ds.episodes.push_back(std::move(rec));
  }
  ds.rebuild_manifest(cfg.environment);
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& dir) {
  std::filesystem::create_directories(dir);
  {
    json m{{"version", ds.manifest.version},
           {"n_episodes", ds.manifest.n_episodes},
           {"n_train", ds.manifest.n_train},
           {"n_val", ds.manifest.n_val},
           {"n_test", ds.manifest.n_test},
           {"total_steps", ds.manifest.total_steps},
           {"environment", ds.manifest.environment_json}};
    std::ofstream f(dir + "/manifest.json", std::ios::trunc);
    if (!f) throw std::runtime_error("dataset: cannot write manifest");
    f << m.dump(2) << "\n";
  }
  std::ofstream f(dir + "/episodes.jsonl", std::ios::trunc);
  if (!f) throw std::runtime_error("dataset: cannot write episodes");
  for (const auto& rec : ds.episodes) {
    json j{{"seed", rec.seed},
           {"config",
            {{"variant", static_cast<int>(rec.config.variant)},
             {"n_agents", rec.config.n_agents},
             {"width", rec.config.width},
             {"height", rec.config.height},
             {"n_pieces", rec.config.n_pieces},
             {"horizon", rec.config.horizon},
             {"seed", rec.config.seed},
             {"slots_per_agent", rec.config.slots_per_agent},
             {"n_shapes", rec.config.n_shapes},
             {"n_colors", rec.config.n_colors}}},
           {"kinds", json::array()},
           {"initial", state_to_json(rec.initial)},
           {"actions", json::array()},
           {"success", rec.success},
           {"final_key", rec.final_key}};
    for (auto k : rec.kinds) j["kinds"].push_back(static_cast<int>(k));
    for (const auto& joint : rec.actions) {
      json row = json::array();
      for (const auto& a : joint) row.push_back(action_to_json(a));
      j["actions"].push_back(row);
    }
    f << j.dump() << "\n";
  }
  if (!f) throw std::runtime_error("dataset: episode write failed");
}

Dataset load_dataset(const std::string& dir) {
  Dataset ds;
  {
    std::ifstream f(dir + "/manifest.json");
    if (!f) throw std::runtime_error("dataset: cannot open manifest in " + dir);
    json m = json::parse(f);
    ds.manifest.version = m.at("version").get<int>();
    if (ds.manifest.version != 1) throw std::runtime_error("dataset: unsupported version");
    ds.manifest.n_episodes = m.at("n_episodes").get<int>();
    ds.manifest.n_train = m.at("n_train").get<int>();
    ds.manifest.n_val = m.at("n_val").get<int>();
    ds.manifest.n_test = m.at("n_test").get<int>();
    ds.manifest.total_steps = m.at("total_steps").get<long>();
    ds.manifest.environment_json = m.at("environment").get<std::string>();
  }
  std::ifstream f(dir + "/episodes.jsonl");
  if (!f) throw std::runtime_error("dataset: cannot open episodes in " + dir);
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    EpisodeRecord rec;
    rec.seed = j.at("seed").get<std::uint64_t>();
    const auto& c = j.at("config");
    rec.config.variant = static_cast<gridworld::Variant>(c.at("variant").get<int>());
    rec.config.n_agents = c.at("n_agents").get<int>();
    rec.config.width = c.at("width").get<int>();
    rec.config.height = c.at("height").get<int>();
    rec.config.n_pieces = c.at("n_pieces").get<int>();
    rec.config.horizon = c.at("horizon").get<int>();
    rec.config.seed = c.at("seed").get<std::uint64_t>();
    rec.config.slots_per_agent = c.at("slots_per_agent").get<int>();
    rec.config.n_shapes = c.at("n_shapes").get<int>();
    rec.config.n_colors = c.at("n_colors").get<int>();
    for (const auto& k : j.at("kinds"))
      rec.kinds.push_back(static_cast<CooperatorKind>(k.get<int>()));
    rec.initial = state_from_json(j.at("initial"));
    for (const auto& row : j.at("actions")) {
      JointAction joint;
      for (const auto& aj : row) joint.push_back(action_from_json(aj));
      rec.actions.push_back(joint);
    }
    rec.success = j.at("success").get<bool>();
    rec.final_key = j.at("final_key").get<std::string>();
    ds.episodes.push_back(std::move(rec));
  }
  ds.verify();
  return ds;
}

namespace {

template <typename T>
void seeded_subsample(std::vector<T>& rows, int cap, std::mt19937_64& rng) {
  if (cap <= 0 || static_cast<int>(rows.size()) <= cap) return;
  for (size_t i = rows.size() - 1; i > 0; --i) std::swap(rows[i], rows[rng() % (i + 1)]);
  rows.resize(cap);
}

}  // namespace

DerivedTables derive_tables(const Dataset& ds, Split split, const DerivedCaps& caps,
                            std::uint64_t seed) {
  DerivedTables out;
  std::mt19937_64 rng(seed ^ 0x51ed270b8d5c43ull);

  for (size_t ei = 0; ei < ds.episodes.size(); ++ei) {
    if (split_of_episode(static_cast<int>(ei)) != split) continue;
    const EpisodeRecord& rec = ds.episodes[ei];
    const int n = rec.config.n_agents;
    auto table = planner::ActionTable::enumerate(rec.config);

    GridState s = rec.initial;
    std::vector<std::vector<gridworld::PartialObservation>> obs_hist(n);
    std::vector<GridState> state_window;  // for intent stacks

    // One all-wait identity transition per episode at a seeded step.
    size_t wait_step = rec.actions.empty() ? 0 : rng() % rec.actions.size();

    for (size_t t = 0; t < rec.actions.size(); ++t) {
      const JointAction& joint = rec.actions[t];
      GridState s_next = gridworld::step(s, joint);

      std::vector<int> acting;
      for (int a = 0; a < n; ++a)
        if (joint[a].verb != gridworld::Verb::wait) acting.push_back(a);

      // Wait-padded single-agent counterfactuals.
      for (int a : acting) {
        JointAction solo(n, gridworld::wait_action());
        solo[a] = joint[a];
        out.singles.push_back({s, solo, gridworld::step(s, solo), {a}});
      }
      if (t == wait_step) {
        JointAction all_wait(n, gridworld::wait_action());
        int cond_agent = static_cast<int>(rng() % n);
        out.singles.push_back({s, all_wait, gridworld::step(s, all_wait), {cond_agent}});
      }
      if (static_cast<int>(acting.size()) >= 2) out.multis.push_back({s, joint, s_next, acting});

      // Perception rows: each agent's fused view against the ground truth.
      for (int a = 0; a < n; ++a) {
        obs_hist[a].push_back(gridworld::observe(s, a));
        out.inpainter.push_back(
            {perception::fuse(obs_hist[a], s.width, s.height, n, a), s});
      }

      // Sub-module rows.
      int h_now = gridworld::heuristic_steps_left(s);
      for (int a = 0; a < n; ++a) {
        ProposerRow row;
        row.s = s;
        row.agent = a;
        std::set<int> labels;
        std::mt19937_64 dummy(0);
        if (rec.config.variant == gridworld::Variant::game) {
          labels.insert(table.id_of(
              gridworld::cooperator_policy(CooperatorKind::clockwise, s, a, dummy)));
          labels.insert(table.id_of(
              gridworld::cooperator_policy(CooperatorKind::counter_clockwise, s, a, dummy)));
        } else {
          labels.insert(
              table.id_of(gridworld::cooperator_policy(CooperatorKind::selfish, s, a, dummy)));
          labels.insert(
              table.id_of(gridworld::cooperator_policy(CooperatorKind::altruistic, s, a, dummy)));
        }
        for (const Action& la : gridworld::legal_actions(s, a)) {
          JointAction solo(n, gridworld::wait_action());
          solo[a] = la;
          int h_after = gridworld::heuristic_steps_left(gridworld::step(s, solo));
          if (h_after < h_now) labels.insert(table.id_of(la));
        }
        labels.erase(-1);
        row.label_ids.assign(labels.begin(), labels.end());
        if (row.label_ids.empty()) row.label_ids.push_back(0);
        out.proposer.push_back(std::move(row));
      }

      state_window.push_back(s);
      if (static_cast<int>(state_window.size()) > caps.intent_history)
        state_window.erase(state_window.begin());
      IntentRow irow;
      irow.stack = state_window;
      while (static_cast<int>(irow.stack.size()) < caps.intent_history)
        irow.stack.insert(irow.stack.begin(), irow.stack.front());
      for (int a = 0; a < n; ++a) irow.next_action_ids.push_back(table.id_of(joint[a]));
      out.intent.push_back(std::move(irow));

      out.evaluator.push_back(
          {s, static_cast<double>(std::min(h_now, caps.evaluator_cap))});

      s = std::move(s_next);
    }
  }

  seeded_subsample(out.singles, caps.max_singles, rng);
  seeded_subsample(out.multis, caps.max_multis, rng);
  seeded_subsample(out.inpainter, caps.max_inpainter, rng);
  seeded_subsample(out.proposer, caps.max_submodule, rng);
  seeded_subsample(out.intent, caps.max_submodule, rng);
  seeded_subsample(out.evaluator, caps.max_submodule, rng);
  return out;
}

}  // namespace combo::harness
