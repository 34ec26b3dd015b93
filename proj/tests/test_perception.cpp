#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "combo/perception.hpp"

using namespace combo;
using namespace combo::perception;
using gridworld::EpisodeConfig;
using gridworld::GridState;
using gridworld::JointAction;
using gridworld::PartialObservation;
using gridworld::Variant;

namespace {

EpisodeConfig game2(std::uint64_t seed) {
  EpisodeConfig cfg;
  cfg.variant = Variant::game;
  cfg.n_agents = 2;
  cfg.n_pieces = 6;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("single fresh observation gives age-0 visible cells, unknown elsewhere") {
  GridState s = gridworld::new_game(game2(4));
  auto obs = gridworld::observe(s, 0);
  FusedGrid f = fuse({obs}, s.width, s.height, s.n_agents, 0);
  for (int c : s.regions[0]) {
    CHECK(f.known(c));
    CHECK(f.age[c] == 0);
    CHECK(f.content[c] == s.cells[c]);
  }
  int unknown = 0;
  for (int c = 0; c < f.board_cells(); ++c)
    if (!f.known(c)) ++unknown;
  CHECK(unknown == 64 - static_cast<int>(s.regions[0].size()));
  // Own hand known, partner hand unknown.
  CHECK(f.known(f.board_cells() + 0));
  CHECK_FALSE(f.known(f.board_cells() + 1));
}

TEST_CASE("fusion keeps the most recent content with the right age") {
  GridState s = gridworld::new_game(game2(9));
  // Observations at steps 2 and 5, queried as of step 7.
  GridState s2 = s;
  s2.turn = 2;
  auto obs2 = gridworld::observe(s2, 0);
  GridState s5 = s2;
  // Move a piece inside agent 0's region between the observations.
  int piece = -1, from = -1, to = -1;
  for (int c : s5.regions[0])
    if (s5.cells[c] >= 0) {
      piece = s5.cells[c];
      from = c;
      break;
    }
  for (int c : s5.regions[0])
    if (s5.cells[c] < 0 && !s5.slot_at(c)) {
      to = c;
      break;
    }
  REQUIRE(piece >= 0);
  REQUIRE(to >= 0);
  s5.cells[from] = -1;
  s5.cells[to] = piece;
  s5.turn = 5;
  auto obs5 = gridworld::observe(s5, 0);
  GridState s7 = s5;
  s7.turn = 7;
  auto obs7 = gridworld::observe(s7, 0);
  obs7.visible = {};  // step-7 marker with no new cells
  obs7.contents = {};
  obs7.cut_states = {};

  FusedGrid f = fuse({obs2, obs5, obs7}, s.width, s.height, s.n_agents, 0);
  CHECK(f.step == 7);
  CHECK(f.content[to] == piece);
  CHECK(f.content[from] == -1);
  CHECK(f.age[to] == 2);
}

TEST_CASE("stale fused content can disagree with ground truth after partner moves") {
  GridState s = gridworld::new_game(game2(14));
  std::mt19937_64 rng(0);
  auto obs0 = gridworld::observe(s, 0);
  // Roll the world forward with only agent 1 acting.
  GridState cur = s;
  bool diverged = false;
  FusedGrid stale;
  for (int t = 0; t < 12 && !diverged; ++t) {
    JointAction joint = {gridworld::wait_action(),
                         gridworld::cooperator_policy(gridworld::CooperatorKind::clockwise, cur,
                                                      1, rng)};
    cur = gridworld::step(cur, joint);
    stale = fuse({obs0}, s.width, s.height, s.n_agents, 0);
    for (int c = 0; c < stale.board_cells(); ++c)
      if (stale.known(c) && stale.content[c] != cur.cells[c]) diverged = true;
  }
  CHECK(diverged);
}

TEST_CASE("fusion is deterministic") {
  GridState s = gridworld::new_game(game2(3));
  auto obs = gridworld::observe(s, 1);
  FusedGrid a = fuse({obs}, 8, 8, 2, 1);
  FusedGrid b = fuse({obs}, 8, 8, 2, 1);
  CHECK(a.content == b.content);
  CHECK(a.age == b.age);
}

TEST_CASE("estimate clamps age-0 cells regardless of model output") {
  cwm::EncodingLayout layout = cwm::EncodingLayout::for_board(8, 8);
  GridState s = gridworld::new_game(game2(21));
  auto obs = gridworld::observe(s, 0);
  FusedGrid f = fuse({obs}, 8, 8, 2, 0);
  // Untrained model: outputs are noise, clamping must still hold exactly.
  auto mcfg = inpainter_config(layout, 24, 20);
  mcfg.cond_embed = 24;
  diffusion::DenoiserModel model(mcfg, 7);
  auto sched = diffusion::linear_schedule(20, 1e-3, 0.2);
  diffusion::SampleConfig cfg;
  cfg.ddim_steps = 6;
  std::mt19937_64 rng(5);
  auto est = estimate(model, layout, f, s, sched, cfg, rng);
  for (int c : s.regions[0]) CHECK(est.state.cells[c] == s.cells[c]);
  CHECK(est.state.hands[0] == s.hands[0]);
}

TEST_CASE("fully observed fusion estimates exactly the observed state") {
  cwm::EncodingLayout layout = cwm::EncodingLayout::for_board(8, 8);
  GridState s = gridworld::new_game(game2(31));
  // Merge both agents' views into one all-known fusion.
  auto o0 = gridworld::observe(s, 0);
  auto o1 = gridworld::observe(s, 1);
  FusedGrid f = fuse({o0}, 8, 8, 2, 0);
  for (size_t i = 0; i < o1.visible.size(); ++i) {
    f.content[o1.visible[i]] = o1.contents[i];
    f.cut[o1.visible[i]] = o1.cut_states[i];
    f.age[o1.visible[i]] = 0;
  }
  f.content[f.board_cells() + 1] = s.hands[1];
  f.age[f.board_cells() + 1] = 0;

  auto mcfg = inpainter_config(layout, 24, 20);
  mcfg.cond_embed = 24;
  diffusion::DenoiserModel model(mcfg, 9);
  auto sched = diffusion::linear_schedule(20, 1e-3, 0.2);
  diffusion::SampleConfig cfg;
  cfg.ddim_steps = 6;
  std::mt19937_64 rng(8);
  auto est = estimate(model, layout, f, s, sched, cfg, rng);
  CHECK(est.state.cells == s.cells);
  CHECK(est.state.hands == s.hands);
  CHECK(est.valid);
}

TEST_CASE("inpainter training runs and reduces the loss on a smoke dataset") {
  cwm::EncodingLayout layout = cwm::EncodingLayout::for_board(8, 8);
  std::vector<InpainterSample> data;
  std::mt19937_64 rng(2);
  for (int e = 0; e < 30; ++e) {
    GridState s = gridworld::new_game(game2(100 + e));
    for (int t = 0; t < 4; ++t) {
      auto obs = gridworld::observe(s, 0);
      data.push_back({fuse({obs}, 8, 8, 2, 0), s});
      JointAction joint;
      for (int a = 0; a < 2; ++a) {
        auto acts = gridworld::legal_actions(s, a);
        joint.push_back(acts[rng() % acts.size()]);
      }
      s = gridworld::step(s, joint);
    }
  }
  auto mcfg = inpainter_config(layout, 32, 20);
  mcfg.cond_embed = 32;
  auto sched = diffusion::linear_schedule(20, 1e-3, 0.2);
  InpainterTrainConfig cfg;
  cfg.epochs = 3;
  cfg.seed = 11;
  std::vector<double> losses;
  auto model = train_inpainter(data, layout, mcfg, sched, cfg,
                               [&](int, double l) { losses.push_back(l); });
  REQUIRE(losses.size() == 3);
  CHECK(losses.back() < losses.front());

  CHECK_THROWS_AS(train_inpainter({}, layout, mcfg, sched, cfg), std::invalid_argument);
}
