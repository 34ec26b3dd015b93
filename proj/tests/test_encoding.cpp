#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "combo/cwm.hpp"

using namespace combo;
using namespace combo::cwm;
using gridworld::Action;
using gridworld::EpisodeConfig;
using gridworld::GridState;
using gridworld::JointAction;
using gridworld::Variant;
using nn::Tensor;

namespace {

EpisodeConfig game4(std::uint64_t seed) {
  EpisodeConfig cfg;
  cfg.variant = Variant::game;
  cfg.n_agents = 4;
  cfg.n_pieces = 8;
  cfg.seed = seed;
  return cfg;
}

GridState random_rollout_state(std::uint64_t seed, int steps) {
  GridState s = gridworld::new_game(game4(seed));
  std::mt19937_64 rng(seed * 7 + 3);
  for (int t = 0; t < steps; ++t) {
    JointAction joint;
    for (int a = 0; a < s.n_agents; ++a) {
      auto acts = gridworld::legal_actions(s, a);
      joint.push_back(acts[rng() % acts.size()]);
    }
    s = gridworld::step(s, joint);
  }
  return s;
}

}  // namespace

TEST_CASE("state encoding round-trips over 1000 random states") {
  EncodingLayout layout = EncodingLayout::for_board(8, 8);
  for (int i = 0; i < 1000; ++i) {
    GridState s = random_rollout_state(1000 + i % 50, i % 12);
    Tensor x = encode_state(s, layout);
    auto dec = decode_state(x, layout, s);
    CHECK(dec.valid);
    CHECK(dec.state == s);
  }
}

TEST_CASE("cook states round-trip with cut flags") {
  EncodingLayout layout = EncodingLayout::for_board(8, 8);
  EpisodeConfig cfg;
  cfg.variant = Variant::cook;
  cfg.n_agents = 2;
  cfg.n_pieces = 6;
  cfg.seed = 5;
  GridState s = gridworld::new_game(cfg);
  s.pieces[2].state = gridworld::PieceState::cut;
  Tensor x = encode_state(s, layout);
  auto dec = decode_state(x, layout, s);
  CHECK(dec.valid);
  CHECK(dec.state == s);
}

TEST_CASE("duplicate piece activations keep the strongest instance") {
  EncodingLayout layout = EncodingLayout::for_board(8, 8);
  GridState s = gridworld::new_game(game4(3));
  Tensor x = encode_state(s, layout);
  // Piece 3 also lights up an empty cell, weaker than its true cell.
  int true_cell = s.piece_cell(3);
  int ghost = -1;
  for (int c = 0; c < s.n_cells(); ++c)
    if (s.cells[c] < 0 && !s.slot_at(c)) {
      ghost = c;
      break;
    }
  REQUIRE(ghost >= 0);
  x.v[static_cast<size_t>(ghost) * layout.channels() + layout.ch_piece(3)] = 0.6;
  auto dec = decode_state(x, layout, s);
  CHECK(dec.state.cells[true_cell] == 3);
  CHECK(dec.state.cells[ghost] == -1);

  // Stronger ghost steals the placement; the true cell falls back to empty.
  x.v[static_cast<size_t>(ghost) * layout.channels() + layout.ch_piece(3)] = 2.0;
  auto dec2 = decode_state(x, layout, s);
  CHECK(dec2.state.cells[ghost] == 3);
  CHECK(dec2.state.cells[true_cell] == -1);
}

TEST_CASE("vanished piece flags the state invalid instead of inventing a spot") {
  EncodingLayout layout = EncodingLayout::for_board(8, 8);
  GridState s = gridworld::new_game(game4(9));
  Tensor x = encode_state(s, layout);
  int cell = s.piece_cell(5);
  size_t base = static_cast<size_t>(cell) * layout.channels();
  x.v[base + layout.ch_piece(5)] = -1.0;
  x.v[base + layout.ch_empty()] = 1.0;
  auto dec = decode_state(x, layout, s);
  CHECK_FALSE(dec.valid);
  CHECK_FALSE(dec.state.piece_present(5));
}

TEST_CASE("decode survives bounded noise on a valid encoding") {
  EncodingLayout layout = EncodingLayout::for_board(8, 8);
  std::mt19937_64 rng(77);
  int exact = 0;
  for (int i = 0; i < 50; ++i) {
    GridState s = random_rollout_state(60 + i, 5);
    Tensor x = encode_state(s, layout);
    for (double& v : x.v) v += 0.1 * (2.0 * nn::uniform01(rng) - 1.0);
    auto dec = decode_state(x, layout, s);
    if (dec.valid && dec.state == s) ++exact;
  }
  CHECK(exact == 50);
}

TEST_CASE("decode of an all-NaN tensor is an error") {
  EncodingLayout layout = EncodingLayout::for_board(8, 8);
  GridState s = gridworld::new_game(game4(2));
  Tensor x(1, layout.state_dim());
  x.fill(std::numeric_limits<double>::quiet_NaN());
  CHECK_THROWS_AS(decode_state(x, layout, s), std::runtime_error);
}

TEST_CASE("locked cells always win and never hallucinate") {
  EncodingLayout layout = EncodingLayout::for_board(8, 8);
  GridState s = gridworld::new_game(game4(21));
  Tensor x = encode_state(s, layout);
  int cell = s.piece_cell(0);
  // Model output says empty, observation says piece 0 stays: lock wins.
  size_t base = static_cast<size_t>(cell) * layout.channels();
  x.v[base + layout.ch_piece(0)] = -1.0;
  x.v[base + layout.ch_empty()] = 1.0;
  std::map<int, LockedCell> locked;
  locked[cell] = LockedCell{0, gridworld::PieceState::whole};
  auto dec = decode_state(x, layout, s, &locked);
  CHECK(dec.state.cells[cell] == 0);
  CHECK(dec.valid);
}

TEST_CASE("factorize emits one condition per agent including waits") {
  EncodingLayout layout = EncodingLayout::for_board(8, 8);
  JointAction joint(4, gridworld::wait_action());
  auto conds = factorize(joint, layout);
  REQUIRE(conds.size() == 4);
  for (int i = 0; i < 4; ++i) {
    int agent = -1;
    Action a = decode_condition(conds[i], layout, &agent);
    CHECK(agent == i);
    CHECK(a == gridworld::wait_action());
  }
  // Agent blocks are distinct one-hots.
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      CHECK(conds[i].v[j] == (i == j ? 1.0 : -1.0));
}

TEST_CASE("condition encoding round-trips mixed actions") {
  EncodingLayout layout = EncodingLayout::for_board(8, 8);
  JointAction joint = {gridworld::pick_action(3), gridworld::place_action(5, 17),
                       gridworld::wait_action(), gridworld::cut_action(7)};
  auto conds = factorize(joint, layout);
  for (int i = 0; i < 4; ++i) {
    int agent = -1;
    Action a = decode_condition(conds[i], layout, &agent);
    CHECK(agent == i);
    CHECK(a == joint[i]);
  }
  // The null condition is distinguishable from every real encoding.
  Tensor null = null_condition(layout);
  for (const auto& c : conds) CHECK_FALSE(null.v == c.v);
}

TEST_CASE("predict_next output is invariant to condition order under a fixed seed") {
  EncodingLayout layout = EncodingLayout::for_board(8, 8);
  GridState s = gridworld::new_game(game4(31));
  JointAction joint;
  std::mt19937_64 arng(4);
  for (int a = 0; a < 4; ++a) {
    auto acts = gridworld::legal_actions(s, a);
    joint.push_back(acts[arng() % acts.size()]);
  }
  diffusion::NoiseSchedule sched = diffusion::linear_schedule(30, 1e-3, 0.2);
  auto mcfg = default_denoiser_config(layout, 32, 30);
  mcfg.cond_embed = 32;
  diffusion::DenoiserModel model(mcfg, 5);
  diffusion::SampleConfig scfg;
  scfg.ddim_steps = 10;

  // Forward permuted conditions by permuting agents inside factorize input:
  // compose sums the very same set of condition vectors either way.
  auto run_with_order = [&](const std::vector<int>& order) {
    auto conds = factorize(joint, layout);
    std::vector<Tensor> permuted;
    for (int k : order) permuted.push_back(conds[k]);
    std::mt19937_64 rng(99);
    int D = layout.state_dim();
    Tensor x0 = encode_state(s, layout);
    nn::Workspace ws;
    auto eps = [&](const Tensor& x, int t) {
      Tensor x_rep(static_cast<int>(permuted.size()) + 1, D);
      Tensor x0_rep(static_cast<int>(permuted.size()) + 1, D);
      Tensor act(static_cast<int>(permuted.size()) + 1, layout.cond_dim());
      for (int r = 0; r <= static_cast<int>(permuted.size()); ++r) {
        std::memcpy(x_rep.row(r), x.row(0), sizeof(double) * D);
        std::memcpy(x0_rep.row(r), x0.row(0), sizeof(double) * D);
        if (r > 0)
          std::memcpy(act.row(r), permuted[r - 1].row(0), sizeof(double) * layout.cond_dim());
      }
      std::vector<int> ts(permuted.size() + 1, t);
      Tensor preds = model.predict(x_rep, ts, x0_rep, act, ws);
      Tensor uncond(1, D);
      std::memcpy(uncond.row(0), preds.row(0), sizeof(double) * D);
      std::vector<Tensor> cs;
      for (size_t r = 1; r < permuted.size() + 1; ++r) {
        Tensor c(1, D);
        std::memcpy(c.row(0), preds.row(static_cast<int>(r)), sizeof(double) * D);
        cs.push_back(std::move(c));
      }
      return diffusion::compose_noise(uncond, cs, scfg.omega);
    };
    Tensor raw = diffusion::reverse_sample(eps, sched, 1, D, scfg, rng);
    return decode_state(raw, layout, s);
  };
  auto a = run_with_order({0, 1, 2, 3});
  auto b = run_with_order({3, 1, 0, 2});
  CHECK(a.state == b.state);
}

TEST_CASE("predict_next on an untrained model still returns a structurally usable result") {
  EncodingLayout layout = EncodingLayout::for_board(8, 8);
  GridState s = gridworld::new_game(game4(41));
  JointAction joint(4, gridworld::wait_action());
  diffusion::NoiseSchedule sched = diffusion::linear_schedule(20, 1e-3, 0.2);
  auto mcfg = default_denoiser_config(layout, 24, 20);
  mcfg.cond_embed = 24;
  diffusion::DenoiserModel model(mcfg, 6);
  diffusion::SampleConfig scfg;
  scfg.ddim_steps = 5;
  std::mt19937_64 rng(1);
  auto res = predict_next(model, layout, s, joint, sched, scfg, rng);
  CHECK(res.raw.size() == static_cast<size_t>(layout.state_dim()));
  CHECK(res.state.turn == s.turn + 1);
  CHECK(res.state.width == s.width);
}

TEST_CASE("batched prediction matches per-candidate row accounting") {
  EncodingLayout layout = EncodingLayout::for_board(8, 8);
  GridState s1 = gridworld::new_game(game4(51));
  GridState s2 = gridworld::new_game(game4(52));
  JointAction j1(4, gridworld::wait_action());
  JointAction j2(4, gridworld::wait_action());
  diffusion::NoiseSchedule sched = diffusion::linear_schedule(20, 1e-3, 0.2);
  auto mcfg = default_denoiser_config(layout, 24, 20);
  mcfg.cond_embed = 24;
  diffusion::DenoiserModel model(mcfg, 8);
  diffusion::SampleConfig scfg;
  scfg.ddim_steps = 5;
  std::mt19937_64 rng(3);
  auto res = predict_next_batch(model, layout, {&s1, &s2}, {&j1, &j2}, sched, scfg, rng);
  REQUIRE(res.size() == 2);
  CHECK(res[0].state.width == 8);
  CHECK(res[1].state.turn == s2.turn + 1);
}
