#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "combo/pipeline.hpp"
#include "combo/render.hpp"

using namespace combo;
using namespace combo::harness;
using gridworld::GridState;

namespace {

ExperimentConfig small_cfg() {
  ExperimentConfig cfg = default_config();
  cfg.environment.variant = gridworld::Variant::game;
  cfg.environment.n_agents = 2;
  cfg.environment.n_pieces = 6;
  cfg.collect.episodes = 12;
  cfg.seed = 7;
  return cfg;
}

std::string temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  return p.string();
}

}  // namespace

TEST_CASE("collect with zero episodes yields an empty dataset with a valid manifest") {
  auto cfg = small_cfg();
  Dataset ds = collect(cfg, 0, 1);
  CHECK(ds.manifest.n_episodes == 0);
  CHECK(ds.manifest.total_steps == 0);
  ds.verify();
}

TEST_CASE("dataset round-trips through disk and passes integrity verification") {
  auto cfg = small_cfg();
  Dataset ds = collect(cfg, 12, 3);
  CHECK(ds.manifest.n_episodes == 12);
  CHECK(ds.manifest.n_train + ds.manifest.n_val + ds.manifest.n_test == 12);
  std::string dir = temp_dir("combo_ds_test");
  save_dataset(ds, dir);
  Dataset loaded = load_dataset(dir);  // verify() runs inside
  CHECK(loaded.episodes.size() == ds.episodes.size());
  CHECK(loaded.manifest.total_steps == ds.manifest.total_steps);
  for (size_t i = 0; i < ds.episodes.size(); ++i) {
    CHECK(loaded.episodes[i].initial == ds.episodes[i].initial);
    CHECK(loaded.episodes[i].actions.size() == ds.episodes[i].actions.size());
  }
  // Tampering is caught.
  Dataset corrupted = loaded;
  corrupted.episodes[0].final_key = "bogus";
  CHECK_THROWS_AS(corrupted.verify(), std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("derived transitions always agree with the simulator") {
  auto cfg = small_cfg();
  Dataset ds = collect(cfg, 12, 5);
  DerivedCaps caps;
  auto tables = derive_tables(ds, Split::train, caps, 1);
  CHECK_FALSE(tables.singles.empty());
  CHECK_FALSE(tables.multis.empty());
  for (const auto& t : tables.singles) {
    CHECK(t.acting.size() == 1);
    GridState expect = gridworld::step(t.s, t.a);
    CHECK(expect == t.s_next);
    int non_wait = 0;
    for (const auto& a : t.a)
      if (a.verb != gridworld::Verb::wait) ++non_wait;
    CHECK(non_wait <= 1);
  }
  for (const auto& t : tables.multis) {
    CHECK(t.acting.size() >= 2);
    CHECK(gridworld::step(t.s, t.a) == t.s_next);
  }
  // Splits are disjoint by episode: train tables never reference test
  // episodes (checked indirectly by construction; here by counting).
  auto test_tables = derive_tables(ds, Split::test, caps, 1);
  CHECK(test_tables.singles.size() + tables.singles.size() <=
        static_cast<size_t>(ds.manifest.total_steps) * 3 + 2 * ds.episodes.size());
}

TEST_CASE("derived caps subsample deterministically") {
  auto cfg = small_cfg();
  Dataset ds = collect(cfg, 12, 9);
  DerivedCaps caps;
  caps.max_singles = 20;
  auto a = derive_tables(ds, Split::train, caps, 4);
  auto b = derive_tables(ds, Split::train, caps, 4);
  REQUIRE(a.singles.size() == 20);
  REQUIRE(b.singles.size() == 20);
  for (size_t i = 0; i < 20; ++i) CHECK(a.singles[i].s == b.singles[i].s);
}

TEST_CASE("proposer labels include policy actions and improving actions only") {
  auto cfg = small_cfg();
  Dataset ds = collect(cfg, 6, 11);
  DerivedCaps caps;
  auto tables = derive_tables(ds, Split::train, caps, 2);
  auto table = planner::ActionTable::enumerate(cfg.environment);
  REQUIRE_FALSE(tables.proposer.empty());
  for (size_t i = 0; i < std::min<size_t>(tables.proposer.size(), 50); ++i) {
    const auto& row = tables.proposer[i];
    for (int id : row.label_ids) {
      gridworld::Action a = table.action(id);
      CHECK(gridworld::is_legal(row.s, row.agent, a));
    }
  }
}

TEST_CASE("intent rows carry k-stacks and executed action ids") {
  auto cfg = small_cfg();
  Dataset ds = collect(cfg, 6, 13);
  DerivedCaps caps;
  caps.intent_history = 3;
  auto tables = derive_tables(ds, Split::train, caps, 2);
  auto table = planner::ActionTable::enumerate(cfg.environment);
  REQUIRE_FALSE(tables.intent.empty());
  for (const auto& row : tables.intent) {
    CHECK(row.stack.size() == 3);
    CHECK(row.next_action_ids.size() == 2);
    for (int id : row.next_action_ids) {
      CHECK(id >= 0);
      CHECK(id < table.size());
    }
  }
}

TEST_CASE("metrics summary equals a recomputation from the episode records") {
  MetricsReport r;
  r.episodes = {{1, true, 10, 0}, {2, false, 30, 2}, {3, true, 20, 1}, {4, true, 12, 0}};
  r.finalize();
  int wins = 0;
  double steps = 0;
  for (const auto& e : r.episodes)
    if (e.success) {
      ++wins;
      steps += e.steps;
    }
  CHECK(r.success_rate == doctest::Approx(static_cast<double>(wins) / 4));
  CHECK(r.avg_steps_success == doctest::Approx(steps / wins));
  CHECK(r.total_guard_fires() == 3);
  auto j = r.to_json();
  auto back = MetricsReport::from_json(j);
  CHECK(back.success_rate == r.success_rate);
  CHECK(back.episodes.size() == 4);
}

TEST_CASE("config round-trip, defaults and overrides") {
  ExperimentConfig cfg = default_config();
  CHECK(cfg.environment.n_agents == 4);
  CHECK(cfg.model.omega == doctest::Approx(5.0));
  CHECK(cfg.model.ddim_steps == 25);
  CHECK(cfg.planner.proposals == 3);
  CHECK(cfg.planner.beams == 3);
  CHECK(cfg.planner.depth == 3);
  CHECK(cfg.planner.intent_history == 3);
  CHECK(cfg.collect.epsilon == doctest::Approx(0.1));
  CHECK(cfg.evaluation.episodes == 20);
  CHECK(cfg.evaluation.horizon == 30);

  std::string path = temp_dir("combo_cfg_test") + ".json";
  save_config(cfg, path);
  auto loaded = load_config(path);
  CHECK(config_to_json_string(loaded) == config_to_json_string(cfg));
  std::filesystem::remove(path);

  apply_override(cfg, "training.stage1_epochs=9");
  CHECK(cfg.training.stage1_epochs == 9);
  apply_override(cfg, "environment.variant=cook");
  CHECK(cfg.environment.variant == gridworld::Variant::cook);
  apply_override(cfg, "model.omega=2.5");
  CHECK(cfg.model.omega == doctest::Approx(2.5));
  CHECK_THROWS_AS(apply_override(cfg, "bogus.key=1"), std::invalid_argument);
  CHECK_THROWS_AS(apply_override(cfg, "nonsense"), std::invalid_argument);
}

TEST_CASE("render: frame count, determinism, and solved-vs-initial difference") {
  auto cfg = small_cfg();
  Dataset ds = collect(cfg, 3, 17);
  const auto& rec = ds.episodes[0];
  std::string dir = temp_dir("combo_render_test");
  int n = render_episode(rec, dir);
  CHECK(n == static_cast<int>(rec.actions.size()) + 1);
  int files = 0;
  for (auto& entry : std::filesystem::directory_iterator(dir)) {
    ++files;
    CHECK(entry.path().extension() == ".ppm");
  }
  CHECK(files == n);

  int w1, h1, w2, h2;
  auto img1 = rasterize(rec.initial, &w1, &h1);
  auto img2 = rasterize(rec.initial, &w2, &h2);
  CHECK(img1 == img2);

  GridState last = rec.initial;
  for (const auto& joint : rec.actions) last = gridworld::step(last, joint);
  int wl, hl;
  auto img_last = rasterize(last, &wl, &hl);
  CHECK(img_last != img1);
  std::filesystem::remove_all(dir);
}

TEST_CASE("wait-only seat 0 fails episodes that need its participation") {
  auto cfg = small_cfg();
  // Agent 0 owns goal slots in its private region; a waiting agent 0 can
  // never fill them.
  std::mt19937_64 rng(0);
  for (std::uint64_t seed = 40; seed < 44; ++seed) {
    gridworld::EpisodeConfig env = cfg.environment;
    env.seed = seed;
    GridState s = gridworld::new_game(env);
    for (int t = 0; t < env.horizon && !gridworld::is_success(s); ++t) {
      gridworld::JointAction joint = {
          gridworld::wait_action(),
          gridworld::cooperator_policy(gridworld::CooperatorKind::clockwise, s, 1, rng)};
      s = gridworld::step(s, joint);
    }
    CHECK_FALSE(gridworld::is_success(s));
  }
}

TEST_CASE("oracle-everything protocol reaches full success on 2-agent games") {
  auto cfg = small_cfg();
  ModelBundle bundle;
  bundle.env = cfg.environment;
  bundle.model_settings = cfg.model;
  bundle.layout = layout_for(cfg.environment);
  bundle.table = planner::ActionTable::enumerate(cfg.environment);
  bundle.sched = diffusion::linear_schedule(cfg.model.t_diff, cfg.model.beta_min,
                                            cfg.model.beta_max);
  EvalProtocol proto;
  proto.kind = gridworld::CooperatorKind::clockwise;
  proto.episodes = 20;
  proto.horizon = 30;
  proto.planner_cfg = cfg.planner;
  proto.seed_base = 900;
  auto report = run_protocol(bundle, proto);
  CHECK(report.success_rate == doctest::Approx(1.0));
  CHECK(report.avg_steps_success > 0.0);
  CHECK(report.episodes.size() == 20);

  // Same protocol is reproducible.
  auto report2 = run_protocol(bundle, proto);
  CHECK(report2.to_json() == report.to_json());
}
