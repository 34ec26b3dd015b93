#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "combo/pipeline.hpp"
#include "combo/render.hpp"

using namespace combo;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out = "out";
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "experiment config file (JSON)");
  cmd->add_option("--out", args.out, "output directory");
  cmd->add_option("--seed", args.seed, "master seed override")->each([&](const std::string&) {
    args.seed_set = true;
  });
  cmd->add_option("overrides", args.overrides, "section.key=value config overrides");
}

harness::ExperimentConfig resolve_config(const CommonArgs& args) {
  harness::ExperimentConfig cfg =
      args.config_path.empty() ? harness::default_config() : harness::load_config(args.config_path);
  for (const auto& o : args.overrides) harness::apply_override(cfg, o);
  if (args.seed_set) cfg.seed = args.seed;
  return cfg;
}

gridworld::CooperatorKind default_kind(const harness::ExperimentConfig& cfg, int which) {
  if (cfg.environment.variant == gridworld::Variant::game)
    return which == 0 ? gridworld::CooperatorKind::clockwise
                      : gridworld::CooperatorKind::counter_clockwise;
  return which == 0 ? gridworld::CooperatorKind::selfish : gridworld::CooperatorKind::altruistic;
}

int cmd_collect(const CommonArgs& args) {
  auto cfg = resolve_config(args);
  std::cout << "collecting " << cfg.collect.episodes << " episodes..." << std::endl;
  auto ds = harness::collect(cfg, cfg.collect.episodes, cfg.seed);
  harness::save_dataset(ds, args.out);
  std::cout << "wrote " << ds.manifest.n_episodes << " episodes (" << ds.manifest.total_steps
            << " steps) to " << args.out << std::endl;
  return 0;
}

int cmd_train(const CommonArgs& args, const std::string& dataset_dir) {
  auto cfg = resolve_config(args);
  auto ds = harness::load_dataset(dataset_dir);
  auto bundle = harness::train_all(ds, cfg, &std::cout);
  harness::save_bundle(bundle, args.out);
  std::ofstream f(args.out + "/training_metrics.json", std::ios::trunc);
  f << bundle.training_metrics.dump(2) << "\n";
  std::cout << "bundle written to " << args.out << std::endl;
  return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& bundle_dir, const std::string& kind_name,
             const std::string& stack) {
  auto cfg = resolve_config(args);
  auto bundle = harness::load_bundle(bundle_dir);
  harness::EvalProtocol proto;
  proto.episodes = cfg.evaluation.episodes;
  proto.horizon = cfg.evaluation.horizon;
  proto.planner_cfg = cfg.planner;
  proto.seed_base = cfg.seed + 10000;
  if (stack == "learned") {
    proto.proposer = planner::ModuleMode::learned;
    proto.intent = planner::ModuleMode::learned;
    proto.evaluator = planner::ModuleMode::learned;
    proto.learned_world_model = true;
    proto.learned_perception = true;
  } else if (stack == "oracle") {
    // all-oracle defaults
  } else if (stack == "cwm-oracle-subs") {
    proto.learned_world_model = true;
  } else {
    throw std::invalid_argument("unknown stack: " + stack);
  }

  std::vector<gridworld::CooperatorKind> kinds;
  if (kind_name == "both") {
    kinds = {default_kind(cfg, 0), default_kind(cfg, 1)};
  } else {
    kinds = {gridworld::cooperator_kind_from_string(kind_name)};
  }
  std::filesystem::create_directories(args.out);
  std::ofstream records(args.out + "/metrics.jsonl", std::ios::trunc);
  for (auto kind : kinds) {
    proto.kind = kind;
    auto report = harness::run_protocol(bundle, proto);
    std::string title = "cooperator=" + gridworld::to_string(kind) + " stack=" + stack;
    std::cout << report.summary_table(title);
    auto j = report.to_json();
    j["cooperator"] = gridworld::to_string(kind);
    j["stack"] = stack;
    records << j.dump() << "\n";
  }
  std::cout << "records written to " << args.out << "/metrics.jsonl" << std::endl;
  return 0;
}

int cmd_plan(const CommonArgs& args, const std::string& bundle_dir, std::uint64_t state_seed) {
  auto cfg = resolve_config(args);
  harness::ModelBundle bundle;
  bool learned = !bundle_dir.empty();
  if (learned) {
    bundle = harness::load_bundle(bundle_dir);
  } else {
    bundle.env = cfg.environment;
    bundle.model_settings = cfg.model;
    bundle.layout = harness::layout_for(cfg.environment);
    bundle.table = planner::ActionTable::enumerate(cfg.environment);
    bundle.sched = diffusion::linear_schedule(cfg.model.t_diff, cfg.model.beta_min,
                                              cfg.model.beta_max);
  }
  gridworld::EpisodeConfig env = bundle.env;
  env.seed = state_seed;
  gridworld::GridState s = gridworld::new_game(env);

  planner::PlannerContext ctx;
  ctx.layout = &bundle.layout;
  ctx.table = &bundle.table;
  ctx.goal = planner::encode_goal(s, bundle.layout);
  ctx.self_agent = 0;
  ctx.oracle_kinds.assign(env.n_agents, default_kind(cfg, 0));
  if (learned && bundle.has_nets) {
    ctx.proposer_mode = planner::ModuleMode::learned;
    ctx.intent_mode = planner::ModuleMode::learned;
    ctx.evaluator_mode = planner::ModuleMode::learned;
    ctx.nets = &bundle.nets;
  }
  if (learned && bundle.has_cwm) {
    ctx.use_learned_world_model = true;
    ctx.cwm_model = &bundle.cwm_model;
    ctx.sched = &bundle.sched;
    ctx.sampling = bundle.sample_config();
  }
  std::mt19937_64 rng(cfg.seed + 1);
  planner::PlanTrace trace;
  auto best = planner::plan(ctx, s, {s}, cfg.planner, rng, &trace);
  std::cout << "state seed " << state_seed << ", steps-left "
            << gridworld::heuristic_steps_left(s) << "\n";
  std::cout << "best plan score " << best.score << ", own actions:";
  for (const auto& a : best.own_actions) std::cout << " [" << gridworld::to_string(a) << "]";
  std::cout << "\nbeam dump (" << trace.entries.size() << " expansions, "
            << trace.world_model_calls << " world-model calls, " << trace.guard_fires
            << " guard fires)\n";
  for (const auto& e : trace.entries)
    std::cout << "  depth " << e.depth << " parent " << e.parent << " own "
              << gridworld::to_string(e.own_action) << " raw " << e.raw_score << " accepted "
              << e.accepted_score << (e.guard_fired ? " GUARD" : "") << "\n";
  return 0;
}

int cmd_render(const CommonArgs& args, const std::string& dataset_dir, int episode) {
  auto ds = harness::load_dataset(dataset_dir);
  if (episode < 0 || episode >= static_cast<int>(ds.episodes.size()))
    throw std::out_of_range("episode index out of range");
  int n = harness::render_episode(ds.episodes[episode], args.out);
  std::cout << "wrote " << n << " frames to " << args.out << std::endl;
  return 0;
}

int cmd_gradcheck() {
  // The sweep the test suite runs: 20 random nets plus both diffusion losses.
  int failures = 0;
  for (int trial = 0; trial < 20; ++trial) {
    std::uint64_t seed = 300 + trial;
    bool conditioned = trial % 2 == 1;
    nn::Act act = trial % 4 < 2 ? nn::Act::silu : nn::Act::tanh_act;
    nn::Network net = conditioned
                          ? nn::Network(nn::NetworkSpec::conditioned_mlp(5, 3, 4, {6}, 2, act), seed)
                          : nn::Network(nn::NetworkSpec::mlp(5, {6, 4}, 2, act), seed);
    nn::Tensor x(3, 5), cond(3, 3), target(3, 2);
    std::mt19937_64 rng(seed);
    nn::fill_gaussian(x, rng);
    nn::fill_gaussian(cond, rng);
    nn::fill_gaussian(target, rng);
    auto loss = [&](nn::Network& n, std::vector<nn::Tensor>* grads) {
      nn::Workspace ws;
      nn::Tensor y = n.spec().cond_dim > 0 ? n.forward(x, cond, ws) : n.forward(x, ws);
      double total = 0.0;
      nn::Tensor dy(y.rows(), y.cols());
      for (size_t i = 0; i < y.v.size(); ++i) {
        double d = y.v[i] - target.v[i];
        total += d * d;
        dy.v[i] = 2.0 * d / y.v.size();
      }
      total /= y.v.size();
      if (grads) {
        n.init_grads(ws);
        n.backward(dy, ws);
        *grads = ws.grads;
      }
      return total;
    };
    auto report = nn::grad_check(net, loss, 1e-4);
    std::cout << "net " << trial << ": max rel err " << report.max_rel_error
              << (report.pass ? " PASS" : " FAIL") << "\n";
    if (!report.pass) ++failures;
  }

  diffusion::DenoiserConfig dcfg;
  dcfg.state_dim = 6;
  dcfg.x0_dim = 6;
  dcfg.action_dim = 4;
  dcfg.temb_dim = 8;
  dcfg.hidden = 10;
  dcfg.cond_embed = 8;
  dcfg.T = 15;
  auto sched = diffusion::linear_schedule(15, 1e-3, 0.1);
  diffusion::SingleBatch sb;
  std::mt19937_64 rng(6);
  sb.target = nn::Tensor(3, 6);
  sb.cond_state = nn::Tensor(3, 6);
  sb.cond_action = nn::Tensor(3, 4);
  nn::fill_gaussian(sb.target, rng);
  nn::fill_gaussian(sb.cond_state, rng);
  nn::fill_gaussian(sb.cond_action, rng);
  sb.agent = {0, 1, 0};
  auto C = diffusion::LossScaleMatrix::uniform(2, 3, 1.0);
  diffusion::DenoiserModel m1(dcfg, 401);
  auto single_loss = [&](nn::Network&, std::vector<nn::Tensor>* grads) {
    nn::Workspace ws;
    m1.net().init_grads(ws);
    std::mt19937_64 fixed(42);
    double loss = diffusion::loss_single(m1, sb, C, sched, 0.3, fixed, ws);
    if (grads) *grads = ws.grads;
    return loss;
  };
  auto r1 = nn::grad_check(m1.net(), single_loss, 1e-4);
  std::cout << "single-condition loss: max rel err " << r1.max_rel_error
            << (r1.pass ? " PASS" : " FAIL") << "\n";
  if (!r1.pass) ++failures;

  diffusion::ComposedBatch cb;
  cb.target = sb.target;
  cb.cond_state = sb.cond_state;
  for (int i = 0; i < 2; ++i) {
    nn::Tensor a(3, 4);
    nn::fill_gaussian(a, rng);
    cb.cond_actions.push_back(a);
  }
  diffusion::DenoiserModel m2(dcfg, 402);
  auto composed_loss = [&](nn::Network&, std::vector<nn::Tensor>* grads) {
    nn::Workspace ws;
    m2.net().init_grads(ws);
    std::mt19937_64 fixed(43);
    double loss = diffusion::loss_composed(m2, cb, sched, fixed, ws);
    if (grads) *grads = ws.grads;
    return loss;
  };
  auto r2 = nn::grad_check(m2.net(), composed_loss, 1e-4);
  std::cout << "composed loss: max rel err " << r2.max_rel_error
            << (r2.pass ? " PASS" : " FAIL") << "\n";
  if (!r2.pass) ++failures;

  std::cout << (failures == 0 ? "gradcheck: all passed" : "gradcheck: FAILURES") << std::endl;
  return failures == 0 ? 0 : 1;
}

int cmd_oracle_test() {
  // Composed sampling against the closed-form product gaussian.
  auto sched = diffusion::linear_schedule(300, 1e-4, 0.04);
  diffusion::GaussianFactor prior{{0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}};
  diffusion::GaussianFactor f1{{0.8, 0.2, -0.5}, {1.0, 1.0, 1.0}};
  diffusion::GaussianFactor f2{{-0.4, 0.6, 0.3}, {1.0, 1.0, 1.0}};
  auto expected = diffusion::product_of_gaussians(prior, {f1, f2});
  auto eps = [&](const nn::Tensor& x, int t) {
    auto u = diffusion::analytic_gaussian_eps(prior, sched, x, t);
    std::vector<nn::Tensor> cs = {diffusion::analytic_gaussian_eps(f1, sched, x, t),
                                  diffusion::analytic_gaussian_eps(f2, sched, x, t)};
    return diffusion::compose_noise(u, cs, 1.0);
  };
  diffusion::SampleConfig cfg;
  cfg.kind = diffusion::SamplerKind::ddpm;
  std::mt19937_64 rng(12345);
  auto samples = diffusion::reverse_sample(eps, sched, 20000, 3, cfg, rng);
  bool ok = true;
  for (int d = 0; d < 3; ++d) {
    double mean = 0, var = 0;
    for (int r = 0; r < samples.rows(); ++r) mean += samples.at(r, d);
    mean /= samples.rows();
    for (int r = 0; r < samples.rows(); ++r) {
      double dd = samples.at(r, d) - mean;
      var += dd * dd;
    }
    var /= samples.rows() - 1;
    double mean_err = std::abs(mean - expected.mean[d]);
    double var_rel = std::abs(var - expected.var[d]) / expected.var[d];
    std::cout << "dim " << d << ": mean err " << mean_err << " (limit 0.05), var rel " << var_rel
              << " (limit 0.10)\n";
    ok = ok && mean_err < 0.05 && var_rel < 0.10;
  }
  std::cout << (ok ? "oracle-test: PASS" : "oracle-test: FAIL") << std::endl;
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"compositional world-model planning toolkit"};
  app.require_subcommand(1);

  CommonArgs collect_args, train_args, eval_args, plan_args, render_args;
  std::string train_dataset, eval_bundle, eval_kind = "both", eval_stack = "learned";
  std::string plan_bundle;
  std::uint64_t plan_state_seed = 0;
  std::string render_dataset;
  int render_episode_idx = 0;

  auto* collect = app.add_subcommand("collect", "record scripted-policy rollouts");
  add_common(collect, collect_args);

  auto* train = app.add_subcommand("train", "train every model from a dataset");
  add_common(train, train_args);
  train->add_option("--dataset", train_dataset, "dataset directory")->required();

  auto* eval = app.add_subcommand("eval", "run the cooperation protocol");
  add_common(eval, eval_args);
  eval->add_option("--bundle", eval_bundle, "checkpoint bundle directory")->required();
  eval->add_option("--kind", eval_kind, "cooperator kind or 'both'");
  eval->add_option("--stack", eval_stack, "learned | oracle | cwm-oracle-subs");

  auto* planc = app.add_subcommand("plan", "single-state planning inspection with beam dump");
  add_common(planc, plan_args);
  planc->add_option("--bundle", plan_bundle, "checkpoint bundle (omit for oracle modules)");
  planc->add_option("--state-seed", plan_state_seed, "episode seed for the inspected state");

  auto* render = app.add_subcommand("render", "rasterize an episode to PPM frames");
  add_common(render, render_args);
  render->add_option("--dataset", render_dataset, "dataset directory")->required();
  render->add_option("--episode", render_episode_idx, "episode index");

  app.add_subcommand("gradcheck", "finite-difference gradient verification");
  app.add_subcommand("oracle-test", "analytic gaussian composition suite");

  CLI11_PARSE(app, argc, argv);

  try {
    if (collect->parsed()) return cmd_collect(collect_args);
    if (train->parsed()) return cmd_train(train_args, train_dataset);
    if (eval->parsed()) return cmd_eval(eval_args, eval_bundle, eval_kind, eval_stack);
    if (planc->parsed()) return cmd_plan(plan_args, plan_bundle, plan_state_seed);
    if (render->parsed()) return cmd_render(render_args, render_dataset, render_episode_idx);
    if (app.get_subcommand("gradcheck")->parsed()) return cmd_gradcheck();
    if (app.get_subcommand("oracle-test")->parsed()) return cmd_oracle_test();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
