#include "combo/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <atomic>
#include <thread>

namespace combo::harness {

using gridworld::GridState;
using gridworld::JointAction;
using nlohmann::json;
using nn::Tensor;

diffusion::SampleConfig ModelBundle::sample_config() const {
  diffusion::SampleConfig cfg;
  cfg.kind = diffusion::SamplerKind::ddim;
  cfg.ddim_steps = model_settings.ddim_steps;
  cfg.omega = model_settings.omega;
  return cfg;
}

cwm::EncodingLayout layout_for(const gridworld::EpisodeConfig& env) {
  return cwm::EncodingLayout::for_board(env.width, env.height, 4,
                                        std::max(env.n_pieces, 8));
}

namespace {

struct BatchIter {
  size_t n = 0;
  int batch = 64;
  std::vector<size_t> idx;
  BatchIter(size_t count, int batch_size, std::mt19937_64& rng, size_t cap = 0)
      : n(count), batch(batch_size), idx(count) {
    std::iota(idx.begin(), idx.end(), 0);
    for (size_t i = count; i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
    if (cap > 0 && idx.size() > cap) idx.resize(cap);
  }
};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

// --- sub-module trainers -----------------------------------------------------

nn::Network train_proposer(const std::vector<ProposerRow>& rows, const ModelBundle& shapes,
                           const TrainingSettings& ts, std::uint64_t seed, double* val_top1,
                           const std::vector<ProposerRow>* val_rows) {
  if (rows.empty()) throw std::invalid_argument("train_proposer: empty dataset");
  int T = shapes.table.size();
  int in_dim = shapes.layout.state_dim() + planner::goal_dim(shapes.layout) +
               shapes.layout.n_agents_max;
  nn::Network net(nn::NetworkSpec::mlp(in_dim, {shapes.model_settings.submodule_hidden}, T), seed);
  nn::AdamState adam;
  nn::AdamConfig acfg;
  acfg.lr = ts.lr;
  acfg.beta1 = ts.beta1;
  acfg.beta2 = ts.beta2;
  std::mt19937_64 rng(seed + 11);
  nn::Workspace ws;
  for (int epoch = 0; epoch < ts.proposer_epochs; ++epoch) {
    BatchIter it(rows.size(), ts.batch_size, rng);
    for (size_t start = 0; start < it.idx.size(); start += it.batch) {
      size_t end = std::min(it.idx.size(), start + it.batch);
      int B = static_cast<int>(end - start);
      Tensor x(B, in_dim), y(B, T);
      y.fill(0.0);
      for (int r = 0; r < B; ++r) {
        const auto& row = rows[it.idx[start + r]];
        Tensor goal = planner::encode_goal(row.s, shapes.layout);
        Tensor in = planner::proposer_input(row.s, row.agent, shapes.layout, goal);
        std::memcpy(x.row(r), in.row(0), sizeof(double) * in_dim);
        for (int id : row.label_ids) y.at(r, id) = 1.0;
      }
      net.init_grads(ws);
      Tensor logits = net.forward(x, ws);
      Tensor dl(B, T);
      for (int r = 0; r < B; ++r)
        for (int c = 0; c < T; ++c)
          dl.at(r, c) = (sigmoid(logits.at(r, c)) - y.at(r, c)) / (B * T);
      net.backward(dl, ws);
      adam_step(net.parameters(), ws.grads, adam, acfg);
    }
  }
  if (val_top1) {
    const auto& vrows = val_rows && !val_rows->empty() ? *val_rows : rows;
    int hit = 0;
    nn::Workspace vws;
    for (const auto& row : vrows) {
      Tensor goal = planner::encode_goal(row.s, shapes.layout);
      Tensor logits =
          net.forward(planner::proposer_input(row.s, row.agent, shapes.layout, goal), vws);
      int best = 0;
      for (int c = 1; c < T; ++c)
        if (logits.at(0, c) > logits.at(0, best)) best = c;
      if (std::find(row.label_ids.begin(), row.label_ids.end(), best) != row.label_ids.end())
        ++hit;
    }
    *val_top1 = vrows.empty() ? 0.0 : static_cast<double>(hit) / vrows.size();
  }
  return net;
}

nn::Network train_intent(const std::vector<IntentRow>& rows, const ModelBundle& shapes,
                         const TrainingSettings& ts, std::uint64_t seed, double* val_top1,
                         const std::vector<IntentRow>* val_rows) {
  if (rows.empty()) throw std::invalid_argument("train_intent: empty dataset");
  int T = shapes.table.size();
  int k = static_cast<int>(rows.front().stack.size());
  int n_max = shapes.layout.n_agents_max;
  int in_dim = k * shapes.layout.state_dim() + planner::goal_dim(shapes.layout);
  nn::Network net(
      nn::NetworkSpec::mlp(in_dim, {shapes.model_settings.submodule_hidden}, n_max * T), seed);
  nn::AdamState adam;
  nn::AdamConfig acfg;
  acfg.lr = ts.lr;
  std::mt19937_64 rng(seed + 13);
  nn::Workspace ws;
  auto build_input = [&](const IntentRow& row) {
    std::vector<const GridState*> stack;
    for (const auto& s : row.stack) stack.push_back(&s);
    Tensor goal = planner::encode_goal(row.stack.back(), shapes.layout);
    return planner::intent_input(stack, shapes.layout, goal);
  };
  for (int epoch = 0; epoch < ts.intent_epochs; ++epoch) {
    BatchIter it(rows.size(), ts.batch_size, rng);
    for (size_t start = 0; start < it.idx.size(); start += it.batch) {
      size_t end = std::min(it.idx.size(), start + it.batch);
      int B = static_cast<int>(end - start);
      Tensor x(B, in_dim);
      std::vector<const IntentRow*> batch_rows(B);
      for (int r = 0; r < B; ++r) {
        batch_rows[r] = &rows[it.idx[start + r]];
        Tensor in = build_input(*batch_rows[r]);
        std::memcpy(x.row(r), in.row(0), sizeof(double) * in_dim);
      }
      net.init_grads(ws);
      Tensor logits = net.forward(x, ws);
      Tensor dl(B, n_max * T);
      int live_agents = static_cast<int>(batch_rows[0]->next_action_ids.size());
      double norm = static_cast<double>(B) * live_agents;
      for (int r = 0; r < B; ++r) {
        for (int a = 0; a < live_agents; ++a) {
          int label = batch_rows[r]->next_action_ids[a];
          // Per-agent softmax cross-entropy.
          double mx = -1e300;
          for (int c = 0; c < T; ++c) mx = std::max(mx, logits.at(r, a * T + c));
          double z = 0.0;
          for (int c = 0; c < T; ++c) z += std::exp(logits.at(r, a * T + c) - mx);
          for (int c = 0; c < T; ++c) {
            double p = std::exp(logits.at(r, a * T + c) - mx) / z;
            dl.at(r, a * T + c) = (p - (c == label ? 1.0 : 0.0)) / norm;
          }
        }
      }
      net.backward(dl, ws);
      adam_step(net.parameters(), ws.grads, adam, acfg);
    }
  }
  if (val_top1) {
    const auto& vrows = val_rows && !val_rows->empty() ? *val_rows : rows;
    long hit = 0, total = 0;
    nn::Workspace vws;
    for (const auto& row : vrows) {
      Tensor logits = net.forward(build_input(row), vws);
      for (size_t a = 0; a < row.next_action_ids.size(); ++a) {
        int best = 0;
        for (int c = 1; c < T; ++c)
          if (logits.at(0, static_cast<int>(a) * T + c) >
              logits.at(0, static_cast<int>(a) * T + best))
            best = c;
        if (best == row.next_action_ids[a]) ++hit;
        ++total;
      }
    }
    *val_top1 = total == 0 ? 0.0 : static_cast<double>(hit) / total;
  }
  return net;
}

nn::Network train_evaluator(const std::vector<EvaluatorRow>& rows, const ModelBundle& shapes,
                            const TrainingSettings& ts, std::uint64_t seed, double* val_mae,
                            const std::vector<EvaluatorRow>* val_rows) {
  if (rows.empty()) throw std::invalid_argument("train_evaluator: empty dataset");
  int in_dim = shapes.layout.state_dim() + planner::goal_dim(shapes.layout);
  nn::Network net(nn::NetworkSpec::mlp(in_dim, {shapes.model_settings.submodule_hidden}, 1),
                  seed);
  nn::AdamState adam;
  nn::AdamConfig acfg;
  acfg.lr = ts.lr;
  std::mt19937_64 rng(seed + 17);
  nn::Workspace ws;
  for (int epoch = 0; epoch < ts.evaluator_epochs; ++epoch) {
    BatchIter it(rows.size(), ts.batch_size, rng);
    for (size_t start = 0; start < it.idx.size(); start += it.batch) {
      size_t end = std::min(it.idx.size(), start + it.batch);
      int B = static_cast<int>(end - start);
      Tensor x(B, in_dim);
      std::vector<double> y(B);
      for (int r = 0; r < B; ++r) {
        const auto& row = rows[it.idx[start + r]];
        Tensor goal = planner::encode_goal(row.s, shapes.layout);
        Tensor in = planner::evaluator_input(row.s, shapes.layout, goal);
        std::memcpy(x.row(r), in.row(0), sizeof(double) * in_dim);
        y[r] = row.steps_left;
      }
      net.init_grads(ws);
      Tensor pred = net.forward(x, ws);
      Tensor dl(B, 1);
      for (int r = 0; r < B; ++r) dl.at(r, 0) = 2.0 * (pred.at(r, 0) - y[r]) / B;
      net.backward(dl, ws);
      adam_step(net.parameters(), ws.grads, adam, acfg);
    }
  }
  if (val_mae) {
    const auto& vrows = val_rows && !val_rows->empty() ? *val_rows : rows;
    double err = 0.0;
    nn::Workspace vws;
    for (const auto& row : vrows) {
      Tensor goal = planner::encode_goal(row.s, shapes.layout);
      Tensor pred = net.forward(planner::evaluator_input(row.s, shapes.layout, goal), vws);
      err += std::abs(pred.at(0, 0) - row.steps_left);
    }
    *val_mae = vrows.empty() ? 0.0 : err / vrows.size();
  }
  return net;
}

// --- train_all -----------------------------------------------------------------

ModelBundle train_all(const Dataset& ds, const ExperimentConfig& cfg, std::ostream* log) {
  auto say = [&](const std::string& msg) {
    if (log) (*log) << msg << std::endl;
  };
  ModelBundle bundle;
  bundle.env = cfg.environment;
  bundle.model_settings = cfg.model;
  bundle.layout = layout_for(cfg.environment);
  bundle.table = planner::ActionTable::enumerate(cfg.environment);
  bundle.sched =
      diffusion::linear_schedule(cfg.model.t_diff, cfg.model.beta_min, cfg.model.beta_max);

  DerivedCaps caps;
  caps.max_singles = cfg.training.max_single_samples;
  caps.max_multis = cfg.training.max_multi_samples;
  caps.max_inpainter = cfg.training.max_inpainter_samples;
  caps.max_submodule = cfg.training.max_submodule_samples;
  caps.intent_history = cfg.planner.intent_history;
  say("deriving training tables");
  DerivedTables train = derive_tables(ds, Split::train, caps, cfg.seed);
  DerivedCaps val_caps = caps;
  val_caps.max_singles = 600;
  val_caps.max_multis = 600;
  val_caps.max_inpainter = 400;
  val_caps.max_submodule = 1500;
  DerivedTables val = derive_tables(ds, Split::val, val_caps, cfg.seed + 1);
  say("train tables: singles=" + std::to_string(train.singles.size()) +
      " multis=" + std::to_string(train.multis.size()) +
      " inpainter=" + std::to_string(train.inpainter.size()) +
      " submodule=" + std::to_string(train.proposer.size()));

  json metrics;
  diffusion::DenoiserConfig dcfg =
      cwm::default_denoiser_config(bundle.layout, cfg.model.hidden, cfg.model.t_diff);
  dcfg.temb_dim = cfg.model.temb_dim;
  dcfg.n_hidden = cfg.model.n_hidden;
  dcfg.cond_embed = cfg.model.cond_embed;
  dcfg.beta_min = cfg.model.beta_min;
  dcfg.beta_max = cfg.model.beta_max;

  cwm::CwmTrainConfig tcfg;
  tcfg.epochs = cfg.training.stage1_epochs;
  tcfg.batch_size = cfg.training.batch_size;
  tcfg.lr = cfg.training.lr;
  tcfg.p_null = cfg.model.p_null;
  tcfg.adls = cfg.training.adls;
  tcfg.adls_weight = cfg.training.adls_weight;
  tcfg.seed = cfg.seed;

  say("stage 1: single-agent conditioned denoising");
  bundle.cwm_stage1 = cwm::train_stage1(train.singles, bundle.layout, dcfg, bundle.sched, tcfg,
                                        [&](int e, double l) {
                                          say("  stage1 epoch " + std::to_string(e) +
                                              " loss " + std::to_string(l));
                                        });
  bundle.has_stage1 = true;
  auto sample_cfg = bundle.sample_config();
  double single_acc_s1 =
      cwm::eval_exact_match(bundle.cwm_stage1, bundle.layout, val.singles, bundle.sched,
                            sample_cfg, cfg.seed + 101);
  say("  stage1 val single exact-match: " + std::to_string(single_acc_s1));
  metrics["stage1_single_accuracy"] = single_acc_s1;

  say("stage 2: composed fine-tuning");
  bundle.cwm_model = bundle.cwm_stage1;
  if (train.multis.empty()) throw std::runtime_error("train_all: no multi-agent transitions");
  cwm::CwmTrainConfig t2 = tcfg;
  t2.epochs = cfg.training.stage2_epochs;
  cwm::train_stage2(bundle.cwm_model, train.multis, bundle.layout, bundle.sched, t2,
                    [&](int e, double l) {
                      say("  stage2 epoch " + std::to_string(e) + " loss " + std::to_string(l));
                    });
  bundle.has_cwm = true;
  double single_acc_s2 =
      cwm::eval_exact_match(bundle.cwm_model, bundle.layout, val.singles, bundle.sched,
                            sample_cfg, cfg.seed + 102);
  say("  stage2 val single exact-match: " + std::to_string(single_acc_s2));
  metrics["stage2_single_accuracy"] = single_acc_s2;
  if (single_acc_s1 - single_acc_s2 > 0.05)
    say("  warning: stage-2 degraded single-agent accuracy by more than 5 points");
  metrics["stage2_single_degradation"] = single_acc_s1 - single_acc_s2;
  double multi_acc =
      cwm::eval_exact_match(bundle.cwm_model, bundle.layout, val.multis, bundle.sched,
                            sample_cfg, cfg.seed + 103);
  say("  stage2 val composed exact-match: " + std::to_string(multi_acc));
  metrics["stage2_multi_accuracy"] = multi_acc;

  say("inpainter: masked-state denoising");
  auto icfg = perception::inpainter_config(bundle.layout, cfg.model.inpainter_hidden,
                                           cfg.model.t_diff);
  icfg.temb_dim = cfg.model.temb_dim;
  icfg.cond_embed = cfg.model.cond_embed;
  icfg.beta_min = cfg.model.beta_min;
  icfg.beta_max = cfg.model.beta_max;
  perception::InpainterTrainConfig ip;
  ip.epochs = cfg.training.inpainter_epochs;
  ip.batch_size = cfg.training.batch_size;
  ip.lr = cfg.training.lr;
  ip.seed = cfg.seed + 3;
  bundle.inpainter = perception::train_inpainter(train.inpainter, bundle.layout, icfg,
                                                 bundle.sched, ip, [&](int e, double l) {
                                                   say("  inpainter epoch " + std::to_string(e) +
                                                       " loss " + std::to_string(l));
                                                 });
  bundle.has_inpainter = true;

  say("sub-modules: proposer / intent / evaluator");
  double proposer_acc = 0, intent_acc = 0, evaluator_mae = 0;
  bundle.nets.proposer = train_proposer(train.proposer, bundle, cfg.training, cfg.seed + 5,
                                        &proposer_acc, &val.proposer);
  say("  proposer val top-1 in label set: " + std::to_string(proposer_acc));
  bundle.nets.intent =
      train_intent(train.intent, bundle, cfg.training, cfg.seed + 6, &intent_acc, &val.intent);
  say("  intent val top-1 accuracy: " + std::to_string(intent_acc));
  bundle.nets.evaluator = train_evaluator(train.evaluator, bundle, cfg.training, cfg.seed + 7,
                                          &evaluator_mae, &val.evaluator);
  say("  evaluator val MAE: " + std::to_string(evaluator_mae));
  bundle.has_nets = true;
  metrics["proposer_val_top1"] = proposer_acc;
  metrics["intent_val_top1"] = intent_acc;
  metrics["evaluator_val_mae"] = evaluator_mae;
  bundle.training_metrics = metrics;
  return bundle;
}

// --- bundle io -------------------------------------------------------------------

void save_bundle(const ModelBundle& bundle, const std::string& dir) {
  std::filesystem::create_directories(dir);
  json j{{"environment",
          {{"variant", static_cast<int>(bundle.env.variant)},
           {"n_agents", bundle.env.n_agents},
           {"width", bundle.env.width},
           {"height", bundle.env.height},
           {"n_pieces", bundle.env.n_pieces},
           {"horizon", bundle.env.horizon},
           {"slots_per_agent", bundle.env.slots_per_agent},
           {"n_shapes", bundle.env.n_shapes},
           {"n_colors", bundle.env.n_colors}}},
         {"model",
          {{"hidden", bundle.model_settings.hidden},
           {"cond_embed", bundle.model_settings.cond_embed},
           {"temb_dim", bundle.model_settings.temb_dim},
           {"n_hidden", bundle.model_settings.n_hidden},
           {"t_diff", bundle.model_settings.t_diff},
           {"beta_min", bundle.model_settings.beta_min},
           {"beta_max", bundle.model_settings.beta_max},
           {"ddim_steps", bundle.model_settings.ddim_steps},
           {"omega", bundle.model_settings.omega},
           {"p_null", bundle.model_settings.p_null},
           {"inpainter_hidden", bundle.model_settings.inpainter_hidden},
           {"submodule_hidden", bundle.model_settings.submodule_hidden}}},
         {"has_stage1", bundle.has_stage1},
         {"has_cwm", bundle.has_cwm},
         {"has_inpainter", bundle.has_inpainter},
         {"has_nets", bundle.has_nets},
         {"training_metrics", bundle.training_metrics}};
  std::ofstream f(dir + "/bundle.json", std::ios::trunc);
  if (!f) throw std::runtime_error("bundle: cannot write " + dir);
  f << j.dump(2) << "\n";
  if (bundle.has_stage1) bundle.cwm_stage1.save(dir + "/cwm_stage1.cdn");
  if (bundle.has_cwm) bundle.cwm_model.save(dir + "/cwm.cdn");
  if (bundle.has_inpainter) bundle.inpainter.save(dir + "/inpainter.cdn");
  if (bundle.has_nets) {
    bundle.nets.proposer.save(dir + "/proposer.tnck");
    bundle.nets.intent.save(dir + "/intent.tnck");
    bundle.nets.evaluator.save(dir + "/evaluator.tnck");
  }
}

ModelBundle load_bundle(const std::string& dir) {
  std::ifstream f(dir + "/bundle.json");
  if (!f) throw std::runtime_error("bundle: cannot open " + dir);
  json j = json::parse(f);
  ModelBundle bundle;
  const auto& e = j.at("environment");
  bundle.env.variant = static_cast<gridworld::Variant>(e.at("variant").get<int>());
  bundle.env.n_agents = e.at("n_agents").get<int>();
  bundle.env.width = e.at("width").get<int>();
  bundle.env.height = e.at("height").get<int>();
  bundle.env.n_pieces = e.at("n_pieces").get<int>();
  bundle.env.horizon = e.at("horizon").get<int>();
  bundle.env.slots_per_agent = e.at("slots_per_agent").get<int>();
  bundle.env.n_shapes = e.at("n_shapes").get<int>();
  bundle.env.n_colors = e.at("n_colors").get<int>();
  const auto& m = j.at("model");
  bundle.model_settings.hidden = m.at("hidden").get<int>();
  bundle.model_settings.cond_embed = m.at("cond_embed").get<int>();
  bundle.model_settings.temb_dim = m.at("temb_dim").get<int>();
  bundle.model_settings.n_hidden = m.at("n_hidden").get<int>();
  bundle.model_settings.t_diff = m.at("t_diff").get<int>();
  bundle.model_settings.beta_min = m.at("beta_min").get<double>();
  bundle.model_settings.beta_max = m.at("beta_max").get<double>();
  bundle.model_settings.ddim_steps = m.at("ddim_steps").get<int>();
  bundle.model_settings.omega = m.at("omega").get<double>();
  bundle.model_settings.p_null = m.at("p_null").get<double>();
  bundle.model_settings.inpainter_hidden = m.at("inpainter_hidden").get<int>();
  bundle.model_settings.submodule_hidden = m.at("submodule_hidden").get<int>();
  bundle.layout = layout_for(bundle.env);
  bundle.table = planner::ActionTable::enumerate(bundle.env);
  bundle.sched = diffusion::linear_schedule(bundle.model_settings.t_diff,
                                            bundle.model_settings.beta_min,
                                            bundle.model_settings.beta_max);
  bundle.has_stage1 = j.at("has_stage1").get<bool>();
  bundle.has_cwm = j.at("has_cwm").get<bool>();
  bundle.has_inpainter = j.at("has_inpainter").get<bool>();
  bundle.has_nets = j.at("has_nets").get<bool>();
  bundle.training_metrics = j.value("training_metrics", json::object());
  if (bundle.has_stage1) bundle.cwm_stage1 = diffusion::DenoiserModel::load(dir + "/cwm_stage1.cdn");
  if (bundle.has_cwm) bundle.cwm_model = diffusion::DenoiserModel::load(dir + "/cwm.cdn");
  if (bundle.has_inpainter)
    bundle.inpainter = diffusion::DenoiserModel::load(dir + "/inpainter.cdn");
  if (bundle.has_nets) {
    bundle.nets.proposer = nn::Network::load(dir + "/proposer.tnck");
    bundle.nets.intent = nn::Network::load(dir + "/intent.tnck");
    bundle.nets.evaluator = nn::Network::load(dir + "/evaluator.tnck");
  }
  return bundle;
}

// --- evaluation protocol ----------------------------------------------------------

namespace {

EpisodeOutcome run_episode(const ModelBundle& bundle, const EvalProtocol& proto,
                           std::uint64_t env_seed, std::uint64_t controller_seed) {
  gridworld::EpisodeConfig env = bundle.env;
  env.seed = env_seed;
  env.horizon = proto.horizon;
  GridState s = gridworld::new_game(env);

  planner::ControllerModules mods;
  mods.proposer = proto.proposer;
  mods.intent = proto.intent;
  mods.evaluator = proto.evaluator;
  mods.learned_world_model = proto.learned_world_model;
  mods.learned_perception = proto.learned_perception;
  mods.nets = bundle.has_nets ? &bundle.nets : nullptr;
  mods.cwm_model = bundle.has_cwm ? &bundle.cwm_model : nullptr;
  mods.inpainter = bundle.has_inpainter ? &bundle.inpainter : nullptr;
  mods.oracle_kinds.assign(env.n_agents, proto.kind);
  mods.intents_all_wait = proto.intents_all_wait;
  if (proto.learned_world_model && !mods.cwm_model)
    throw std::runtime_error("protocol: learned world model requested but bundle has none");
  if (proto.learned_perception && !mods.inpainter)
    throw std::runtime_error("protocol: learned perception requested but bundle has none");

  planner::Controller controller(0, s, bundle.layout, bundle.table, proto.planner_cfg,
                                 bundle.sample_config(), &bundle.sched, mods, proto.horizon,
                                 controller_seed);
  EpisodeOutcome outcome;
  outcome.seed = env_seed;
  std::mt19937_64 coop_rng(env_seed + 1);
  int t = 0;
  for (; t < proto.horizon && !gridworld::is_success(s); ++t) {
    JointAction joint(env.n_agents, gridworld::wait_action());
    joint[0] = controller.act(gridworld::observe(s, 0), &s);
    for (int a = 1; a < env.n_agents; ++a)
      joint[a] = gridworld::cooperator_policy(proto.kind, s, a, coop_rng);
    // The environment rejects actions that are illegal in the true state
    // (the controller planned on an estimate).
    for (int a = 0; a < env.n_agents; ++a)
      if (!gridworld::is_legal(s, a, joint[a])) joint[a] = gridworld::wait_action();
    s = gridworld::step(s, joint);
  }
  outcome.success = gridworld::is_success(s);
  outcome.steps = outcome.success ? t : proto.horizon;
  outcome.guard_fires = controller.guard_fires_total();
  return outcome;
}

}  // namespace

MetricsReport run_protocol(const ModelBundle& bundle, const EvalProtocol& proto) {
  MetricsReport report;
  report.episodes.resize(proto.episodes);
  int threads = std::max(1, proto.threads);
  std::vector<std::thread> pool;
  std::atomic<int> next{0};
  auto worker = [&]() {
    while (true) {
      int i = next.fetch_add(1);
      if (i >= proto.episodes) break;
      report.episodes[i] = run_episode(bundle, proto, proto.seed_base + i,
                                       proto.seed_base * 31 + i * 7 + 1);
    }
  };
  for (int w = 0; w < threads; ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  report.finalize();
  return report;
}

}  // namespace combo::harness
