#include "combo/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace combo::harness {

using nlohmann::json;

namespace {

json env_to_json(const gridworld::EpisodeConfig& e) {
  return json{{"variant", e.variant == gridworld::Variant::game ? "game" : "cook"},
              {"n_agents", e.n_agents},
              {"width", e.width},
              {"height", e.height},
              {"n_pieces", e.n_pieces},
              {"horizon", e.horizon},
              {"seed", e.seed},
              {"slots_per_agent", e.slots_per_agent},
              {"n_shapes", e.n_shapes},
              {"n_colors", e.n_colors}};
}

gridworld::EpisodeConfig env_from_json(const json& j) {
  gridworld::EpisodeConfig e;
  std::string variant = j.value("variant", "game");
  if (variant != "game" && variant != "cook")
    throw std::invalid_argument("config: variant must be game or cook");
  e.variant = variant == "game" ? gridworld::Variant::game : gridworld::Variant::cook;
  e.n_agents = j.value("n_agents", e.n_agents);
  e.width = j.value("width", e.width);
  e.height = j.value("height", e.height);
  e.n_pieces = j.value("n_pieces", e.n_pieces);
  e.horizon = j.value("horizon", e.horizon);
  e.seed = j.value("seed", e.seed);
  e.slots_per_agent = j.value("slots_per_agent", e.slots_per_agent);
  e.n_shapes = j.value("n_shapes", e.n_shapes);
  e.n_colors = j.value("n_colors", e.n_colors);
  return e;
}

}  // namespace

ExperimentConfig default_config() {
  ExperimentConfig cfg;
  cfg.environment.variant = gridworld::Variant::game;
  cfg.environment.n_agents = 4;
  cfg.environment.n_pieces = 8;
  return cfg;
}

std::string config_to_json_string(const ExperimentConfig& cfg) {
  json j;
  j["environment"] = env_to_json(cfg.environment);
  j["model"] = {{"hidden", cfg.model.hidden},
                {"cond_embed", cfg.model.cond_embed},
                {"temb_dim", cfg.model.temb_dim},
                {"n_hidden", cfg.model.n_hidden},
                {"t_diff", cfg.model.t_diff},
                {"beta_min", cfg.model.beta_min},
                {"beta_max", cfg.model.beta_max},
                {"ddim_steps", cfg.model.ddim_steps},
                {"omega", cfg.model.omega},
                {"p_null", cfg.model.p_null},
                {"inpainter_hidden", cfg.model.inpainter_hidden},
                {"submodule_hidden", cfg.model.submodule_hidden}};
  j["training"] = {{"lr", cfg.training.lr},
                   {"beta1", cfg.training.beta1},
                   {"beta2", cfg.training.beta2},
                   {"batch_size", cfg.training.batch_size},
                   {"stage1_epochs", cfg.training.stage1_epochs},
                   {"stage2_epochs", cfg.training.stage2_epochs},
                   {"inpainter_epochs", cfg.training.inpainter_epochs},
                   {"proposer_epochs", cfg.training.proposer_epochs},
                   {"intent_epochs", cfg.training.intent_epochs},
                   {"evaluator_epochs", cfg.training.evaluator_epochs},
                   {"max_single_samples", cfg.training.max_single_samples},
                   {"max_multi_samples", cfg.training.max_multi_samples},
                   {"max_inpainter_samples", cfg.training.max_inpainter_samples},
                   {"max_submodule_samples", cfg.training.max_submodule_samples},
                   {"adls", cfg.training.adls},
                   {"adls_weight", cfg.training.adls_weight}};
  j["planner"] = {{"proposals", cfg.planner.proposals},
                  {"beams", cfg.planner.beams},
                  {"depth", cfg.planner.depth},
                  {"intent_history", cfg.planner.intent_history},
                  {"guard_tau", cfg.planner.guard_tau}};
  j["collect"] = {{"episodes", cfg.collect.episodes}, {"epsilon", cfg.collect.epsilon}};
  j["evaluation"] = {{"episodes", cfg.evaluation.episodes},
                     {"horizon", cfg.evaluation.horizon}};
  j["seed"] = cfg.seed;
  return j.dump(2);
}

ExperimentConfig config_from_json_string(const std::string& text) {
  json j = json::parse(text);
  ExperimentConfig cfg = default_config();
  if (j.contains("environment")) cfg.environment = env_from_json(j["environment"]);
  if (j.contains("model")) {
    const auto& m = j["model"];
    cfg.model.hidden = m.value("hidden", cfg.model.hidden);
    cfg.model.cond_embed = m.value("cond_embed", cfg.model.cond_embed);
    cfg.model.temb_dim = m.value("temb_dim", cfg.model.temb_dim);
    cfg.model.n_hidden = m.value("n_hidden", cfg.model.n_hidden);
    cfg.model.t_diff = m.value("t_diff", cfg.model.t_diff);
    cfg.model.beta_min = m.value("beta_min", cfg.model.beta_min);
    cfg.model.beta_max = m.value("beta_max", cfg.model.beta_max);
    cfg.model.ddim_steps = m.value("ddim_steps", cfg.model.ddim_steps);
    cfg.model.omega = m.value("omega", cfg.model.omega);
    cfg.model.p_null = m.value("p_null", cfg.model.p_null);
    cfg.model.inpainter_hidden = m.value("inpainter_hidden", cfg.model.inpainter_hidden);
    cfg.model.submodule_hidden = m.value("submodule_hidden", cfg.model.submodule_hidden);
  }
  if (j.contains("training")) {
    const auto& t = j["training"];
    cfg.training.lr = t.value("lr", cfg.training.lr);
    cfg.training.beta1 = t.value("beta1", cfg.training.beta1);
    cfg.training.beta2 = t.value("beta2", cfg.training.beta2);
    cfg.training.batch_size = t.value("batch_size", cfg.training.batch_size);
    cfg.training.stage1_epochs = t.value("stage1_epochs", cfg.training.stage1_epochs);
    cfg.training.stage2_epochs = t.value("stage2_epochs", cfg.training.stage2_epochs);
    cfg.training.inpainter_epochs = t.value("inpainter_epochs", cfg.training.inpainter_epochs);
    cfg.training.proposer_epochs = t.value("proposer_epochs", cfg.training.proposer_epochs);
    cfg.training.intent_epochs = t.value("intent_epochs", cfg.training.intent_epochs);
    cfg.training.evaluator_epochs = t.value("evaluator_epochs", cfg.training.evaluator_epochs);
    cfg.training.max_single_samples = t.value("max_single_samples", cfg.training.max_single_samples);
    cfg.training.max_multi_samples = t.value("max_multi_samples", cfg.training.max_multi_samples);
    cfg.training.max_inpainter_samples =
        t.value("max_inpainter_samples", cfg.training.max_inpainter_samples);
    cfg.training.max_submodule_samples =
        t.value("max_submodule_samples", cfg.training.max_submodule_samples);
    cfg.training.adls = t.value("adls", cfg.training.adls);
    cfg.training.adls_weight = t.value("adls_weight", cfg.training.adls_weight);
  }
  if (j.contains("planner")) {
    const auto& p = j["planner"];
    cfg.planner.proposals = p.value("proposals", cfg.planner.proposals);
    cfg.planner.beams = p.value("beams", cfg.planner.beams);
    cfg.planner.depth = p.value("depth", cfg.planner.depth);
    cfg.planner.intent_history = p.value("intent_history", cfg.planner.intent_history);
    cfg.planner.guard_tau = p.value("guard_tau", cfg.planner.guard_tau);
  }
  if (j.contains("collect")) {
    cfg.collect.episodes = j["collect"].value("episodes", cfg.collect.episodes);
    cfg.collect.epsilon = j["collect"].value("epsilon", cfg.collect.epsilon);
  }
  if (j.contains("evaluation")) {
    cfg.evaluation.episodes = j["evaluation"].value("episodes", cfg.evaluation.episodes);
    cfg.evaluation.horizon = j["evaluation"].value("horizon", cfg.evaluation.horizon);
  }
  cfg.seed = j.value("seed", cfg.seed);
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return config_from_json_string(ss.str());
}

void save_config(const ExperimentConfig& cfg, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("config: cannot write " + path);
  f << config_to_json_string(cfg) << "\n";
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("override must be section.key=value: " + assignment);
  std::string key = assignment.substr(0, eq);
  std::string value = assignment.substr(eq + 1);
  // Route through the JSON form so every key accepts exactly the same values
  // as the config file.
  json j = json::parse(config_to_json_string(cfg));
  auto dot = key.find('.');
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::parse_error&) {
    parsed = value;  // bare strings (e.g. variant=cook)
  }
  if (dot == std::string::npos) {
    if (!j.contains(key)) throw std::invalid_argument("unknown config key: " + key);
    j[key] = parsed;
  } else {
    std::string section = key.substr(0, dot);
    std::string leaf = key.substr(dot + 1);
    if (!j.contains(section) || !j[section].contains(leaf))
      throw std::invalid_argument("unknown config key: " + key);
    j[section][leaf] = parsed;
  }
  cfg = config_from_json_string(j.dump());
}

}  // namespace combo::harness
