#include "combo/diffusion.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace combo::diffusion {

using nn::Workspace;

NoiseSchedule linear_schedule(int T, double beta_min, double beta_max) {
  if (T < 1) throw std::invalid_argument("schedule: T must be >= 1");
  if (!(0.0 < beta_min && beta_min <= beta_max && beta_max < 1.0))
    throw std::invalid_argument("schedule: need 0 < beta_min <= beta_max < 1");
  NoiseSchedule s;
  s.T = T;
  s.betas.resize(T);
  s.alphas.resize(T);
  s.alpha_bars.resize(T);
  s.sigmas.resize(T);
  double ab = 1.0;
  for (int i = 0; i < T; ++i) {
    double frac = T == 1 ? 0.0 : static_cast<double>(i) / (T - 1);
    s.betas[i] = beta_min + (beta_max - beta_min) * frac;
    s.alphas[i] = 1.0 - s.betas[i];
    double ab_prev = ab;
    ab *= s.alphas[i];
    s.alpha_bars[i] = ab;
    // DDPM posterior variance beta_tilde_t = (1-ab_{t-1})/(1-ab_t) * beta_t.
    s.sigmas[i] = std::sqrt((1.0 - ab_prev) / (1.0 - ab) * s.betas[i]);
  }
  return s;
}

Tensor forward_noise(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
  if (t < 1 || t > sched.T) throw std::invalid_argument("forward_noise: t out of range");
  if (!x0.same_shape(eps)) throw std::invalid_argument("forward_noise: shape mismatch");
  double a = std::sqrt(sched.alpha_bar(t));
  double b = std::sqrt(1.0 - sched.alpha_bar(t));
  Tensor out = x0;
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = a * x0.v[i] + b * eps.v[i];
  return out;
}

// Factored form of eps_u + sum_i omega*(eps_i - eps_u); with one condition
// and omega = 1 the unconditional coefficient is exactly zero, so the
// conditional prediction comes back bit-exact.
Tensor compose_noise(const Tensor& eps_uncond, const std::vector<Tensor>& eps_conds,
                     double omega) {
  if (eps_conds.empty())
    throw std::invalid_argument("compose_noise: needs at least one condition");
  if (!(omega > 0.0)) throw std::invalid_argument("compose_noise: omega must be positive");
  double coef_u = 1.0 - omega * static_cast<double>(eps_conds.size());
  Tensor out(eps_uncond.rows(), eps_uncond.cols());
  for (const Tensor& c : eps_conds) {
    if (!c.same_shape(eps_uncond)) throw std::invalid_argument("compose_noise: shape mismatch");
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += omega * c.v[i];
  }
  if (coef_u != 0.0)
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += coef_u * eps_uncond.v[i];
  return out;
}

GaussianFactor product_of_gaussians(const GaussianFactor& prior,
                                    const std::vector<GaussianFactor>& factors) {
  size_t dim = prior.mean.size();
  if (prior.var.size() != dim) throw std::invalid_argument("gaussian: mean/var size mismatch");
  GaussianFactor out;
  out.mean.resize(dim);
  out.var.resize(dim);
  for (size_t d = 0; d < dim; ++d) {
    if (!(prior.var[d] > 0.0)) throw std::invalid_argument("gaussian: non-positive variance");
    double lam_p = 1.0 / prior.var[d];
    double lam = lam_p;
    double num = lam_p * prior.mean[d];
    for (const auto& f : factors) {
      if (f.mean.size() != dim || f.var.size() != dim)
        throw std::invalid_argument("gaussian: factor dim mismatch");
      if (!(f.var[d] > 0.0)) throw std::invalid_argument("gaussian: non-positive variance");
      double lam_i = 1.0 / f.var[d];
      lam += lam_i - lam_p;
      num += lam_i * f.mean[d] - lam_p * prior.mean[d];
    }
    if (!(lam > 0.0)) throw std::runtime_error("product_of_gaussians: ill-posed composition");
    out.var[d] = 1.0 / lam;
    out.mean[d] = num / lam;
  }
  return out;
}

Tensor analytic_gaussian_eps(const GaussianFactor& factor, const NoiseSchedule& sched,
                             const Tensor& x_t, int t) {
  double ab = sched.alpha_bar(t);
  double sab = std::sqrt(ab);
  double somb = std::sqrt(1.0 - ab);
  int dim = x_t.cols();
  if (static_cast<int>(factor.mean.size()) != dim)
    throw std::invalid_argument("analytic eps: dim mismatch");
  Tensor out(x_t.rows(), dim);
  for (int r = 0; r < x_t.rows(); ++r)
    for (int d = 0; d < dim; ++d) {
      double denom = ab * factor.var[d] + (1.0 - ab);
      out.at(r, d) = somb * (x_t.at(r, d) - sab * factor.mean[d]) / denom;
    }
  return out;
}

namespace {

std::vector<int> ddim_timesteps(int T, int steps) {
  steps = std::min(steps, T);
  std::vector<int> taus;
  for (int j = 0; j < steps; ++j) {
    int t = static_cast<int>(std::llround(static_cast<double>(j + 1) * T / steps));
    t = std::max(1, std::min(T, t));
    if (taus.empty() || taus.back() != t) taus.push_back(t);
  }
  return taus;  // ascending, ends at T
}

}  // namespace

Tensor reverse_sample(const EpsProvider& eps_hat, const NoiseSchedule& sched, int batch,
                      int dim, const SampleConfig& cfg, std::mt19937_64& rng,
                      const StepHook& hook) {
  Tensor x(batch, dim);
  nn::fill_gaussian(x, rng);
  if (cfg.kind == SamplerKind::ddpm) {
    for (int t = sched.T; t >= 1; --t) {
      Tensor eps = eps_hat(x, t);
      double inv_sa = 1.0 / std::sqrt(sched.alpha(t));
      double coef = sched.beta(t) / std::sqrt(1.0 - sched.alpha_bar(t));
      for (size_t i = 0; i < x.v.size(); ++i) x.v[i] = inv_sa * (x.v[i] - coef * eps.v[i]);
      if (t > 1) {
        double sig = sched.sigma(t);
        for (double& v : x.v) v += sig * nn::gaussian(rng);
      }
      if (hook) hook(x, t - 1, rng);
    }
    return x;
  }
  // DDIM over a timestep subsequence; eta = 0 is fully deterministic.
  auto taus = ddim_timesteps(sched.T, cfg.ddim_steps);
  for (int k = static_cast<int>(taus.size()) - 1; k >= 0; --k) {
    int t = taus[k];
    int t_next = k > 0 ? taus[k - 1] : 0;
    Tensor eps = eps_hat(x, t);
    double ab = sched.alpha_bar(t);
    double ab_next = sched.alpha_bar(t_next);
    double sigma = 0.0;
    if (cfg.eta > 0.0 && t_next > 0)
      sigma = cfg.eta * std::sqrt((1.0 - ab_next) / (1.0 - ab) * (1.0 - ab / ab_next));
    double dir = std::sqrt(std::max(0.0, 1.0 - ab_next - sigma * sigma));
    for (size_t i = 0; i < x.v.size(); ++i) {
      double x0_hat = (x.v[i] - std::sqrt(1.0 - ab) * eps.v[i]) / std::sqrt(ab);
      x.v[i] = std::sqrt(ab_next) * x0_hat + dir * eps.v[i];
      if (sigma > 0.0) x.v[i] += sigma * nn::gaussian(rng);
    }
    if (hook) hook(x, t_next, rng);
  }
  return x;
}

// --- DenoiserModel -----------------------------------------------------------

namespace {

// Capped 1/sqrt(1-ab): keeps the eps parameterization finite at t=1.
double eps_gain(const NoiseSchedule& sched, int t) {
  return std::min(1.0 / std::sqrt(1.0 - sched.alpha_bar(t)), 50.0);
}

// Per-cell local feature width for the cellwise architecture:
// [x_t cell slice? | x0 cell slice | is_target | is_acting_hand].
int cellwise_local_dim(const DenoiserConfig& cfg) {
  return (cfg.trunk_xt ? cfg.channels : 0) + cfg.x0_channels + 2;
}

int cellwise_cond_dim(const DenoiserConfig& cfg) {
  return cfg.temb_dim + cfg.action_dim;
}

}  // namespace

DenoiserModel::DenoiserModel(const DenoiserConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.state_dim <= 0 || cfg.x0_dim <= 0)
    throw std::invalid_argument("denoiser: state dims must be positive");
  sched_ = linear_schedule(cfg.T, cfg.beta_min, cfg.beta_max);
  std::vector<int> hidden(cfg.n_hidden, cfg.hidden);
  nn::NetworkSpec spec;
  if (cfg.arch == DenoiserArch::cellwise) {
    if (cfg.cells <= 0 || cfg.channels <= 0 || cfg.x0_channels <= 0)
      throw std::invalid_argument("denoiser: cellwise needs cell geometry");
    if (cfg.cells * cfg.channels != cfg.state_dim ||
        cfg.cells * cfg.x0_channels != cfg.x0_dim)
      throw std::invalid_argument("denoiser: cellwise geometry mismatch");
    spec = nn::NetworkSpec::conditioned_mlp(cellwise_local_dim(cfg), cellwise_cond_dim(cfg),
                                            cfg.cond_embed, hidden, cfg.channels);
    spec.cond_group = cfg.cells;
  } else {
    // The action one-hots feed the trunk directly: piece/target addressing
    // is then one linear hop from the output layer.
    int trunk_in = (cfg.trunk_xt ? cfg.state_dim : 0) + cfg.x0_dim + cfg.action_dim;
    int cond_in = cfg.temb_dim + cfg.x0_dim + cfg.action_dim;
    spec = nn::NetworkSpec::conditioned_mlp(trunk_in, cond_in, cfg.cond_embed, hidden,
                                            cfg.state_dim);
    // In eps mode the trunk input starts with x_t, and the residual tap
    // carries the identity component a narrow hidden width cannot represent.
    spec.input_skip = !cfg.predict_x0 && cfg.trunk_xt;
  }
  net_ = nn::Network(spec, seed);
  if (cfg.predict_x0) {
    // Zero-init the output layer: the model starts as an exact copy of the
    // conditioning state and only has to learn the sparse action edit.
    auto params = net_.parameters();
    params[params.size() - 2]->fill(0.0);
    params[params.size() - 1]->fill(0.0);
  }
}

Tensor DenoiserModel::predict(const Tensor& x_t, const std::vector<int>& t, const Tensor& x0,
                              const Tensor& action, Workspace& ws) const {
  if (x_t.rows() != static_cast<int>(t.size()))
    throw std::invalid_argument("denoiser: t count mismatch");
  if (cfg_.action_dim > 0 && action.cols() != cfg_.action_dim)
    throw std::invalid_argument("denoiser: action dim mismatch");
  Tensor temb = nn::time_embedding(t, cfg_.temb_dim);
  Tensor out;
  if (cfg_.arch == DenoiserArch::cellwise) {
    int B = x_t.rows(), cells = cfg_.cells, C = cfg_.channels, Cf = cfg_.x0_channels;
    int local = cellwise_local_dim(cfg_);
    Tensor rows(B * cells, local);
    Tensor cond_rows(B, cellwise_cond_dim(cfg_));
    int board_cells = cfg_.target_block > 0 ? cfg_.target_block - 1 : 0;
    for (int r = 0; r < B; ++r) {
      // Action-derived cell flags: the place target, and the acting agent's
      // hand cell (pick/place move a piece through it).
      int target_cell = -1, hand_cell = -1;
      if (cfg_.action_dim > 0) {
        const double* act = action.row(r);
        int off_piece = cfg_.agent_block + 4;
        int off_target = off_piece + cfg_.piece_block;
        for (int k = 0; k < cfg_.target_block - 1; ++k)
          if (act[off_target + k] > 0.0) target_cell = k;
        for (int a = 0; a < cfg_.agent_block; ++a)
          if (act[a] > 0.0) hand_cell = board_cells + a;
      }
      for (int c = 0; c < cells; ++c) {
        double* dst = rows.row(r * cells + c);
        int off = 0;
        if (cfg_.trunk_xt) {
          std::memcpy(dst, x_t.row(r) + static_cast<size_t>(c) * C, sizeof(double) * C);
          off = C;
        }
        std::memcpy(dst + off, x0.row(r) + static_cast<size_t>(c) * Cf, sizeof(double) * Cf);
        dst[off + Cf] = c == target_cell ? 1.0 : -1.0;
        dst[off + Cf + 1] = c == hand_cell ? 1.0 : -1.0;
      }
      double* cnd = cond_rows.row(r);
      std::memcpy(cnd, temb.row(r), sizeof(double) * cfg_.temb_dim);
      if (cfg_.action_dim > 0)
        std::memcpy(cnd + cfg_.temb_dim, action.row(r), sizeof(double) * cfg_.action_dim);
    }
    Tensor cell_out = net_.forward(rows, cond_rows, ws);
    out = Tensor(B, cfg_.state_dim);
    for (int r = 0; r < B; ++r)
      for (int c = 0; c < cells; ++c)
        std::memcpy(out.row(r) + static_cast<size_t>(c) * C, cell_out.row(r * cells + c),
                    sizeof(double) * C);
  } else {
    Tensor trunk, cond;
    std::vector<const Tensor*> trunk_parts;
    if (cfg_.trunk_xt) trunk_parts.push_back(&x_t);
    trunk_parts.push_back(&x0);
    if (cfg_.action_dim > 0) {
      trunk_parts.push_back(&action);
      cond = nn::concat_cols({&temb, &x0, &action});
    } else {
      cond = nn::concat_cols({&temb, &x0});
    }
    trunk = nn::concat_cols(trunk_parts);
    out = net_.forward(trunk, cond, ws);
  }
  if (!cfg_.predict_x0) return out;
  // x0-parameterization: the network output is the clean-sample estimate (a
  // residual edit on the conditioning state when the widths match);
  // eps_hat = g_t * (x_t - sqrt(ab) * x0_hat).
  bool residual = cfg_.x0_dim == cfg_.state_dim;
  Tensor eps(out.rows(), out.cols());
  for (int r = 0; r < out.rows(); ++r) {
    double ab = sched_.alpha_bar(t[r]);
    double g = eps_gain(sched_, t[r]);
    double sab = std::sqrt(ab);
    for (int d = 0; d < out.cols(); ++d) {
      double x0_hat = out.at(r, d) + (residual ? x0.at(r, d) : 0.0);
      eps.at(r, d) = g * (x_t.at(r, d) - sab * x0_hat);
    }
  }
  return eps;
}

void DenoiserModel::backward(const Tensor& dLdeps, const std::vector<int>& t,
                             Workspace& ws) const {
  Tensor dout = dLdeps;
  if (cfg_.predict_x0) {
    for (int r = 0; r < dout.rows(); ++r) {
      double g = eps_gain(sched_, t[r]);
      double scale = -g * std::sqrt(sched_.alpha_bar(t[r]));
      for (int d = 0; d < dout.cols(); ++d) dout.at(r, d) *= scale;
    }
  }
  if (cfg_.arch == DenoiserArch::cellwise) {
    int B = dout.rows(), cells = cfg_.cells, C = cfg_.channels;
    Tensor cell_grad(B * cells, C);
    for (int r = 0; r < B; ++r)
      for (int c = 0; c < cells; ++c)
        std::memcpy(cell_grad.row(r * cells + c), dout.row(r) + static_cast<size_t>(c) * C,
                    sizeof(double) * C);
    net_.backward(cell_grad, ws);
    return;
  }
  net_.backward(dout, ws);
}

Tensor DenoiserModel::predict(const Tensor& x_t, const std::vector<int>& t, const Tensor& x0,
                              Workspace& ws) const {
  if (cfg_.action_dim > 0) {
    Tensor null_action(x_t.rows(), cfg_.action_dim);
    return predict(x_t, t, x0, null_action, ws);
  }
  return predict(x_t, t, x0, Tensor(), ws);
}

void DenoiserModel::save(const std::string& path) const {
  nlohmann::json j{{"state_dim", cfg_.state_dim}, {"x0_dim", cfg_.x0_dim},
                   {"action_dim", cfg_.action_dim}, {"temb_dim", cfg_.temb_dim},
                   {"hidden", cfg_.hidden},         {"n_hidden", cfg_.n_hidden},
                   {"cond_embed", cfg_.cond_embed}, {"T", cfg_.T},
                   {"beta_min", cfg_.beta_min},     {"beta_max", cfg_.beta_max},
                   {"predict_x0", cfg_.predict_x0}, {"arch", static_cast<int>(cfg_.arch)},
                   {"trunk_xt", cfg_.trunk_xt},
                   {"cells", cfg_.cells},           {"channels", cfg_.channels},
                   {"x0_channels", cfg_.x0_channels}, {"agent_block", cfg_.agent_block},
                   {"piece_block", cfg_.piece_block}, {"target_block", cfg_.target_block}};
  std::string head = j.dump();
  auto body = net_.serialize();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("denoiser save: cannot open " + path);
  std::uint32_t len = static_cast<std::uint32_t>(head.size());
  f.write("CDN1", 4);
  f.write(reinterpret_cast<const char*>(&len), 4);
  f.write(head.data(), len);
  f.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
}

DenoiserModel DenoiserModel::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("denoiser load: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "CDN1", 4) != 0)
    throw std::runtime_error("denoiser load: bad magic");
  std::uint32_t len = 0;
  f.read(reinterpret_cast<char*>(&len), 4);
  std::string head(len, '\0');
  f.read(head.data(), len);
  if (!f) throw std::runtime_error("denoiser load: truncated header");
  auto j = nlohmann::json::parse(head);
  DenoiserModel m;
  m.cfg_.state_dim = j.at("state_dim").get<int>();
  m.cfg_.x0_dim = j.at("x0_dim").get<int>();
  m.cfg_.action_dim = j.at("action_dim").get<int>();
  m.cfg_.temb_dim = j.at("temb_dim").get<int>();
  m.cfg_.hidden = j.at("hidden").get<int>();
  m.cfg_.n_hidden = j.at("n_hidden").get<int>();
  m.cfg_.cond_embed = j.at("cond_embed").get<int>();
  m.cfg_.T = j.at("T").get<int>();
  m.cfg_.beta_min = j.value("beta_min", 1e-4);
  m.cfg_.beta_max = j.value("beta_max", 0.2);
  m.cfg_.predict_x0 = j.value("predict_x0", false);
  m.cfg_.arch = static_cast<DenoiserArch>(j.value("arch", 0));
  m.cfg_.trunk_xt = j.value("trunk_xt", true);
  m.cfg_.cells = j.value("cells", 0);
  m.cfg_.channels = j.value("channels", 0);
  m.cfg_.x0_channels = j.value("x0_channels", 0);
  m.cfg_.agent_block = j.value("agent_block", 0);
  m.cfg_.piece_block = j.value("piece_block", 0);
  m.cfg_.target_block = j.value("target_block", 0);
  m.sched_ = linear_schedule(m.cfg_.T, m.cfg_.beta_min, m.cfg_.beta_max);
  std::vector<std::uint8_t> body((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  m.net_ = nn::Network::deserialize(body);
  return m;
}

// --- losses ------------------------------------------------------------------

LossScaleMatrix LossScaleMatrix::uniform(int n_agents, int n_cells, double value) {
  LossScaleMatrix m;
  m.n_agents = n_agents;
  m.n_cells = n_cells;
  m.w.assign(static_cast<size_t>(n_agents) * n_cells, value);
  return m;
}

void LossScaleMatrix::validate() const {
  if (w.size() != static_cast<size_t>(n_agents) * n_cells)
    throw std::invalid_argument("loss scale: size mismatch");
  for (double x : w)
    if (!(x > 0.0)) throw std::invalid_argument("loss scale: entries must be positive");
}

double weighted_mse(const Tensor& pred, const Tensor& eps, const std::vector<double>& row_cell_w,
                    int channels, Tensor* dpred) {
  if (!pred.same_shape(eps)) throw std::invalid_argument("weighted_mse: shape mismatch");
  int B = pred.rows(), D = pred.cols();
  int n_cells = D / channels;
  if (n_cells * channels != D) throw std::invalid_argument("weighted_mse: channel mismatch");
  if (row_cell_w.size() != static_cast<size_t>(B) * n_cells)
    throw std::invalid_argument("weighted_mse: weight size mismatch");
  double denom = static_cast<double>(B) * D;
  double loss = 0.0;
  if (dpred) *dpred = Tensor(B, D);
  for (int r = 0; r < B; ++r)
    for (int d = 0; d < D; ++d) {
      double w = row_cell_w[static_cast<size_t>(r) * n_cells + d / channels];
      double diff = pred.at(r, d) - eps.at(r, d);
      loss += w * diff * diff;
      if (dpred) dpred->at(r, d) = 2.0 * w * diff / denom;
    }
  return loss / denom;
}

double loss_single(const DenoiserModel& model, const SingleBatch& batch,
                   const LossScaleMatrix& C, const NoiseSchedule& sched, double p_null,
                   std::mt19937_64& rng, Workspace& ws, LossDebug* debug) {
  int B = batch.target.rows();
  if (B == 0) throw std::invalid_argument("loss_single: empty batch");
  C.validate();
  int D = batch.target.cols();
  int channels = D / C.n_cells;
  std::vector<int> t(B);
  Tensor eps(B, D);
  for (int r = 0; r < B; ++r) t[r] = 1 + static_cast<int>(rng() % sched.T);
  nn::fill_gaussian(eps, rng);
  Tensor x_t(B, D);
  for (int r = 0; r < B; ++r) {
    double a = std::sqrt(sched.alpha_bar(t[r]));
    double b = std::sqrt(1.0 - sched.alpha_bar(t[r]));
    for (int d = 0; d < D; ++d)
      x_t.at(r, d) = a * batch.target.at(r, d) + b * eps.at(r, d);
  }
  Tensor action = batch.cond_action;
  for (int r = 0; r < B; ++r)
    if (nn::uniform01(rng) < p_null)
      for (int c = 0; c < action.cols(); ++c) action.at(r, c) = 0.0;

  Tensor pred = model.predict(x_t, t, batch.cond_state, action, ws);
  std::vector<double> w(static_cast<size_t>(B) * C.n_cells);
  for (int r = 0; r < B; ++r)
    for (int c = 0; c < C.n_cells; ++c)
      w[static_cast<size_t>(r) * C.n_cells + c] = C.at(batch.agent[r], c);
  Tensor dpred;
  double loss = weighted_mse(pred, eps, w, channels, &dpred);
  model.backward(dpred, t, ws);
  if (debug) {
    debug->t = t;
    debug->eps = eps;
    debug->x_t = x_t;
    debug->pred = pred;
  }
  return loss;
}

double loss_composed(const DenoiserModel& model, const ComposedBatch& batch,
                     const NoiseSchedule& sched, std::mt19937_64& rng, Workspace& ws,
                     LossDebug* debug) {
  int n = static_cast<int>(batch.cond_actions.size());
  if (n < 2) throw std::invalid_argument("loss_composed: need >= 2 agent conditions");
  int B = batch.target.rows();
  if (B == 0) throw std::invalid_argument("loss_composed: empty batch");
  int D = batch.target.cols();
  std::vector<int> t(B);
  Tensor eps(B, D);
  for (int r = 0; r < B; ++r) t[r] = 1 + static_cast<int>(rng() % sched.T);
  nn::fill_gaussian(eps, rng);
  Tensor x_t(B, D);
  for (int r = 0; r < B; ++r) {
    double a = std::sqrt(sched.alpha_bar(t[r]));
    double b = std::sqrt(1.0 - sched.alpha_bar(t[r]));
    for (int d = 0; d < D; ++d)
      x_t.at(r, d) = a * batch.target.at(r, d) + b * eps.at(r, d);
  }

  // One forward over n stacked replicas, one condition block per agent.
  int Da = batch.cond_actions[0].cols();
  Tensor x_rep(n * B, D), x0_rep(n * B, batch.cond_state.cols()), act_rep(n * B, Da);
  std::vector<int> t_rep(static_cast<size_t>(n) * B);
  for (int i = 0; i < n; ++i)
    for (int r = 0; r < B; ++r) {
      int rr = i * B + r;
      std::memcpy(x_rep.row(rr), x_t.row(r), sizeof(double) * D);
      std::memcpy(x0_rep.row(rr), batch.cond_state.row(r),
                  sizeof(double) * batch.cond_state.cols());
      std::memcpy(act_rep.row(rr), batch.cond_actions[i].row(r), sizeof(double) * Da);
      t_rep[rr] = t[r];
    }
  Tensor preds = model.predict(x_rep, t_rep, x0_rep, act_rep, ws);

  Tensor mean(B, D);
  for (int i = 0; i < n; ++i)
    for (int r = 0; r < B; ++r)
      for (int d = 0; d < D; ++d) mean.at(r, d) += preds.at(i * B + r, d) / n;

  double denom = static_cast<double>(B) * D;
  double loss = 0.0;
  Tensor dpred(n * B, D);
  for (int r = 0; r < B; ++r)
    for (int d = 0; d < D; ++d) {
      double diff = mean.at(r, d) - eps.at(r, d);
      loss += diff * diff;
      double g = 2.0 * diff / (denom * n);
      for (int i = 0; i < n; ++i) dpred.at(i * B + r, d) = g;
    }
  model.backward(dpred, t_rep, ws);
  if (debug) {
    debug->t = t;
    debug->eps = eps;
    debug->x_t = x_t;
    debug->branch_preds.clear();
    for (int i = 0; i < n; ++i) {
      Tensor bp(B, D);
      for (int r = 0; r < B; ++r)
        std::memcpy(bp.row(r), preds.row(i * B + r), sizeof(double) * D);
      debug->branch_preds.push_back(std::move(bp));
    }
  }
  return loss / denom;
}

}  // namespace combo::diffusion
