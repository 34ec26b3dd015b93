#pragma once

#include <functional>
#include <string>
#include <vector>

#include "combo/tinynet.hpp"

namespace combo::diffusion {

using nn::Tensor;

struct NoiseSchedule {
  int T = 0;
  std::vector<double> betas;       // beta_t, index t-1
  std::vector<double> alphas;      // 1 - beta_t
  std::vector<double> alpha_bars;  // cumulative products
  std::vector<double> sigmas;      // ddpm posterior std, index t-1

  double beta(int t) const { return betas[t - 1]; }
  double alpha(int t) const { return alphas[t - 1]; }
  double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bars[t - 1]; }
  double sigma(int t) const { return sigmas[t - 1]; }
};

NoiseSchedule linear_schedule(int T, double beta_min, double beta_max);

/// sqrt(ab_t) * x0 + sqrt(1 - ab_t) * eps
Tensor forward_noise(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched);

/// eps_uncond + sum_i omega * (eps_conds[i] - eps_uncond)
Tensor compose_noise(const Tensor& eps_uncond, const std::vector<Tensor>& eps_conds,
                     double omega);

struct GaussianFactor {
  std::vector<double> mean;
  std::vector<double> var;
};

/// Closed-form product of the prior with per-condition likelihood ratios:
/// precision_res = L_prior + sum_i (L_i - L_prior), mean precision-weighted.
GaussianFactor product_of_gaussians(const GaussianFactor& prior,
                                    const std::vector<GaussianFactor>& factors);

/// Exact noise prediction for data drawn from a diagonal Gaussian.
Tensor analytic_gaussian_eps(const GaussianFactor& factor, const NoiseSchedule& sched,
                             const Tensor& x_t, int t);

enum class SamplerKind : int { ddpm = 0, ddim = 1 };

struct SampleConfig {
  SamplerKind kind = SamplerKind::ddim;
  int ddim_steps = 25;
  double omega = 5.0;
  double eta = 0.0;  // ddim stochasticity; 0 = deterministic
};

/// Composed noise estimate at (x_t, t); the caller bakes conditioning and
/// guidance into the closure.
using EpsProvider = std::function<Tensor(const Tensor& x_t, int t)>;

/// Called after every reverse step with the current sample and the time level
/// it now lives at (0 after the final step).
using StepHook = std::function<void(Tensor& x, int t_level, std::mt19937_64& rng)>;

Tensor reverse_sample(const EpsProvider& eps_hat, const NoiseSchedule& sched, int batch,
                      int dim, const SampleConfig& cfg, std::mt19937_64& rng,
                      const StepHook& hook = nullptr);

// --- learned denoiser -------------------------------------------------------

enum class DenoiserArch : int { flat = 0, cellwise = 1 };

struct DenoiserConfig {
  int state_dim = 0;   // dimension of the sample being denoised
  int x0_dim = 0;      // conditioning state encoding width
  int action_dim = 0;  // 0 for models without an action condition
  int temb_dim = 32;
  int hidden = 256;
  int n_hidden = 2;
  int cond_embed = 128;
  int T = 100;
  double beta_min = 1e-4;
  double beta_max = 0.2;
  /// Predict the clean sample and derive eps analytically. When the
  /// conditioning state has the same width as the sample, the trunk output
  /// is a residual edit on it. The training loss stays the plain noise MSE.
  bool predict_x0 = true;
  /// cellwise: one shared network maps each cell's local slice (plus a few
  /// action-derived flags) to that cell's channels; equivalent to a 1x1
  /// convolution over the grid. Needs the slicing geometry below.
  DenoiserArch arch = DenoiserArch::flat;
  /// Feed the noisy sample slice to the trunk. For deterministic symbolic
  /// transitions the low-noise slices leak the answer and the net never
  /// learns the action edit, so the world model turns this off; x_t still
  /// shapes eps_hat through the parameterization.
  bool trunk_xt = true;
  int cells = 0;          // board cells + hand cells
  int channels = 0;       // state channels per cell
  int x0_channels = 0;    // conditioning channels per cell
  int agent_block = 0;    // action layout: agent one-hot width
  int piece_block = 0;    // piece one-hot width (incl. none)
  int target_block = 0;   // target one-hot width (incl. none)
};

/// Conditioned MLP noise predictor. The trunk sees [x_t | x0]; every hidden
/// layer is modulated by a feature-wise scale-shift computed from
/// [time embedding | x0 | action]. A null (all-zero) action block is the
/// classifier-free unconditional branch; x0 conditioning is always kept.
class DenoiserModel {
 public:
  DenoiserModel() = default;
  DenoiserModel(const DenoiserConfig& cfg, std::uint64_t seed);

  const DenoiserConfig& config() const { return cfg_; }
  nn::Network& net() { return net_; }
  const nn::Network& net() const { return net_; }

  Tensor predict(const Tensor& x_t, const std::vector<int>& t, const Tensor& x0,
                 const Tensor& action, nn::Workspace& ws) const;
  Tensor predict(const Tensor& x_t, const std::vector<int>& t, const Tensor& x0,
                 nn::Workspace& ws) const;

  /// Reverse pass through the eps parameterization; `t` must repeat the
  /// values given to the matching predict call.
  void backward(const Tensor& dLdeps, const std::vector<int>& t, nn::Workspace& ws) const;

  void save(const std::string& path) const;
  static DenoiserModel load(const std::string& path);

 private:
  DenoiserConfig cfg_;
  NoiseSchedule sched_;
  nn::Network net_;
};

// --- training losses --------------------------------------------------------

/// Per-agent, per-cell loss coefficients, broadcast over channels.
struct LossScaleMatrix {
  int n_agents = 0;
  int n_cells = 0;
  std::vector<double> w;  // n_agents * n_cells, strictly positive

  static LossScaleMatrix uniform(int n_agents, int n_cells, double value = 1.0);
  double at(int agent, int cell) const { return w[static_cast<size_t>(agent) * n_cells + cell]; }
  void validate() const;
};

struct SingleBatch {
  Tensor target;      // [B x state_dim] clean future-state encodings
  Tensor cond_state;  // [B x x0_dim]
  Tensor cond_action; // [B x action_dim]
  std::vector<int> agent;  // acting agent per row
};

struct ComposedBatch {
  Tensor target;
  Tensor cond_state;
  std::vector<Tensor> cond_actions;  // one [B x action_dim] block per agent
};

/// Weighted elementwise MSE used by both losses; exposed for algebraic tests.
double weighted_mse(const Tensor& pred, const Tensor& eps, const std::vector<double>& row_cell_w,
                    int channels, Tensor* dpred);

/// Internals exposed for oracle recomputation in tests.
struct LossDebug {
  std::vector<int> t;
  Tensor eps;
  Tensor x_t;
  Tensor pred;                       // single loss
  std::vector<Tensor> branch_preds;  // composed loss, one per agent
};

/// Stage-one denoising loss with agent-dependent scaling and classifier-free
/// condition dropout. Accumulates gradients into ws; returns the loss.
double loss_single(const DenoiserModel& model, const SingleBatch& batch,
                   const LossScaleMatrix& C, const NoiseSchedule& sched, double p_null,
                   std::mt19937_64& rng, nn::Workspace& ws, LossDebug* debug = nullptr);

/// Stage-two composed loss: || mean_i eps_theta(X_t,t|x0,a_i) - eps ||^2.
double loss_composed(const DenoiserModel& model, const ComposedBatch& batch,
                     const NoiseSchedule& sched, std::mt19937_64& rng, nn::Workspace& ws,
                     LossDebug* debug = nullptr);

}  // namespace combo::diffusion
