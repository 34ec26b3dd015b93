#pragma once

#include <functional>

#include "combo/diffusion.hpp"
#include "combo/encoding.hpp"

namespace combo::cwm {

/// Symbolic transition; encodings are built on the fly during training.
struct TransitionSample {
  gridworld::GridState s;
  gridworld::JointAction a;
  gridworld::GridState s_next;
  std::vector<int> acting;  // agents whose action is not wait
};

struct CwmTrainConfig {
  int epochs = 4;
  int batch_size = 64;
  double lr = 1e-3;
  double p_null = 0.1;
  bool adls = true;
  double adls_weight = 2.0;
  int max_samples = 0;  // 0 = use everything
  std::uint64_t seed = 0;
};

/// ADLS coefficients for this environment: adls_weight on each agent's
/// reachable cells plus its hand cell, 1.0 elsewhere. Rows for agent slots
/// beyond the live agents stay uniform.
diffusion::LossScaleMatrix adls_matrix(const gridworld::GridState& reference,
                                       const EncodingLayout& layout, double weight);

using TrainLog = std::function<void(int epoch, double mean_loss)>;

/// Stage one: single-agent conditioned denoising with ADLS and null-condition
/// dropout. `data` must hold transitions where exactly one agent acts.
diffusion::DenoiserModel train_stage1(const std::vector<TransitionSample>& data,
                                      const EncodingLayout& layout,
                                      const diffusion::DenoiserConfig& model_cfg,
                                      const diffusion::NoiseSchedule& sched,
                                      const CwmTrainConfig& cfg, const TrainLog& log = nullptr);

/// Stage two: fine-tune with the composed score loss on joint transitions
/// with two or more acting agents.
void train_stage2(diffusion::DenoiserModel& model, const std::vector<TransitionSample>& data,
                  const EncodingLayout& layout, const diffusion::NoiseSchedule& sched,
                  const CwmTrainConfig& cfg, const TrainLog& log = nullptr);

struct PredictResult {
  gridworld::GridState state;
  bool valid = true;
  nn::Tensor raw;
};

/// Compose-sample the next state for one (state, joint action) query.
PredictResult predict_next(const diffusion::DenoiserModel& model, const EncodingLayout& layout,
                           const gridworld::GridState& s, const gridworld::JointAction& a,
                           const diffusion::NoiseSchedule& sched,
                           const diffusion::SampleConfig& cfg, std::mt19937_64& rng);

/// Batched variant: one stacked network forward per reverse step across all
/// candidates; the planner's beam x proposal expansion runs through this.
std::vector<PredictResult> predict_next_batch(
    const diffusion::DenoiserModel& model, const EncodingLayout& layout,
    const std::vector<const gridworld::GridState*>& states,
    const std::vector<const gridworld::JointAction*>& actions,
    const diffusion::NoiseSchedule& sched, const diffusion::SampleConfig& cfg,
    std::mt19937_64& rng);

/// Action-unconditional sample (null action branch, still conditioned on x0).
PredictResult predict_unconditional(const diffusion::DenoiserModel& model,
                                    const EncodingLayout& layout, const gridworld::GridState& s,
                                    const diffusion::NoiseSchedule& sched,
                                    const diffusion::SampleConfig& cfg, std::mt19937_64& rng);

/// Decoded exact-match accuracy of predictions against the recorded
/// simulator next states.
double eval_exact_match(const diffusion::DenoiserModel& model, const EncodingLayout& layout,
                        const std::vector<TransitionSample>& samples,
                        const diffusion::NoiseSchedule& sched,
                        const diffusion::SampleConfig& cfg, std::uint64_t seed,
                        int batch_size = 16);

diffusion::DenoiserConfig default_denoiser_config(const EncodingLayout& layout, int hidden,
                                                  int T);

}  // namespace combo::cwm
