#include "combo/cwm.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

namespace combo::cwm {

using diffusion::DenoiserConfig;
using diffusion::DenoiserModel;
using diffusion::NoiseSchedule;
using diffusion::SampleConfig;
using gridworld::GridState;
using gridworld::JointAction;
using nn::Tensor;
using nn::Workspace;

diffusion::LossScaleMatrix adls_matrix(const GridState& reference, const EncodingLayout& layout,
                                       double weight) {
  auto m = diffusion::LossScaleMatrix::uniform(layout.n_agents_max, layout.cells(), 1.0);
  for (int a = 0; a < reference.n_agents; ++a) {
    for (int c : reference.regions[a]) m.w[static_cast<size_t>(a) * layout.cells() + c] = weight;
    m.w[static_cast<size_t>(a) * layout.cells() + layout.hand_cell(a)] = weight;
  }
  return m;
}

DenoiserConfig default_denoiser_config(const EncodingLayout& layout, int hidden, int T) {
  DenoiserConfig cfg;
  cfg.state_dim = layout.state_dim();
  cfg.x0_dim = layout.state_dim();
  cfg.action_dim = layout.cond_dim();
  cfg.hidden = hidden;
  cfg.T = T;
  cfg.arch = diffusion::DenoiserArch::cellwise;
  cfg.trunk_xt = false;  // deterministic transitions: learn from (x0, action)
  cfg.cells = layout.cells();
  cfg.channels = layout.channels();
  cfg.x0_channels = layout.channels();
  cfg.agent_block = layout.n_agents_max;
  cfg.piece_block = layout.n_pieces_max + 1;
  cfg.target_block = layout.board_cells() + 1;
  return cfg;
}

namespace {

std::vector<size_t> shuffled_indices(size_t n, std::mt19937_64& rng, size_t cap) {
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (size_t i = n - 1; i > 0; --i) std::swap(idx[i], idx[rng() % (i + 1)]);
  if (cap > 0 && idx.size() > cap) idx.resize(cap);
  return idx;
}

}  // namespace

DenoiserModel train_stage1(const std::vector<TransitionSample>& data,
                           const EncodingLayout& layout, const DenoiserConfig& model_cfg,
                           const NoiseSchedule& sched, const CwmTrainConfig& cfg,
                           const TrainLog& log) {
  if (data.empty()) throw std::invalid_argument("train_stage1: empty dataset");
  for (const auto& t : data)
    if (t.acting.size() != 1)
      throw std::invalid_argument("train_stage1: needs single-agent transitions");

  DenoiserModel model(model_cfg, cfg.seed);
  auto C = cfg.adls ? adls_matrix(data.front().s, layout, cfg.adls_weight)
                    : diffusion::LossScaleMatrix::uniform(layout.n_agents_max, layout.cells());
  std::mt19937_64 rng(cfg.seed + 1);
  nn::AdamState adam;
  nn::AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  Workspace ws;
  int D = layout.state_dim(), Da = layout.cond_dim();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto idx = shuffled_indices(data.size(), rng, cfg.max_samples);
    double total = 0.0;
    int batches = 0;
    for (size_t start = 0; start < idx.size(); start += cfg.batch_size) {
      size_t end = std::min(idx.size(), start + cfg.batch_size);
      int B = static_cast<int>(end - start);
      diffusion::SingleBatch batch;
      batch.target = Tensor(B, D);
      batch.cond_state = Tensor(B, D);
      batch.cond_action = Tensor(B, Da);
      batch.agent.resize(B);
      for (int r = 0; r < B; ++r) {
        const auto& t = data[idx[start + r]];
        int agent = t.acting[0];
        encode_state_into(t.s_next, layout, batch.target.row(r));
        encode_state_into(t.s, layout, batch.cond_state.row(r));
        Tensor cond = encode_condition(t.a[agent], agent, layout);
        std::memcpy(batch.cond_action.row(r), cond.row(0), sizeof(double) * Da);
        batch.agent[r] = agent;
      }
      model.net().init_grads(ws);
      total += diffusion::loss_single(model, batch, C, sched, cfg.p_null, rng, ws);
      adam_step(model.net().parameters(), ws.grads, adam, adam_cfg);
      ++batches;
    }
    if (log) log(epoch, total / std::max(1, batches));
  }
  return model;
}

void train_stage2(DenoiserModel& model, const std::vector<TransitionSample>& data,
                  const EncodingLayout& layout, const NoiseSchedule& sched,
                  const CwmTrainConfig& cfg, const TrainLog& log) {
  if (data.empty()) throw std::invalid_argument("train_stage2: empty dataset");
  for (const auto& t : data)
    if (t.acting.size() < 2)
      throw std::invalid_argument("train_stage2: needs multi-agent transitions");

  std::mt19937_64 rng(cfg.seed + 2);
  nn::AdamState adam;
  nn::AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  Workspace ws;
  int D = layout.state_dim(), Da = layout.cond_dim();
  int n = data.front().s.n_agents;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto idx = shuffled_indices(data.size(), rng, cfg.max_samples);
    double total = 0.0;
    int batches = 0;
    for (size_t start = 0; start < idx.size(); start += cfg.batch_size) {
      size_t end = std::min(idx.size(), start + cfg.batch_size);
      int B = static_cast<int>(end - start);
      diffusion::ComposedBatch batch;
      batch.target = Tensor(B, D);
      batch.cond_state = Tensor(B, D);
      for (int i = 0; i < n; ++i) batch.cond_actions.emplace_back(B, Da);
      for (int r = 0; r < B; ++r) {
        const auto& t = data[idx[start + r]];
        encode_state_into(t.s_next, layout, batch.target.row(r));
        encode_state_into(t.s, layout, batch.cond_state.row(r));
        for (int i = 0; i < n; ++i) {
          Tensor cond = encode_condition(t.a[i], i, layout);
          std::memcpy(batch.cond_actions[i].row(r), cond.row(0), sizeof(double) * Da);
        }
      }
      model.net().init_grads(ws);
      total += diffusion::loss_composed(model, batch, sched, rng, ws);
      adam_step(model.net().parameters(), ws.grads, adam, adam_cfg);
      ++batches;
    }
    if (log) log(epoch, total / std::max(1, batches));
  }
}

namespace {

// Shared reverse-sampling core: K candidates, each with its own condition
// rows; one stacked forward per step covers uncond + conds for all of them.
std::vector<Tensor> sample_candidates(const DenoiserModel& model, const EncodingLayout& layout,
                                      const std::vector<const GridState*>& states,
                                      const std::vector<std::vector<Tensor>>& conds,
                                      const NoiseSchedule& sched, const SampleConfig& cfg,
                                      std::mt19937_64& rng) {
  int K = static_cast<int>(states.size());
  int D = layout.state_dim();
  int Da = layout.cond_dim();
  std::vector<int> row_of_candidate(K + 1, 0);
  for (int k = 0; k < K; ++k)
    row_of_candidate[k + 1] = row_of_candidate[k] + 1 + static_cast<int>(conds[k].size());
  int R = row_of_candidate[K];

  Tensor x0_rep(R, D), act_rep(R, Da);
  for (int k = 0; k < K; ++k) {
    Tensor x0 = encode_state(*states[k], layout);
    for (int r = row_of_candidate[k]; r < row_of_candidate[k + 1]; ++r)
      std::memcpy(x0_rep.row(r), x0.row(0), sizeof(double) * D);
    for (size_t i = 0; i < conds[k].size(); ++i)
      std::memcpy(act_rep.row(row_of_candidate[k] + 1 + static_cast<int>(i)),
                  conds[k][i].row(0), sizeof(double) * Da);
  }

  Workspace ws;
  auto eps_hat = [&](const Tensor& x, int t) {
    Tensor x_rep(R, D);
    for (int k = 0; k < K; ++k)
      for (int r = row_of_candidate[k]; r < row_of_candidate[k + 1]; ++r)
        std::memcpy(x_rep.row(r), x.row(k), sizeof(double) * D);
    std::vector<int> ts(R, t);
    Tensor preds = model.predict(x_rep, ts, x0_rep, act_rep, ws);
    Tensor out(K, D);
    for (int k = 0; k < K; ++k) {
      Tensor uncond(1, D);
      std::memcpy(uncond.row(0), preds.row(row_of_candidate[k]), sizeof(double) * D);
      std::vector<Tensor> cs;
      for (int r = row_of_candidate[k] + 1; r < row_of_candidate[k + 1]; ++r) {
        Tensor c(1, D);
        std::memcpy(c.row(0), preds.row(r), sizeof(double) * D);
        cs.push_back(std::move(c));
      }
      Tensor composed = cs.empty() ? uncond : diffusion::compose_noise(uncond, cs, cfg.omega);
      std::memcpy(out.row(k), composed.row(0), sizeof(double) * D);
    }
    return out;
  };

  Tensor samples = diffusion::reverse_sample(eps_hat, sched, K, D, cfg, rng);
  std::vector<Tensor> out;
  for (int k = 0; k < K; ++k) {
    Tensor row(1, D);
    std::memcpy(row.row(0), samples.row(k), sizeof(double) * D);
    out.push_back(std::move(row));
  }
  return out;
}

PredictResult decode_prediction(Tensor raw, const GridState& s, const EncodingLayout& layout) {
  DecodeResult dec = decode_state(raw, layout, s);
  PredictResult out;
  out.state = std::move(dec.state);
  out.state.turn = s.turn + 1;
  out.valid = dec.valid;
  out.raw = std::move(raw);
  return out;
}

}  // namespace

PredictResult predict_next(const DenoiserModel& model, const EncodingLayout& layout,
                           const GridState& s, const JointAction& a,
                           const NoiseSchedule& sched, const SampleConfig& cfg,
                           std::mt19937_64& rng) {
  auto samples = sample_candidates(model, layout, {&s}, {factorize(a, layout)}, sched, cfg, rng);
  return decode_prediction(std::move(samples[0]), s, layout);
}

std::vector<PredictResult> predict_next_batch(const DenoiserModel& model,
                                              const EncodingLayout& layout,
                                              const std::vector<const GridState*>& states,
                                              const std::vector<const JointAction*>& actions,
                                              const NoiseSchedule& sched,
                                              const SampleConfig& cfg, std::mt19937_64& rng) {
  if (states.size() != actions.size())
    throw std::invalid_argument("predict_next_batch: size mismatch");
  if (states.empty()) return {};
  std::vector<std::vector<Tensor>> conds;
  for (size_t k = 0; k < states.size(); ++k) conds.push_back(factorize(*actions[k], layout));
  auto samples = sample_candidates(model, layout, states, conds, sched, cfg, rng);
  std::vector<PredictResult> out;
  for (size_t k = 0; k < states.size(); ++k)
    out.push_back(decode_prediction(std::move(samples[k]), *states[k], layout));
  return out;
}

PredictResult predict_unconditional(const DenoiserModel& model, const EncodingLayout& layout,
                                    const GridState& s, const NoiseSchedule& sched,
                                    const SampleConfig& cfg, std::mt19937_64& rng) {
  auto samples = sample_candidates(model, layout, {&s}, {{}}, sched, cfg, rng);
  return decode_prediction(std::move(samples[0]), s, layout);
}

double eval_exact_match(const DenoiserModel& model, const EncodingLayout& layout,
                        const std::vector<TransitionSample>& samples,
                        const NoiseSchedule& sched, const SampleConfig& cfg,
                        std::uint64_t seed, int batch_size) {
  if (samples.empty()) return 0.0;
  int correct = 0;
  std::mt19937_64 rng(seed);
  for (size_t start = 0; start < samples.size(); start += batch_size) {
    size_t end = std::min(samples.size(), start + batch_size);
    std::vector<const GridState*> states;
    std::vector<const JointAction*> actions;
    for (size_t i = start; i < end; ++i) {
      states.push_back(&samples[i].s);
      actions.push_back(&samples[i].a);
    }
    auto preds = predict_next_batch(model, layout, states, actions, sched, cfg, rng);
    for (size_t i = start; i < end; ++i) {
      GridState want = samples[i].s_next;
      GridState got = preds[i - start].state;
      got.turn = want.turn;
      if (preds[i - start].valid && got == want) ++correct;
    }
  }
  return static_cast<double>(correct) / samples.size();
}

}  // namespace combo::cwm
