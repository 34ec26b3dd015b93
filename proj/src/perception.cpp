#include "combo/perception.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

namespace combo::perception {

using cwm::EncodingLayout;
using diffusion::DenoiserModel;
using diffusion::NoiseSchedule;
using diffusion::SampleConfig;
using gridworld::GridState;
using gridworld::PartialObservation;
using gridworld::PieceState;
using nn::Tensor;

FusedGrid fuse(const std::vector<PartialObservation>& history, int width, int height,
               int n_agents, int agent) {
  FusedGrid f;
  f.width = width;
  f.height = height;
  f.n_agents = n_agents;
  f.agent = agent;
  f.content.assign(f.cells(), -2);
  f.age.assign(f.cells(), -1);
  f.cut.assign(f.cells(), PieceState::whole);
  if (history.empty()) return f;

  std::vector<int> last_seen(f.cells(), -1);
  int last_step = -1;
  for (const auto& obs : history) {
    if (obs.agent != agent) throw std::invalid_argument("fuse: mixed-agent history");
    if (obs.step < last_step) throw std::invalid_argument("fuse: history not chronological");
    last_step = obs.step;
    for (size_t i = 0; i < obs.visible.size(); ++i) {
      int c = obs.visible[i];
      f.content[c] = obs.contents[i];
      f.cut[c] = obs.cut_states[i];
      last_seen[c] = obs.step;
    }
    int hand_cell = f.board_cells() + agent;
    f.content[hand_cell] = obs.hand;
    f.cut[hand_cell] = obs.hand_state;
    last_seen[hand_cell] = obs.step;
  }
  f.step = last_step;
  for (int c = 0; c < f.cells(); ++c)
    if (last_seen[c] >= 0) f.age[c] = f.step - last_seen[c];
  return f;
}

int fused_dim(const EncodingLayout& layout) {
  return layout.cells() * (layout.n_pieces_max + 4);
}

Tensor encode_fused(const FusedGrid& fused, const EncodingLayout& layout) {
  int C = layout.n_pieces_max + 4;
  Tensor out(1, fused_dim(layout));
  out.fill(-1.0);
  double* row = out.row(0);
  for (int c = 0; c < fused.cells() && c < layout.cells(); ++c) {
    // Map live hand cells onto the layout's fixed hand slots.
    int cell = c < fused.board_cells() ? c
                                       : layout.board_cells() + (c - fused.board_cells());
    double* base = row + static_cast<size_t>(cell) * C;
    if (fused.known(c)) {
      int p = fused.content[c];
      if (p >= 0) {
        base[1 + p] = 1.0;
        if (fused.cut[c] == PieceState::cut) base[1 + layout.n_pieces_max] = 1.0;
      } else {
        base[0] = 1.0;
      }
      base[2 + layout.n_pieces_max] = 1.0;  // known mask
      base[3 + layout.n_pieces_max] = 1.0 - 2.0 * std::min(fused.age[c], 20) / 20.0;
    }
  }
  return out;
}

diffusion::DenoiserConfig inpainter_config(const EncodingLayout& layout, int hidden, int T) {
  diffusion::DenoiserConfig cfg;
  cfg.state_dim = layout.state_dim();
  cfg.x0_dim = fused_dim(layout);
  cfg.action_dim = 0;
  cfg.hidden = hidden;
  cfg.T = T;
  cfg.arch = diffusion::DenoiserArch::cellwise;
  cfg.cells = layout.cells();
  cfg.channels = layout.channels();
  cfg.x0_channels = layout.n_pieces_max + 4;
  return cfg;
}

DenoiserModel train_inpainter(const std::vector<InpainterSample>& data,
                              const EncodingLayout& layout,
                              const diffusion::DenoiserConfig& model_cfg,
                              const NoiseSchedule& sched, const InpainterTrainConfig& cfg,
                              const cwm::TrainLog& log) {
  if (data.empty()) throw std::invalid_argument("train_inpainter: empty dataset");
  DenoiserModel model(model_cfg, cfg.seed);
  std::mt19937_64 rng(cfg.seed + 3);
  nn::AdamState adam;
  nn::AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  nn::Workspace ws;
  int D = layout.state_dim();
  int Dc = fused_dim(layout);
  int channels = layout.channels();

  std::vector<size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (size_t i = idx.size() - 1; i > 0; --i) std::swap(idx[i], idx[rng() % (i + 1)]);
    size_t cap = cfg.max_samples > 0 ? std::min<size_t>(cfg.max_samples, idx.size()) : idx.size();
    double total = 0.0;
    int batches = 0;
    for (size_t start = 0; start < cap; start += cfg.batch_size) {
      size_t end = std::min(cap, start + cfg.batch_size);
      int B = static_cast<int>(end - start);
      Tensor target(B, D), cond(B, Dc);
      std::vector<double> w(static_cast<size_t>(B) * layout.cells(), 1.0);
      for (int r = 0; r < B; ++r) {
        const auto& sample = data[idx[start + r]];
        cwm::encode_state_into(sample.truth, layout, target.row(r));
        Tensor fenc = encode_fused(sample.fused, layout);
        std::memcpy(cond.row(r), fenc.row(0), sizeof(double) * Dc);
        for (int c = 0; c < sample.fused.cells() && c < layout.cells(); ++c) {
          int cell = c < sample.fused.board_cells()
                         ? c
                         : layout.board_cells() + (c - sample.fused.board_cells());
          if (!sample.fused.known(c) || sample.fused.age[c] > 0)
            w[static_cast<size_t>(r) * layout.cells() + cell] = cfg.stale_weight;
        }
      }
      std::vector<int> t(B);
      for (int r = 0; r < B; ++r) t[r] = 1 + static_cast<int>(rng() % sched.T);
      Tensor eps(B, D);
      nn::fill_gaussian(eps, rng);
      Tensor x_t(B, D);
      for (int r = 0; r < B; ++r) {
        double a = std::sqrt(sched.alpha_bar(t[r]));
        double b = std::sqrt(1.0 - sched.alpha_bar(t[r]));
        for (int d = 0; d < D; ++d) x_t.at(r, d) = a * target.at(r, d) + b * eps.at(r, d);
      }
      model.net().init_grads(ws);
      Tensor pred = model.predict(x_t, t, cond, Tensor(), ws);
      Tensor dpred;
      total += diffusion::weighted_mse(pred, eps, w, channels, &dpred);
      model.backward(dpred, t, ws);
      adam_step(model.net().parameters(), ws.grads, adam, adam_cfg);
      ++batches;
    }
    if (log) log(epoch, total / std::max(1, batches));
  }
  return model;
}

EstimateResult estimate(const DenoiserModel& model, const EncodingLayout& layout,
                        const FusedGrid& fused, const GridState& reference,
                        const NoiseSchedule& sched, const SampleConfig& cfg,
                        std::mt19937_64& rng) {
  int D = layout.state_dim();
  Tensor cond = encode_fused(fused, layout);

  // Cells observed this step: clamp their channel block during sampling and
  // lock them in the decode.
  std::map<int, cwm::LockedCell> locked;
  std::vector<int> locked_cells;
  for (int c = 0; c < fused.cells() && c < layout.cells(); ++c) {
    if (!fused.known(c) || fused.age[c] != 0) continue;
    int cell =
        c < fused.board_cells() ? c : layout.board_cells() + (c - fused.board_cells());
    locked[cell] = cwm::LockedCell{fused.content[c] >= 0 ? fused.content[c] : -1, fused.cut[c]};
    locked_cells.push_back(cell);
  }
  // Target-space encodings of the clamped cells (fixtures from reference).
  int C = layout.channels();
  std::vector<double> known_enc(static_cast<size_t>(locked_cells.size()) * C, -1.0);
  for (size_t i = 0; i < locked_cells.size(); ++i) {
    int cell = locked_cells[i];
    double* base = known_enc.data() + i * C;
    const auto& lc = locked[cell];
    if (lc.piece >= 0) {
      base[layout.ch_piece(lc.piece)] = 1.0;
      if (lc.state == PieceState::cut) base[layout.ch_cut()] = 1.0;
    } else {
      base[layout.ch_empty()] = 1.0;
    }
    if (cell < layout.board_cells()) {
      if (reference.slot_at(cell)) base[layout.ch_slot()] = 1.0;
      if (cell == reference.cutting_board) base[layout.ch_board()] = 1.0;
    }
  }

  nn::Workspace ws;
  auto eps_hat = [&](const Tensor& x, int t) {
    std::vector<int> ts(1, t);
    return model.predict(x, ts, cond, Tensor(), ws);
  };
  auto hook = [&](Tensor& x, int t_level, std::mt19937_64& hook_rng) {
    for (size_t i = 0; i < locked_cells.size(); ++i) {
      size_t off = static_cast<size_t>(locked_cells[i]) * C;
      if (t_level == 0) {
        for (int ch = 0; ch < C; ++ch) x.v[off + ch] = known_enc[i * C + ch];
      } else {
        double a = std::sqrt(sched.alpha_bar(t_level));
        double b = std::sqrt(1.0 - sched.alpha_bar(t_level));
        for (int ch = 0; ch < C; ++ch)
          x.v[off + ch] = a * known_enc[i * C + ch] + b * nn::gaussian(hook_rng);
      }
    }
  };
  Tensor raw = diffusion::reverse_sample(eps_hat, sched, 1, D, cfg, rng, hook);
  auto dec = cwm::decode_state(raw, layout, reference, &locked);
  EstimateResult out;
  out.state = std::move(dec.state);
  out.state.turn = fused.step;
  out.valid = dec.valid;
  return out;
}

}  // namespace combo::perception
