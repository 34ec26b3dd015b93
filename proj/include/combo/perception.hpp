#pragma once

#include "combo/cwm.hpp"

namespace combo::perception {

/// Chronological overlay of one agent's partial observations. content: piece
/// id, -1 empty, -2 never observed; age: steps since last observed, -1 when
/// unknown. Hand cells follow the board cells, other agents' hands stay
/// unknown.
struct FusedGrid {
  int width = 8;
  int height = 8;
  int n_agents = 2;
  int agent = 0;
  int step = 0;
  std::vector<int> content;
  std::vector<int> age;
  std::vector<gridworld::PieceState> cut;

  int board_cells() const { return width * height; }
  int cells() const { return board_cells() + n_agents; }
  bool known(int cell) const { return age[cell] >= 0; }
};

FusedGrid fuse(const std::vector<gridworld::PartialObservation>& history, int width, int height,
               int n_agents, int agent);

/// Condition encoding: per cell [empty | piece one-hots | cut | known | age].
nn::Tensor encode_fused(const FusedGrid& fused, const cwm::EncodingLayout& layout);
int fused_dim(const cwm::EncodingLayout& layout);

struct InpainterSample {
  FusedGrid fused;
  gridworld::GridState truth;
};

struct InpainterTrainConfig {
  int epochs = 3;
  int batch_size = 64;
  double lr = 1e-3;
  double stale_weight = 2.0;
  int max_samples = 0;
  std::uint64_t seed = 0;
};

diffusion::DenoiserConfig inpainter_config(const cwm::EncodingLayout& layout, int hidden, int T);

/// Masked-denoising training: full-state targets, unknown and stale cells
/// carry stale_weight in the per-cell loss scaling.
diffusion::DenoiserModel train_inpainter(const std::vector<InpainterSample>& data,
                                         const cwm::EncodingLayout& layout,
                                         const diffusion::DenoiserConfig& model_cfg,
                                         const diffusion::NoiseSchedule& sched,
                                         const InpainterTrainConfig& cfg,
                                         const cwm::TrainLog& log = nullptr);

struct EstimateResult {
  gridworld::GridState state;
  bool valid = true;
};

/// Sample a full state consistent with the fusion; cells observed this step
/// (age 0) are clamped to their observed content at every reverse step and
/// in the decoded output.
EstimateResult estimate(const diffusion::DenoiserModel& model, const cwm::EncodingLayout& layout,
                        const FusedGrid& fused, const gridworld::GridState& reference,
                        const diffusion::NoiseSchedule& sched, const diffusion::SampleConfig& cfg,
                        std::mt19937_64& rng);

}  // namespace combo::perception
