#pragma once

#include <map>
#include <string>

#include "combo/gridworld.hpp"
#include "combo/tensor.hpp"

namespace combo::cwm {

/// Fixed tensor layout shared by every model in an experiment family. Board
/// cells come first (row-major), then one hand cell per agent slot up to
/// n_agents_max, so a 4-agent-trained model can consume 2- and 3-agent
/// states unchanged. One-hot entries map to +1/-1.
struct EncodingLayout {
  int width = 8;
  int height = 8;
  int n_agents_max = 4;
  int n_pieces_max = 8;

  int board_cells() const { return width * height; }
  int cells() const { return board_cells() + n_agents_max; }
  // channels: empty | piece identities | cut flag | slot fixture | board fixture
  int channels() const { return n_pieces_max + 4; }
  int state_dim() const { return cells() * channels(); }
  // condition: agent one-hot | verb one-hot | piece one-hot + none | cell one-hot + none
  int cond_dim() const { return n_agents_max + 4 + (n_pieces_max + 1) + (board_cells() + 1); }

  int ch_empty() const { return 0; }
  int ch_piece(int id) const { return 1 + id; }
  int ch_cut() const { return 1 + n_pieces_max; }
  int ch_slot() const { return 2 + n_pieces_max; }
  int ch_board() const { return 3 + n_pieces_max; }
  int hand_cell(int agent) const { return board_cells() + agent; }

  static EncodingLayout for_board(int width, int height, int n_agents_max = 4,
                                  int n_pieces_max = 8);
  bool fits(const gridworld::GridState& s) const;
};

nn::Tensor encode_state(const gridworld::GridState& s, const EncodingLayout& layout);
void encode_state_into(const gridworld::GridState& s, const EncodingLayout& layout, double* row);

struct LockedCell {
  int piece = -1;  // -1 = forced empty
  gridworld::PieceState state = gridworld::PieceState::whole;
};

struct DecodeResult {
  gridworld::GridState state;
  bool valid = true;
  std::string note;
};

/// Per-cell argmax over the empty/piece channels, then validity repair:
/// a piece decoded in several cells keeps its highest-activation instance;
/// a piece that vanishes flags the state invalid instead of being invented.
/// Locked cells are forced to their observed content and always win.
DecodeResult decode_state(const nn::Tensor& x, const EncodingLayout& layout,
                          const gridworld::GridState& reference,
                          const std::map<int, LockedCell>* locked = nullptr);

nn::Tensor encode_condition(const gridworld::Action& a, int agent, const EncodingLayout& layout);
nn::Tensor null_condition(const EncodingLayout& layout);

/// One condition vector per agent in agent order, wait actions included.
std::vector<nn::Tensor> factorize(const gridworld::JointAction& joint,
                                  const EncodingLayout& layout);

/// Inverse of encode_condition; used by tests and trace dumps.
gridworld::Action decode_condition(const nn::Tensor& cond, const EncodingLayout& layout,
                                   int* agent_out = nullptr);

}  // namespace combo::cwm
