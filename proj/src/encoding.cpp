#include "combo/encoding.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace combo::cwm {

using gridworld::GridState;
using gridworld::PieceState;
using nn::Tensor;

EncodingLayout EncodingLayout::for_board(int width, int height, int n_agents_max,
                                         int n_pieces_max) {
  EncodingLayout l;
  l.width = width;
  l.height = height;
  l.n_agents_max = n_agents_max;
  l.n_pieces_max = n_pieces_max;
  return l;
}

bool EncodingLayout::fits(const GridState& s) const {
  return s.width == width && s.height == height && s.n_agents <= n_agents_max &&
         static_cast<int>(s.pieces.size()) <= n_pieces_max;
}

void encode_state_into(const GridState& s, const EncodingLayout& layout, double* row) {
  if (!layout.fits(s)) throw std::invalid_argument("encode_state: state does not fit layout");
  int C = layout.channels();
  std::fill(row, row + layout.state_dim(), -1.0);
  auto cell_base = [&](int cell) { return row + static_cast<size_t>(cell) * C; };
  for (int c = 0; c < layout.board_cells(); ++c) {
    double* base = cell_base(c);
    int p = s.cells[c];
    if (p < 0) {
      base[layout.ch_empty()] = 1.0;
    } else {
      base[layout.ch_piece(p)] = 1.0;
      if (s.pieces[p].state == PieceState::cut) base[layout.ch_cut()] = 1.0;
    }
    if (s.slot_at(c)) base[layout.ch_slot()] = 1.0;
    if (c == s.cutting_board) base[layout.ch_board()] = 1.0;
  }
  for (int a = 0; a < layout.n_agents_max; ++a) {
    double* base = cell_base(layout.hand_cell(a));
    int p = a < s.n_agents ? s.hands[a] : -1;
    if (p < 0) {
      base[layout.ch_empty()] = 1.0;
    } else {
      base[layout.ch_piece(p)] = 1.0;
      if (s.pieces[p].state == PieceState::cut) base[layout.ch_cut()] = 1.0;
    }
  }
}

Tensor encode_state(const GridState& s, const EncodingLayout& layout) {
  Tensor out(1, layout.state_dim());
  encode_state_into(s, layout, out.row(0));
  return out;
}

DecodeResult decode_state(const Tensor& x, const EncodingLayout& layout,
                          const GridState& reference,
                          const std::map<int, LockedCell>* locked) {
  if (static_cast<int>(x.v.size()) != layout.state_dim())
    throw std::invalid_argument("decode_state: tensor size mismatch");
  if (!x.all_finite()) throw std::runtime_error("decode_state: non-finite tensor");

  int C = layout.channels();
  int n_pieces = static_cast<int>(reference.pieces.size());
  int n_cells = layout.board_cells() + reference.n_agents;  // hand cells for live agents only
  auto score = [&](int cell, int ch) { return x.v[static_cast<size_t>(cell) * C + ch]; };

  DecodeResult out;
  out.state = reference;
  std::fill(out.state.cells.begin(), out.state.cells.end(), -1);
  std::fill(out.state.hands.begin(), out.state.hands.end(), -1);

  std::set<int> locked_pieces;
  std::set<int> locked_cells;
  auto place = [&](int cell, int piece) {
    if (cell < layout.board_cells()) out.state.cells[cell] = piece;
    else out.state.hands[cell - layout.board_cells()] = piece;
  };
  if (locked) {
    for (const auto& [cell, lc] : *locked) {
      locked_cells.insert(cell);
      if (lc.piece >= 0) {
        place(cell, lc.piece);
        out.state.pieces[lc.piece].state = lc.state;
        locked_pieces.insert(lc.piece);
      }
    }
  }

  // Best unlocked cell per piece by activation; a cell may win several
  // pieces at first, the spec repair keeps the strongest and drops the rest.
  struct Claim {
    int cell = -1;
    double activation = -1e300;
  };
  std::vector<Claim> claims(n_pieces);
  std::vector<int> winner(n_cells, -1);  // piece claiming this cell via argmax
  for (int cell = 0; cell < n_cells; ++cell) {
    if (locked_cells.count(cell)) continue;
    int best_ch = layout.ch_empty();
    double best = score(cell, best_ch);
    for (int p = 0; p < n_pieces; ++p) {
      if (locked_pieces.count(p)) continue;
      double v = score(cell, layout.ch_piece(p));
      if (v > best) {
        best = v;
        best_ch = layout.ch_piece(p);
      }
    }
    if (best_ch != layout.ch_empty()) winner[cell] = best_ch - 1;
  }
  for (int cell = 0; cell < n_cells; ++cell) {
    int p = winner[cell];
    if (p < 0) continue;
    double act = score(cell, layout.ch_piece(p));
    if (act > claims[p].activation) {
      claims[p].cell = cell;
      claims[p].activation = act;
    }
  }
  for (int p = 0; p < n_pieces; ++p) {
    if (locked_pieces.count(p)) continue;
    if (claims[p].cell < 0) {
      out.valid = false;
      out.note = "piece " + std::to_string(p) + " vanished";
      continue;
    }
    // Highest-activation instance wins the cell; ties between pieces on the
    // same cell resolve to the stronger activation, loser vanishes to its
    // next-best nothing (kept simple: it just vanishes, flagging the state).
    int cell = claims[p].cell;
    int current = -1;
    if (cell < layout.board_cells()) current = out.state.cells[cell];
    else current = out.state.hands[cell - layout.board_cells()];
    if (current >= 0) {
      double other = score(cell, layout.ch_piece(current));
      if (claims[p].activation > other) {
        place(cell, p);
        out.valid = false;
        out.note = "piece " + std::to_string(current) + " displaced";
      } else {
        out.valid = false;
        out.note = "piece " + std::to_string(p) + " lost cell contest";
      }
      continue;
    }
    place(cell, p);
    if (reference.variant == gridworld::Variant::cook)
      out.state.pieces[p].state =
          score(cell, layout.ch_cut()) > 0.0 ? PieceState::cut : PieceState::whole;
    else
      out.state.pieces[p].state = PieceState::whole;
  }
  return out;
}

Tensor encode_condition(const gridworld::Action& a, int agent, const EncodingLayout& layout) {
  Tensor out(1, layout.cond_dim());
  out.fill(-1.0);
  double* row = out.row(0);
  if (agent < 0 || agent >= layout.n_agents_max)
    throw std::invalid_argument("encode_condition: agent out of range");
  int off = 0;
  row[off + agent] = 1.0;
  off += layout.n_agents_max;
  row[off + static_cast<int>(a.verb)] = 1.0;
  off += 4;
  int piece_slot = a.piece >= 0 ? a.piece : layout.n_pieces_max;  // none = last
  if (a.piece >= layout.n_pieces_max)
    throw std::invalid_argument("encode_condition: piece id out of range");
  row[off + piece_slot] = 1.0;
  off += layout.n_pieces_max + 1;
  int cell_slot = a.target >= 0 ? a.target : layout.board_cells();  // none = last
  if (a.target >= layout.board_cells())
    throw std::invalid_argument("encode_condition: target out of range");
  row[off + cell_slot] = 1.0;
  return out;
}

Tensor null_condition(const EncodingLayout& layout) {
  return Tensor(1, layout.cond_dim());
}

std::vector<Tensor> factorize(const gridworld::JointAction& joint,
                              const EncodingLayout& layout) {
  std::vector<Tensor> out;
  out.reserve(joint.size());
  for (size_t i = 0; i < joint.size(); ++i)
    out.push_back(encode_condition(joint[i], static_cast<int>(i), layout));
  return out;
}

gridworld::Action decode_condition(const Tensor& cond, const EncodingLayout& layout,
                                   int* agent_out) {
  if (static_cast<int>(cond.v.size()) != layout.cond_dim())
    throw std::invalid_argument("decode_condition: size mismatch");
  const double* row = cond.v.data();
  auto argmax = [&](int off, int len) {
    int best = 0;
    for (int i = 1; i < len; ++i)
      if (row[off + i] > row[off + best]) best = i;
    return best;
  };
  int off = 0;
  int agent = argmax(off, layout.n_agents_max);
  off += layout.n_agents_max;
  int verb = argmax(off, 4);
  off += 4;
  int piece = argmax(off, layout.n_pieces_max + 1);
  off += layout.n_pieces_max + 1;
  int cell = argmax(off, layout.board_cells() + 1);
  gridworld::Action a;
  a.verb = static_cast<gridworld::Verb>(verb);
  a.piece = piece == layout.n_pieces_max ? -1 : piece;
  a.target = cell == layout.board_cells() ? -1 : cell;
  if (agent_out) *agent_out = agent;
  return a;
}

}  // namespace combo::cwm
