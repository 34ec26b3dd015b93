#include "combo/gridworld.hpp"

#include <algorithm>
#include <limits>
#include <queue>
#include <sstream>

namespace combo::gridworld {

std::string to_string(const Action& a) {
  std::ostringstream out;
  switch (a.verb) {
    case Verb::wait: out << "wait"; break;
    case Verb::pick_up: out << "pick_up p" << a.piece; break;
    case Verb::place: out << "place p" << a.piece << " -> c" << a.target; break;
    case Verb::cut: out << "cut p" << a.piece; break;
  }
  return out.str();
}

std::string to_string(CooperatorKind kind) {
  switch (kind) {
    case CooperatorKind::clockwise: return "clockwise";
    case CooperatorKind::counter_clockwise: return "counter_clockwise";
    case CooperatorKind::selfish: return "selfish";
    case CooperatorKind::altruistic: return "altruistic";
  }
  return "?";
}

CooperatorKind cooperator_kind_from_string(const std::string& name) {
  if (name == "clockwise") return CooperatorKind::clockwise;
  if (name == "counter_clockwise") return CooperatorKind::counter_clockwise;
  if (name == "selfish") return CooperatorKind::selfish;
  if (name == "altruistic") return CooperatorKind::altruistic;
  throw std::invalid_argument("unknown cooperator kind: " + name);
}

bool GridState::in_region(int agent, int cell) const {
  if (region_mask_.size() != static_cast<size_t>(n_agents) * n_cells()) rebuild_masks();
  return region_mask_[static_cast<size_t>(agent) * n_cells() + cell] != 0;
}

void GridState::rebuild_masks() const {
  region_mask_.assign(static_cast<size_t>(n_agents) * n_cells(), 0);
  for (int a = 0; a < n_agents; ++a)
    for (int c : regions[a]) region_mask_[static_cast<size_t>(a) * n_cells() + c] = 1;
}

const GoalSlot* GridState::slot_at(int cell) const {
  for (const auto& s : slots)
    if (s.cell == cell) return &s;
  return nullptr;
}

int GridState::piece_cell(int piece_id) const {
  for (int c = 0; c < n_cells(); ++c)
    if (cells[c] == piece_id) return c;
  return -1;
}

int GridState::holder_of(int piece_id) const {
  for (int a = 0; a < n_agents; ++a)
    if (hands[a] == piece_id) return a;
  return -1;
}

bool GridState::piece_present(int piece_id) const {
  return piece_cell(piece_id) >= 0 || holder_of(piece_id) >= 0;
}

bool GridState::slot_filled(const GoalSlot& slot) const {
  int p = cells[slot.cell];
  return p >= 0 && matches(slot, pieces[p]);
}

bool GridState::matches(const GoalSlot& slot, const Piece& piece) const {
  if (slot.shape != piece.shape || slot.color != piece.color) return false;
  PieceState want = slot.requires_cut ? PieceState::cut : PieceState::whole;
  return piece.state == want;
}

bool GridState::operator==(const GridState& other) const {
  return variant == other.variant && width == other.width && height == other.height &&
         n_agents == other.n_agents && cells == other.cells && pieces == other.pieces &&
         slots == other.slots && cutting_board == other.cutting_board &&
         regions == other.regions && hands == other.hands && turn == other.turn;
}

// Region geometry. n=2 splits into overlapping top/bottom halves; n=4 uses
// pie slices whose diagonal seams are shared between adjacent agents; n=3
// merges the north and west slices into one region. Ring neighbours (i, i+1
// mod n) always share at least one border cell.
std::vector<std::vector<int>> make_regions(int n_agents, int width, int height) {
  if (width < 3 || height < 3) throw std::invalid_argument("board too small for regions");
  auto idx = [&](int r, int c) { return r * width + c; };
  std::vector<std::vector<int>> regions(n_agents);
  if (n_agents == 2) {
    for (int r = 0; r <= height / 2; ++r)
      for (int c = 0; c < width; ++c) regions[0].push_back(idx(r, c));
    for (int r = (height - 1) / 2; r < height; ++r)
      for (int c = 0; c < width; ++c) regions[1].push_back(idx(r, c));
  } else if (n_agents == 3 || n_agents == 4) {
    double cy = (height - 1) / 2.0, cx = (width - 1) / 2.0;
    for (int r = 0; r < height; ++r) {
      for (int c = 0; c < width; ++c) {
        double dy = r - cy, dx = c - cx;
        bool south = dy >= std::abs(dx);
        bool east = dx >= std::abs(dy);
        bool north = -dy >= std::abs(dx);
        bool west = -dx >= std::abs(dy);
        if (n_agents == 4) {
          if (south) regions[0].push_back(idx(r, c));
          if (east) regions[1].push_back(idx(r, c));
          if (north) regions[2].push_back(idx(r, c));
          if (west) regions[3].push_back(idx(r, c));
        } else {
          if (south) regions[0].push_back(idx(r, c));
          if (east) regions[1].push_back(idx(r, c));
          if (north || west) regions[2].push_back(idx(r, c));
        }
      }
    }
    for (auto& reg : regions) {
      std::sort(reg.begin(), reg.end());
      reg.erase(std::unique(reg.begin(), reg.end()), reg.end());
    }
  } else {
    throw std::invalid_argument("n_agents must be 2..4");
  }
  return regions;
}

std::vector<int> shared_cells(const GridState& s, int agent_a, int agent_b) {
  std::vector<int> out;
  std::set_intersection(s.regions[agent_a].begin(), s.regions[agent_a].end(),
                        s.regions[agent_b].begin(), s.regions[agent_b].end(),
                        std::back_inserter(out));
  return out;
}

std::vector<std::vector<int>> agent_distances(const GridState& s) {
  int n = s.n_agents;
  std::vector<std::vector<bool>> adj(n, std::vector<bool>(n, false));
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b)
      if (!shared_cells(s, a, b).empty()) adj[a][b] = adj[b][a] = true;
  std::vector<std::vector<int>> dist(n, std::vector<int>(n, kUnreachable));
  for (int src = 0; src < n; ++src) {
    dist[src][src] = 0;
    std::queue<int> q;
    q.push(src);
    while (!q.empty()) {
      int u = q.front();
      q.pop();
      for (int v = 0; v < n; ++v)
        if (adj[u][v] && dist[src][v] == kUnreachable) {
          dist[src][v] = dist[src][u] + 1;
          q.push(v);
        }
    }
  }
  return dist;
}

namespace {

// Home border for goal boxes: agent 0 south, 1 east, 2 north, 3 west for the
// ring layouts; the 2-agent split puts agent 0 at the top row.
std::vector<int> slot_cells_for(int agent, int n_agents, int width, int height, int count) {
  std::vector<int> cells;
  auto idx = [&](int r, int c) { return r * width + c; };
  auto horizontal = [&](int row) {
    int start = std::clamp((width - count) / 2, 1, std::max(1, width - count - 1));
    for (int k = 0; k < count; ++k) cells.push_back(idx(row, start + k));
  };
  auto vertical = [&](int col) {
    int start = std::clamp((height - count) / 2, 1, std::max(1, height - count - 1));
    for (int k = 0; k < count; ++k) cells.push_back(idx(start + k, col));
  };
  if (n_agents == 2) {
    if (agent == 0) horizontal(0);
    else horizontal(height - 1);
  } else {
    switch (agent) {
      case 0: horizontal(height - 1); break;
      case 1: vertical(width - 1); break;
      case 2: horizontal(0); break;
      case 3: vertical(0); break;
    }
  }
  return cells;
}

}  // namespace

GridState new_game(const EpisodeConfig& config) {
  if (config.n_agents < 2 || config.n_agents > 4)
    throw std::invalid_argument("n_agents must be 2..4");
  if (config.horizon < 1) throw std::invalid_argument("horizon must be >= 1");
  if (config.n_pieces < 1) throw std::invalid_argument("need at least one piece");

  GridState s;
  s.variant = config.variant;
  s.width = config.width;
  s.height = config.height;
  s.n_agents = config.n_agents;
  s.cells.assign(s.n_cells(), -1);
  s.hands.assign(s.n_agents, -1);
  s.regions = make_regions(s.n_agents, s.width, s.height);
  s.turn = 0;

  std::mt19937_64 rng(config.seed);

  // Slot counts per agent: explicit, or n_pieces distributed evenly.
  std::vector<int> slot_counts(s.n_agents, 0);
  if (config.slots_per_agent > 0) {
    for (int a = 0; a < s.n_agents; ++a) slot_counts[a] = config.slots_per_agent;
  } else {
    for (int k = 0; k < config.n_pieces; ++k) slot_counts[k % s.n_agents] += 1;
  }
  int total_slots = 0;
  for (int c : slot_counts) total_slots += c;
  if (total_slots > config.n_pieces)
    throw std::invalid_argument("unsatisfiable config: more required slots than pieces");

  for (int a = 0; a < s.n_agents; ++a) {
    auto cells = slot_cells_for(a, s.n_agents, s.width, s.height, slot_counts[a]);
    if (static_cast<int>(cells.size()) < slot_counts[a])
      throw std::invalid_argument("board too small for requested goal slots");
    for (int k = 0; k < slot_counts[a]; ++k) {
      GoalSlot slot;
      slot.cell = cells[k];
      slot.owner = a;
      slot.shape = static_cast<int>(rng() % config.n_shapes);
      slot.color = static_cast<int>(rng() % config.n_colors);
      slot.requires_cut = false;
      s.slots.push_back(slot);
    }
  }
  if (config.variant == Variant::cook) {
    bool any_cut = false;
    for (auto& slot : s.slots) {
      slot.requires_cut = (rng() % 3) == 0;
      any_cut = any_cut || slot.requires_cut;
    }
    if (!s.slots.empty() && !any_cut) s.slots.front().requires_cut = true;
  }

  // One matching (whole) piece per slot, extras random; shuffle id assignment.
  std::vector<Piece> protos;
  for (const auto& slot : s.slots)
    protos.push_back(Piece{0, slot.shape, slot.color, PieceState::whole});
  while (static_cast<int>(protos.size()) < config.n_pieces)
    protos.push_back(Piece{0, static_cast<int>(rng() % config.n_shapes),
                           static_cast<int>(rng() % config.n_colors), PieceState::whole});
  std::vector<int> perm(config.n_pieces);
  for (int i = 0; i < config.n_pieces; ++i) perm[i] = i;
  for (int i = config.n_pieces - 1; i > 0; --i)
    std::swap(perm[i], perm[rng() % (i + 1)]);
  s.pieces.assign(config.n_pieces, Piece{});
  for (int i = 0; i < config.n_pieces; ++i) {
    s.pieces[perm[i]] = protos[i];
    s.pieces[perm[i]].id = perm[i];
  }

  // Cutting board on a shared border cell between agents 0 and 1.
  if (config.variant == Variant::cook) {
    s.rebuild_masks();
    auto channel = shared_cells(s, 0, 1);
    std::vector<int> free_channel;
    for (int c : channel)
      if (!s.slot_at(c)) free_channel.push_back(c);
    if (free_channel.empty()) throw std::invalid_argument("no shared cell for cutting board");
    s.cutting_board = free_channel[rng() % free_channel.size()];
  }

  // Pieces on distinct non-fixture cells, uniform under the seed.
  std::vector<int> open;
  for (int c = 0; c < s.n_cells(); ++c)
    if (!s.slot_at(c) && c != s.cutting_board) open.push_back(c);
  if (static_cast<int>(open.size()) < config.n_pieces)
    throw std::invalid_argument("not enough open cells for pieces");
  for (int i = static_cast<int>(open.size()) - 1; i > 0; --i)
    std::swap(open[i], open[rng() % (i + 1)]);
  for (int p = 0; p < config.n_pieces; ++p) s.cells[open[p]] = p;

  s.rebuild_masks();
  return s;
}

bool is_legal(const GridState& s, int agent, const Action& a) {
  if (agent < 0 || agent >= s.n_agents) return false;
  switch (a.verb) {
    case Verb::wait:
      return a.piece < 0 && a.target < 0;
    case Verb::pick_up: {
      if (a.piece < 0 || a.piece >= static_cast<int>(s.pieces.size())) return false;
      if (s.hands[agent] >= 0) return false;
      int cell = s.piece_cell(a.piece);
      return cell >= 0 && s.in_region(agent, cell);
    }
    case Verb::place: {
      if (a.piece < 0 || s.hands[agent] != a.piece) return false;
      if (a.target < 0 || a.target >= s.n_cells()) return false;
      if (!s.in_region(agent, a.target)) return false;
      if (s.cells[a.target] >= 0) return false;
      if (const GoalSlot* slot = s.slot_at(a.target))
        return s.matches(*slot, s.pieces[a.piece]);
      return true;
    }
    case Verb::cut: {
      if (s.variant != Variant::cook) return false;
      if (a.piece < 0 || a.piece >= static_cast<int>(s.pieces.size())) return false;
      if (s.pieces[a.piece].state != PieceState::whole) return false;
      if (s.cutting_board < 0 || s.cells[s.cutting_board] != a.piece) return false;
      return s.in_region(agent, s.cutting_board);
    }
  }
  return false;
}

std::vector<Action> legal_actions(const GridState& s, int agent) {
  std::vector<Action> out;
  out.push_back(wait_action());
  if (s.hands[agent] < 0) {
    for (int p = 0; p < static_cast<int>(s.pieces.size()); ++p)
      if (is_legal(s, agent, pick_action(p))) out.push_back(pick_action(p));
  } else {
    int held = s.hands[agent];
    for (int c : s.regions[agent])
      if (is_legal(s, agent, place_action(held, c))) out.push_back(place_action(held, c));
  }
  if (s.variant == Variant::cook)
    for (int p = 0; p < static_cast<int>(s.pieces.size()); ++p)
      if (is_legal(s, agent, cut_action(p))) out.push_back(cut_action(p));
  return out;
}

GridState step(const GridState& s, const JointAction& joint) {
  if (static_cast<int>(joint.size()) != s.n_agents)
    throw std::invalid_argument("joint action length must equal n_agents");
  for (int a = 0; a < s.n_agents; ++a)
    if (!is_legal(s, a, joint[a]))
      throw IllegalActionError(a, "illegal action for agent " + std::to_string(a) + ": " +
                                      to_string(joint[a]));

  // Conflict resolution: same piece operand among pick/cut, or same place
  // target cell -> lowest agent index keeps its action, the rest wait.
  JointAction acts = joint;
  for (int a = 0; a < s.n_agents; ++a) {
    if (acts[a].verb == Verb::wait) continue;
    for (int b = a + 1; b < s.n_agents; ++b) {
      if (acts[b].verb == Verb::wait) continue;
      bool piece_clash = (acts[a].verb == Verb::pick_up || acts[a].verb == Verb::cut) &&
                         (acts[b].verb == Verb::pick_up || acts[b].verb == Verb::cut) &&
                         acts[a].piece == acts[b].piece;
      bool cell_clash = acts[a].verb == Verb::place && acts[b].verb == Verb::place &&
                        acts[a].target == acts[b].target;
      if (piece_clash || cell_clash) acts[b] = wait_action();
    }
  }

  GridState next = s;
  for (int a = 0; a < s.n_agents; ++a) {
    const Action& act = acts[a];
    switch (act.verb) {
      case Verb::wait: break;
      case Verb::pick_up: {
        int cell = next.piece_cell(act.piece);
        next.cells[cell] = -1;
        next.hands[a] = act.piece;
        break;
      }
      case Verb::place:
        next.cells[act.target] = act.piece;
        next.hands[a] = -1;
        break;
      case Verb::cut:
        next.pieces[act.piece].state = PieceState::cut;
        break;
    }
  }
  next.turn = s.turn + 1;
  return next;
}

bool is_success(const GridState& s) {
  for (const auto& slot : s.slots)
    if (!s.slot_filled(slot)) return false;
  return true;
}

namespace {

// Agents that could pick the piece right now: the holder, or everyone whose
// region contains the piece's cell.
std::vector<int> piece_holders(const GridState& s, int piece_id) {
  std::vector<int> out;
  int hand = s.holder_of(piece_id);
  if (hand >= 0) {
    out.push_back(hand);
    return out;
  }
  int cell = s.piece_cell(piece_id);
  if (cell < 0) return out;
  for (int a = 0; a < s.n_agents; ++a)
    if (s.in_region(a, cell)) out.push_back(a);
  return out;
}

int transport_cost(const GridState& s, const std::vector<std::vector<int>>& dist, int piece_id,
                   const GoalSlot& slot) {
  const Piece& piece = s.pieces[piece_id];
  auto holders = piece_holders(s, piece_id);
  if (holders.empty()) return kUnreachable;
  bool needs_cut = slot.requires_cut && piece.state == PieceState::whole;
  if (!needs_cut) {
    int best = kUnreachable;
    for (int a : holders)
      if (dist[a][slot.owner] < best) best = dist[a][slot.owner];
    if (best >= kUnreachable) return kUnreachable;
    return 2 * best + 1;
  }
  if (s.cutting_board < 0) return kUnreachable;
  std::vector<int> board_agents;
  for (int a = 0; a < s.n_agents; ++a)
    if (s.in_region(a, s.cutting_board)) board_agents.push_back(a);
  if (board_agents.empty()) return kUnreachable;
  int d1 = kUnreachable, d2 = kUnreachable;
  for (int b : board_agents) {
    for (int a : holders) d1 = std::min(d1, dist[a][b]);
    d2 = std::min(d2, dist[b][slot.owner]);
  }
  if (d1 >= kUnreachable || d2 >= kUnreachable) return kUnreachable;
  return (2 * d1 + 1) + 1 + (2 * d2 + 1);
}

}  // namespace

// Per unfinished slot, the cheapest matching piece's transport cost on the
// region-adjacency graph: 2*hops + 1 final place, plus a board detour and one
// cut action when the slot needs a cut piece. A deliberate underestimate.
// Pieces already sitting on a correctly-filled slot are not candidates:
// using one would unsolve that slot, and counting it flattens the
// steps-left gradient the planner relies on.
int heuristic_steps_left(const GridState& s) {
  auto dist = agent_distances(s);
  long long total = 0;
  for (const auto& slot : s.slots) {
    if (s.slot_filled(slot)) continue;
    int best = kUnreachable;
    for (const auto& piece : s.pieces) {
      if (piece.shape != slot.shape || piece.color != slot.color) continue;
      if (piece.state == PieceState::cut && !slot.requires_cut) continue;
      int cell = s.piece_cell(piece.id);
      if (cell >= 0) {
        const GoalSlot* parked = s.slot_at(cell);
        if (parked && s.slot_filled(*parked)) continue;
      }
      best = std::min(best, transport_cost(s, dist, piece.id, slot));
    }
    if (best >= kUnreachable) return kUnreachable;
    total += best;
  }
  return static_cast<int>(std::min<long long>(total, kUnreachable));
}

PartialObservation observe(const GridState& s, int agent) {
  PartialObservation obs;
  obs.agent = agent;
  obs.step = s.turn;
  obs.visible = s.regions[agent];
  obs.contents.reserve(obs.visible.size());
  obs.cut_states.reserve(obs.visible.size());
  for (int c : obs.visible) {
    int p = s.cells[c];
    obs.contents.push_back(p);
    obs.cut_states.push_back(p >= 0 ? s.pieces[p].state : PieceState::whole);
  }
  obs.hand = s.hands[agent];
  obs.hand_state = obs.hand >= 0 ? s.pieces[obs.hand].state : PieceState::whole;
  return obs;
}

namespace {

bool matching_unfilled_slot(const GridState& s, int agent, const Piece& piece, int* slot_out) {
  for (size_t i = 0; i < s.slots.size(); ++i) {
    const auto& slot = s.slots[i];
    if (slot.owner != agent || s.slot_filled(slot)) continue;
    if (s.matches(slot, piece)) {
      if (slot_out) *slot_out = static_cast<int>(i);
      return true;
    }
  }
  return false;
}

// Whole piece whose shape/color match one of the agent's unfilled cut slots.
bool cut_precursor_for(const GridState& s, int agent, const Piece& piece) {
  if (piece.state != PieceState::whole) return false;
  for (const auto& slot : s.slots) {
    if (slot.owner != agent || !slot.requires_cut || s.slot_filled(slot)) continue;
    if (slot.shape == piece.shape && slot.color == piece.color) return true;
  }
  return false;
}

// Placeable as-is onto some unfilled slot of `agent`.
bool wanted_by(const GridState& s, int agent, const Piece& piece) {
  for (const auto& slot : s.slots) {
    if (slot.owner != agent || s.slot_filled(slot)) continue;
    if (s.matches(slot, piece)) return true;
  }
  return false;
}

bool on_correctly_filled_slot(const GridState& s, int piece_id) {
  int cell = s.piece_cell(piece_id);
  if (cell < 0) return false;
  const GoalSlot* slot = s.slot_at(cell);
  return slot && s.slot_filled(*slot);
}

int first_empty(const GridState& s, const std::vector<int>& cells, bool skip_fixtures) {
  for (int c : cells) {
    if (s.cells[c] >= 0) continue;
    if (skip_fixtures && (s.slot_at(c) || c == s.cutting_board)) continue;
    return c;
  }
  return -1;
}

std::vector<int> private_cells(const GridState& s, int agent) {
  std::vector<int> out;
  for (int c : s.regions[agent]) {
    bool shared = false;
    for (int b = 0; b < s.n_agents && !shared; ++b)
      if (b != agent && s.in_region(b, c)) shared = true;
    if (!shared) out.push_back(c);
  }
  return out;
}

Action park_held_piece(const GridState& s, int agent) {
  int held = s.hands[agent];
  int cell = first_empty(s, private_cells(s, agent), true);
  if (cell < 0) cell = first_empty(s, s.regions[agent], true);
  if (cell >= 0) return place_action(held, cell);
  return wait_action();
}

Action game_policy(const GridState& s, int agent, int direction) {
  int n = s.n_agents;
  int next_agent = ((agent + direction) % n + n) % n;
  int prev_agent = ((agent - direction) % n + n) % n;
  auto outgoing = shared_cells(s, agent, next_agent);
  auto incoming = shared_cells(s, prev_agent, agent);

  int held = s.hands[agent];
  if (held >= 0) {
    int slot_idx = -1;
    if (matching_unfilled_slot(s, agent, s.pieces[held], &slot_idx))
      return place_action(held, s.slots[slot_idx].cell);
    int cell = first_empty(s, outgoing, true);
    if (cell >= 0) return place_action(held, cell);
    return park_held_piece(s, agent);
  }

  // Wanted piece anywhere in reach, lowest id first.
  for (const auto& piece : s.pieces) {
    if (!wanted_by(s, agent, piece)) continue;
    if (on_correctly_filled_slot(s, piece.id)) continue;
    int cell = s.piece_cell(piece.id);
    if (cell >= 0 && s.in_region(agent, cell)) return pick_action(piece.id);
  }
  // Unwanted piece on a private cell or in the strictly-incoming channel.
  std::vector<int> sources = private_cells(s, agent);
  for (int c : incoming)
    if (!std::binary_search(outgoing.begin(), outgoing.end(), c)) sources.push_back(c);
  std::sort(sources.begin(), sources.end());
  for (const auto& piece : s.pieces) {
    if (wanted_by(s, agent, piece)) continue;
    if (on_correctly_filled_slot(s, piece.id)) continue;
    int cell = s.piece_cell(piece.id);
    if (cell >= 0 && std::binary_search(sources.begin(), sources.end(), cell))
      return pick_action(piece.id);
  }
  return wait_action();
}

// Own-recipe work, in priority order; wait_action() when nothing applies.
// Cut precursors are only grabbed while the board is free, otherwise the
// agent would cycle between picking and parking the same piece.
Action cook_own_work(const GridState& s, int agent) {
  int held = s.hands[agent];
  bool board_mine = s.cutting_board >= 0 && s.in_region(agent, s.cutting_board);
  bool board_free = board_mine && s.cells[s.cutting_board] < 0;
  if (held >= 0) {
    int slot_idx = -1;
    if (matching_unfilled_slot(s, agent, s.pieces[held], &slot_idx))
      return place_action(held, s.slots[slot_idx].cell);
    if (cut_precursor_for(s, agent, s.pieces[held]) && board_free)
      return place_action(held, s.cutting_board);
    return Action{};
  }
  if (board_mine && s.cells[s.cutting_board] >= 0) {
    const Piece& on_board = s.pieces[s.cells[s.cutting_board]];
    if (cut_precursor_for(s, agent, on_board)) return cut_action(on_board.id);
  }
  for (const auto& piece : s.pieces) {
    if (on_correctly_filled_slot(s, piece.id)) continue;
    int cell = s.piece_cell(piece.id);
    if (cell < 0 || !s.in_region(agent, cell)) continue;
    if (cell == s.cutting_board && cut_precursor_for(s, agent, piece)) continue;  // cut first
    if (wanted_by(s, agent, piece)) return pick_action(piece.id);
    if (cut_precursor_for(s, agent, piece) && board_free) return pick_action(piece.id);
  }
  return Action{};
}

// Passing work for other agents' recipes.
Action cook_partner_work(const GridState& s, int agent) {
  auto partner_wants = [&](const Piece& piece) {
    for (int b = 0; b < s.n_agents; ++b) {
      if (b == agent) continue;
      if (wanted_by(s, b, piece) || cut_precursor_for(s, b, piece)) return b;
    }
    return -1;
  };
  int held = s.hands[agent];
  if (held >= 0) {
    int b = partner_wants(s.pieces[held]);
    if (b >= 0 && !wanted_by(s, agent, s.pieces[held]) &&
        !cut_precursor_for(s, agent, s.pieces[held])) {
      auto channel = shared_cells(s, agent, b);
      int cell = first_empty(s, channel, true);
      if (cell >= 0) return place_action(held, cell);
    }
    return Action{};
  }
  auto mine = private_cells(s, agent);
  for (const auto& piece : s.pieces) {
    if (on_correctly_filled_slot(s, piece.id)) continue;
    if (wanted_by(s, agent, piece) || cut_precursor_for(s, agent, piece)) continue;
    int cell = s.piece_cell(piece.id);
    if (cell < 0 || !std::binary_search(mine.begin(), mine.end(), cell)) continue;
    if (partner_wants(piece) >= 0) return pick_action(piece.id);
  }
  return Action{};
}

Action cook_policy(const GridState& s, int agent, bool own_first) {
  Action first = own_first ? cook_own_work(s, agent) : cook_partner_work(s, agent);
  if (!(first == Action{})) return first;
  Action second = own_first ? cook_partner_work(s, agent) : cook_own_work(s, agent);
  if (!(second == Action{})) return second;
  // A piece nobody can use parked on the cutting board starves every
  // remaining cut slot; move it off.
  if (s.hands[agent] < 0 && s.cutting_board >= 0 && s.in_region(agent, s.cutting_board) &&
      s.cells[s.cutting_board] >= 0) {
    const Piece& blocker = s.pieces[s.cells[s.cutting_board]];
    bool useful = false;
    for (int b = 0; b < s.n_agents && !useful; ++b)
      useful = wanted_by(s, b, blocker) || cut_precursor_for(s, b, blocker);
    bool cut_needed = false;
    for (const auto& slot : s.slots)
      cut_needed = cut_needed || (slot.requires_cut && !s.slot_filled(slot));
    if (!useful && cut_needed) return pick_action(blocker.id);
  }
  if (s.hands[agent] >= 0) return park_held_piece(s, agent);
  return wait_action();
}

}  // namespace

Action cooperator_policy(CooperatorKind kind, const GridState& s, int agent,
                         std::mt19937_64& rng) {
  (void)rng;
  Action a;
  switch (kind) {
    case CooperatorKind::clockwise: a = game_policy(s, agent, +1); break;
    case CooperatorKind::counter_clockwise: a = game_policy(s, agent, -1); break;
    case CooperatorKind::selfish: a = cook_policy(s, agent, true); break;
    case CooperatorKind::altruistic: a = cook_policy(s, agent, false); break;
  }
  if (!is_legal(s, agent, a)) return wait_action();
  return a;
}

}  // namespace combo::gridworld
