#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace combo::gridworld {

enum class Variant : int { game = 0, cook = 1 };
enum class Verb : int { wait = 0, pick_up = 1, place = 2, cut = 3 };
enum class PieceState : int { whole = 0, cut = 1 };

struct Piece {
  int id = 0;
  int shape = 0;
  int color = 0;
  PieceState state = PieceState::whole;
  bool operator==(const Piece&) const = default;
};

struct Action {
  Verb verb = Verb::wait;
  int piece = -1;   // pick_up / place / cut operand
  int target = -1;  // place target cell
  bool operator==(const Action&) const = default;
};
using JointAction = std::vector<Action>;

inline Action wait_action() { return Action{}; }
inline Action pick_action(int piece) { return Action{Verb::pick_up, piece, -1}; }
inline Action place_action(int piece, int cell) { return Action{Verb::place, piece, cell}; }
inline Action cut_action(int piece) { return Action{Verb::cut, piece, -1}; }
std::string to_string(const Action& a);

struct GoalSlot {
  int cell = -1;
  int owner = 0;
  int shape = 0;
  int color = 0;
  bool requires_cut = false;
  bool operator==(const GoalSlot&) const = default;
};

struct EpisodeConfig {
  Variant variant = Variant::game;
  int n_agents = 4;
  int width = 8;
  int height = 8;
  int n_pieces = 8;
  int horizon = 30;
  std::uint64_t seed = 0;
  int slots_per_agent = 0;  // 0 = distribute n_pieces evenly across agents
  int n_shapes = 4;
  int n_colors = 4;
};

/// Full symbolic world state. Board cells hold at most one piece; goal slots
/// and the cutting board are fixture attributes of cells, so a fixture cell
/// can also hold a piece. Immutable by convention: step() returns a new state.
struct GridState {
  Variant variant = Variant::game;
  int width = 8;
  int height = 8;
  int n_agents = 2;
  std::vector<int> cells;                 // piece id or -1, row-major
  std::vector<Piece> pieces;              // indexed by id
  std::vector<GoalSlot> slots;
  int cutting_board = -1;                 // cell index, cook variant only
  std::vector<std::vector<int>> regions;  // sorted reachable cells per agent
  std::vector<int> hands;                 // piece id or -1 per agent
  int turn = 0;

  int n_cells() const { return width * height; }
  int cell_index(int row, int col) const { return row * width + col; }
  bool in_region(int agent, int cell) const;
  const GoalSlot* slot_at(int cell) const;
  int piece_cell(int piece_id) const;  // -1 if held or absent
  int holder_of(int piece_id) const;   // agent index or -1
  bool piece_present(int piece_id) const;
  bool slot_filled(const GoalSlot& slot) const;
  bool matches(const GoalSlot& slot, const Piece& piece) const;

  /// Rebuild the region lookup mask; call after mutating `regions` by hand.
  void rebuild_masks() const;

  bool operator==(const GridState& other) const;

 private:
  mutable std::vector<std::uint8_t> region_mask_;
};

struct PartialObservation {
  int agent = 0;
  int step = 0;
  std::vector<int> visible;             // sorted cell indices
  std::vector<int> contents;            // piece id or -1, parallel to visible
  std::vector<PieceState> cut_states;   // parallel to visible
  int hand = -1;                        // own held piece id or -1
  PieceState hand_state = PieceState::whole;
};

struct IllegalActionError : std::runtime_error {
  int agent;
  IllegalActionError(int agent_idx, const std::string& what)
      : std::runtime_error(what), agent(agent_idx) {}
};

/// Steps-left value returned when a required piece cannot reach its slot
/// (disconnected passing graph or no matching piece left).
inline constexpr int kUnreachable = 1'000'000;

std::vector<std::vector<int>> make_regions(int n_agents, int width, int height);
std::vector<int> shared_cells(const GridState& s, int agent_a, int agent_b);

/// BFS hop counts on the region-adjacency graph; kUnreachable when disconnected.
std::vector<std::vector<int>> agent_distances(const GridState& s);

GridState new_game(const EpisodeConfig& config);
bool is_legal(const GridState& s, int agent, const Action& a);
std::vector<Action> legal_actions(const GridState& s, int agent);
GridState step(const GridState& s, const JointAction& joint);
bool is_success(const GridState& s);
int heuristic_steps_left(const GridState& s);
PartialObservation observe(const GridState& s, int agent);

enum class CooperatorKind : int {
  clockwise = 0,
  counter_clockwise = 1,
  selfish = 2,
  altruistic = 3,
};
std::string to_string(CooperatorKind kind);
CooperatorKind cooperator_kind_from_string(const std::string& name);

/// Deterministic given the state; rng is accepted for interface parity but the
/// built-in kinds never draw from it.
Action cooperator_policy(CooperatorKind kind, const GridState& s, int agent,
                         std::mt19937_64& rng);

}  // namespace combo::gridworld
