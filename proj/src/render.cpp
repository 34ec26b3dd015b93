#include "combo/render.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace combo::harness {

using gridworld::GridState;

namespace {

constexpr int kCell = 12;

struct Rgb {
  std::uint8_t r, g, b;
};

constexpr Rgb kPieceColors[4] = {{200, 40, 40}, {40, 160, 60}, {50, 90, 210}, {220, 180, 40}};
constexpr Rgb kAgentTints[4] = {{240, 224, 224}, {224, 240, 224}, {224, 228, 244}, {244, 240, 218}};
constexpr Rgb kShared{210, 210, 210};
constexpr Rgb kWhite{250, 250, 250};
constexpr Rgb kBoardBrown{150, 110, 70};

bool shape_mask(int shape, int x, int y) {
  // 12x12 glyphs: square, circle, triangle, diamond.
  double cx = x - 5.5, cy = y - 5.5;
  switch (shape % 4) {
    case 0: return x >= 2 && x <= 9 && y >= 2 && y <= 9;
    case 1: return cx * cx + cy * cy <= 4.3 * 4.3;
    case 2: return y >= 2 && y <= 9 && std::abs(cx) <= (y - 1) * 0.55;
    default: return std::abs(cx) + std::abs(cy) <= 5.0;
  }
}

Rgb dim(Rgb c) { return {static_cast<std::uint8_t>(c.r / 2 + 90), static_cast<std::uint8_t>(c.g / 2 + 90),
                         static_cast<std::uint8_t>(c.b / 2 + 90)}; }

}  // namespace

std::vector<std::uint8_t> rasterize(const GridState& s, int* width_px, int* height_px) {
  int W = s.width * kCell;
  int H = s.height * kCell + 2 + kCell;  // board + separator + hand strip
  std::vector<std::uint8_t> img(static_cast<size_t>(W) * H * 3, 255);
  auto put = [&](int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= W || y >= H) return;
    size_t off = (static_cast<size_t>(y) * W + x) * 3;
    img[off] = c.r;
    img[off + 1] = c.g;
    img[off + 2] = c.b;
  };
  auto draw_piece = [&](int px, int py, const gridworld::Piece& piece) {
    Rgb col = kPieceColors[piece.color % 4];
    for (int y = 0; y < kCell; ++y)
      for (int x = 0; x < kCell; ++x)
        if (shape_mask(piece.shape, x, y)) {
          Rgb c = col;
          // Cut pieces show a pale split on the right half.
          if (piece.state == gridworld::PieceState::cut && x > 5) c = dim(col);
          put(px + x, py + y, c);
        }
  };

  for (int r = 0; r < s.height; ++r) {
    for (int c = 0; c < s.width; ++c) {
      int cell = s.cell_index(r, c);
      int owners = 0, owner = -1;
      for (int a = 0; a < s.n_agents; ++a)
        if (s.in_region(a, cell)) {
          ++owners;
          owner = a;
        }
      Rgb bg = owners == 0 ? kWhite : owners == 1 ? kAgentTints[owner % 4] : kShared;
      if (cell == s.cutting_board) bg = kBoardBrown;
      for (int y = 0; y < kCell; ++y)
        for (int x = 0; x < kCell; ++x) put(c * kCell + x, r * kCell + y, bg);
      if (const gridworld::GoalSlot* slot = s.slot_at(cell)) {
        Rgb border = kPieceColors[slot->color % 4];
        for (int k = 0; k < kCell; ++k) {
          put(c * kCell + k, r * kCell, border);
          put(c * kCell + k, r * kCell + kCell - 1, border);
          put(c * kCell, r * kCell + k, border);
          put(c * kCell + kCell - 1, r * kCell + k, border);
        }
        // Dim glyph of the required shape.
        for (int y = 2; y < kCell - 2; ++y)
          for (int x = 2; x < kCell - 2; ++x)
            if (shape_mask(slot->shape, x, y)) put(c * kCell + x, r * kCell + y, dim(border));
      }
      if (s.cells[cell] >= 0) draw_piece(c * kCell, r * kCell, s.pieces[s.cells[cell]]);
    }
  }
  // Separator.
  for (int x = 0; x < W; ++x)
    for (int y = 0; y < 2; ++y) put(x, s.height * kCell + y, Rgb{40, 40, 40});
  // Hand insets.
  int strip_y = s.height * kCell + 2;
  for (int a = 0; a < s.n_agents; ++a) {
    Rgb tint = kAgentTints[a % 4];
    for (int y = 0; y < kCell; ++y)
      for (int x = 0; x < kCell; ++x) put(a * (kCell + 2) + x, strip_y + y, tint);
    if (s.hands[a] >= 0) draw_piece(a * (kCell + 2), strip_y, s.pieces[s.hands[a]]);
  }
  if (width_px) *width_px = W;
  if (height_px) *height_px = H;
  return img;
}

void render_state(const GridState& s, const std::string& path) {
  int w = 0, h = 0;
  auto img = rasterize(s, &w, &h);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("render: cannot write " + path);
  f << "P6\n" << w << " " << h << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
}

int render_episode(const EpisodeRecord& rec, const std::string& dir) {
  std::filesystem::create_directories(dir);
  GridState s = rec.initial;
  int count = 0;
  char name[32];
  std::snprintf(name, sizeof(name), "step_%03d.ppm", count);
  render_state(s, dir + "/" + name);
  ++count;
  for (const auto& joint : rec.actions) {
    s = gridworld::step(s, joint);
    std::snprintf(name, sizeof(name), "step_%03d.ppm", count);
    render_state(s, dir + "/" + name);
    ++count;
  }
  return count;
}

}  // namespace combo::harness
