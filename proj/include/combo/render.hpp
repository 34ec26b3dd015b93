#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "combo/dataset.hpp"

namespace combo::harness {

/// RGB raster of a state: region tints, goal-slot borders with requirement
/// glyphs, pieces as shape glyphs in their colour, hand insets below the
/// board. Deterministic.
std::vector<std::uint8_t> rasterize(const gridworld::GridState& s, int* width_px,
                                    int* height_px);

/// Lossless binary PPM (P6).
void render_state(const gridworld::GridState& s, const std::string& path);

/// One image per step including the initial state; returns the image count.
int render_episode(const EpisodeRecord& rec, const std::string& dir);

}  // namespace combo::harness
