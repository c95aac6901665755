#pragma once

#include <string>
#include <vector>

#include "rdet/geometry.hpp"
#include "rdet/image.hpp"

namespace rdet::viz {

// Packs equally sized patches into a row-major grid with `sep` pixels of
// black separator; always emits 3 channels so overlays stay white in the
// saved PPM. Grayscale patches are replicated across channels.
imaging::Image montage_grid(const std::vector<imaging::Patch>& patches,
                            int cols, int sep = 2);

// One-pixel rectangle outline on integer pixel coordinates, clipped to the
// image. The box is interpreted half-open, so the outline hugs its border.
void draw_box_outline(imaging::Image& img, const geometry::BoxCorners& box,
                      double value = 1.0);

// 3x5 bitmap digits; supports 0-9, '.', '-'. Returns the text width in
// pixels (glyphs plus 1-pixel gaps).
int draw_text(imaging::Image& img, const std::string& text, int x, int y,
              double value = 1.0);

// Two-decimal fixed formatting used for on-image activation labels.
std::string format_label(double v);

}  // namespace rdet::viz
