#include "rdet/montage.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace rdet::viz {

namespace {

// 3x5 glyphs as literal rows, top to bottom.
struct Glyph {
  char ch;
  const char* rows[5];
};

constexpr Glyph kGlyphs[] = {
    {'0', {"111", "101", "101", "101", "111"}},
    {'1', {"010", "110", "010", "010", "111"}},
    {'2', {"111", "001", "111", "100", "111"}},
    {'3', {"111", "001", "111", "001", "111"}},
    {'4', {"101", "101", "111", "001", "001"}},
    {'5', {"111", "100", "111", "001", "111"}},
    {'6', {"111", "100", "111", "101", "111"}},
    {'7', {"111", "001", "001", "010", "010"}},
    {'8', {"111", "101", "111", "101", "111"}},
    {'9', {"111", "101", "111", "001", "111"}},
    {'.', {"000", "000", "000", "000", "010"}},
    {'-', {"000", "000", "111", "000", "000"}},
};

const Glyph* find_glyph(char c) {
  for (const Glyph& g : kGlyphs)
    if (g.ch == c) return &g;
  return nullptr;
}

void put_pixel(imaging::Image& img, int y, int x, double value) {
  if (y < 0 || y >= img.height() || x < 0 || x >= img.width()) return;
  for (int c = 0; c < img.channels(); ++c) img.at(y, x, c) = value;
}

}  // namespace

imaging::Image montage_grid(const std::vector<imaging::Patch>& patches,
                            int cols, int sep) {
  if (patches.empty()) throw std::invalid_argument("montage_grid: no patches");
  if (cols <= 0 || sep < 0) throw std::invalid_argument("montage_grid: bad layout");
  const int ph = patches[0].height();
  const int pw = patches[0].width();
  for (const auto& p : patches)
    if (p.height() != ph || p.width() != pw)
      throw std::invalid_argument("montage_grid: patch sizes differ");

  const int n = int(patches.size());
  const int rows = (n + cols - 1) / cols;
  imaging::Image out(rows * ph + (rows + 1) * sep,
                     cols * pw + (cols + 1) * sep, 3, 0.0);
  for (int i = 0; i < n; ++i) {
    const int gy = i / cols, gx = i % cols;
    const int oy = sep + gy * (ph + sep);
    const int ox = sep + gx * (pw + sep);
    const imaging::Patch& p = patches[size_t(i)];
    for (int y = 0; y < ph; ++y)
      for (int x = 0; x < pw; ++x)
        for (int c = 0; c < 3; ++c)
          out.at(oy + y, ox + x, c) =
              p.at(y, x, p.channels() == 3 ? c : 0);
  }
  return out;
}

void draw_box_outline(imaging::Image& img, const geometry::BoxCorners& box,
                      double value) {
  const int x0 = int(std::floor(box.x_min));
  const int y0 = int(std::floor(box.y_min));
  const int x1 = int(std::ceil(box.x_max)) - 1;
  const int y1 = int(std::ceil(box.y_max)) - 1;
  for (int x = x0; x <= x1; ++x) {
    put_pixel(img, y0, x, value);
    put_pixel(img, y1, x, value);
  }
  for (int y = y0; y <= y1; ++y) {
    put_pixel(img, y, x0, value);
    put_pixel(img, y, x1, value);
  }
}

int draw_text(imaging::Image& img, const std::string& text, int x, int y,
              double value) {
  int cx = x;
  for (char ch : text) {
    const Glyph* g = find_glyph(ch);
    if (!g) throw std::invalid_argument("draw_text: unsupported character");
    for (int ry = 0; ry < 5; ++ry)
      for (int rx = 0; rx < 3; ++rx)
        if (g->rows[ry][rx] == '1') put_pixel(img, y + ry, cx + rx, value);
    cx += 4;
  }
  return cx - x - (text.empty() ? 0 : 1);
}

std::string format_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace rdet::viz
