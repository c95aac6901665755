#include "rdet/warp.hpp"

#include <stdexcept>

namespace rdet::imaging {

Patch warp_region(const Image& img, const geometry::BoxCorners& box,
                  const WarpConfig& cfg, const std::vector<double>& fill_mean) {
  using geometry::BoxCorners;
  if (!cfg.valid()) throw std::domain_error("warp_region: invalid WarpConfig");
  if (geometry::area(box) <= 0.0)
    throw std::domain_error("warp_region: degenerate box");
  if (int(fill_mean.size()) != img.channels())
    throw std::invalid_argument("warp_region: fill_mean channel mismatch");

  const double out = cfg.out_size;
  const double inner = out - 2.0 * cfg.padding_p;

  // Content rectangle: the region that maps onto the central inner^2 area.
  BoxCorners content = box;
  if (cfg.mode != WarpMode::kWarp) {
    const double side = std::max(geometry::width(box), geometry::height(box));
    const double cx = 0.5 * (box.x_min + box.x_max);
    const double cy = 0.5 * (box.y_min + box.y_max);
    content = {cx - 0.5 * side, cy - 0.5 * side, cx + 0.5 * side,
               cy + 0.5 * side};
  }
  // Dilating each side by dims * p / inner makes the warped context exactly
  // p output pixels wide.
  const double dx = geometry::width(content) * cfg.padding_p / inner;
  const double dy = geometry::height(content) * cfg.padding_p / inner;
  const BoxCorners src = {content.x_min - dx, content.y_min - dy,
                          content.x_max + dx, content.y_max + dy};
  const double sx_scale = geometry::width(src) / out;
  const double sy_scale = geometry::height(src) / out;

  const bool mask_outside = cfg.mode == WarpMode::kTightestSquareWithoutContext;
  Patch patch(cfg.out_size, cfg.out_size, img.channels());
  for (int v = 0; v < cfg.out_size; ++v) {
    const double sy = src.y_min + (v + 0.5) * sy_scale;
    for (int u = 0; u < cfg.out_size; ++u) {
      const double sx = src.x_min + (u + 0.5) * sx_scale;
      const bool outside_proposal =
          mask_outside && (sx < box.x_min || sx > box.x_max || sy < box.y_min ||
                           sy > box.y_max);
      for (int c = 0; c < img.channels(); ++c) {
        const double fill = fill_mean[size_t(c)];
        patch.at(v, u, c) =
            outside_proposal
                ? fill
                : bilinear_sample<double>(img.planes[size_t(c)], sx, sy, fill);
      }
    }
  }
  return patch;
}

}  // namespace rdet::imaging
