#include "rdet/proposals.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <stdexcept>

#include "rdet/rng.hpp"

namespace rdet::proposals {

std::vector<double> axis_positions(double extent, double side, double stride) {
  if (side >= extent) return {0.0};
  const int n = int(std::ceil((extent - side) / stride));
  std::vector<double> pos;
  for (int i = 0; i <= n; ++i) pos.push_back(std::min(i * stride, extent - side));
  return pos;
}

std::vector<BoxCorners> dedup_boxes(const std::vector<BoxCorners>& boxes,
                                    double tol) {
  auto key = [tol](double v) { return std::llround(v / tol); };
  std::map<std::array<long long, 4>, size_t> seen;
  std::vector<BoxCorners> out;
  for (const BoxCorners& b : boxes) {
    const std::array<long long, 4> k{key(b.x_min), key(b.y_min), key(b.x_max),
                                     key(b.y_max)};
    if (seen.emplace(k, out.size()).second) out.push_back(b);
  }
  return out;
}

ProposalSet grid_propose(const GridProposerConfig& cfg, int image_w,
                         int image_h, int image_id) {
  if (cfg.stride_fraction <= 0.0 || cfg.stride_fraction > 1.0)
    throw std::invalid_argument("grid_propose: bad stride_fraction");
  for (double s : cfg.scales)
    if (s <= 0.0) throw std::invalid_argument("grid_propose: bad scale");
  const std::vector<double> aspects =
      cfg.aspect_ratios.empty() ? std::vector<double>{1.0} : cfg.aspect_ratios;

  // Lay the grid out at the normalized width, then map back.
  const double f =
      cfg.resize_width > 0.0 ? cfg.resize_width / double(image_w) : 1.0;
  const double w = image_w * f;
  const double h = image_h * f;

  std::vector<BoxCorners> boxes;
  for (double scale : cfg.scales) {
    for (double a : aspects) {
      if (a <= 0.0) throw std::invalid_argument("grid_propose: bad aspect");
      const double bw = scale * std::sqrt(a);
      const double bh = scale / std::sqrt(a);
      const double stride = cfg.stride_fraction * scale;
      for (double y : axis_positions(h, bh, stride))
        for (double x : axis_positions(w, bw, stride))
          boxes.push_back(geometry::clip_box(
              {x / f, y / f, (x + bw) / f, (y + bh) / f}, image_w, image_h));
    }
  }
  std::vector<BoxCorners> kept;
  for (const BoxCorners& b : boxes)
    if (geometry::area(b) > 0.0) kept.push_back(b);
  return {image_id, dedup_boxes(kept), "grid"};
}

ProposalSet jitter_propose(const std::vector<BoxCorners>& gt_boxes,
                           const std::vector<double>& noise_scales, int count,
                           uint64_t seed, int image_w, int image_h,
                           int image_id) {
  if (count < 0) throw std::invalid_argument("jitter_propose: count < 0");
  SplitMix64 rng(seed);
  std::vector<BoxCorners> boxes;
  for (double sigma : noise_scales) {
    for (const BoxCorners& gt : gt_boxes) {
      const geometry::BoxCenter c = geometry::to_center(gt);
      for (int i = 0; i < count; ++i) {
        geometry::BoxCenter j = c;
        j.x += sigma * c.w * rng.normal();
        j.y += sigma * c.h * rng.normal();
        j.w *= std::exp(sigma * rng.normal());
        j.h *= std::exp(sigma * rng.normal());
        const BoxCorners clipped = geometry::clip_box(
            geometry::to_corners(j), image_w, image_h);
        if (geometry::area(clipped) > 0.0) boxes.push_back(clipped);
      }
    }
  }
  return {image_id, boxes, "jitter"};
}

double proposal_recall(const std::vector<BoxCorners>& proposals,
                       const std::vector<BoxCorners>& gt_boxes,
                       double iou_thresh) {
  if (gt_boxes.empty()) return 1.0;
  int matched = 0;
  for (const BoxCorners& gt : gt_boxes) {
    for (const BoxCorners& p : proposals) {
      if (geometry::iou(p, gt) >= iou_thresh) {
        ++matched;
        break;
      }
    }
  }
  return double(matched) / double(gt_boxes.size());
}

}  // namespace rdet::proposals
