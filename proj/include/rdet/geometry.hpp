#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace rdet::geometry {

// Boxes live in continuous pixel coordinates with exclusive max edges:
// width = x_max - x_min, no +1 pixel convention anywhere in the project.
struct BoxCorners {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;
};

struct BoxCenter {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;
};

// Scale-invariant center shift (dx, dy) and log-space size change (dw, dh).
struct RegressionDeltas {
  double dx = 0.0;
  double dy = 0.0;
  double dw = 0.0;
  double dh = 0.0;
};

// exp(4) ~ 54.6x: caps box growth when applying deltas from an untrained
// or badly extrapolating regressor.
inline constexpr double kLogScaleClamp = 4.0;

inline double width(const BoxCorners& b) { return b.x_max - b.x_min; }
inline double height(const BoxCorners& b) { return b.y_max - b.y_min; }

inline double area(const BoxCorners& b) {
  return std::max(0.0, width(b)) * std::max(0.0, height(b));
}

// Intersection-over-union. Degenerate (zero-area) operands yield 0.
inline double iou(const BoxCorners& a, const BoxCorners& b) {
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = area(a) + area(b) - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

inline BoxCenter to_center(const BoxCorners& b) {
  return {0.5 * (b.x_min + b.x_max), 0.5 * (b.y_min + b.y_max), width(b),
          height(b)};
}

inline BoxCorners to_corners(const BoxCenter& b) {
  return {b.x - 0.5 * b.w, b.y - 0.5 * b.h, b.x + 0.5 * b.w, b.y + 0.5 * b.h};
}

inline void require_positive_size(const BoxCenter& b, const char* what) {
  if (!(b.w > 0.0) || !(b.h > 0.0))
    throw std::domain_error(std::string(what) +
                            ": box width/height must be positive");
}

// Ghat_x = P_w dx + P_x, Ghat_y = P_h dy + P_y,
// Ghat_w = P_w exp(dw), Ghat_h = P_h exp(dh); dw, dh clamped to +-4.
inline BoxCenter apply_deltas(const BoxCenter& p, const RegressionDeltas& d) {
  require_positive_size(p, "apply_deltas");
  const double dw = std::clamp(d.dw, -kLogScaleClamp, kLogScaleClamp);
  const double dh = std::clamp(d.dh, -kLogScaleClamp, kLogScaleClamp);
  return {p.w * d.dx + p.x, p.h * d.dy + p.y, p.w * std::exp(dw),
          p.h * std::exp(dh)};
}

// t_x = (G_x - P_x)/P_w, t_y = (G_y - P_y)/P_h,
// t_w = log(G_w/P_w), t_h = log(G_h/P_h).
inline RegressionDeltas regression_targets(const BoxCenter& p,
                                           const BoxCenter& g) {
  require_positive_size(p, "regression_targets");
  require_positive_size(g, "regression_targets");
  return {(g.x - p.x) / p.w, (g.y - p.y) / p.h, std::log(g.w / p.w),
          std::log(g.h / p.h)};
}

inline BoxCorners clip_box(const BoxCorners& b, double img_w, double img_h) {
  return {std::clamp(b.x_min, 0.0, img_w), std::clamp(b.y_min, 0.0, img_h),
          std::clamp(b.x_max, 0.0, img_w), std::clamp(b.y_max, 0.0, img_h)};
}

}  // namespace rdet::geometry
