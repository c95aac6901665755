#pragma once

#include <vector>

#include "rdet/geometry.hpp"
#include "rdet/image.hpp"

namespace rdet::imaging {

enum class WarpMode {
  kWarp,                        // anisotropic scale of the padded proposal
  kTightestSquareWithContext,   // isotropic scale of the enclosing square
  kTightestSquareWithoutContext // as above, non-proposal pixels set to mean
};

struct WarpConfig {
  int out_size = 227;
  int padding_p = 16;  // context pixels per side, in output coordinates
  WarpMode mode = WarpMode::kWarp;

  bool valid() const { return padding_p >= 0 && out_size > 2 * padding_p; }
};

// Samples the image at continuous point (sx, sy); pixel (y, x) covers
// [x, x+1) x [y, y+1) with its value at the center (x+0.5, y+0.5).
// Bilinear corners falling outside the image take the fill value.
template <typename Scalar>
Scalar bilinear_sample(const typename ImageT<Scalar>::Plane& plane, double sx,
                       double sy, Scalar fill) {
  const double gx = sx - 0.5;
  const double gy = sy - 0.5;
  const double fx0 = std::floor(gx);
  const double fy0 = std::floor(gy);
  const int x0 = int(fx0);
  const int y0 = int(fy0);
  const double ax = gx - fx0;
  const double ay = gy - fy0;
  const int w = int(plane.cols());
  const int h = int(plane.rows());
  auto at = [&](int yy, int xx) -> Scalar {
    if (xx < 0 || xx >= w || yy < 0 || yy >= h) return fill;
    return plane(yy, xx);
  };
  const Scalar v00 = at(y0, x0);
  const Scalar v01 = at(y0, x0 + 1);
  const Scalar v10 = at(y0 + 1, x0);
  const Scalar v11 = at(y0 + 1, x0 + 1);
  return Scalar((1.0 - ay) * ((1.0 - ax) * v00 + ax * v01) +
                ay * ((1.0 - ax) * v10 + ax * v11));
}

// Produces the out_size x out_size patch for a proposal. The proposal (for
// mode kWarp) or its tightest enclosing square (square modes) maps exactly
// onto the central (out_size - 2p)^2 region; the border supplies p pixels of
// context. fill_mean is one intensity per channel, used wherever a sample
// needs pixels outside the image (and, in the without-context mode, for any
// sample point outside the original proposal).
Patch warp_region(const Image& img, const geometry::BoxCorners& box,
                  const WarpConfig& cfg, const std::vector<double>& fill_mean);

}  // namespace rdet::imaging
