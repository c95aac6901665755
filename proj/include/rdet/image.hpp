#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

namespace rdet::imaging {

// Planar image: planes[c] is a height x width row-major intensity grid with
// values in [0,1]. Grayscale has 1 plane, RGB has 3.
template <typename Scalar>
struct ImageT {
  using Plane =
      Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  std::vector<Plane> planes;

  ImageT() = default;
  ImageT(int height, int width, int channels, Scalar fill = Scalar(0)) {
    planes.assign(static_cast<size_t>(channels),
                  Plane::Constant(height, width, fill));
  }

  int height() const { return planes.empty() ? 0 : int(planes[0].rows()); }
  int width() const { return planes.empty() ? 0 : int(planes[0].cols()); }
  int channels() const { return int(planes.size()); }

  Scalar& at(int y, int x, int c = 0) { return planes[size_t(c)](y, x); }
  Scalar at(int y, int x, int c = 0) const { return planes[size_t(c)](y, x); }
};

using Image = ImageT<double>;

// Patch is an Image of the warp output size; the alias marks intent.
using Patch = Image;

// Binary PGM (P5) when the image has 1 channel, PPM (P6) when it has 3.
// 8-bit, maxval 255: intensity v maps to the byte round(v * 255).
void save_image(const Image& img, const std::string& path);

// Reads binary P5/P6. Bytes map to intensities b / 255.
Image load_image(const std::string& path);

// Per-channel arithmetic mean pooled over every pixel of every image.
// All images must share one channel count.
std::vector<double> image_mean(const std::vector<Image>& images);

}  // namespace rdet::imaging
