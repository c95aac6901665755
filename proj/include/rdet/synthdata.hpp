#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "rdet/geometry.hpp"
#include "rdet/image.hpp"

namespace rdet::synthdata {

using geometry::BoxCorners;

enum class ShapeKind { kDisc, kSquare, kTriangle, kRing };

std::string shape_name(ShapeKind kind);
ShapeKind shape_from_name(const std::string& name);

struct SceneConfig {
  int width = 96;
  int height = 96;
  std::vector<ShapeKind> class_shapes = {ShapeKind::kDisc, ShapeKind::kSquare,
                                         ShapeKind::kTriangle};
  int objects_min = 1;
  int objects_max = 3;
  int size_min = 8;   // object half-extent, pixels
  int size_max = 14;
  double clutter_count = 20.0;  // expected distractor blobs per image
  double noise_level = 0.02;    // additive gaussian sigma
  uint64_t seed = 1;

  bool valid() const {
    return width > 0 && height > 0 && !class_shapes.empty() &&
           0 <= objects_min && objects_min <= objects_max && size_min >= 3 &&
           size_min <= size_max && clutter_count >= 0.0 && noise_level >= 0.0;
  }
};

struct Annotation {
  struct Object {
    int class_id = 0;
    BoxCorners box;
  };
  int image_id = 0;
  std::vector<Object> objects;
};

using Mask = Eigen::Matrix<uint8_t, Eigen::Dynamic, Eigen::Dynamic,
                           Eigen::RowMajor>;

struct Scene {
  imaging::Image image;
  Annotation annotation;
  std::vector<Mask> object_masks;  // one per annotation object
};

// Deterministic per (cfg.seed, image_id). Every ground-truth box is the
// tight box of its object's rendered mask; objects never overlap.
Scene generate_scene_full(const SceneConfig& cfg, int image_id);
std::pair<imaging::Image, Annotation> generate_scene(const SceneConfig& cfg,
                                                     int image_id);

// Tight box of the nonzero pixels: [min_x, max_x+1) x [min_y, max_y+1).
// Empty mask yields a zero-area box.
BoxCorners mask_tight_box(const Mask& mask);

// |a - b| / (a + b); both zero is defined as 0.
double relative_imbalance(double a, double b);

struct SplitResult {
  std::vector<int> side_a;
  std::vector<int> side_b;
  double max_relative_imbalance = 0.0;
  double median_relative_imbalance = 0.0;
};

// Near-equal-size two-way split (sizes differ by at most one) minimizing the
// maximum per-class relative imbalance: seeded random partitions refined by
// a greedy local search over single-image moves and cross-side swaps, best
// candidate kept. Deterministic per seed.
SplitResult balanced_split(
    const std::vector<std::vector<int>>& per_image_class_counts,
    int n_candidates, int local_search_steps, uint64_t seed);

}  // namespace rdet::synthdata
