#include <doctest.h>

#include <cmath>
#include <vector>

#include "rdet/geometry.hpp"
#include "rdet/rng.hpp"
#include "rdet/synthdata.hpp"

using namespace rdet::synthdata;
using rdet::geometry::iou;

namespace {

SceneConfig disc_only() {
  SceneConfig cfg;
  cfg.class_shapes = {ShapeKind::kDisc};
  cfg.clutter_count = 0.0;
  cfg.noise_level = 0.0;
  return cfg;
}

// Re-derives the integer center and half-extent the renderer used. Discs,
// squares, and triangles all span exactly 2r horizontally with x_min=cx-r.
struct ShapeParams {
  int cx, cy, r;
};
ShapeParams reconstruct(const BoxCorners& box) {
  const int r = int(box.x_max - box.x_min) / 2;
  return {int(box.x_min) + r, int(box.y_max) - r, r};
}

bool covered(ShapeKind kind, const ShapeParams& s, double px, double py) {
  const double dx = px - s.cx;
  const double dy = py - s.cy;
  switch (kind) {
    case ShapeKind::kDisc:
      return dx * dx + dy * dy < double(s.r) * s.r;
    case ShapeKind::kSquare:
      return std::abs(dx) < s.r && std::abs(dy) < s.r;
    case ShapeKind::kTriangle:
      return dy > -s.r && dy < s.r && std::abs(dx) < 0.5 * (dy + s.r);
    case ShapeKind::kRing: {
      const int thick = std::max(2, s.r / 3);
      const double d2 = dx * dx + dy * dy;
      return d2 < double(s.r) * s.r && d2 > double(s.r - thick) * (s.r - thick);
    }
  }
  return false;
}

}  // namespace

TEST_CASE("shape names round-trip and reject unknowns") {
  for (ShapeKind k : {ShapeKind::kDisc, ShapeKind::kSquare,
                      ShapeKind::kTriangle, ShapeKind::kRing})
    CHECK(shape_from_name(shape_name(k)) == k);
  CHECK_THROWS_AS(shape_from_name("pentagon"), std::invalid_argument);
}

TEST_CASE("generate_scene is deterministic per (seed, image_id)") {
  SceneConfig cfg;
  cfg.seed = 77;
  const Scene a = generate_scene_full(cfg, 4);
  const Scene b = generate_scene_full(cfg, 4);
  CHECK(a.image.planes[0] == b.image.planes[0]);
  REQUIRE(a.annotation.objects.size() == b.annotation.objects.size());
  for (size_t i = 0; i < a.annotation.objects.size(); ++i) {
    CHECK(a.annotation.objects[i].class_id == b.annotation.objects[i].class_id);
    CHECK(a.annotation.objects[i].box.x_min == b.annotation.objects[i].box.x_min);
    CHECK(a.annotation.objects[i].box.y_max == b.annotation.objects[i].box.y_max);
  }
  const Scene c = generate_scene_full(cfg, 5);
  CHECK(a.image.planes[0] != c.image.planes[0]);
}

TEST_CASE("objects-per-image range is honored exactly") {
  SceneConfig cfg;
  cfg.objects_min = cfg.objects_max = 3;
  for (int id = 0; id < 8; ++id) {
    const auto [img, ann] = generate_scene(cfg, id);
    CHECK(ann.objects.size() == 3);
    CHECK(ann.image_id == id);
  }
  cfg.objects_min = cfg.objects_max = 0;
  CHECK(generate_scene(cfg, 0).second.objects.empty());
}

TEST_CASE("ground truth boxes stay in bounds with valid class ids") {
  SceneConfig cfg;
  cfg.seed = 3;
  for (int id = 0; id < 10; ++id) {
    const auto [img, ann] = generate_scene(cfg, id);
    for (const auto& obj : ann.objects) {
      CHECK(obj.class_id >= 0);
      CHECK(obj.class_id < int(cfg.class_shapes.size()));
      CHECK(obj.box.x_min >= 0.0);
      CHECK(obj.box.y_min >= 0.0);
      CHECK(obj.box.x_max <= cfg.width);
      CHECK(obj.box.y_max <= cfg.height);
      CHECK(obj.box.x_max > obj.box.x_min);
      CHECK(obj.box.y_max > obj.box.y_min);
    }
  }
}

TEST_CASE("objects never overlap") {
  SceneConfig cfg;
  cfg.objects_min = cfg.objects_max = 3;
  cfg.seed = 12;
  for (int id = 0; id < 10; ++id) {
    const Scene s = generate_scene_full(cfg, id);
    for (size_t i = 0; i < s.annotation.objects.size(); ++i)
      for (size_t j = i + 1; j < s.annotation.objects.size(); ++j) {
        CHECK(iou(s.annotation.objects[i].box, s.annotation.objects[j].box) ==
              0.0);
        CHECK((s.object_masks[i].cast<int>().cwiseProduct(
                   s.object_masks[j].cast<int>()))
                  .sum() == 0);
      }
  }
}

TEST_CASE("rendered disc GT box equals the analytic circle box") {
  SceneConfig cfg = disc_only();
  cfg.seed = 21;
  for (int id = 0; id < 6; ++id) {
    const Scene s = generate_scene_full(cfg, id);
    for (size_t i = 0; i < s.annotation.objects.size(); ++i) {
      const BoxCorners& box = s.annotation.objects[i].box;
      // Integer corners, and square of even side 2r.
      CHECK(box.x_min == std::floor(box.x_min));
      CHECK(box.x_max - box.x_min == box.y_max - box.y_min);
      const ShapeParams p = reconstruct(box);
      CHECK(p.r >= cfg.size_min);
      CHECK(p.r <= cfg.size_max);
      CHECK(box.x_min == p.cx - p.r);
      CHECK(box.y_min == p.cy - p.r);
      // The mask is exactly the strict-interior rasterization of that circle.
      const Mask& m = s.object_masks[i];
      for (int y = 0; y < m.rows(); ++y)
        for (int x = 0; x < m.cols(); ++x)
          CHECK(bool(m(y, x)) ==
                covered(ShapeKind::kDisc, p, x + 0.5, y + 0.5));
    }
  }
}

TEST_CASE("every shape's mask matches its analytic predicate and tight box") {
  for (ShapeKind kind : {ShapeKind::kSquare, ShapeKind::kTriangle,
                         ShapeKind::kRing}) {
    SceneConfig cfg = disc_only();
    cfg.class_shapes = {kind};
    cfg.seed = 31 + int(kind);
    const Scene s = generate_scene_full(cfg, 2);
    REQUIRE(!s.annotation.objects.empty());
    for (size_t i = 0; i < s.annotation.objects.size(); ++i) {
      const ShapeParams p = reconstruct(s.annotation.objects[i].box);
      const Mask& m = s.object_masks[i];
      for (int y = 0; y < m.rows(); ++y)
        for (int x = 0; x < m.cols(); ++x)
          CHECK(bool(m(y, x)) == covered(kind, p, x + 0.5, y + 0.5));
      const BoxCorners tight = mask_tight_box(m);
      CHECK(tight.x_min == s.annotation.objects[i].box.x_min);
      CHECK(tight.y_min == s.annotation.objects[i].box.y_min);
      CHECK(tight.x_max == s.annotation.objects[i].box.x_max);
      CHECK(tight.y_max == s.annotation.objects[i].box.y_max);
    }
  }
}

TEST_CASE("noise perturbs pixels but never the annotations") {
  SceneConfig quiet = disc_only();
  quiet.clutter_count = 10.0;
  quiet.seed = 8;
  SceneConfig noisy = quiet;
  noisy.noise_level = 0.05;
  const Scene a = generate_scene_full(quiet, 1);
  const Scene b = generate_scene_full(noisy, 1);
  REQUIRE(a.annotation.objects.size() == b.annotation.objects.size());
  for (size_t i = 0; i < a.annotation.objects.size(); ++i) {
    CHECK(a.annotation.objects[i].box.x_min == b.annotation.objects[i].box.x_min);
    CHECK(a.annotation.objects[i].box.y_max == b.annotation.objects[i].box.y_max);
  }
  CHECK(a.image.planes[0] != b.image.planes[0]);
  // Noise keeps intensities in range.
  CHECK(b.image.planes[0].minCoeff() >= 0.0);
  CHECK(b.image.planes[0].maxCoeff() <= 1.0);
}

TEST_CASE("scene config validation") {
  SceneConfig cfg;
  cfg.size_min = 2;
  CHECK(!cfg.valid());
  CHECK_THROWS_AS(generate_scene(cfg, 0), std::invalid_argument);
  SceneConfig tiny;
  tiny.width = tiny.height = 30;  // needs 2*size_max+5 = 33
  CHECK_THROWS_AS(generate_scene(tiny, 0), std::invalid_argument);
}

TEST_CASE("mask_tight_box hand cases") {
  Mask m = Mask::Zero(5, 6);
  SUBCASE("empty mask gives a zero-area box") {
    const BoxCorners b = mask_tight_box(m);
    CHECK(b.x_max - b.x_min == 0.0);
  }
  SUBCASE("single pixel") {
    m(2, 3) = 1;
    const BoxCorners b = mask_tight_box(m);
    CHECK(b.x_min == 3.0);
    CHECK(b.y_min == 2.0);
    CHECK(b.x_max == 4.0);
    CHECK(b.y_max == 3.0);
  }
  SUBCASE("two distant pixels span the box") {
    m(0, 1) = 1;
    m(4, 5) = 1;
    const BoxCorners b = mask_tight_box(m);
    CHECK(b.x_min == 1.0);
    CHECK(b.y_min == 0.0);
    CHECK(b.x_max == 6.0);
    CHECK(b.y_max == 5.0);
  }
}

TEST_CASE("relative_imbalance hand cases") {
  CHECK(relative_imbalance(3, 1) == 0.5);
  CHECK(relative_imbalance(1, 3) == 0.5);
  CHECK(relative_imbalance(0, 5) == 1.0);
  CHECK(relative_imbalance(7, 7) == 0.0);
  CHECK(relative_imbalance(0, 0) == 0.0);
  CHECK_THROWS_AS(relative_imbalance(-1, 2), std::domain_error);
}

TEST_CASE("balanced_split invariants and determinism") {
  const std::vector<std::vector<int>> counts{
      {3, 0}, {1, 2}, {0, 4}, {2, 1}, {1, 1}, {0, 2}, {4, 0}};
  const SplitResult a = balanced_split(counts, 10, 50, 9);
  const SplitResult b = balanced_split(counts, 10, 50, 9);
  CHECK(a.side_a == b.side_a);
  CHECK(a.side_b == b.side_b);

  std::vector<int> all = a.side_a;
  all.insert(all.end(), a.side_b.begin(), a.side_b.end());
  std::sort(all.begin(), all.end());
  for (int i = 0; i < int(counts.size()); ++i) CHECK(all[size_t(i)] == i);
  CHECK(std::abs(int(a.side_a.size()) - int(a.side_b.size())) <= 1);
  CHECK(a.max_relative_imbalance >= 0.0);
  CHECK(a.max_relative_imbalance <= 1.0);
  CHECK(a.median_relative_imbalance <= a.max_relative_imbalance);
}

TEST_CASE("balanced_split finds the enumeration optimum on small instances") {
  rdet::SplitMix64 rng(55);
  for (int inst = 0; inst < 8; ++inst) {
    const int n = 6 + int(rng.uniform_int(0, 2));
    const int n_classes = 2 + int(rng.uniform_int(0, 1));
    std::vector<std::vector<int>> counts(
        static_cast<size_t>(n), std::vector<int>(static_cast<size_t>(n_classes)));
    for (auto& row : counts)
      for (int& v : row) v = int(rng.uniform_int(0, 4));

    std::vector<int> totals(size_t(n_classes), 0);
    for (const auto& row : counts)
      for (int c = 0; c < n_classes; ++c) totals[size_t(c)] += row[size_t(c)];

    double best = 2.0;
    for (unsigned mask = 0; mask < (1u << n); ++mask) {
      const int k = __builtin_popcount(mask);
      if (std::abs(2 * k - n) > 1) continue;
      double worst = 0.0;
      for (int c = 0; c < n_classes; ++c) {
        int in_a = 0;
        for (int i = 0; i < n; ++i)
          if (mask & (1u << i)) in_a += counts[size_t(i)][size_t(c)];
        worst = std::max(worst, relative_imbalance(double(in_a),
                                                   double(totals[size_t(c)] - in_a)));
      }
      best = std::min(best, worst);
    }

    const SplitResult got = balanced_split(counts, 30, 100, 17 + uint64_t(inst));
    CHECK(got.max_relative_imbalance == best);
  }
}

TEST_CASE("balanced_split input validation") {
  CHECK_THROWS_AS(balanced_split({{1, 2}}, 5, 5, 1), std::invalid_argument);
  CHECK_THROWS_AS(balanced_split({{1, 2}, {1}}, 5, 5, 1), std::invalid_argument);
}
