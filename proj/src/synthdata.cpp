#include "rdet/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rdet/rng.hpp"

namespace rdet::synthdata {

std::string shape_name(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::kDisc: return "disc";
    case ShapeKind::kSquare: return "square";
    case ShapeKind::kTriangle: return "triangle";
    case ShapeKind::kRing: return "ring";
  }
  throw std::logic_error("shape_name: bad kind");
}

ShapeKind shape_from_name(const std::string& name) {
  if (name == "disc") return ShapeKind::kDisc;
  if (name == "square") return ShapeKind::kSquare;
  if (name == "triangle") return ShapeKind::kTriangle;
  if (name == "ring") return ShapeKind::kRing;
  throw std::invalid_argument("unknown shape: " + name);
}

namespace {

// Membership test at a pixel center for a shape of integer half-extent r
// centered on the integer grid point (cx, cy). Strict inequalities keep the
// rendered mask strictly inside the analytic (cx-r, cy-r, cx+r, cy+r) box.
bool shape_covers(ShapeKind kind, int cx, int cy, int r, double px,
                  double py) {
  const double dx = px - cx;
  const double dy = py - cy;
  switch (kind) {
    case ShapeKind::kDisc:
      return dx * dx + dy * dy < double(r) * r;
    case ShapeKind::kSquare:
      return std::abs(dx) < r && std::abs(dy) < r;
    case ShapeKind::kTriangle:
      // Upward isoceles: apex (cx, cy-r), base half-width r at y = cy+r.
      return dy > -r && dy < r && std::abs(dx) < 0.5 * (dy + r);
    case ShapeKind::kRing: {
      const int thick = std::max(2, r / 3);
      const double rin = r - thick;
      const double d2 = dx * dx + dy * dy;
      return d2 < double(r) * r && d2 > rin * rin;
    }
  }
  return false;
}

void draw_shape(imaging::Image& img, Mask* mask, ShapeKind kind, int cx,
                int cy, int r, double intensity) {
  const int w = img.width(), h = img.height();
  for (int y = std::max(0, cy - r); y < std::min(h, cy + r); ++y)
    for (int x = std::max(0, cx - r); x < std::min(w, cx + r); ++x)
      if (shape_covers(kind, cx, cy, r, x + 0.5, y + 0.5)) {
        img.at(y, x) = intensity;
        if (mask) (*mask)(y, x) = 1;
      }
}

bool boxes_too_close(const BoxCorners& a, const BoxCorners& b, double gap) {
  return a.x_min - gap < b.x_max && b.x_min - gap < a.x_max &&
         a.y_min - gap < b.y_max && b.y_min - gap < a.y_max;
}

}  // namespace

BoxCorners mask_tight_box(const Mask& mask) {
  int x0 = int(mask.cols()), y0 = int(mask.rows()), x1 = -1, y1 = -1;
  for (int y = 0; y < mask.rows(); ++y)
    for (int x = 0; x < mask.cols(); ++x)
      if (mask(y, x)) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
  if (x1 < 0) return {0, 0, 0, 0};
  return {double(x0), double(y0), double(x1 + 1), double(y1 + 1)};
}

Scene generate_scene_full(const SceneConfig& cfg, int image_id) {
  if (!cfg.valid())
    throw std::invalid_argument("generate_scene: invalid SceneConfig");
  if (cfg.width < 2 * cfg.size_max + 5 || cfg.height < 2 * cfg.size_max + 5)
    throw std::invalid_argument("generate_scene: image too small for size_max");
  SplitMix64 rng = SplitMix64(cfg.seed).split(uint64_t(image_id));

  Scene scene;
  scene.image = imaging::Image(cfg.height, cfg.width, 1, 0.2);
  scene.annotation.image_id = image_id;

  const long clutter = std::lround(cfg.clutter_count);
  for (long i = 0; i < clutter; ++i) {
    const int cx = int(rng.uniform_int(0, cfg.width - 1));
    const int cy = int(rng.uniform_int(0, cfg.height - 1));
    const int r = int(rng.uniform_int(1, 3));
    const double v = rng.uniform(0.30, 0.50);
    draw_shape(scene.image, nullptr, ShapeKind::kDisc, cx, cy, r, v);
  }

  const int n_objects = int(rng.uniform_int(cfg.objects_min, cfg.objects_max));
  std::vector<BoxCorners> placed;
  for (int i = 0; i < n_objects; ++i) {
    const int class_id =
        int(rng.uniform_int(0, int64_t(cfg.class_shapes.size()) - 1));
    int r = int(rng.uniform_int(cfg.size_min, cfg.size_max));
    int cx = -1, cy = -1;
    for (int attempt = 0; attempt < 200 && cx < 0; ++attempt) {
      const int tx = int(rng.uniform_int(r + 2, cfg.width - r - 2));
      const int ty = int(rng.uniform_int(r + 2, cfg.height - r - 2));
      const BoxCorners cand{double(tx - r), double(ty - r), double(tx + r),
                            double(ty + r)};
      bool free = true;
      for (const BoxCorners& p : placed)
        if (boxes_too_close(cand, p, 2.0)) free = false;
      if (free) {
        cx = tx;
        cy = ty;
      }
    }
    if (cx < 0) {
      // Deterministic fallback: smallest size, first free raster position.
      r = cfg.size_min;
      for (int ty = r + 2; ty <= cfg.height - r - 2 && cx < 0; ++ty)
        for (int tx = r + 2; tx <= cfg.width - r - 2 && cx < 0; ++tx) {
          const BoxCorners cand{double(tx - r), double(ty - r), double(tx + r),
                                double(ty + r)};
          bool free = true;
          for (const BoxCorners& p : placed)
            if (boxes_too_close(cand, p, 2.0)) free = false;
          if (free) {
            cx = tx;
            cy = ty;
          }
        }
      if (cx < 0)
        throw std::runtime_error("generate_scene: cannot place object");
    }
    const double intensity = rng.uniform(0.60, 0.95);
    Mask mask = Mask::Zero(cfg.height, cfg.width);
    draw_shape(scene.image, &mask, cfg.class_shapes[size_t(class_id)], cx, cy,
               r, intensity);
    const BoxCorners box = mask_tight_box(mask);
    placed.push_back(box);
    scene.annotation.objects.push_back({class_id, box});
    scene.object_masks.push_back(std::move(mask));
  }

  if (cfg.noise_level > 0.0) {
    auto& plane = scene.image.planes[0];
    for (int y = 0; y < cfg.height; ++y)
      for (int x = 0; x < cfg.width; ++x)
        plane(y, x) =
            std::clamp(plane(y, x) + cfg.noise_level * rng.normal(), 0.0, 1.0);
  }
  return scene;
}

std::pair<imaging::Image, Annotation> generate_scene(const SceneConfig& cfg,
                                                     int image_id) {
  Scene s = generate_scene_full(cfg, image_id);
  return {std::move(s.image), std::move(s.annotation)};
}

double relative_imbalance(double a, double b) {
  if (a < 0.0 || b < 0.0)
    throw std::domain_error("relative_imbalance: negative count");
  if (a + b == 0.0) return 0.0;
  return std::abs(a - b) / (a + b);
}

namespace {

double split_objective(const std::vector<int>& count_a,
                       const std::vector<int>& totals) {
  double worst = 0.0;
  for (size_t c = 0; c < totals.size(); ++c)
    worst = std::max(worst, relative_imbalance(double(count_a[c]),
                                               double(totals[c] - count_a[c])));
  return worst;
}

}  // namespace

SplitResult balanced_split(
    const std::vector<std::vector<int>>& per_image_class_counts,
    int n_candidates, int local_search_steps, uint64_t seed) {
  const int n = int(per_image_class_counts.size());
  if (n < 2) throw std::invalid_argument("balanced_split: need >= 2 images");
  const size_t n_classes = per_image_class_counts[0].size();
  for (const auto& row : per_image_class_counts)
    if (row.size() != n_classes)
      throw std::invalid_argument("balanced_split: ragged counts");
  std::vector<int> totals(n_classes, 0);
  for (const auto& row : per_image_class_counts)
    for (size_t c = 0; c < n_classes; ++c) totals[c] += row[size_t(c)];

  SplitMix64 rng(seed);
  std::vector<uint8_t> best_assign;
  double best_obj = 2.0;

  for (int cand = 0; cand < std::max(1, n_candidates); ++cand) {
    std::vector<int> perm(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) perm[size_t(i)] = i;
    for (int i = n - 1; i > 0; --i)
      std::swap(perm[size_t(i)], perm[size_t(rng.uniform_int(0, i))]);
    int size_a = n / 2;
    if (n % 2 == 1 && (rng.next() & 1)) ++size_a;

    std::vector<uint8_t> assign(size_t(n), 0);
    for (int i = 0; i < size_a; ++i) assign[size_t(perm[size_t(i)])] = 1;
    std::vector<int> count_a(n_classes, 0);
    for (int i = 0; i < n; ++i)
      if (assign[size_t(i)])
        for (size_t c = 0; c < n_classes; ++c)
          count_a[c] += per_image_class_counts[size_t(i)][c];
    double obj = split_objective(count_a, totals);

    // Greedy first-improvement local search. Single moves must keep the
    // sizes within one of each other; swaps always do, and are what makes
    // progress possible when n is even.
    for (int step = 0; step < local_search_steps; ++step) {
      bool improved = false;
      for (int i = 0; i < n && !improved; ++i) {
        const int delta = assign[size_t(i)] ? -1 : +1;
        if (std::abs(2 * (size_a + delta) - n) > 1) continue;
        std::vector<int> trial = count_a;
        for (size_t c = 0; c < n_classes; ++c)
          trial[c] += delta * per_image_class_counts[size_t(i)][c];
        const double t = split_objective(trial, totals);
        if (t < obj) {
          assign[size_t(i)] ^= 1;
          size_a += delta;
          count_a = std::move(trial);
          obj = t;
          improved = true;
        }
      }
      for (int i = 0; i < n && !improved; ++i) {
        if (!assign[size_t(i)]) continue;
        for (int j = 0; j < n && !improved; ++j) {
          if (assign[size_t(j)]) continue;
          std::vector<int> trial = count_a;
          for (size_t c = 0; c < n_classes; ++c)
            trial[c] += per_image_class_counts[size_t(j)][c] -
                        per_image_class_counts[size_t(i)][c];
          const double t = split_objective(trial, totals);
          if (t < obj) {
            assign[size_t(i)] = 0;
            assign[size_t(j)] = 1;
            count_a = std::move(trial);
            obj = t;
            improved = true;
          }
        }
      }
      if (!improved) break;
    }

    if (obj < best_obj) {
      best_obj = obj;
      best_assign = assign;
    }
  }

  SplitResult res;
  std::vector<int> count_a(n_classes, 0);
  for (int i = 0; i < n; ++i) {
    if (best_assign[size_t(i)]) {
      res.side_a.push_back(i);
      for (size_t c = 0; c < n_classes; ++c)
        count_a[c] += per_image_class_counts[size_t(i)][c];
    } else {
      res.side_b.push_back(i);
    }
  }
  res.max_relative_imbalance = best_obj;
  std::vector<double> per_class;
  for (size_t c = 0; c < n_classes; ++c)
    per_class.push_back(relative_imbalance(double(count_a[c]),
                                           double(totals[c] - count_a[c])));
  std::sort(per_class.begin(), per_class.end());
  const size_t m = per_class.size();
  res.median_relative_imbalance =
      m == 0 ? 0.0
             : (m % 2 ? per_class[m / 2]
                      : 0.5 * (per_class[m / 2 - 1] + per_class[m / 2]));
  return res;
}

}  // namespace rdet::synthdata
