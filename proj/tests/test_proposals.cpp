#include <doctest.h>

#include <cmath>
#include <vector>

#include "rdet/proposals.hpp"
#include "rdet/rng.hpp"

using namespace rdet::proposals;
using rdet::geometry::area;
using rdet::geometry::iou;

namespace {

bool same_box(const BoxCorners& a, const BoxCorners& b) {
  return a.x_min == b.x_min && a.y_min == b.y_min && a.x_max == b.x_max &&
         a.y_max == b.y_max;
}

}  // namespace

TEST_CASE("axis_positions covers the extent and clamps the last origin") {
  CHECK(axis_positions(100, 50, 50) == std::vector<double>{0, 50});
  CHECK(axis_positions(100, 30, 15) ==
        std::vector<double>{0, 15, 30, 45, 60, 70});
  // Window wider than the extent: single origin at zero.
  CHECK(axis_positions(20, 50, 10) == std::vector<double>{0});
}

TEST_CASE("grid_propose: 100x100, scale 50, stride fraction 1 gives 4 tiles") {
  const ProposalSet ps = grid_propose({{50}, {1.0}, 1.0, 0.0}, 100, 100, 7);
  CHECK(ps.image_id == 7);
  CHECK(ps.source_tag == "grid");
  REQUIRE(ps.boxes.size() == 4);
  CHECK(same_box(ps.boxes[0], {0, 0, 50, 50}));
  CHECK(same_box(ps.boxes[1], {50, 0, 100, 50}));
  CHECK(same_box(ps.boxes[2], {0, 50, 50, 100}));
  CHECK(same_box(ps.boxes[3], {50, 50, 100, 100}));
}

TEST_CASE("grid_propose: scale larger than the image clips to one box") {
  const ProposalSet ps = grid_propose({{300}, {1.0}, 0.5, 0.0}, 100, 80);
  REQUIRE(ps.boxes.size() == 1);
  CHECK(same_box(ps.boxes[0], {0, 0, 100, 80}));
}

TEST_CASE("grid_propose box count matches the closed form per scale") {
  // ceil((W-s)/stride)+1 columns and ceil((H-s)/stride)+1 rows; origins here
  // are all distinct so dedup removes nothing.
  const ProposalSet ps = grid_propose({{30}, {1.0}, 0.5, 0.0}, 100, 70);
  const double stride = 15.0;
  const auto axis_count = [&](double extent) {
    return int(std::ceil((extent - 30.0) / stride)) + 1;
  };
  CHECK(int(ps.boxes.size()) == axis_count(100) * axis_count(70));
}

TEST_CASE("grid_propose honors aspect ratios") {
  const ProposalSet ps = grid_propose({{20}, {4.0}, 1.0, 0.0}, 200, 200);
  REQUIRE(!ps.boxes.empty());
  // sqrt(4) = 2: boxes are 40 wide, 10 tall.
  CHECK(ps.boxes[0].x_max - ps.boxes[0].x_min == doctest::Approx(40.0));
  CHECK(ps.boxes[0].y_max - ps.boxes[0].y_min == doctest::Approx(10.0));
}

TEST_CASE("grid_propose lays out at resize_width and maps back") {
  const ProposalSet ps = grid_propose({{50}, {1.0}, 1.0, 100.0}, 200, 200);
  REQUIRE(ps.boxes.size() == 4);
  // f = 1/2: a 50-normalized box spans 100 original pixels.
  CHECK(same_box(ps.boxes[0], {0, 0, 100, 100}));
  CHECK(same_box(ps.boxes[3], {100, 100, 200, 200}));
}

TEST_CASE("grid_propose output stays in bounds with positive area") {
  const ProposalSet ps =
      grid_propose({{17, 41, 93}, {0.5, 1.0, 2.0}, 0.7, 120.0}, 157, 83);
  for (const BoxCorners& b : ps.boxes) {
    CHECK(b.x_min >= 0.0);
    CHECK(b.y_min >= 0.0);
    CHECK(b.x_max <= 157.0);
    CHECK(b.y_max <= 83.0);
    CHECK(area(b) > 0.0);
  }
}

TEST_CASE("grid_propose config validation") {
  CHECK_THROWS_AS(grid_propose({{10}, {1.0}, 0.0, 0.0}, 50, 50),
                  std::invalid_argument);
  CHECK_THROWS_AS(grid_propose({{-5}, {1.0}, 0.5, 0.0}, 50, 50),
                  std::invalid_argument);
  CHECK_THROWS_AS(grid_propose({{10}, {-1.0}, 0.5, 0.0}, 50, 50),
                  std::invalid_argument);
}

TEST_CASE("dedup_boxes keeps first occurrences in order") {
  const std::vector<BoxCorners> boxes{{0, 0, 10, 10},
                                      {5, 5, 9, 9},
                                      {0, 0, 10, 10},
                                      {0, 0, 10, 10 + 1e-9},  // within tol
                                      {0, 0, 10, 10.01}};     // beyond tol
  const auto out = dedup_boxes(boxes);
  REQUIRE(out.size() == 3);
  CHECK(same_box(out[0], {0, 0, 10, 10}));
  CHECK(same_box(out[1], {5, 5, 9, 9}));
  CHECK(same_box(out[2], {0, 0, 10, 10.01}));
}

TEST_CASE("jitter_propose with zero noise reproduces the GT boxes") {
  const std::vector<BoxCorners> gt{{10, 10, 30, 40}, {50, 20, 70, 45}};
  const ProposalSet ps = jitter_propose(gt, {0.0}, 3, 99, 100, 100, 2);
  CHECK(ps.source_tag == "jitter");
  REQUIRE(ps.boxes.size() == 6);
  for (int g = 0; g < 2; ++g)
    for (int i = 0; i < 3; ++i) {
      const BoxCorners& b = ps.boxes[size_t(g * 3 + i)];
      CHECK(b.x_min == doctest::Approx(gt[size_t(g)].x_min).epsilon(1e-12));
      CHECK(b.y_max == doctest::Approx(gt[size_t(g)].y_max).epsilon(1e-12));
    }
}

TEST_CASE("jitter_propose is deterministic per seed") {
  const std::vector<BoxCorners> gt{{10, 10, 30, 40}};
  const ProposalSet a = jitter_propose(gt, {0.2}, 20, 5, 100, 100);
  const ProposalSet b = jitter_propose(gt, {0.2}, 20, 5, 100, 100);
  const ProposalSet c = jitter_propose(gt, {0.2}, 20, 6, 100, 100);
  REQUIRE(a.boxes.size() == b.boxes.size());
  for (size_t i = 0; i < a.boxes.size(); ++i)
    CHECK(same_box(a.boxes[i], b.boxes[i]));
  bool all_equal = a.boxes.size() == c.boxes.size();
  for (size_t i = 0; all_equal && i < a.boxes.size(); ++i)
    all_equal = same_box(a.boxes[i], c.boxes[i]);
  CHECK(!all_equal);
}

TEST_CASE("small jitter keeps every proposal above IoU 0.5 with its source") {
  const std::vector<BoxCorners> gt{
      {20, 20, 44, 41}, {60, 30, 82, 70}, {10, 60, 35, 90}};
  const int count = 50;
  const ProposalSet ps = jitter_propose(gt, {0.05}, count, 314, 120, 120);
  REQUIRE(ps.boxes.size() == gt.size() * size_t(count));  // none dropped
  for (size_t i = 0; i < ps.boxes.size(); ++i)
    CHECK(iou(ps.boxes[i], gt[i / size_t(count)]) > 0.5);
}

TEST_CASE("jitter_propose clips to the image and drops degenerate boxes") {
  // GT hugging the corner with violent noise: survivors stay in bounds.
  const std::vector<BoxCorners> gt{{0, 0, 6, 6}};
  const ProposalSet ps = jitter_propose(gt, {1.5}, 200, 11, 40, 40);
  for (const BoxCorners& b : ps.boxes) {
    CHECK(b.x_min >= 0.0);
    CHECK(b.y_min >= 0.0);
    CHECK(b.x_max <= 40.0);
    CHECK(b.y_max <= 40.0);
    CHECK(area(b) > 0.0);
  }
}

TEST_CASE("proposal_recall hand cases") {
  const std::vector<BoxCorners> gt{{0, 0, 10, 10}, {50, 50, 70, 70}};
  SUBCASE("proposals containing the GT boxes give full recall") {
    CHECK(proposal_recall(gt, gt) == 1.0);
  }
  SUBCASE("empty proposals, nonempty GT") {
    CHECK(proposal_recall({}, gt) == 0.0);
  }
  SUBCASE("covering exactly one of two") {
    CHECK(proposal_recall({{0, 0, 10, 10}}, gt) == 0.5);
  }
  SUBCASE("no GT counts as full recall") {
    CHECK(proposal_recall({{0, 0, 10, 10}}, {}) == 1.0);
  }
  SUBCASE("threshold is inclusive") {
    // Nested half box: IoU exactly 0.5.
    CHECK(proposal_recall({{0, 0, 10, 5}}, {{0, 0, 10, 10}}, 0.5) == 1.0);
    CHECK(proposal_recall({{0, 0, 10, 5}}, {{0, 0, 10, 10}}, 0.5000001) == 0.0);
  }
}

TEST_CASE("proposal_recall is monotone in proposals and antitone in threshold") {
  rdet::SplitMix64 rng(8);
  std::vector<BoxCorners> gt;
  for (int i = 0; i < 6; ++i) {
    const double x = rng.uniform(0.0, 80.0), y = rng.uniform(0.0, 80.0);
    gt.push_back({x, y, x + rng.uniform(5.0, 20.0), y + rng.uniform(5.0, 20.0)});
  }
  const ProposalSet grid = grid_propose({{10, 20}, {1.0}, 0.5, 0.0}, 100, 100);
  std::vector<BoxCorners> subset(grid.boxes.begin(),
                                 grid.boxes.begin() + long(grid.boxes.size() / 2));

  double prev = proposal_recall(subset, gt);
  CHECK(proposal_recall(grid.boxes, gt) >= prev);

  double last = 1.0;
  for (double t : {0.1, 0.3, 0.5, 0.7, 0.9}) {
    const double r = proposal_recall(grid.boxes, gt, t);
    CHECK(r <= last);
    last = r;
  }
}
