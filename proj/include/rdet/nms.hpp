#pragma once

#include <cstddef>
#include <vector>

#include "rdet/geometry.hpp"

namespace rdet::detection {

// Greedy non-maximum suppression. Boxes are visited in descending score
// order (ties: lower original index first); a box is kept iff its IoU with
// every already-kept box is <= overlap_thresh. Returns kept indices in
// visit order, so the corresponding scores are nonincreasing.
std::vector<size_t> nms(const std::vector<geometry::BoxCorners>& boxes,
                        const std::vector<double>& scores,
                        double overlap_thresh);

}  // namespace rdet::detection
