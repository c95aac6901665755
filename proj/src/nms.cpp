#include "rdet/nms.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace rdet::detection {

std::vector<size_t> nms(const std::vector<geometry::BoxCorners>& boxes,
                        const std::vector<double>& scores,
                        double overlap_thresh) {
  if (boxes.size() != scores.size())
    throw std::invalid_argument("nms: boxes/scores length mismatch");
  std::vector<size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), size_t(0));
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  std::vector<size_t> kept;
  for (size_t idx : order) {
    bool suppressed = false;
    for (size_t k : kept) {
      if (geometry::iou(boxes[idx], boxes[k]) > overlap_thresh) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(idx);
  }
  return kept;
}

}  // namespace rdet::detection
