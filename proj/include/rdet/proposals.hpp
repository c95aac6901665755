#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rdet/geometry.hpp"

namespace rdet::proposals {

using geometry::BoxCorners;

struct ProposalSet {
  int image_id = 0;
  std::vector<BoxCorners> boxes;  // clipped to image bounds, positive area
  std::string source_tag;
};

struct GridProposerConfig {
  std::vector<double> scales;         // box side lengths, pixels
  std::vector<double> aspect_ratios;  // w / h
  double stride_fraction = 0.5;       // stride as a fraction of the side
  double resize_width = 0.0;          // 0 disables pre-proposal normalization
};

// Window origins along one axis: i * stride for i = 0..ceil((extent-side)/
// stride), the last clamped so the window ends at the extent. A side larger
// than the extent yields the single origin 0.
std::vector<double> axis_positions(double extent, double side, double stride);

// Merges boxes identical after rounding coordinates to the tolerance.
std::vector<BoxCorners> dedup_boxes(const std::vector<BoxCorners>& boxes,
                                    double tol = 1e-6);

// Dense multi-scale grid; content-independent. When resize_width is set the
// grid is laid out at that width and mapped back to image coordinates.
ProposalSet grid_propose(const GridProposerConfig& cfg, int image_w,
                         int image_h, int image_id = 0);

// Ground-truth boxes perturbed in center (sigma * dims) and log-size
// (sigma in log space), count proposals per (box, sigma); clipped to the
// image, degenerate results dropped. Deterministic per seed.
ProposalSet jitter_propose(const std::vector<BoxCorners>& gt_boxes,
                           const std::vector<double>& noise_scales, int count,
                           uint64_t seed, int image_w, int image_h,
                           int image_id = 0);

// Fraction of GT boxes matched by at least one proposal at IoU >= thresh;
// no GT is defined as full recall.
double proposal_recall(const std::vector<BoxCorners>& proposals,
                       const std::vector<BoxCorners>& gt_boxes,
                       double iou_thresh = 0.5);

}  // namespace rdet::proposals
