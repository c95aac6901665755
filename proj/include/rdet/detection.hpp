#pragma once

#include <functional>
#include <vector>

#include "rdet/features.hpp"
#include "rdet/geometry.hpp"
#include "rdet/nms.hpp"
#include "rdet/training.hpp"
#include "rdet/types.hpp"
#include "rdet/warp.hpp"

namespace rdet::detection {

using geometry::BoxCorners;
using rdet::FeatureMatrix;

struct Detection {
  int image_id = 0;
  int class_id = 0;
  BoxCorners box;
  double score = 0.0;
};

// S = F * W + b broadcast over rows. Computed with explicit ascending-k
// loops so the result is bit-identical to naive per-row dot products; the
// batched form must never change scores, only amortize them.
Eigen::MatrixXd score_all(const FeatureMatrix& F,
                          const training::ClassifierModel& model);

using Proposer = std::function<std::vector<BoxCorners>(int image_w,
                                                       int image_h)>;

// Full test-time flow for one image: propose, warp, extract, score, then
// per-class floor filtering and greedy NMS. Detections are emitted class by
// class in NMS order, so per-class scores are nonincreasing.
std::vector<Detection> detect_image(
    const imaging::Image& image, const Proposer& proposer,
    const features::Extractor& extractor,
    const training::ClassifierModel& model, const imaging::WarpConfig& warp_cfg,
    const std::vector<double>& fill_mean, double nms_thresh,
    double score_floor, int image_id = 0);

// Applies class-specific deltas to each detection exactly once; scores are
// untouched and classes without a trained regressor pass through unchanged.
// features rows align with detections.
std::vector<Detection> refine(const std::vector<Detection>& detections,
                              const training::BBoxRegressor& regressor,
                              const FeatureMatrix& features);

}  // namespace rdet::detection
