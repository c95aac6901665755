#include "rdet/detection.hpp"

#include <stdexcept>

namespace rdet::detection {

Eigen::MatrixXd score_all(const FeatureMatrix& F,
                          const training::ClassifierModel& model) {
  if (F.cols() != model.W.rows())
    throw std::invalid_argument("score_all: feature dim mismatch");
  const Eigen::Index n = F.rows();
  const Eigen::Index nc = model.W.cols();
  Eigen::MatrixXd S(n, nc);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index c = 0; c < nc; ++c) {
      double s = 0.0;
      for (Eigen::Index k = 0; k < F.cols(); ++k) s += F(i, k) * model.W(k, c);
      S(i, c) = s + model.b(c);
    }
  }
  return S;
}

std::vector<Detection> detect_image(
    const imaging::Image& image, const Proposer& proposer,
    const features::Extractor& extractor,
    const training::ClassifierModel& model, const imaging::WarpConfig& warp_cfg,
    const std::vector<double>& fill_mean, double nms_thresh,
    double score_floor, int image_id) {
  const std::vector<BoxCorners> boxes =
      proposer(image.width(), image.height());
  if (boxes.empty()) return {};

  FeatureMatrix F(Eigen::Index(boxes.size()), extractor.dim());
  for (size_t i = 0; i < boxes.size(); ++i) {
    const imaging::Patch patch =
        imaging::warp_region(image, boxes[i], warp_cfg, fill_mean);
    F.row(Eigen::Index(i)) = features::extract(extractor, patch).values;
  }
  const Eigen::MatrixXd S = score_all(F, model);

  std::vector<Detection> out;
  for (Eigen::Index c = 0; c < S.cols(); ++c) {
    std::vector<BoxCorners> cand;
    std::vector<double> scores;
    for (size_t i = 0; i < boxes.size(); ++i) {
      const double s = S(Eigen::Index(i), c);
      if (s < score_floor) continue;
      cand.push_back(boxes[i]);
      scores.push_back(s);
    }
    for (size_t k : nms(cand, scores, nms_thresh))
      out.push_back({image_id, model.class_ids[size_t(c)], cand[k], scores[k]});
  }
  return out;
}

std::vector<Detection> refine(const std::vector<Detection>& detections,
                              const training::BBoxRegressor& regressor,
                              const FeatureMatrix& features) {
  if (features.rows() != Eigen::Index(detections.size()))
    throw std::invalid_argument("refine: features/detections mismatch");
  std::vector<Detection> out = detections;
  for (size_t i = 0; i < out.size(); ++i) {
    const geometry::RegressionDeltas d = regressor.predict(
        out[i].class_id, features.row(Eigen::Index(i)).transpose());
    out[i].box = geometry::to_corners(
        geometry::apply_deltas(geometry::to_center(out[i].box), d));
  }
  return out;
}

}  // namespace rdet::detection
