#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "rdet/geometry.hpp"
#include "rdet/synthdata.hpp"
#include "rdet/types.hpp"

namespace rdet::training {

using geometry::BoxCorners;
using synthdata::Annotation;

enum class RegionLabel { kPositive, kNegative, kIgnore };

// One-class SVM labeling: the class's ground-truth boxes are the only
// positives (appended as extra examples); a proposal is negative when its
// best IoU against that class's GT is below neg_thresh, and ignored
// otherwise (the grey zone).
struct SvmLabeling {
  std::vector<RegionLabel> proposal_labels;
  std::vector<BoxCorners> gt_positives;
};

SvmLabeling label_for_svm(const std::vector<BoxCorners>& proposals,
                          const Annotation& annotation, int class_id,
                          double neg_thresh);

// Multi-class labeling: each proposal is assigned to its max-IoU GT (ties:
// lower GT index) and is positive for that GT's class iff IoU >= pos_thresh,
// else background (class_id -1, gt_index -1).
struct FinetuneLabel {
  int class_id = -1;
  int gt_index = -1;
  double iou = 0.0;
};

std::vector<FinetuneLabel> label_for_finetune(
    const std::vector<BoxCorners>& proposals, const Annotation& annotation,
    double pos_thresh = 0.5);

// n_pos positives (over all classes) + n_bg background indices; uniform
// without replacement, falling back to replacement when a pool is smaller
// than its quota. Throws when either pool is empty.
std::vector<size_t> sample_minibatch(const std::vector<FinetuneLabel>& labels,
                                     int n_pos, int n_bg, uint64_t seed);

struct SvmConfig {
  double C = 1.0;
  double neg_iou_thresh = 0.3;
  double tolerance = 1e-7;  // <= 0 disables early stopping
  int max_iters = 100000;
  int eval_every = 100;
  double mining_hard_thresh = -1.0;  // margin boundary
  int mining_max_rounds = 16;
  int mining_init_per_image = 8;
};

struct SvmModel {
  Eigen::VectorXd w;
  double b = 0.0;
  double objective = 0.0;
  std::vector<double> trace;  // best objective at each evaluation point
};

// 0.5*(|w|^2 + b^2) + C * sum_i max(0, 1 - y_i (w.x_i + b)); the bias is a
// regularized constant-one feature.
double svm_objective(const FeatureMatrix& X, const std::vector<int>& y,
                     double C, const Eigen::VectorXd& w, double b);

// Deterministic full-batch projected subgradient descent with weighted
// iterate averaging; returns the best objective seen on the evaluation
// schedule. Requires at least one example of each sign.
SvmModel train_linear_svm(const FeatureMatrix& X, const std::vector<int>& y,
                          const SvmConfig& cfg);

// Per-class linear scorers stacked for batched evaluation.
struct ClassifierModel {
  Eigen::MatrixXd W;  // dim x classes, one column per class
  Eigen::VectorXd b;  // per-class bias
  std::vector<int> class_ids;

  int dim() const { return int(W.rows()); }
  int num_classes() const { return int(W.cols()); }
};

// Negative-eligible windows of one image for one class; rows of `features`
// align with `labels`.
struct MiningImage {
  FeatureMatrix features;
  std::vector<RegionLabel> labels;
};

struct MiningResult {
  SvmModel model;
  int rounds = 0;
  bool converged = false;         // stopped because a scan found nothing new
  size_t cache_negatives = 0;
  size_t total_negatives = 0;
  std::vector<double> objective_per_round;
  // Cache contents as (image index, feature row), in insertion order. On
  // convergence every margin violator among the negatives appears here.
  std::vector<std::pair<size_t, Eigen::Index>> cached_windows;
};

// Standard hard-negative mining: train on the cached negatives, scan every
// negative window, add unseen ones scoring above cfg.mining_hard_thresh,
// repeat until a scan adds nothing (or mining_max_rounds). On convergence
// every margin violator is already cached.
MiningResult mine_hard_negatives(const std::vector<MiningImage>& images,
                                 const FeatureMatrix& positives,
                                 const SvmConfig& cfg);

// Closed-form ridge solve of (Phi^T Phi + lambda I) W = Phi^T T.
Eigen::MatrixXd ridge_solve(const Eigen::MatrixXd& phi,
                            const Eigen::MatrixXd& targets, double lambda);

// One bbox-regression training pair: region features, its proposal box, and
// the max-IoU ground-truth box it was assigned to.
struct RegressionExample {
  Eigen::VectorXd phi;
  geometry::BoxCenter p;
  geometry::BoxCenter g;
  double iou = 0.0;  // overlap with the assigned (best) GT box
};

struct BBoxRegressor {
  std::vector<Eigen::MatrixXd> weights;  // per class, (dim+1) x 4
  std::vector<uint8_t> trained;          // classes with no pairs stay identity
  double lambda = 1000.0;
  double assign_iou = 0.6;
  int dim = 0;

  // Deltas for one region; untrained classes predict zeros.
  geometry::RegressionDeltas predict(int class_id,
                                     const Eigen::VectorXd& phi) const;
};

// Per-class, per-target ridge regression on constant-1-augmented features.
// Pairs with iou <= assign_iou are discarded; a class left with no pairs
// gets the identity regressor and trained[class] = 0.
BBoxRegressor train_bbox_regressor(
    const std::vector<std::vector<RegressionExample>>& per_class,
    double lambda = 1000.0, double assign_iou = 0.6);

}  // namespace rdet::training
