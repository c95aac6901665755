#pragma once

#include <optional>
#include <vector>

#include "rdet/detection.hpp"
#include "rdet/synthdata.hpp"

namespace rdet::evaluation {

using detection::Detection;
using synthdata::Annotation;

// PASCAL-style greedy matching for one class: detections are visited in
// descending score order (ties: lower original index); each claims its
// max-IoU still-unmatched GT of the class when that IoU clears the
// threshold. Re-detections of a claimed GT are false positives.
struct MatchResult {
  std::vector<size_t> det_indices;   // into the input list, visit order
  std::vector<uint8_t> tp;           // aligned with det_indices
  std::vector<uint8_t> duplicate;    // FP overlapping some class GT >= thresh
  std::vector<double> best_class_iou;  // max IoU over the class's GT
  int num_gt = 0;
};

MatchResult match_detections(const std::vector<Detection>& dets,
                             const std::vector<Annotation>& gts, int class_id,
                             double iou_thresh = 0.5);

struct PrCurve {
  std::vector<double> recall;     // nondecreasing along rank
  std::vector<double> precision;
  std::vector<uint8_t> tp;        // per ranked detection
  int num_gt = 0;
};

PrCurve pr_curve(const MatchResult& match);

enum class ApMode { kAllPoints, kElevenPoint };

// all_points: area under the precision envelope. eleven_point: mean of the
// envelope precision at recalls {0, 0.1, ..., 1.0} with integer-exact recall
// comparisons. No GT makes AP undefined (absent).
std::optional<double> voc_ap(const PrCurve& pr, ApMode mode);

struct EvalResult {
  std::vector<std::optional<double>> per_class_ap;
  std::optional<double> map;  // unweighted mean of the defined APs
};

EvalResult evaluate(const std::vector<Detection>& dets,
                    const std::vector<Annotation>& annotations,
                    int num_classes, double iou_thresh = 0.5,
                    ApMode mode = ApMode::kAllPoints);

// Fig.4-style taxonomy over the top-ranked false positives of each class:
//   Loc — duplicate, or correct-class IoU in (0.1, iou_thresh)
//   Sim — else IoU >= 0.1 with a different-class GT in the same group
//   Oth — else IoU >= 0.1 with any other different-class GT
//   BG  — everything else
struct FpBreakdown {
  int loc = 0, sim = 0, oth = 0, bg = 0;
  int total() const { return loc + sim + oth + bg; }
};

struct FpAnalysis {
  FpBreakdown total;
  std::vector<FpBreakdown> per_class;
};

FpAnalysis fp_analysis_per_class(const std::vector<Detection>& dets,
                                 const std::vector<Annotation>& annotations,
                                 const std::vector<int>& similarity_groups,
                                 int top_n, double iou_thresh = 0.5);

FpBreakdown fp_analysis(const std::vector<Detection>& dets,
                        const std::vector<Annotation>& annotations,
                        const std::vector<int>& similarity_groups, int top_n,
                        double iou_thresh = 0.5);

}  // namespace rdet::evaluation
