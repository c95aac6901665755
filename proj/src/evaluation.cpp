#include "rdet/evaluation.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <stdexcept>

namespace rdet::evaluation {

MatchResult match_detections(const std::vector<Detection>& dets,
                             const std::vector<Annotation>& gts, int class_id,
                             double iou_thresh) {
  struct GtBox {
    geometry::BoxCorners box;
    bool matched = false;
  };
  std::map<int, std::vector<GtBox>> gt_by_image;
  int num_gt = 0;
  for (const Annotation& ann : gts)
    for (const auto& obj : ann.objects)
      if (obj.class_id == class_id) {
        gt_by_image[ann.image_id].push_back({obj.box, false});
        ++num_gt;
      }

  MatchResult res;
  res.num_gt = num_gt;
  for (size_t i = 0; i < dets.size(); ++i)
    if (dets[i].class_id == class_id) res.det_indices.push_back(i);
  std::sort(res.det_indices.begin(), res.det_indices.end(),
            [&](size_t a, size_t b) {
              if (dets[a].score != dets[b].score)
                return dets[a].score > dets[b].score;
              return a < b;
            });

  for (size_t di : res.det_indices) {
    const Detection& det = dets[di];
    auto it = gt_by_image.find(det.image_id);
    double best_unmatched = 0.0, best_any = 0.0;
    GtBox* claim = nullptr;
    if (it != gt_by_image.end()) {
      for (GtBox& g : it->second) {
        const double v = geometry::iou(det.box, g.box);
        best_any = std::max(best_any, v);
        if (!g.matched && v > best_unmatched) {
          best_unmatched = v;
          claim = &g;
        }
      }
    }
    const bool is_tp = claim != nullptr && best_unmatched >= iou_thresh;
    if (is_tp) claim->matched = true;
    res.tp.push_back(is_tp ? 1 : 0);
    res.duplicate.push_back(!is_tp && best_any >= iou_thresh ? 1 : 0);
    res.best_class_iou.push_back(best_any);
  }
  return res;
}

PrCurve pr_curve(const MatchResult& match) {
  PrCurve pr;
  pr.num_gt = match.num_gt;
  pr.tp = match.tp;
  int tp_cum = 0;
  for (size_t k = 0; k < match.tp.size(); ++k) {
    tp_cum += match.tp[k];
    pr.recall.push_back(match.num_gt > 0 ? double(tp_cum) / match.num_gt : 0.0);
    pr.precision.push_back(double(tp_cum) / double(k + 1));
  }
  return pr;
}

std::optional<double> voc_ap(const PrCurve& pr, ApMode mode) {
  if (pr.num_gt == 0) return std::nullopt;
  if (pr.tp.empty()) return 0.0;
  const size_t n = pr.tp.size();

  // Precision envelope: at each rank, the best precision at that recall or
  // beyond.
  std::vector<double> env(pr.precision);
  for (size_t i = n - 1; i-- > 0;) env[i] = std::max(env[i], env[i + 1]);

  if (mode == ApMode::kAllPoints) {
    double ap = 0.0;
    double prev_recall = 0.0;
    for (size_t i = 0; i < n; ++i) {
      if (pr.tp[i]) {
        ap += (pr.recall[i] - prev_recall) * env[i];
        prev_recall = pr.recall[i];
      }
    }
    return ap;
  }

  // Eleven-point mean; recall_j >= k/10 is tested in integers to keep the
  // grid boundaries exact.
  std::vector<int> tp_cum(n);
  int acc = 0;
  for (size_t i = 0; i < n; ++i) tp_cum[i] = (acc += pr.tp[i]);
  double sum = 0.0;
  for (int k = 0; k <= 10; ++k) {
    double best = 0.0;
    for (size_t i = 0; i < n; ++i) {
      if (10 * tp_cum[i] >= k * pr.num_gt) {
        best = env[i];
        break;
      }
    }
    sum += best;
  }
  return sum / 11.0;
}

EvalResult evaluate(const std::vector<Detection>& dets,
                    const std::vector<Annotation>& annotations,
                    int num_classes, double iou_thresh, ApMode mode) {
  for (const Detection& d : dets)
    if (d.class_id < 0 || d.class_id >= num_classes)
      throw std::invalid_argument("evaluate: unknown class id");
  EvalResult res;
  double sum = 0.0;
  int defined = 0;
  for (int c = 0; c < num_classes; ++c) {
    const auto ap =
        voc_ap(pr_curve(match_detections(dets, annotations, c, iou_thresh)),
               mode);
    res.per_class_ap.push_back(ap);
    if (ap) {
      sum += *ap;
      ++defined;
    }
  }
  if (defined > 0) res.map = sum / defined;
  return res;
}

FpAnalysis fp_analysis_per_class(const std::vector<Detection>& dets,
                                 const std::vector<Annotation>& annotations,
                                 const std::vector<int>& similarity_groups,
                                 int top_n, double iou_thresh) {
  constexpr double kLocLow = 0.1;  // Loc lower bound; Sim/Oth share the floor
  int num_classes = int(similarity_groups.size());
  for (const Detection& d : dets)
    if (d.class_id < 0 || d.class_id >= num_classes)
      throw std::invalid_argument("fp_analysis: class missing from groups");

  FpAnalysis res;
  res.per_class.resize(size_t(num_classes));
  for (int c = 0; c < num_classes; ++c) {
    const MatchResult match =
        match_detections(dets, annotations, c, iou_thresh);
    FpBreakdown& bd = res.per_class[size_t(c)];
    int considered = 0;
    for (size_t k = 0; k < match.det_indices.size(); ++k) {
      if (match.tp[k]) continue;
      if (considered++ >= top_n) break;
      const Detection& det = dets[match.det_indices[k]];
      const double iou_cc = match.best_class_iou[k];
      if (match.duplicate[k] || (iou_cc > kLocLow && iou_cc < iou_thresh)) {
        ++bd.loc;
        continue;
      }
      bool sim = false, oth = false;
      for (const Annotation& ann : annotations) {
        if (ann.image_id != det.image_id) continue;
        for (const auto& obj : ann.objects) {
          if (obj.class_id == c) continue;
          if (geometry::iou(det.box, obj.box) < kLocLow) continue;
          if (similarity_groups[size_t(obj.class_id)] ==
              similarity_groups[size_t(c)])
            sim = true;
          else
            oth = true;
        }
      }
      if (sim)
        ++bd.sim;
      else if (oth)
        ++bd.oth;
      else
        ++bd.bg;
    }
    res.total.loc += bd.loc;
    res.total.sim += bd.sim;
    res.total.oth += bd.oth;
    res.total.bg += bd.bg;
  }
  return res;
}

FpBreakdown fp_analysis(const std::vector<Detection>& dets,
                        const std::vector<Annotation>& annotations,
                        const std::vector<int>& similarity_groups, int top_n,
                        double iou_thresh) {
  return fp_analysis_per_class(dets, annotations, similarity_groups, top_n,
                               iou_thresh)
      .total;
}

}  // namespace rdet::evaluation
