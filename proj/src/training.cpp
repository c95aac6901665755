#include "rdet/training.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "rdet/rng.hpp"

namespace rdet::training {

SvmLabeling label_for_svm(const std::vector<BoxCorners>& proposals,
                          const Annotation& annotation, int class_id,
                          double neg_thresh) {
  SvmLabeling out;
  std::vector<BoxCorners> gt;
  for (const auto& obj : annotation.objects)
    if (obj.class_id == class_id) gt.push_back(obj.box);
  out.gt_positives = gt;
  out.proposal_labels.reserve(proposals.size());
  for (const BoxCorners& p : proposals) {
    double best = 0.0;
    for (const BoxCorners& g : gt) best = std::max(best, geometry::iou(p, g));
    out.proposal_labels.push_back(best < neg_thresh ? RegionLabel::kNegative
                                                    : RegionLabel::kIgnore);
  }
  return out;
}

std::vector<FinetuneLabel> label_for_finetune(
    const std::vector<BoxCorners>& proposals, const Annotation& annotation,
    double pos_thresh) {
  std::vector<FinetuneLabel> out;
  out.reserve(proposals.size());
  for (const BoxCorners& p : proposals) {
    FinetuneLabel lab;
    double best = 0.0;
    int best_gt = -1;
    for (size_t gi = 0; gi < annotation.objects.size(); ++gi) {
      const double v = geometry::iou(p, annotation.objects[gi].box);
      if (v > best) {
        best = v;
        best_gt = int(gi);
      }
    }
    if (best_gt >= 0 && best >= pos_thresh) {
      lab.class_id = annotation.objects[size_t(best_gt)].class_id;
      lab.gt_index = best_gt;
    }
    lab.iou = best;
    out.push_back(lab);
  }
  return out;
}

std::vector<size_t> sample_minibatch(const std::vector<FinetuneLabel>& labels,
                                     int n_pos, int n_bg, uint64_t seed) {
  std::vector<size_t> pos, bg;
  for (size_t i = 0; i < labels.size(); ++i)
    (labels[i].class_id >= 0 ? pos : bg).push_back(i);
  if (pos.empty()) throw std::invalid_argument("sample_minibatch: no positives");
  if (bg.empty()) throw std::invalid_argument("sample_minibatch: no background");

  SplitMix64 rng(seed);
  auto draw = [&rng](std::vector<size_t> pool, int quota) {
    std::vector<size_t> out;
    out.reserve(size_t(quota));
    if (pool.size() < size_t(quota)) {
      for (int i = 0; i < quota; ++i)
        out.push_back(pool[size_t(rng.uniform_int(0, int64_t(pool.size()) - 1))]);
    } else {
      // Partial Fisher-Yates: the first `quota` entries are a uniform draw
      // without replacement.
      for (int i = 0; i < quota; ++i) {
        const auto j = size_t(rng.uniform_int(i, int64_t(pool.size()) - 1));
        std::swap(pool[size_t(i)], pool[j]);
        out.push_back(pool[size_t(i)]);
      }
    }
    return out;
  };
  std::vector<size_t> batch = draw(pos, n_pos);
  const std::vector<size_t> bgs = draw(bg, n_bg);
  batch.insert(batch.end(), bgs.begin(), bgs.end());
  return batch;
}

double svm_objective(const FeatureMatrix& X, const std::vector<int>& y,
                     double C, const Eigen::VectorXd& w, double b) {
  double hinge = 0.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const double m = y[size_t(i)] * (X.row(i).dot(w) + b);
    hinge += std::max(0.0, 1.0 - m);
  }
  return 0.5 * (w.squaredNorm() + b * b) + C * hinge;
}

SvmModel train_linear_svm(const FeatureMatrix& X, const std::vector<int>& y,
                          const SvmConfig& cfg) {
  const Eigen::Index n = X.rows();
  const Eigen::Index d = X.cols();
  if (size_t(n) != y.size())
    throw std::invalid_argument("train_linear_svm: label length mismatch");
  if (cfg.C <= 0.0) throw std::invalid_argument("train_linear_svm: C <= 0");
  bool has_pos = false, has_neg = false;
  for (int yi : y) {
    if (yi == 1) has_pos = true;
    else if (yi == -1) has_neg = true;
    else throw std::invalid_argument("train_linear_svm: labels must be +-1");
  }
  if (!has_pos || !has_neg)
    throw std::invalid_argument("train_linear_svm: single-class input");

  Eigen::VectorXd yv(n);
  for (Eigen::Index i = 0; i < n; ++i) yv(i) = double(y[size_t(i)]);

  // Work on the augmented vector v = (w, b). The objective is 1-strongly
  // convex, and its minimizer satisfies 0.5|v*|^2 <= f(0) = C n, which gives
  // the projection radius.
  const double radius = std::sqrt(2.0 * cfg.C * double(n));
  Eigen::VectorXd v = Eigen::VectorXd::Zero(d + 1);
  Eigen::VectorXd vbar = v;
  Eigen::VectorXd g(d + 1);

  auto objective_of = [&](const Eigen::VectorXd& u) {
    return svm_objective(X, y, cfg.C, u.head(d), u(d));
  };

  SvmModel best;
  best.w = v.head(d);
  best.b = 0.0;
  best.objective = objective_of(v);
  best.trace.push_back(best.objective);
  double last_window_best = best.objective;
  int stall_evals = 0;

  for (int t = 1; t <= cfg.max_iters; ++t) {
    // Subgradient: v + C * sum over margin violators of -y_i (x_i, 1).
    Eigen::VectorXd margins = yv.cwiseProduct(X * v.head(d) +
                                              Eigen::VectorXd::Constant(n, v(d)));
    Eigen::VectorXd mask = (margins.array() < 1.0)
                               .select(yv, Eigen::VectorXd::Zero(n));
    g.head(d) = v.head(d) - cfg.C * (X.transpose() * mask);
    g(d) = v(d) - cfg.C * mask.sum();

    const double eta = 2.0 / (t + 1.0);
    v -= eta * g;
    const double norm = v.norm();
    if (norm > radius) v *= radius / norm;
    // Weighted average with weight t: rho_t = 2/(t+1).
    vbar += (2.0 / (t + 1.0)) * (v - vbar);

    if (t % cfg.eval_every == 0 || t == cfg.max_iters) {
      for (const Eigen::VectorXd* u : {&v, &vbar}) {
        const double f = objective_of(*u);
        if (f < best.objective) {
          best.objective = f;
          best.w = u->head(d);
          best.b = (*u)(d);
        }
      }
      best.trace.push_back(best.objective);
      if (cfg.tolerance > 0.0) {
        const double denom = std::max(1e-12, std::abs(last_window_best));
        if ((last_window_best - best.objective) / denom < cfg.tolerance) {
          if (++stall_evals >= 10) break;
        } else {
          stall_evals = 0;
        }
        last_window_best = best.objective;
      }
    }
  }
  return best;
}

MiningResult mine_hard_negatives(const std::vector<MiningImage>& images,
                                 const FeatureMatrix& positives,
                                 const SvmConfig& cfg) {
  if (positives.rows() == 0)
    throw std::invalid_argument("mine_hard_negatives: no positives");
  const Eigen::Index d = positives.cols();

  // Negative row ids as (image, row); the cache holds indices into this list.
  std::vector<std::pair<size_t, Eigen::Index>> negatives;
  for (size_t ii = 0; ii < images.size(); ++ii) {
    const MiningImage& im = images[ii];
    if (im.features.rows() != Eigen::Index(im.labels.size()))
      throw std::invalid_argument("mine_hard_negatives: ragged image block");
    if (im.features.rows() > 0 && im.features.cols() != d)
      throw std::invalid_argument("mine_hard_negatives: feature dim mismatch");
    for (Eigen::Index r = 0; r < im.features.rows(); ++r)
      if (im.labels[size_t(r)] == RegionLabel::kNegative)
        negatives.emplace_back(ii, r);
  }

  MiningResult res;
  res.total_negatives = negatives.size();

  std::vector<uint8_t> cached(negatives.size(), 0);
  std::vector<size_t> cache;
  size_t taken_in_image = 0;
  size_t prev_image = size_t(-1);
  for (size_t ni = 0; ni < negatives.size(); ++ni) {
    if (negatives[ni].first != prev_image) {
      prev_image = negatives[ni].first;
      taken_in_image = 0;
    }
    if (int(taken_in_image) < cfg.mining_init_per_image) {
      cache.push_back(ni);
      cached[ni] = 1;
      ++taken_in_image;
    }
  }
  if (cache.empty() && !negatives.empty()) {
    cache.push_back(0);
    cached[0] = 1;
  }
  if (negatives.empty())
    throw std::invalid_argument("mine_hard_negatives: no negatives");

  SvmModel model;
  for (int round = 1; round <= cfg.mining_max_rounds; ++round) {
    FeatureMatrix X(positives.rows() + Eigen::Index(cache.size()), d);
    std::vector<int> y;
    X.topRows(positives.rows()) = positives;
    y.assign(size_t(positives.rows()), 1);
    for (size_t k = 0; k < cache.size(); ++k) {
      const auto [ii, r] = negatives[cache[k]];
      X.row(positives.rows() + Eigen::Index(k)) = images[ii].features.row(r);
      y.push_back(-1);
    }
    model = train_linear_svm(X, y, cfg);
    res.objective_per_round.push_back(model.objective);
    res.rounds = round;

    size_t added = 0;
    for (size_t ni = 0; ni < negatives.size(); ++ni) {
      if (cached[ni]) continue;
      const auto [ii, r] = negatives[ni];
      const double score = images[ii].features.row(r).dot(model.w) + model.b;
      if (score > cfg.mining_hard_thresh) {
        cache.push_back(ni);
        cached[ni] = 1;
        ++added;
      }
    }
    if (added == 0) {
      res.converged = true;
      break;
    }
  }
  res.model = std::move(model);
  res.cache_negatives = cache.size();
  res.cached_windows.reserve(cache.size());
  for (size_t ni : cache) res.cached_windows.push_back(negatives[ni]);
  return res;
}

Eigen::MatrixXd ridge_solve(const Eigen::MatrixXd& phi,
                            const Eigen::MatrixXd& targets, double lambda) {
  if (phi.rows() != targets.rows())
    throw std::invalid_argument("ridge_solve: row mismatch");
  if (lambda <= 0.0) throw std::invalid_argument("ridge_solve: lambda <= 0");
  const Eigen::Index d = phi.cols();
  Eigen::MatrixXd gram = phi.transpose() * phi;
  gram.diagonal().array() += lambda;
  return gram.llt().solve(phi.transpose() * targets);
}

geometry::RegressionDeltas BBoxRegressor::predict(
    int class_id, const Eigen::VectorXd& phi) const {
  if (class_id < 0 || size_t(class_id) >= weights.size() ||
      !trained[size_t(class_id)])
    return {};
  const Eigen::MatrixXd& W = weights[size_t(class_id)];
  if (phi.size() + 1 != W.rows())
    throw std::invalid_argument("BBoxRegressor: feature dim mismatch");
  Eigen::VectorXd aug(phi.size() + 1);
  aug.head(phi.size()) = phi;
  aug(phi.size()) = 1.0;
  const Eigen::RowVectorXd d = aug.transpose() * W;
  return {d(0), d(1), d(2), d(3)};
}

BBoxRegressor train_bbox_regressor(
    const std::vector<std::vector<RegressionExample>>& per_class,
    double lambda, double assign_iou) {
  BBoxRegressor reg;
  reg.lambda = lambda;
  reg.assign_iou = assign_iou;
  for (const auto& cls : per_class) {
    std::vector<const RegressionExample*> kept;
    for (const RegressionExample& ex : cls)
      if (ex.iou > assign_iou) kept.push_back(&ex);
    if (kept.empty()) {
      reg.weights.emplace_back();
      reg.trained.push_back(0);
      continue;
    }
    const Eigen::Index d = kept.front()->phi.size();
    if (reg.dim == 0) reg.dim = int(d);
    Eigen::MatrixXd phi(Eigen::Index(kept.size()), d + 1);
    Eigen::MatrixXd t(Eigen::Index(kept.size()), 4);
    for (size_t i = 0; i < kept.size(); ++i) {
      if (kept[i]->phi.size() != d)
        throw std::invalid_argument("train_bbox_regressor: ragged features");
      phi.row(Eigen::Index(i)).head(d) = kept[i]->phi.transpose();
      phi(Eigen::Index(i), d) = 1.0;
      const geometry::RegressionDeltas td =
          geometry::regression_targets(kept[i]->p, kept[i]->g);
      t.row(Eigen::Index(i)) << td.dx, td.dy, td.dw, td.dh;
    }
    reg.weights.push_back(ridge_solve(phi, t, lambda));
    reg.trained.push_back(1);
  }
  return reg;
}

}  // namespace rdet::training
