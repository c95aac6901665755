#include "rdet/features.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "rdet/nms.hpp"
#include "rdet/rng.hpp"

namespace rdet::features {

Eigen::MatrixXd Extractor::preprocess(const imaging::Patch& patch) const {
  const int h = patch.height();
  const int w = patch.width();
  Eigen::MatrixXd gray = Eigen::MatrixXd::Zero(h, w);
  for (int c = 0; c < patch.channels(); ++c) {
    const double m = size_t(c) < input_mean_.size() ? input_mean_[size_t(c)] : 0.0;
    gray += (patch.planes[size_t(c)].array() - m).matrix().cast<double>();
  }
  gray /= double(patch.channels());
  return gray;
}

FeatureVector extract(const Extractor& extractor, const imaging::Patch& patch) {
  if (patch.width() != extractor.input_size() ||
      patch.height() != extractor.input_size() || patch.channels() < 1)
    throw std::invalid_argument("extract: patch size mismatch");
  FeatureVector fv = extractor.extract_unchecked(patch);
  if (fv.values.size() != extractor.dim())
    throw std::logic_error("extract: dimensionality contract violated");
  return fv;
}

// ---------------------------------------------------------------------------
// HOG

int hog_dim(const HogConfig& cfg) {
  const int cells = cfg.input_size / cfg.cell;
  const int blocks = cells - cfg.block + 1;
  return blocks * blocks * cfg.block * cfg.block * cfg.bins;
}

FeatureVector hog_extract(const imaging::Patch& patch, const HogConfig& cfg) {
  const int side = cfg.input_size;
  if (patch.width() != side || patch.height() != side)
    throw std::invalid_argument("hog_extract: patch size mismatch");
  if (side % cfg.cell != 0)
    throw std::invalid_argument("hog_extract: side not divisible by cell");

  Eigen::MatrixXd gray = Eigen::MatrixXd::Zero(side, side);
  for (const auto& plane : patch.planes) gray += plane;
  gray /= double(patch.channels());

  const int cells = side / cfg.cell;
  // Cell histograms of gradient magnitude, hard-assigned to unsigned
  // orientation bins over [0, pi).
  Eigen::MatrixXd hist = Eigen::MatrixXd::Zero(cells * cells, cfg.bins);
  auto clamp_idx = [side](int i) { return std::clamp(i, 0, side - 1); };
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const double gx =
          0.5 * (gray(y, clamp_idx(x + 1)) - gray(y, clamp_idx(x - 1)));
      const double gy =
          0.5 * (gray(clamp_idx(y + 1), x) - gray(clamp_idx(y - 1), x));
      const double mag = std::hypot(gx, gy);
      if (mag == 0.0) continue;
      double ang = std::atan2(gy, gx);
      if (ang < 0.0) ang += M_PI;
      if (ang >= M_PI) ang -= M_PI;
      const int bin =
          std::min(cfg.bins - 1, int(std::floor(ang / M_PI * cfg.bins)));
      hist((y / cfg.cell) * cells + (x / cfg.cell), bin) += mag;
    }
  }

  const int blocks = cells - cfg.block + 1;
  const int block_dim = cfg.block * cfg.block * cfg.bins;
  Eigen::VectorXd out(blocks * blocks * block_dim);
  for (int by = 0; by < blocks; ++by) {
    for (int bx = 0; bx < blocks; ++bx) {
      Eigen::VectorXd v(block_dim);
      int o = 0;
      for (int cy = 0; cy < cfg.block; ++cy)
        for (int cx = 0; cx < cfg.block; ++cx)
          for (int b = 0; b < cfg.bins; ++b)
            v(o++) = hist((by + cy) * cells + (bx + cx), b);
      v /= std::sqrt(v.squaredNorm() + cfg.epsilon * cfg.epsilon);
      out.segment((by * blocks + bx) * block_dim, block_dim) = v;
    }
  }
  return {out, "hog"};
}

HogExtractor::HogExtractor(const HogConfig& cfg) : cfg_(cfg) {
  if (cfg.input_size % cfg.cell != 0 || cfg.bins < 1 || cfg.block < 1 ||
      cfg.input_size / cfg.cell < cfg.block)
    throw std::invalid_argument("HogExtractor: invalid config");
}

std::string HogExtractor::tag() const {
  std::ostringstream os;
  os << "hog[c" << cfg_.cell << "b" << cfg_.bins << "k" << cfg_.block << "]";
  return os.str();
}

FeatureVector HogExtractor::extract_unchecked(const imaging::Patch& patch) const {
  // HOG is invariant to constant offsets, so the input mean never matters;
  // extraction still runs through hog_extract on the raw patch.
  FeatureVector fv = hog_extract(patch, cfg_);
  fv.layer_tag = tag();
  return fv;
}

// ---------------------------------------------------------------------------
// Conv stack

namespace {

void check_stages(const ConvStackConfig& cfg) {
  if (cfg.stages.empty())
    throw std::invalid_argument("ConvStack: no stages");
  for (const ConvStage& s : cfg.stages)
    if (s.kernel < 1 || s.stride < 1 || s.channels < 1)
      throw std::invalid_argument("ConvStack: invalid stage");
}

int stage_out_side(int side, const ConvStage& s) {
  if (side < s.kernel)
    throw std::domain_error("ConvStack: spatial dims underflow");
  int out = (side - s.kernel) / s.stride + 1;
  if (s.pool > 1) {
    out /= s.pool;
    if (out < 1) throw std::domain_error("ConvStack: spatial dims underflow");
  }
  return out;
}

}  // namespace

int conv_output_side(const ConvStackConfig& cfg) {
  check_stages(cfg);
  int side = cfg.input_size;
  for (const ConvStage& s : cfg.stages) side = stage_out_side(side, s);
  return side;
}

ConvStack::ConvStack(const ConvStackConfig& cfg) : cfg_(cfg) {
  check_stages(cfg);
  map_side_ = conv_output_side(cfg);
  const SplitMix64 root(cfg.rng_seed);
  int in_c = 1;
  for (size_t si = 0; si < cfg.stages.size(); ++si) {
    const ConvStage& s = cfg.stages[si];
    SplitMix64 rng = root.split(uint64_t(si));
    const double a = 1.0 / std::sqrt(double(in_c) * s.kernel * s.kernel);
    StageWeights stage(size_t(s.channels));
    for (int oc = 0; oc < s.channels; ++oc) {
      stage[size_t(oc)].resize(size_t(in_c));
      for (int ic = 0; ic < in_c; ++ic) {
        Eigen::MatrixXd k(s.kernel, s.kernel);
        for (int ky = 0; ky < s.kernel; ++ky)
          for (int kx = 0; kx < s.kernel; ++kx) k(ky, kx) = rng.uniform(-a, a);
        stage[size_t(oc)][size_t(ic)] = k;
      }
    }
    weights_.push_back(std::move(stage));
    in_c = s.channels;
  }
  dim_ = map_side_ * map_side_ * cfg.stages.back().channels;
}

std::string ConvStack::tag() const {
  std::ostringstream os;
  os << "conv[";
  for (size_t i = 0; i < cfg_.stages.size(); ++i) {
    const ConvStage& s = cfg_.stages[i];
    if (i) os << ",";
    os << "k" << s.kernel << "s" << s.stride << "c" << s.channels << "p"
       << std::max(1, s.pool);
  }
  os << "]";
  return os.str();
}

std::vector<Eigen::MatrixXd> ConvStack::forward(const imaging::Patch& patch) const {
  std::vector<Eigen::MatrixXd> maps{preprocess(patch)};
  for (size_t si = 0; si < cfg_.stages.size(); ++si) {
    const ConvStage& s = cfg_.stages[si];
    const StageWeights& wts = weights_[si];
    const int in_side = int(maps[0].rows());
    if (in_side < s.kernel)
      throw std::domain_error("ConvStack: spatial dims underflow");
    const int conv_side = (in_side - s.kernel) / s.stride + 1;
    std::vector<Eigen::MatrixXd> next(size_t(s.channels));
    for (int oc = 0; oc < s.channels; ++oc) {
      Eigen::MatrixXd m = Eigen::MatrixXd::Zero(conv_side, conv_side);
      for (size_t ic = 0; ic < maps.size(); ++ic) {
        const Eigen::MatrixXd& in = maps[ic];
        const Eigen::MatrixXd& k = wts[size_t(oc)][ic];
        for (int y = 0; y < conv_side; ++y)
          for (int x = 0; x < conv_side; ++x)
            m(y, x) += (in.block(y * s.stride, x * s.stride, s.kernel, s.kernel)
                            .cwiseProduct(k))
                           .sum();
      }
      m = m.cwiseMax(0.0);
      if (s.pool > 1) {
        const int pooled = conv_side / s.pool;
        if (pooled < 1)
          throw std::domain_error("ConvStack: spatial dims underflow");
        Eigen::MatrixXd p(pooled, pooled);
        for (int y = 0; y < pooled; ++y)
          for (int x = 0; x < pooled; ++x)
            p(y, x) =
                m.block(y * s.pool, x * s.pool, s.pool, s.pool).maxCoeff();
        m = std::move(p);
      }
      next[size_t(oc)] = std::move(m);
    }
    maps = std::move(next);
  }
  return maps;
}

FeatureVector ConvStack::extract_unchecked(const imaging::Patch& patch) const {
  const std::vector<Eigen::MatrixXd> maps = forward(patch);
  Eigen::VectorXd v(dim_);
  int o = 0;
  for (const Eigen::MatrixXd& m : maps)
    for (int y = 0; y < m.rows(); ++y)
      for (int x = 0; x < m.cols(); ++x) v(o++) = m(y, x);
  return {v, tag()};
}

std::pair<std::vector<Eigen::MatrixXd>, FeatureVector> conv_forward(
    const ConvStackConfig& cfg, const imaging::Patch& patch) {
  ConvStack stack(cfg);
  return {stack.forward(patch), extract(stack, patch)};
}

geometry::BoxCorners receptive_field(const ConvStackConfig& cfg,
                                     const UnitRef& unit, int input_size) {
  ConvStackConfig sized = cfg;
  sized.input_size = input_size;
  const int side = conv_output_side(sized);
  if (unit.x < 0 || unit.y < 0 || unit.x >= side || unit.y >= side ||
      unit.channel < 0 || unit.channel >= cfg.stages.back().channels)
    throw std::out_of_range("receptive_field: unit out of bounds");
  double r = 1.0, j = 1.0;
  for (const ConvStage& s : cfg.stages) {
    r += double(s.kernel - 1) * j;
    j *= s.stride;
    if (s.pool > 1) {
      r += double(s.pool - 1) * j;
      j *= s.pool;
    }
  }
  const geometry::BoxCorners raw{unit.x * j, unit.y * j, unit.x * j + r,
                                 unit.y * j + r};
  return geometry::clip_box(raw, input_size, input_size);
}

std::vector<ActivationHit> top_activations(
    const ConvStackConfig& cfg, const UnitRef& unit,
    const std::vector<imaging::Image>& images,
    const std::vector<RegionRef>& regions, int k, double nms_thresh,
    const imaging::WarpConfig& warp_cfg, const std::vector<double>& fill_mean) {
  if (k < 0) throw std::invalid_argument("top_activations: k < 0");
  if (regions.empty() || k == 0) return {};
  ConvStack stack(cfg);
  const int side = stack.map_side();
  if (unit.x < 0 || unit.y < 0 || unit.x >= side || unit.y >= side ||
      unit.channel < 0 || unit.channel >= cfg.stages.back().channels)
    throw std::out_of_range("top_activations: unit out of bounds");

  std::vector<double> raw(regions.size());
  double channel_max = 0.0;
  for (size_t i = 0; i < regions.size(); ++i) {
    const RegionRef& r = regions[i];
    const imaging::Patch patch = imaging::warp_region(
        images.at(size_t(r.image_index)), r.box, warp_cfg, fill_mean);
    const auto maps = stack.forward(patch);
    raw[i] = maps[size_t(unit.channel)](unit.y, unit.x);
    channel_max =
        std::max(channel_max, maps[size_t(unit.channel)].maxCoeff());
  }

  // Per-image NMS on raw activation.
  std::vector<size_t> survivors;
  std::vector<int> image_ids;
  for (const RegionRef& r : regions)
    if (std::find(image_ids.begin(), image_ids.end(), r.image_index) ==
        image_ids.end())
      image_ids.push_back(r.image_index);
  for (int img : image_ids) {
    std::vector<size_t> idx;
    std::vector<geometry::BoxCorners> boxes;
    std::vector<double> scores;
    for (size_t i = 0; i < regions.size(); ++i) {
      if (regions[i].image_index != img) continue;
      idx.push_back(i);
      boxes.push_back(regions[i].box);
      scores.push_back(raw[i]);
    }
    for (size_t kept : detection::nms(boxes, scores, nms_thresh))
      survivors.push_back(idx[kept]);
  }

  std::sort(survivors.begin(), survivors.end(), [&](size_t a, size_t b) {
    if (raw[a] != raw[b]) return raw[a] > raw[b];
    return a < b;
  });
  if (survivors.size() > size_t(k)) survivors.resize(size_t(k));

  std::vector<ActivationHit> hits;
  for (size_t i : survivors)
    hits.push_back(
        {i, channel_max > 0.0 ? raw[i] / channel_max : 0.0, raw[i]});
  return hits;
}

}  // namespace rdet::features
