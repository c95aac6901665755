#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "rdet/geometry.hpp"
#include "rdet/image.hpp"
#include "rdet/warp.hpp"

namespace rdet::features {

struct FeatureVector {
  Eigen::VectorXd values;
  std::string layer_tag;
};

// Fixed-length descriptor over a square patch. Extractors are immutable
// after construction; extraction is deterministic, so batches may be
// processed from any number of threads.
class Extractor {
 public:
  virtual ~Extractor() = default;
  virtual int input_size() const = 0;
  virtual int dim() const = 0;
  virtual std::string tag() const = 0;
  virtual FeatureVector extract_unchecked(const imaging::Patch& patch) const = 0;

  // Per-channel intensity subtracted from the patch before extraction.
  void set_input_mean(std::vector<double> mean) { input_mean_ = std::move(mean); }
  const std::vector<double>& input_mean() const { return input_mean_; }

 protected:
  // Channel-mean grayscale plane with the input mean removed.
  Eigen::MatrixXd preprocess(const imaging::Patch& patch) const;

 private:
  std::vector<double> input_mean_;
};

// Validates the patch shape, then delegates.
FeatureVector extract(const Extractor& extractor, const imaging::Patch& patch);

// ---------------------------------------------------------------------------
// HOG baseline: unsigned orientation histograms over cells, 2x2-cell blocks
// with stride one cell, L2 normalization guarded by epsilon.

struct HogConfig {
  int input_size = 64;
  int cell = 8;
  int bins = 9;
  int block = 2;
  double epsilon = 1e-6;
};

FeatureVector hog_extract(const imaging::Patch& patch, const HogConfig& cfg);
int hog_dim(const HogConfig& cfg);

class HogExtractor : public Extractor {
 public:
  explicit HogExtractor(const HogConfig& cfg);
  int input_size() const override { return cfg_.input_size; }
  int dim() const override { return hog_dim(cfg_); }
  std::string tag() const override;
  FeatureVector extract_unchecked(const imaging::Patch& patch) const override;

 private:
  HogConfig cfg_;
};

// ---------------------------------------------------------------------------
// Fixed random conv stack: a forward-only, untrained stand-in for a deep
// feature hierarchy. Each stage is a valid convolution (zero bias) followed
// by rectification and an optional non-overlapping max pool.

struct ConvStage {
  int kernel = 3;
  int stride = 1;
  int channels = 8;
  int pool = 2;  // <= 1 means no pooling
};

struct ConvStackConfig {
  std::vector<ConvStage> stages;
  uint64_t rng_seed = 1;
  int input_size = 64;
};

struct UnitRef {
  int y = 0;
  int x = 0;
  int channel = 0;
};

// Filters for one stage: filters[out_c][in_c] is a kernel x kernel matrix.
using StageWeights = std::vector<std::vector<Eigen::MatrixXd>>;

class ConvStack : public Extractor {
 public:
  explicit ConvStack(const ConvStackConfig& cfg);

  int input_size() const override { return cfg_.input_size; }
  int dim() const override { return dim_; }
  std::string tag() const override;
  FeatureVector extract_unchecked(const imaging::Patch& patch) const override;

  // Final-stage feature map, one plane per channel.
  std::vector<Eigen::MatrixXd> forward(const imaging::Patch& patch) const;

  int map_side() const { return map_side_; }
  const ConvStackConfig& config() const { return cfg_; }
  // Mutable so tests can install handcrafted filters.
  std::vector<StageWeights>& weights() { return weights_; }
  const std::vector<StageWeights>& weights() const { return weights_; }

 private:
  ConvStackConfig cfg_;
  std::vector<StageWeights> weights_;
  int map_side_ = 0;
  int dim_ = 0;
};

// Output spatial side after all stages; throws std::domain_error when any
// stage underflows the spatial extent.
int conv_output_side(const ConvStackConfig& cfg);

std::pair<std::vector<Eigen::MatrixXd>, FeatureVector> conv_forward(
    const ConvStackConfig& cfg, const imaging::Patch& patch);

// Input-space pixel box influencing the given final-map unit, computed by
// the recurrence r' = r + (k-1)*j, j' = j*s and clipped to the image.
geometry::BoxCorners receptive_field(const ConvStackConfig& cfg,
                                     const UnitRef& unit, int input_size);

// ---------------------------------------------------------------------------
// Top-activation ranking for one unit over a region corpus.

struct RegionRef {
  int image_index = 0;
  geometry::BoxCorners box;
};

struct ActivationHit {
  size_t region_index = 0;  // index into the regions argument
  double activation = 0.0;  // normalized by the channel max over all regions
  double raw = 0.0;
};

// Warps every region, runs the stack, and reads the unit's activation.
// Activations are normalized by the maximum over all units of the unit's
// channel across all regions; regions are deduplicated per image by greedy
// NMS on raw activation, then the top k survivors are returned in
// descending order.
std::vector<ActivationHit> top_activations(
    const ConvStackConfig& cfg, const UnitRef& unit,
    const std::vector<imaging::Image>& images,
    const std::vector<RegionRef>& regions, int k, double nms_thresh,
    const imaging::WarpConfig& warp_cfg, const std::vector<double>& fill_mean);

}  // namespace rdet::features
