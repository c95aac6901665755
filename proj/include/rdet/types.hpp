#pragma once

#include <Eigen/Core>

namespace rdet {

// Batched per-region descriptors: one proposal per row. Row-major so each
// feature vector is contiguous, which the binary cache blocks rely on.
using FeatureMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace rdet
