#pragma once

#include <string>
#include <vector>

#include "rdet/detection.hpp"
#include "rdet/proposals.hpp"
#include "rdet/synthdata.hpp"
#include "rdet/training.hpp"
#include "rdet/types.hpp"

namespace rdet::formats {

// Doubles travel through text as %.17g so every value round-trips to the
// identical bit pattern.
std::string format_double(double v);
double parse_double(const std::string& token);

std::string read_file(const std::string& path);
// Writes to <path>.tmp in the same directory, then renames over the target,
// so readers never observe a half-written artifact.
void write_file_atomic(const std::string& path, const std::string& contents);

// --------------------------------------------------------------------------
// Line formats. One record per line, space separated, '#' lines ignored.

// image_id x_min y_min x_max y_max source_tag
std::string proposals_to_text(const std::vector<proposals::ProposalSet>& sets);
std::vector<proposals::ProposalSet> proposals_from_text(
    const std::string& text);

// image_id class_id x_min y_min x_max y_max; images without objects are
// simply absent, so callers that need empties merge against the manifest.
std::string annotations_to_text(
    const std::vector<synthdata::Annotation>& annotations);
std::vector<synthdata::Annotation> annotations_from_text(
    const std::string& text);

// image_id class_id score x_min y_min x_max y_max
std::string detections_to_text(
    const std::vector<detection::Detection>& detections);
std::vector<detection::Detection> detections_from_text(
    const std::string& text);

// --------------------------------------------------------------------------
// Dataset manifest: "image <id> <relative path>" and
// "class <id> <name> <similarity group>" lines.

struct DatasetManifest {
  struct ImageEntry {
    int image_id = 0;
    std::string path;
  };
  std::vector<ImageEntry> images;
  std::vector<std::string> class_names;
  std::vector<int> similarity_groups;  // aligned with class_names
};

std::string manifest_to_text(const DatasetManifest& manifest);
DatasetManifest manifest_from_text(const std::string& text);

// --------------------------------------------------------------------------
// Binary artifacts. Little-endian throughout; each starts with a 4-byte
// magic and a u32 format version and is rejected with IoError on mismatch
// or truncation.

// "RSVM": per-class linear scorers.
void save_classifier(const std::string& path,
                     const training::ClassifierModel& model);
training::ClassifierModel load_classifier(const std::string& path);

// "RBBR": per-class box regressors (untrained classes round-trip as such).
void save_regressor(const std::string& path,
                    const training::BBoxRegressor& regressor);
training::BBoxRegressor load_regressor(const std::string& path);

// "RFTC": one image's feature rows, tagged with the extractor identity.
struct FeatureBlock {
  int image_id = 0;
  std::string tag;
  FeatureMatrix features;
};

void save_feature_block(const std::string& path, const FeatureBlock& block);
FeatureBlock load_feature_block(const std::string& path);

}  // namespace rdet::formats
