#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rdet/config.hpp"
#include "rdet/evaluation.hpp"
#include "rdet/features.hpp"
#include "rdet/proposals.hpp"
#include "rdet/synthdata.hpp"
#include "rdet/training.hpp"
#include "rdet/warp.hpp"

namespace rdet::pipeline {

// Restartable stages, in dependency order. Each stage persists its outputs
// under the run directory together with a .meta record of the config hash
// it was built from; downstream stages refuse stale or absent inputs.
enum class Stage {
  kGenData,
  kPropose,
  kExtract,
  kTrainSvm,
  kTrainBbreg,
  kDetect,
  kEvaluate,
  kAnalyze,
  kVisualize,
};

inline constexpr Stage kAllStages[] = {
    Stage::kGenData,  Stage::kPropose,  Stage::kExtract,
    Stage::kTrainSvm, Stage::kTrainBbreg, Stage::kDetect,
    Stage::kEvaluate, Stage::kAnalyze,  Stage::kVisualize,
};

std::string stage_name(Stage stage);
std::optional<Stage> stage_from_name(const std::string& name);

enum class ProposerKind { kGrid, kJitter };
enum class ExtractorKind { kHog, kConv };

// Every knob of the run. All randomness flows from the named seeds, so a
// config value determines every artifact byte.
struct PipelineConfig {
  // [dataset]
  synthdata::SceneConfig scene;
  std::vector<int> similarity_groups;  // empty means one group per class
  int train_images = 40;
  int test_images = 20;

  // [proposals]
  ProposerKind proposer = ProposerKind::kJitter;
  proposals::GridProposerConfig grid{{16, 24, 32}, {0.5, 1.0, 2.0}, 0.5, 0.0};
  std::vector<double> jitter_sigmas{0.15};
  int jitter_count = 8;
  uint64_t jitter_seed = 7;

  // [features] and [warp]
  ExtractorKind extractor = ExtractorKind::kHog;
  features::HogConfig hog;
  features::ConvStackConfig conv;
  imaging::WarpConfig warp{64, 8, imaging::WarpMode::kWarp};

  // [svm]
  training::SvmConfig svm;

  // [bbreg]
  double bbreg_lambda = 1000.0;
  double bbreg_assign_iou = 0.6;

  // [detect]
  double nms_thresh = 0.3;
  double score_floor = -2.0;

  // [eval]
  double eval_iou = 0.5;
  evaluation::ApMode eval_mode = evaluation::ApMode::kAllPoints;
  int fp_top_n = 25;

  // [visualize]
  features::UnitRef vis_unit;
  int vis_top_k = 9;
  double vis_nms = 0.5;

  // [split]
  int split_candidates = 64;
  int split_steps = 200;
  uint64_t split_seed = 5;

  // [tune_nms]
  std::vector<double> nms_sweep{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};

  int num_classes() const { return int(scene.class_shapes.size()); }
  std::vector<int> groups_or_identity() const;
};

// Typed view of a parsed config file. Rejects unknown keys and malformed
// values with ConfigError; all keys are optional and default as above.
PipelineConfig config_from_map(const config::ConfigMap& map);

// Canonical "key = value" rendering of one section, used for hashing and
// for `--help`-style schema dumps. Sections: dataset, proposals, features,
// warp, svm, bbreg, detect, eval, visualize, split, tune_nms.
std::string canonical_section_text(const PipelineConfig& cfg,
                                   const std::string& section);
std::vector<std::string> schema_keys();

// FNV-1a over the stage name, its canonical config sections, and the hashes
// of its upstream stages, so any upstream change invalidates the chain.
uint64_t stage_hash(const PipelineConfig& cfg, Stage stage);

struct StageReport {
  Stage stage = Stage::kGenData;
  bool cache_hit = false;
  std::vector<std::string> outputs;  // absolute or out_dir-relative paths
  std::vector<std::pair<std::string, std::string>> stats;
  std::string primary_output;  // file echoed to stdout under --stdout

  const std::string* stat(const std::string& key) const;
};

// Runs one stage against the run directory. Idempotent: when the stored
// meta hash matches and outputs exist, nothing is rewritten. Throws
// MissingArtifactError when an upstream stage is absent or was built under
// a different config, ConfigError for unusable configuration.
StageReport run_stage(const PipelineConfig& cfg, Stage stage,
                      const std::string& out_dir, int jobs = 1);

// gen-data through evaluate, in order. Returns the evaluate report.
StageReport run_chain(const PipelineConfig& cfg, const std::string& out_dir,
                      int jobs = 1);

// --------------------------------------------------------------------------
// Extra subcommands on top of the stage graph.

struct AblateVariant {
  std::string name;                    // used as a subdirectory name
  std::vector<std::string> overrides;  // dotted key=value assignments
};

// Runs the full chain per variant under <out_dir>/ablate/<name> and writes
// a comparison table (raw and refined mAP per variant).
StageReport ablate(const config::ConfigMap& base_map,
                   const std::vector<AblateVariant>& variants,
                   const std::string& out_dir, int jobs = 1);

// Balanced two-way split of the train images by per-class object counts.
StageReport run_split(const PipelineConfig& cfg, const std::string& out_dir);

// Detects and evaluates at each threshold in cfg.nms_sweep (in memory; only
// the sweep report is written).
StageReport run_tune_nms(const PipelineConfig& cfg, const std::string& out_dir,
                         int jobs = 1);

}  // namespace rdet::pipeline
