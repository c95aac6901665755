#include "rdet/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <sstream>
#include <unordered_map>

#include "rdet/detection.hpp"
#include "rdet/errors.hpp"
#include "rdet/formats.hpp"
#include "rdet/montage.hpp"
#include "rdet/nms.hpp"
#include "rdet/parallel.hpp"
#include "rdet/rng.hpp"

namespace rdet::pipeline {

namespace fs = std::filesystem;
using detection::Detection;
using geometry::BoxCorners;
using ordered_json = nlohmann::ordered_json;
using synthdata::Annotation;

// ===========================================================================
// Stage table

namespace {

struct StageSpec {
  Stage stage;
  const char* name;
  std::vector<const char*> sections;  // config sections the stage consumes
  std::vector<Stage> upstream;        // direct dependencies
};

const std::vector<StageSpec>& stage_specs() {
  static const std::vector<StageSpec> specs = {
      {Stage::kGenData, "gen-data", {"dataset"}, {}},
      {Stage::kPropose, "propose", {"proposals"}, {Stage::kGenData}},
      {Stage::kExtract, "extract", {"features", "warp"}, {Stage::kPropose}},
      {Stage::kTrainSvm, "train-svm", {"svm"}, {Stage::kExtract}},
      {Stage::kTrainBbreg, "train-bbreg", {"bbreg"}, {Stage::kExtract}},
      {Stage::kDetect,
       "detect",
       {"detect"},
       {Stage::kTrainSvm, Stage::kTrainBbreg}},
      {Stage::kEvaluate, "evaluate", {"eval"}, {Stage::kDetect}},
      {Stage::kAnalyze, "analyze", {"eval"}, {Stage::kDetect}},
      {Stage::kVisualize,
       "visualize",
       {"visualize", "features", "warp"},
       {Stage::kPropose}},
  };
  return specs;
}

const StageSpec& spec_of(Stage stage) {
  for (const StageSpec& s : stage_specs())
    if (s.stage == stage) return s;
  throw std::logic_error("unknown stage");
}

}  // namespace

std::string stage_name(Stage stage) { return spec_of(stage).name; }

std::optional<Stage> stage_from_name(const std::string& name) {
  for (const StageSpec& s : stage_specs())
    if (name == s.name) return s.stage;
  return std::nullopt;
}

// ===========================================================================
// Config schema

namespace {

using PC = PipelineConfig;

struct Field {
  std::string key;
  std::function<std::string(const PC&)> print;
  std::function<void(PC&, const std::string&)> parse;
};

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& wanted) {
  throw ConfigError("config key '" + key + "': expected " + wanted +
                    ", got '" + value + "'");
}

long long parse_ll(const std::string& key, const std::string& v) {
  size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    bad_value(key, v, "an integer");
  }
  if (used != v.size()) bad_value(key, v, "an integer");
  return out;
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  size_t used = 0;
  uint64_t out = 0;
  try {
    out = std::stoull(v, &used);
  } catch (const std::exception&) {
    bad_value(key, v, "an unsigned integer");
  }
  if (used != v.size() || v.front() == '-')
    bad_value(key, v, "an unsigned integer");
  return out;
}

double parse_dbl(const std::string& key, const std::string& v) {
  try {
    return formats::parse_double(v);
  } catch (const std::exception&) {
    bad_value(key, v, "a number");
  }
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : v) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      cur += c;
    }
  }
  if (!cur.empty() || !out.empty()) out.push_back(cur);
  return out;
}

std::string join_list(const std::vector<std::string>& items) {
  std::string out;
  for (size_t i = 0; i < items.size(); ++i)
    out += (i ? "," : "") + items[i];
  return out;
}

// Field makers. The accessor yields a mutable reference; printing reads
// through it without writing.
template <class Acc>
Field int_field(std::string key, Acc acc) {
  return {key,
          [acc](const PC& c) { return std::to_string(acc(const_cast<PC&>(c))); },
          [acc, key](PC& c, const std::string& v) {
            acc(c) = int(parse_ll(key, v));
          }};
}

template <class Acc>
Field u64_field(std::string key, Acc acc) {
  return {key,
          [acc](const PC& c) { return std::to_string(acc(const_cast<PC&>(c))); },
          [acc, key](PC& c, const std::string& v) { acc(c) = parse_u64(key, v); }};
}

template <class Acc>
Field dbl_field(std::string key, Acc acc) {
  return {key,
          [acc](const PC& c) {
            return formats::format_double(acc(const_cast<PC&>(c)));
          },
          [acc, key](PC& c, const std::string& v) { acc(c) = parse_dbl(key, v); }};
}

template <class Acc>
Field dlist_field(std::string key, Acc acc) {
  return {key,
          [acc](const PC& c) {
            std::vector<std::string> toks;
            for (double d : acc(const_cast<PC&>(c)))
              toks.push_back(formats::format_double(d));
            return join_list(toks);
          },
          [acc, key](PC& c, const std::string& v) {
            std::vector<double> out;
            for (const std::string& t : split_list(v))
              out.push_back(parse_dbl(key, t));
            acc(c) = std::move(out);
          }};
}

template <class Acc>
Field ilist_field(std::string key, Acc acc) {
  return {key,
          [acc](const PC& c) {
            std::vector<std::string> toks;
            for (int d : acc(const_cast<PC&>(c)))
              toks.push_back(std::to_string(d));
            return join_list(toks);
          },
          [acc, key](PC& c, const std::string& v) {
            std::vector<int> out;
            for (const std::string& t : split_list(v))
              out.push_back(int(parse_ll(key, t)));
            acc(c) = std::move(out);
          }};
}

template <class T, class Acc>
Field enum_field(std::string key, Acc acc,
                 std::vector<std::pair<std::string, T>> names) {
  return {key,
          [acc, names](const PC& c) {
            const T cur = acc(const_cast<PC&>(c));
            for (const auto& [n, t] : names)
              if (t == cur) return n;
            return std::string("?");
          },
          [acc, names, key](PC& c, const std::string& v) {
            for (const auto& [n, t] : names)
              if (n == v) {
                acc(c) = t;
                return;
              }
            std::vector<std::string> opts;
            for (const auto& [n, t] : names) opts.push_back(n);
            bad_value(key, v, "one of {" + join_list(opts) + "}");
          }};
}

Field shapes_field(std::string key) {
  return {key,
          [](const PC& c) {
            std::vector<std::string> toks;
            for (auto s : c.scene.class_shapes)
              toks.push_back(synthdata::shape_name(s));
            return join_list(toks);
          },
          [key](PC& c, const std::string& v) {
            std::vector<synthdata::ShapeKind> out;
            for (const std::string& t : split_list(v)) {
              try {
                out.push_back(synthdata::shape_from_name(t));
              } catch (const std::exception&) {
                bad_value(key, t, "a shape name (disc, square, triangle, ring)");
              }
            }
            c.scene.class_shapes = std::move(out);
          }};
}

Field conv_stages_field(std::string key) {
  return {key,
          [](const PC& c) {
            std::vector<std::string> toks;
            for (const auto& s : c.conv.stages)
              toks.push_back(std::to_string(s.kernel) + ':' +
                             std::to_string(s.stride) + ':' +
                             std::to_string(s.channels) + ':' +
                             std::to_string(s.pool));
            return join_list(toks);
          },
          [key](PC& c, const std::string& v) {
            std::vector<features::ConvStage> out;
            for (const std::string& t : split_list(v)) {
              std::vector<std::string> parts;
              std::string cur;
              for (char ch : t + ':') {
                if (ch == ':') {
                  parts.push_back(cur);
                  cur.clear();
                } else {
                  cur += ch;
                }
              }
              if (parts.size() != 4)
                bad_value(key, t, "kernel:stride:channels:pool");
              out.push_back({int(parse_ll(key, parts[0])),
                             int(parse_ll(key, parts[1])),
                             int(parse_ll(key, parts[2])),
                             int(parse_ll(key, parts[3]))});
            }
            c.conv.stages = std::move(out);
          }};
}

#define ACC(expr) [](PC& c) -> decltype(auto) { return (c.expr); }

const std::vector<Field>& schema() {
  static const std::vector<Field> fields = {
      int_field("dataset.width", ACC(scene.width)),
      int_field("dataset.height", ACC(scene.height)),
      shapes_field("dataset.classes"),
      int_field("dataset.objects_min", ACC(scene.objects_min)),
      int_field("dataset.objects_max", ACC(scene.objects_max)),
      int_field("dataset.size_min", ACC(scene.size_min)),
      int_field("dataset.size_max", ACC(scene.size_max)),
      dbl_field("dataset.clutter", ACC(scene.clutter_count)),
      dbl_field("dataset.noise", ACC(scene.noise_level)),
      u64_field("dataset.seed", ACC(scene.seed)),
      ilist_field("dataset.groups", ACC(similarity_groups)),
      int_field("dataset.train_images", ACC(train_images)),
      int_field("dataset.test_images", ACC(test_images)),

      enum_field<ProposerKind>("proposals.source", ACC(proposer),
                               {{"grid", ProposerKind::kGrid},
                                {"jitter", ProposerKind::kJitter}}),
      dlist_field("proposals.scales", ACC(grid.scales)),
      dlist_field("proposals.aspects", ACC(grid.aspect_ratios)),
      dbl_field("proposals.stride_fraction", ACC(grid.stride_fraction)),
      dbl_field("proposals.resize_width", ACC(grid.resize_width)),
      dlist_field("proposals.jitter_sigmas", ACC(jitter_sigmas)),
      int_field("proposals.jitter_count", ACC(jitter_count)),
      u64_field("proposals.jitter_seed", ACC(jitter_seed)),

      enum_field<ExtractorKind>("features.extractor", ACC(extractor),
                                {{"hog", ExtractorKind::kHog},
                                 {"conv", ExtractorKind::kConv}}),
      int_field("features.hog_cell", ACC(hog.cell)),
      int_field("features.hog_bins", ACC(hog.bins)),
      int_field("features.hog_block", ACC(hog.block)),
      dbl_field("features.hog_epsilon", ACC(hog.epsilon)),
      conv_stages_field("features.conv_stages"),
      u64_field("features.conv_seed", ACC(conv.rng_seed)),

      int_field("warp.out_size", ACC(warp.out_size)),
      int_field("warp.padding", ACC(warp.padding_p)),
      enum_field<imaging::WarpMode>(
          "warp.mode", ACC(warp.mode),
          {{"warp", imaging::WarpMode::kWarp},
           {"square_context", imaging::WarpMode::kTightestSquareWithContext},
           {"square_plain",
            imaging::WarpMode::kTightestSquareWithoutContext}}),

      dbl_field("svm.C", ACC(svm.C)),
      dbl_field("svm.neg_iou", ACC(svm.neg_iou_thresh)),
      dbl_field("svm.tolerance", ACC(svm.tolerance)),
      int_field("svm.max_iters", ACC(svm.max_iters)),
      int_field("svm.eval_every", ACC(svm.eval_every)),
      dbl_field("svm.hard_thresh", ACC(svm.mining_hard_thresh)),
      int_field("svm.mining_rounds", ACC(svm.mining_max_rounds)),
      int_field("svm.init_per_image", ACC(svm.mining_init_per_image)),

      dbl_field("bbreg.lambda", ACC(bbreg_lambda)),
      dbl_field("bbreg.assign_iou", ACC(bbreg_assign_iou)),

      dbl_field("detect.nms", ACC(nms_thresh)),
      dbl_field("detect.score_floor", ACC(score_floor)),

      dbl_field("eval.iou", ACC(eval_iou)),
      enum_field<evaluation::ApMode>(
          "eval.mode", ACC(eval_mode),
          {{"all_points", evaluation::ApMode::kAllPoints},
           {"eleven_point", evaluation::ApMode::kElevenPoint}}),
      int_field("eval.fp_top_n", ACC(fp_top_n)),

      int_field("visualize.unit_y", ACC(vis_unit.y)),
      int_field("visualize.unit_x", ACC(vis_unit.x)),
      int_field("visualize.unit_channel", ACC(vis_unit.channel)),
      int_field("visualize.top_k", ACC(vis_top_k)),
      dbl_field("visualize.nms", ACC(vis_nms)),

      int_field("split.candidates", ACC(split_candidates)),
      int_field("split.steps", ACC(split_steps)),
      u64_field("split.seed", ACC(split_seed)),

      dlist_field("tune_nms.thresholds", ACC(nms_sweep)),
  };
  return fields;
}

#undef ACC

void validate(const PipelineConfig& cfg) {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (!cfg.scene.valid()) fail("dataset: invalid scene parameters");
  if (cfg.train_images < 1 || cfg.test_images < 1)
    fail("dataset: train_images and test_images must be positive");
  if (!cfg.similarity_groups.empty()) {
    if (int(cfg.similarity_groups.size()) != cfg.num_classes())
      fail("dataset.groups: need one group per class");
    for (int g : cfg.similarity_groups)
      if (g < 0) fail("dataset.groups: groups must be nonnegative");
  }
  if (!cfg.warp.valid())
    fail("warp: need padding >= 0 and out_size > 2 * padding");
  if (cfg.proposer == ProposerKind::kGrid) {
    if (cfg.grid.scales.empty() || cfg.grid.aspect_ratios.empty())
      fail("proposals: grid needs scales and aspects");
    for (double s : cfg.grid.scales)
      if (s <= 0) fail("proposals.scales: must be positive");
    for (double a : cfg.grid.aspect_ratios)
      if (a <= 0) fail("proposals.aspects: must be positive");
    if (cfg.grid.stride_fraction <= 0)
      fail("proposals.stride_fraction: must be positive");
    if (cfg.grid.resize_width < 0)
      fail("proposals.resize_width: must be nonnegative");
  } else {
    if (cfg.jitter_sigmas.empty()) fail("proposals.jitter_sigmas: empty");
    for (double s : cfg.jitter_sigmas)
      if (s < 0) fail("proposals.jitter_sigmas: must be nonnegative");
    if (cfg.jitter_count < 1) fail("proposals.jitter_count: must be positive");
  }
  if (cfg.svm.C <= 0) fail("svm.C: must be positive");
  if (cfg.svm.neg_iou_thresh <= 0 || cfg.svm.neg_iou_thresh >= 1)
    fail("svm.neg_iou: must lie in (0, 1)");
  if (cfg.svm.max_iters < 1 || cfg.svm.eval_every < 1)
    fail("svm: max_iters and eval_every must be positive");
  if (cfg.svm.mining_max_rounds < 1)
    fail("svm.mining_rounds: must be positive");
  if (cfg.svm.mining_init_per_image < 0)
    fail("svm.init_per_image: must be nonnegative");
  if (cfg.bbreg_lambda <= 0) fail("bbreg.lambda: must be positive");
  if (cfg.bbreg_assign_iou < 0 || cfg.bbreg_assign_iou >= 1)
    fail("bbreg.assign_iou: must lie in [0, 1)");
  if (cfg.nms_thresh < 0 || cfg.nms_thresh > 1)
    fail("detect.nms: must lie in [0, 1]");
  if (cfg.eval_iou <= 0 || cfg.eval_iou > 1)
    fail("eval.iou: must lie in (0, 1]");
  if (cfg.fp_top_n < 0) fail("eval.fp_top_n: must be nonnegative");
  if (cfg.vis_top_k < 1) fail("visualize.top_k: must be positive");
  if (cfg.vis_nms < 0 || cfg.vis_nms > 1)
    fail("visualize.nms: must lie in [0, 1]");
  if (cfg.vis_unit.y < 0 || cfg.vis_unit.x < 0 || cfg.vis_unit.channel < 0)
    fail("visualize: unit coordinates must be nonnegative");
  if (cfg.split_candidates < 1) fail("split.candidates: must be positive");
  if (cfg.split_steps < 0) fail("split.steps: must be nonnegative");
  if (cfg.nms_sweep.empty()) fail("tune_nms.thresholds: empty");
  for (double t : cfg.nms_sweep)
    if (t < 0 || t > 1) fail("tune_nms.thresholds: must lie in [0, 1]");

  if (cfg.extractor == ExtractorKind::kHog) {
    try {
      features::HogExtractor probe(cfg.hog);
    } catch (const std::exception& e) {
      fail(std::string("features: ") + e.what());
    }
  } else {
    if (cfg.conv.stages.empty())
      fail("features.conv_stages: conv extractor needs at least one stage");
    try {
      features::conv_output_side(cfg.conv);
    } catch (const std::exception& e) {
      fail(std::string("features: ") + e.what());
    }
  }
}

}  // namespace

std::vector<int> PipelineConfig::groups_or_identity() const {
  if (!similarity_groups.empty()) return similarity_groups;
  std::vector<int> g(static_cast<size_t>(num_classes()));
  for (size_t i = 0; i < g.size(); ++i) g[i] = int(i);
  return g;
}

PipelineConfig config_from_map(const config::ConfigMap& map) {
  PipelineConfig cfg;
  for (const auto& [key, value] : map.entries()) {
    const Field* field = nullptr;
    for (const Field& f : schema())
      if (f.key == key) {
        field = &f;
        break;
      }
    if (!field) throw ConfigError("unknown config key '" + key + "'");
    field->parse(cfg, value);
  }
  // The warp output is the extractor input; a separate knob could only
  // disagree with it.
  cfg.hog.input_size = cfg.warp.out_size;
  cfg.conv.input_size = cfg.warp.out_size;
  validate(cfg);
  return cfg;
}

std::string canonical_section_text(const PipelineConfig& cfg,
                                   const std::string& section) {
  std::string out;
  const std::string prefix = section + '.';
  for (const Field& f : schema())
    if (f.key.rfind(prefix, 0) == 0)
      out += f.key + " = " + f.print(cfg) + '\n';
  return out;
}

std::vector<std::string> schema_keys() {
  std::vector<std::string> keys;
  for (const Field& f : schema()) keys.push_back(f.key);
  return keys;
}

namespace {

std::string hash_hex(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

uint64_t stage_hash(const PipelineConfig& cfg, Stage stage) {
  const StageSpec& spec = spec_of(stage);
  std::string text = std::string(spec.name) + '\n';
  for (const char* section : spec.sections)
    text += canonical_section_text(cfg, section);
  uint64_t h = config::fnv1a64(text);
  for (Stage up : spec.upstream)
    h = config::fnv1a64(hash_hex(stage_hash(cfg, up)), h);
  return h;
}

const std::string* StageReport::stat(const std::string& key) const {
  for (const auto& [k, v] : stats)
    if (k == key) return &v;
  return nullptr;
}

// ===========================================================================
// Run-directory layout and artifact plumbing

namespace {

struct Paths {
  std::string root;

  std::string meta(Stage s) const { return root + '/' + stage_name(s) + ".meta"; }
  std::string dataset_dir() const { return root + "/dataset"; }
  std::string manifest() const { return dataset_dir() + "/manifest.txt"; }
  std::string annotations(const std::string& split) const {
    return dataset_dir() + '/' + split + ".txt";
  }
  std::string image_rel(const std::string& split, int id) const {
    char buf[32];
    std::snprintf(buf, sizeof buf, "img_%06d.pgm", id);
    return split + '/' + buf;
  }
  std::string proposals_file(const std::string& split) const {
    return root + "/proposals/" + split + ".txt";
  }
  std::string features_dir() const { return root + "/features"; }
  std::string features_manifest() const {
    return features_dir() + "/manifest.txt";
  }
  std::string feature_block_rel(const std::string& group, int id) const {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06d.feat", id);
    return group + '/' + buf;
  }
  std::string models_dir() const { return root + "/models"; }
  std::string detections_dir() const { return root + "/detections"; }
  std::string reports_dir() const { return root + "/reports"; }
  std::string montages_dir() const { return root + "/montages"; }
};

void ensure_dir(const std::string& dir) { fs::create_directories(dir); }

void write_meta(const Paths& paths, Stage stage, uint64_t hash) {
  formats::write_file_atomic(paths.meta(stage),
                             "stage = " + stage_name(stage) + "\nhash = " +
                                 hash_hex(hash) + '\n');
}

std::optional<std::string> read_meta_hash(const Paths& paths, Stage stage) {
  if (!fs::exists(paths.meta(stage))) return std::nullopt;
  const std::string text = formats::read_file(paths.meta(stage));
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const std::string key = "hash = ";
    if (line.rfind(key, 0) == 0) return line.substr(key.size());
  }
  return std::nullopt;
}

// Checks the whole ancestor chain in dependency order so the error names the
// first stage that needs (re)running.
void require_upstream(const PipelineConfig& cfg, Stage stage,
                      const Paths& paths) {
  std::vector<Stage> order;
  std::function<void(Stage)> visit = [&](Stage s) {
    for (Stage up : spec_of(s).upstream) visit(up);
    if (std::find(order.begin(), order.end(), s) == order.end())
      order.push_back(s);
  };
  for (Stage up : spec_of(stage).upstream) visit(up);

  for (Stage up : order) {
    const std::string name = stage_name(up);
    const auto stored = read_meta_hash(paths, up);
    if (!stored)
      throw MissingArtifactError(
          name, "stage '" + name + "' has not been run in " + paths.root);
    if (*stored != hash_hex(stage_hash(cfg, up)))
      throw MissingArtifactError(
          name, "artifacts of stage '" + name +
                    "' were built under a different config; re-run '" + name +
                    "'");
  }
}

void atomic_save_image(const imaging::Image& img, const std::string& path) {
  const std::string tmp = path + ".tmp";
  imaging::save_image(img, tmp);
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw IoError("rename failed: " + tmp + " -> " + path);
}

std::string stat_double(double v) { return formats::format_double(v); }

// --- dataset access -------------------------------------------------------

struct SplitIds {
  std::vector<int> train, test;
};

SplitIds split_ids(const formats::DatasetManifest& manifest) {
  SplitIds ids;
  for (const auto& img : manifest.images) {
    if (img.path.rfind("train/", 0) == 0)
      ids.train.push_back(img.image_id);
    else
      ids.test.push_back(img.image_id);
  }
  return ids;
}

formats::DatasetManifest load_manifest(const Paths& paths) {
  return formats::manifest_from_text(formats::read_file(paths.manifest()));
}

std::unordered_map<int, Annotation> annotations_by_id(const std::string& path) {
  std::unordered_map<int, Annotation> out;
  for (Annotation& ann :
       formats::annotations_from_text(formats::read_file(path)))
    out[ann.image_id] = std::move(ann);
  return out;
}

const Annotation& annotation_or_empty(
    const std::unordered_map<int, Annotation>& anns, int image_id) {
  static const Annotation empty;
  const auto it = anns.find(image_id);
  return it == anns.end() ? empty : it->second;
}

std::unordered_map<int, std::vector<BoxCorners>> proposals_by_id(
    const std::string& path) {
  std::unordered_map<int, std::vector<BoxCorners>> out;
  for (const auto& set :
       formats::proposals_from_text(formats::read_file(path))) {
    auto& boxes = out[set.image_id];
    boxes.insert(boxes.end(), set.boxes.begin(), set.boxes.end());
  }
  return out;
}

imaging::Image load_split_image(const Paths& paths, const std::string& split,
                                int id) {
  return imaging::load_image(paths.dataset_dir() + '/' +
                             paths.image_rel(split, id));
}

// --- feature cache index ---------------------------------------------------

struct FeatureIndex {
  std::string tag;
  int dim = 0;
  std::vector<double> fill_mean;
  struct Entry {
    std::string group;  // train, train_gt, test
    int image_id = 0;
    std::string rel_path;
    int rows = 0;
  };
  std::vector<Entry> entries;

  std::vector<const Entry*> group_entries(const std::string& group) const {
    std::vector<const Entry*> out;
    for (const Entry& e : entries)
      if (e.group == group) out.push_back(&e);
    return out;
  }
};

std::string feature_index_to_text(const FeatureIndex& index) {
  std::string out = "tag " + index.tag + '\n';
  out += "dim " + std::to_string(index.dim) + '\n';
  out += "fill_mean";
  for (double v : index.fill_mean) out += ' ' + formats::format_double(v);
  out += '\n';
  for (const auto& e : index.entries)
    out += "block " + e.group + ' ' + std::to_string(e.image_id) + ' ' +
           e.rel_path + ' ' + std::to_string(e.rows) + '\n';
  return out;
}

FeatureIndex feature_index_from_text(const std::string& text) {
  FeatureIndex index;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string head;
    if (!(ls >> head)) continue;
    if (head == "tag") {
      ls >> index.tag;
    } else if (head == "dim") {
      ls >> index.dim;
    } else if (head == "fill_mean") {
      std::string tok;
      while (ls >> tok) index.fill_mean.push_back(formats::parse_double(tok));
    } else if (head == "block") {
      FeatureIndex::Entry e;
      ls >> e.group >> e.image_id >> e.rel_path >> e.rows;
      index.entries.push_back(std::move(e));
    } else {
      throw IoError("feature manifest: bad line '" + line + "'");
    }
  }
  return index;
}

FeatureMatrix load_block(const Paths& paths, const FeatureIndex::Entry& e,
                         const std::string& expected_tag) {
  formats::FeatureBlock block =
      formats::load_feature_block(paths.features_dir() + '/' + e.rel_path);
  if (block.tag != expected_tag)
    throw IoError("feature block " + e.rel_path + ": tag '" + block.tag +
                  "' does not match manifest '" + expected_tag + "'");
  return std::move(block.features);
}

std::unique_ptr<features::Extractor> make_extractor(
    const PipelineConfig& cfg) {
  try {
    if (cfg.extractor == ExtractorKind::kHog)
      return std::make_unique<features::HogExtractor>(cfg.hog);
    return std::make_unique<features::ConvStack>(cfg.conv);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("features: ") + e.what());
  }
}

uint64_t per_image_seed(uint64_t base, int image_id) {
  return SplitMix64(base).split(uint64_t(image_id)).next();
}

std::vector<BoxCorners> propose_for_image(const PipelineConfig& cfg,
                                          const Annotation& ann,
                                          int image_id) {
  if (cfg.proposer == ProposerKind::kGrid)
    return proposals::grid_propose(cfg.grid, cfg.scene.width,
                                   cfg.scene.height, image_id)
        .boxes;
  std::vector<BoxCorners> gt;
  for (const auto& obj : ann.objects) gt.push_back(obj.box);
  return proposals::jitter_propose(gt, cfg.jitter_sigmas, cfg.jitter_count,
                                   per_image_seed(cfg.jitter_seed, image_id),
                                   cfg.scene.width, cfg.scene.height, image_id)
      .boxes;
}

std::string proposer_tag(const PipelineConfig& cfg) {
  return cfg.proposer == ProposerKind::kGrid ? "grid" : "jitter";
}

}  // namespace

// ===========================================================================
// Stage bodies

namespace {

StageReport make_report(Stage stage, const Paths& paths) {
  StageReport rep;
  rep.stage = stage;
  (void)paths;
  return rep;
}

// ---- gen-data -------------------------------------------------------------

std::vector<std::string> gen_data_outputs(const Paths& p) {
  return {p.manifest(), p.annotations("train"), p.annotations("test")};
}

bool gen_data_intact(const Paths& paths) {
  try {
    const auto manifest = load_manifest(paths);
    for (const auto& img : manifest.images)
      if (!fs::exists(paths.dataset_dir() + '/' + img.path)) return false;
    return fs::exists(paths.annotations("train")) &&
           fs::exists(paths.annotations("test"));
  } catch (const std::exception&) {
    return false;
  }
}

StageReport do_gen_data(const PipelineConfig& cfg, const Paths& paths,
                        int jobs) {
  ensure_dir(paths.dataset_dir() + "/train");
  ensure_dir(paths.dataset_dir() + "/test");

  const int total = cfg.train_images + cfg.test_images;
  std::vector<std::pair<imaging::Image, Annotation>> scenes(static_cast<size_t>(total));
  parallel_for(size_t(total), jobs, [&](size_t i) {
    scenes[i] = synthdata::generate_scene(cfg.scene, int(i));
  });

  formats::DatasetManifest manifest;
  for (auto kind : cfg.scene.class_shapes)
    manifest.class_names.push_back(synthdata::shape_name(kind));
  manifest.similarity_groups = cfg.groups_or_identity();

  std::vector<Annotation> train_anns, test_anns;
  size_t objects = 0;
  for (int id = 0; id < total; ++id) {
    const bool is_train = id < cfg.train_images;
    const std::string split = is_train ? "train" : "test";
    const std::string rel = paths.image_rel(split, id);
    atomic_save_image(scenes[size_t(id)].first,
                      paths.dataset_dir() + '/' + rel);
    manifest.images.push_back({id, rel});
    objects += scenes[size_t(id)].second.objects.size();
    (is_train ? train_anns : test_anns).push_back(scenes[size_t(id)].second);
  }
  formats::write_file_atomic(paths.annotations("train"),
                             formats::annotations_to_text(train_anns));
  formats::write_file_atomic(paths.annotations("test"),
                             formats::annotations_to_text(test_anns));
  formats::write_file_atomic(paths.manifest(),
                             formats::manifest_to_text(manifest));

  StageReport rep = make_report(Stage::kGenData, paths);
  rep.outputs = gen_data_outputs(paths);
  rep.primary_output = paths.manifest();
  rep.stats = {{"images", std::to_string(total)},
               {"train_images", std::to_string(cfg.train_images)},
               {"test_images", std::to_string(cfg.test_images)},
               {"classes", std::to_string(cfg.num_classes())},
               {"objects", std::to_string(objects)}};
  return rep;
}

// ---- propose ---------------------------------------------------------------

std::vector<std::string> propose_outputs(const Paths& p) {
  return {p.proposals_file("train"), p.proposals_file("test")};
}

StageReport do_propose(const PipelineConfig& cfg, const Paths& paths,
                       int jobs) {
  ensure_dir(paths.root + "/proposals");
  const auto manifest = load_manifest(paths);
  const SplitIds ids = split_ids(manifest);

  size_t total_boxes = 0;
  for (const std::string split : {"train", "test"}) {
    const auto anns = annotations_by_id(paths.annotations(split));
    const auto& id_list = split == std::string("train") ? ids.train : ids.test;
    std::vector<proposals::ProposalSet> sets(id_list.size());
    parallel_for(id_list.size(), jobs, [&](size_t i) {
      const int id = id_list[i];
      sets[i] = {id, propose_for_image(cfg, annotation_or_empty(anns, id), id),
                 proposer_tag(cfg)};
    });
    for (const auto& s : sets) total_boxes += s.boxes.size();
    formats::write_file_atomic(paths.proposals_file(split),
                               formats::proposals_to_text(sets));
  }

  StageReport rep = make_report(Stage::kPropose, paths);
  rep.outputs = propose_outputs(paths);
  rep.primary_output = paths.proposals_file("test");
  rep.stats = {{"source", proposer_tag(cfg)},
               {"boxes", std::to_string(total_boxes)}};
  return rep;
}

// ---- extract ----------------------------------------------------------------

std::vector<std::string> extract_outputs(const Paths& p) {
  return {p.features_manifest()};
}

bool extract_intact(const Paths& paths) {
  try {
    const FeatureIndex index =
        feature_index_from_text(formats::read_file(paths.features_manifest()));
    for (const auto& e : index.entries)
      if (!fs::exists(paths.features_dir() + '/' + e.rel_path)) return false;
    return true;
  } catch (const std::exception&) {
    return false;
  }
}

StageReport do_extract(const PipelineConfig& cfg, const Paths& paths,
                       int jobs) {
  for (const char* group : {"train", "train_gt", "test"})
    ensure_dir(paths.features_dir() + '/' + group);

  const auto manifest = load_manifest(paths);
  const SplitIds ids = split_ids(manifest);

  // The training-set mean doubles as the warp fill and the extractor's
  // input mean; test images reuse it so both splits see one preprocessing.
  std::vector<imaging::Image> train_images(ids.train.size());
  parallel_for(ids.train.size(), jobs, [&](size_t i) {
    train_images[i] = load_split_image(paths, "train", ids.train[i]);
  });
  const std::vector<double> fill_mean = imaging::image_mean(train_images);

  auto extractor = make_extractor(cfg);
  extractor->set_input_mean(fill_mean);

  FeatureIndex index;
  index.tag = extractor->tag();
  index.dim = extractor->dim();
  index.fill_mean = fill_mean;

  size_t total_rows = 0;
  auto extract_boxes = [&](const imaging::Image& img,
                           const std::vector<BoxCorners>& boxes) {
    FeatureMatrix F(Eigen::Index(boxes.size()), extractor->dim());
    for (size_t r = 0; r < boxes.size(); ++r) {
      const imaging::Patch patch =
          imaging::warp_region(img, boxes[r], cfg.warp, fill_mean);
      F.row(Eigen::Index(r)) = features::extract(*extractor, patch).values;
    }
    return F;
  };

  struct Job {
    std::string group;
    int image_id = 0;
    const imaging::Image* image = nullptr;  // cached train image, if any
  };
  std::vector<Job> jobs_list;
  const auto train_props = proposals_by_id(paths.proposals_file("train"));
  const auto test_props = proposals_by_id(paths.proposals_file("test"));
  const auto train_anns = annotations_by_id(paths.annotations("train"));

  for (size_t i = 0; i < ids.train.size(); ++i) {
    jobs_list.push_back({"train", ids.train[i], &train_images[i]});
    jobs_list.push_back({"train_gt", ids.train[i], &train_images[i]});
  }
  for (int id : ids.test) jobs_list.push_back({"test", id, nullptr});

  std::vector<FeatureMatrix> blocks(jobs_list.size());
  parallel_for(jobs_list.size(), jobs, [&](size_t i) {
    const Job& job = jobs_list[i];
    imaging::Image loaded;
    const imaging::Image* img = job.image;
    if (!img) {
      loaded = load_split_image(paths, "test", job.image_id);
      img = &loaded;
    }
    std::vector<BoxCorners> boxes;
    if (job.group == "train_gt") {
      for (const auto& obj :
           annotation_or_empty(train_anns, job.image_id).objects)
        boxes.push_back(obj.box);
    } else {
      const auto& props = job.group == "train" ? train_props : test_props;
      const auto it = props.find(job.image_id);
      if (it != props.end()) boxes = it->second;
    }
    blocks[i] = extract_boxes(*img, boxes);
  });

  for (size_t i = 0; i < jobs_list.size(); ++i) {
    const Job& job = jobs_list[i];
    const std::string rel = paths.feature_block_rel(job.group, job.image_id);
    const int rows = int(blocks[i].rows());
    formats::save_feature_block(
        paths.features_dir() + '/' + rel,
        {job.image_id, index.tag, std::move(blocks[i])});
    index.entries.push_back({job.group, job.image_id, rel, rows});
    total_rows += size_t(rows);
  }
  formats::write_file_atomic(paths.features_manifest(),
                             feature_index_to_text(index));

  StageReport rep = make_report(Stage::kExtract, paths);
  rep.outputs = extract_outputs(paths);
  rep.primary_output = paths.features_manifest();
  rep.stats = {{"tag", index.tag},
               {"dim", std::to_string(index.dim)},
               {"rows", std::to_string(total_rows)}};
  return rep;
}

// ---- train-svm ---------------------------------------------------------------

std::vector<std::string> train_svm_outputs(const Paths& p) {
  return {p.models_dir() + "/svm.bin", p.models_dir() + "/svm.txt"};
}

StageReport do_train_svm(const PipelineConfig& cfg, const Paths& paths,
                         int jobs) {
  ensure_dir(paths.models_dir());
  const auto manifest = load_manifest(paths);
  const FeatureIndex index =
      feature_index_from_text(formats::read_file(paths.features_manifest()));
  const auto train_anns = annotations_by_id(paths.annotations("train"));
  const auto train_props = proposals_by_id(paths.proposals_file("train"));

  const auto prop_entries = index.group_entries("train");
  const auto gt_entries = index.group_entries("train_gt");

  // Proposal blocks and their boxes, loaded once and shared by all classes.
  std::vector<FeatureMatrix> prop_features(prop_entries.size());
  std::vector<const std::vector<BoxCorners>*> prop_boxes(prop_entries.size());
  static const std::vector<BoxCorners> kNoBoxes;
  for (size_t i = 0; i < prop_entries.size(); ++i) {
    prop_features[i] = load_block(paths, *prop_entries[i], index.tag);
    const auto it = train_props.find(prop_entries[i]->image_id);
    prop_boxes[i] = it == train_props.end() ? &kNoBoxes : &it->second;
    if (int(prop_boxes[i]->size()) != prop_features[i].rows())
      throw IoError("feature cache rows disagree with the proposals file");
  }
  std::vector<FeatureMatrix> gt_features(gt_entries.size());
  for (size_t i = 0; i < gt_entries.size(); ++i)
    gt_features[i] = load_block(paths, *gt_entries[i], index.tag);

  const int C = cfg.num_classes();
  std::vector<training::MiningResult> results(static_cast<size_t>(C));
  std::vector<std::string> errors(static_cast<size_t>(C));
  parallel_for(size_t(C), jobs, [&](size_t c) {
    // Per-class windows: proposals labeled against this class's GT.
    std::vector<training::MiningImage> mining;
    std::vector<Eigen::Index> pos_rows;
    for (size_t i = 0; i < prop_entries.size(); ++i) {
      const int id = prop_entries[i]->image_id;
      const training::SvmLabeling lab = training::label_for_svm(
          *prop_boxes[i], annotation_or_empty(train_anns, id), int(c),
          cfg.svm.neg_iou_thresh);
      mining.push_back({prop_features[i], lab.proposal_labels});
    }
    Eigen::Index n_pos = 0;
    for (size_t i = 0; i < gt_entries.size(); ++i) {
      const auto& ann = annotation_or_empty(train_anns, gt_entries[i]->image_id);
      for (size_t o = 0; o < ann.objects.size(); ++o)
        if (ann.objects[o].class_id == int(c)) ++n_pos;
    }
    FeatureMatrix positives(n_pos, index.dim);
    Eigen::Index row = 0;
    for (size_t i = 0; i < gt_entries.size(); ++i) {
      const auto& ann = annotation_or_empty(train_anns, gt_entries[i]->image_id);
      for (size_t o = 0; o < ann.objects.size(); ++o)
        if (ann.objects[o].class_id == int(c))
          positives.row(row++) = gt_features[i].row(Eigen::Index(o));
    }
    try {
      results[c] = training::mine_hard_negatives(mining, positives, cfg.svm);
    } catch (const std::invalid_argument& e) {
      errors[c] = e.what();
    }
  });
  for (size_t c = 0; c < errors.size(); ++c)
    if (!errors[c].empty())
      throw ConfigError("train-svm: class " + std::to_string(c) + " (" +
                        manifest.class_names[c] + "): " + errors[c]);

  training::ClassifierModel model;
  model.W.resize(index.dim, C);
  model.b.resize(C);
  for (int c = 0; c < C; ++c) {
    model.W.col(c) = results[size_t(c)].model.w;
    model.b(c) = results[size_t(c)].model.b;
    model.class_ids.push_back(c);
  }
  formats::save_classifier(paths.models_dir() + "/svm.bin", model);

  std::string sidecar =
      "# per-class linear svm (hard-negative mining)\n"
      "# class name objective rounds converged cache_negatives "
      "total_negatives\n";
  for (int c = 0; c < C; ++c) {
    const auto& r = results[size_t(c)];
    sidecar += std::to_string(c) + ' ' + manifest.class_names[size_t(c)] +
               ' ' + formats::format_double(r.model.objective) + ' ' +
               std::to_string(r.rounds) + ' ' +
               std::to_string(int(r.converged)) + ' ' +
               std::to_string(r.cache_negatives) + ' ' +
               std::to_string(r.total_negatives) + '\n';
  }
  formats::write_file_atomic(paths.models_dir() + "/svm.txt", sidecar);

  StageReport rep = make_report(Stage::kTrainSvm, paths);
  rep.outputs = train_svm_outputs(paths);
  rep.primary_output = paths.models_dir() + "/svm.txt";
  rep.stats = {{"classes", std::to_string(C)},
               {"dim", std::to_string(index.dim)}};
  for (int c = 0; c < C; ++c)
    rep.stats.push_back(
        {"objective_" + std::to_string(c),
         stat_double(results[size_t(c)].model.objective)});
  return rep;
}

// ---- train-bbreg ---------------------------------------------------------------

std::vector<std::string> train_bbreg_outputs(const Paths& p) {
  return {p.models_dir() + "/bbreg.bin", p.models_dir() + "/bbreg.txt"};
}

StageReport do_train_bbreg(const PipelineConfig& cfg, const Paths& paths,
                           int jobs) {
  (void)jobs;
  ensure_dir(paths.models_dir());
  const auto manifest = load_manifest(paths);
  const FeatureIndex index =
      feature_index_from_text(formats::read_file(paths.features_manifest()));
  const auto train_anns = annotations_by_id(paths.annotations("train"));
  const auto train_props = proposals_by_id(paths.proposals_file("train"));

  const int C = cfg.num_classes();
  std::vector<std::vector<training::RegressionExample>> per_class(static_cast<size_t>(C));
  for (const auto* entry : index.group_entries("train")) {
    const auto it = train_props.find(entry->image_id);
    if (it == train_props.end()) continue;
    const auto& boxes = it->second;
    const FeatureMatrix F = load_block(paths, *entry, index.tag);
    const Annotation& ann = annotation_or_empty(train_anns, entry->image_id);
    if (ann.objects.empty()) continue;
    for (size_t r = 0; r < boxes.size(); ++r) {
      // Assign to the max-IoU object (ties to the lower index).
      int best = -1;
      double best_iou = 0.0;
      for (size_t o = 0; o < ann.objects.size(); ++o) {
        const double v = geometry::iou(boxes[r], ann.objects[o].box);
        if (v > best_iou) {
          best_iou = v;
          best = int(o);
        }
      }
      if (best < 0) continue;
      training::RegressionExample ex;
      ex.phi = F.row(Eigen::Index(r)).transpose();
      ex.p = geometry::to_center(boxes[r]);
      ex.g = geometry::to_center(ann.objects[size_t(best)].box);
      ex.iou = best_iou;
      per_class[size_t(ann.objects[size_t(best)].class_id)].push_back(
          std::move(ex));
    }
  }

  const training::BBoxRegressor reg = training::train_bbox_regressor(
      per_class, cfg.bbreg_lambda, cfg.bbreg_assign_iou);
  formats::save_regressor(paths.models_dir() + "/bbreg.bin", reg);

  std::string sidecar = "# per-class box regressors (lambda = " +
                        formats::format_double(cfg.bbreg_lambda) +
                        ", assign_iou = " +
                        formats::format_double(cfg.bbreg_assign_iou) +
                        ")\n# class name trained candidate_pairs\n";
  for (int c = 0; c < C; ++c)
    sidecar += std::to_string(c) + ' ' + manifest.class_names[size_t(c)] +
               ' ' + std::to_string(int(reg.trained[size_t(c)])) + ' ' +
               std::to_string(per_class[size_t(c)].size()) + '\n';
  formats::write_file_atomic(paths.models_dir() + "/bbreg.txt", sidecar);

  StageReport rep = make_report(Stage::kTrainBbreg, paths);
  rep.outputs = train_bbreg_outputs(paths);
  rep.primary_output = paths.models_dir() + "/bbreg.txt";
  int trained = 0;
  for (uint8_t t : reg.trained) trained += t;
  rep.stats = {{"classes", std::to_string(C)},
               {"trained", std::to_string(trained)}};
  return rep;
}

// ---- detect ---------------------------------------------------------------

std::vector<std::string> detect_outputs(const Paths& p) {
  return {p.detections_dir() + "/raw.txt", p.detections_dir() + "/refined.txt"};
}

struct DetectInputs {
  training::ClassifierModel model;
  training::BBoxRegressor regressor;
  std::vector<int> test_ids;
  std::vector<std::vector<BoxCorners>> boxes;  // aligned with test_ids
  std::vector<FeatureMatrix> features;         // aligned with test_ids
};

DetectInputs load_detect_inputs(const Paths& paths) {
  DetectInputs in;
  in.model = formats::load_classifier(paths.models_dir() + "/svm.bin");
  in.regressor = formats::load_regressor(paths.models_dir() + "/bbreg.bin");
  const FeatureIndex index =
      feature_index_from_text(formats::read_file(paths.features_manifest()));
  const auto test_props = proposals_by_id(paths.proposals_file("test"));
  static const std::vector<BoxCorners> kNoBoxes;
  for (const auto* entry : index.group_entries("test")) {
    in.test_ids.push_back(entry->image_id);
    const auto it = test_props.find(entry->image_id);
    in.boxes.push_back(it == test_props.end() ? kNoBoxes : it->second);
    in.features.push_back(load_block(paths, *entry, index.tag));
    if (int(in.boxes.back().size()) != in.features.back().rows())
      throw IoError("feature cache rows disagree with the proposals file");
  }
  return in;
}

// Scores cached features, then per-class floor + NMS, then one refinement
// pass. Returns (raw, refined), each grouped by image then class.
std::pair<std::vector<Detection>, std::vector<Detection>> detect_all(
    const DetectInputs& in, double nms_thresh, double score_floor, int jobs) {
  const size_t n = in.test_ids.size();
  std::vector<std::vector<Detection>> raw(n), refined(n);
  parallel_for(n, jobs, [&](size_t i) {
    const FeatureMatrix& F = in.features[i];
    if (F.rows() == 0) return;
    const Eigen::MatrixXd S = detection::score_all(F, in.model);
    std::vector<Eigen::Index> det_rows;
    for (int c = 0; c < in.model.num_classes(); ++c) {
      std::vector<BoxCorners> boxes;
      std::vector<double> scores;
      std::vector<Eigen::Index> rows;
      for (Eigen::Index r = 0; r < F.rows(); ++r) {
        if (S(r, c) < score_floor) continue;
        boxes.push_back(in.boxes[i][size_t(r)]);
        scores.push_back(S(r, c));
        rows.push_back(r);
      }
      for (size_t k : detection::nms(boxes, scores, nms_thresh)) {
        raw[i].push_back({in.test_ids[i], in.model.class_ids[size_t(c)],
                          boxes[k], scores[k]});
        det_rows.push_back(rows[k]);
      }
    }
    FeatureMatrix det_feats(Eigen::Index(det_rows.size()), F.cols());
    for (size_t k = 0; k < det_rows.size(); ++k)
      det_feats.row(Eigen::Index(k)) = F.row(det_rows[k]);
    refined[i] = detection::refine(raw[i], in.regressor, det_feats);
  });

  std::pair<std::vector<Detection>, std::vector<Detection>> out;
  for (size_t i = 0; i < n; ++i) {
    out.first.insert(out.first.end(), raw[i].begin(), raw[i].end());
    out.second.insert(out.second.end(), refined[i].begin(), refined[i].end());
  }
  return out;
}

StageReport do_detect(const PipelineConfig& cfg, const Paths& paths,
                      int jobs) {
  ensure_dir(paths.detections_dir());
  const DetectInputs in = load_detect_inputs(paths);
  const auto [raw, refined] =
      detect_all(in, cfg.nms_thresh, cfg.score_floor, jobs);
  formats::write_file_atomic(paths.detections_dir() + "/raw.txt",
                             formats::detections_to_text(raw));
  formats::write_file_atomic(paths.detections_dir() + "/refined.txt",
                             formats::detections_to_text(refined));

  StageReport rep = make_report(Stage::kDetect, paths);
  rep.outputs = detect_outputs(paths);
  rep.primary_output = paths.detections_dir() + "/refined.txt";
  rep.stats = {{"images", std::to_string(in.test_ids.size())},
               {"detections", std::to_string(raw.size())}};
  return rep;
}

// ---- evaluate ---------------------------------------------------------------

std::vector<std::string> evaluate_outputs(const Paths& p) {
  return {p.reports_dir() + "/evaluation.txt",
          p.reports_dir() + "/evaluation.json"};
}

std::vector<Annotation> test_annotation_list(const Paths& paths) {
  std::vector<Annotation> anns;
  for (Annotation& a : formats::annotations_from_text(
           formats::read_file(paths.annotations("test"))))
    anns.push_back(std::move(a));
  return anns;
}

const char* mode_name(evaluation::ApMode mode) {
  return mode == evaluation::ApMode::kAllPoints ? "all_points" : "eleven_point";
}

StageReport do_evaluate(const PipelineConfig& cfg, const Paths& paths,
                        int jobs) {
  (void)jobs;
  ensure_dir(paths.reports_dir());
  const auto manifest = load_manifest(paths);
  const auto anns = test_annotation_list(paths);
  const auto raw = formats::detections_from_text(
      formats::read_file(paths.detections_dir() + "/raw.txt"));
  const auto refined = formats::detections_from_text(
      formats::read_file(paths.detections_dir() + "/refined.txt"));

  const int C = cfg.num_classes();
  const auto res_ref =
      evaluation::evaluate(refined, anns, C, cfg.eval_iou, cfg.eval_mode);
  const auto res_raw =
      evaluation::evaluate(raw, anns, C, cfg.eval_iou, cfg.eval_mode);

  ordered_json j;
  j["iou_thresh"] = cfg.eval_iou;
  j["mode"] = mode_name(cfg.eval_mode);
  j["per_class"] = ordered_json::array();

  std::string text = "# evaluation report\n";
  text += "iou_thresh = " + formats::format_double(cfg.eval_iou) + '\n';
  text += std::string("mode = ") + mode_name(cfg.eval_mode) + '\n';
  text += "# class name num_gt ap ap_raw\n";
  for (int c = 0; c < C; ++c) {
    const auto match =
        evaluation::match_detections(refined, anns, c, cfg.eval_iou);
    const auto pr = evaluation::pr_curve(match);
    std::string pr_text = "# rank recall precision tp\n";
    for (size_t k = 0; k < pr.recall.size(); ++k)
      pr_text += std::to_string(k) + ' ' +
                 formats::format_double(pr.recall[k]) + ' ' +
                 formats::format_double(pr.precision[k]) + ' ' +
                 std::to_string(int(pr.tp[k])) + '\n';
    formats::write_file_atomic(
        paths.reports_dir() + "/pr_class_" + std::to_string(c) + ".txt",
        pr_text);

    const auto& ap = res_ref.per_class_ap[size_t(c)];
    const auto& ap_raw = res_raw.per_class_ap[size_t(c)];
    text += std::to_string(c) + ' ' + manifest.class_names[size_t(c)] + ' ' +
            std::to_string(match.num_gt) + ' ' +
            (ap ? formats::format_double(*ap) : "undefined") + ' ' +
            (ap_raw ? formats::format_double(*ap_raw) : "undefined") + '\n';

    ordered_json jc;
    jc["class_id"] = c;
    jc["name"] = manifest.class_names[size_t(c)];
    jc["num_gt"] = match.num_gt;
    if (ap)
      jc["ap"] = *ap;
    else
      jc["ap"] = nullptr;
    if (ap_raw)
      jc["ap_raw"] = *ap_raw;
    else
      jc["ap_raw"] = nullptr;
    j["per_class"].push_back(jc);
  }
  text += "map = " +
          (res_ref.map ? formats::format_double(*res_ref.map) : "undefined") +
          '\n';
  text += "map_raw = " +
          (res_raw.map ? formats::format_double(*res_raw.map) : "undefined") +
          '\n';
  if (res_ref.map)
    j["map"] = *res_ref.map;
  else
    j["map"] = nullptr;
  if (res_raw.map)
    j["map_raw"] = *res_raw.map;
  else
    j["map_raw"] = nullptr;

  formats::write_file_atomic(paths.reports_dir() + "/evaluation.txt", text);
  formats::write_file_atomic(paths.reports_dir() + "/evaluation.json",
                             j.dump(2) + '\n');

  StageReport rep = make_report(Stage::kEvaluate, paths);
  rep.outputs = evaluate_outputs(paths);
  rep.primary_output = paths.reports_dir() + "/evaluation.json";
  rep.stats = {
      {"map", res_ref.map ? stat_double(*res_ref.map) : "undefined"},
      {"map_raw", res_raw.map ? stat_double(*res_raw.map) : "undefined"}};
  return rep;
}

// ---- analyze ---------------------------------------------------------------

std::vector<std::string> analyze_outputs(const Paths& p) {
  return {p.reports_dir() + "/fp_analysis.txt",
          p.reports_dir() + "/fp_analysis.json"};
}

StageReport do_analyze(const PipelineConfig& cfg, const Paths& paths,
                       int jobs) {
  (void)jobs;
  ensure_dir(paths.reports_dir());
  const auto manifest = load_manifest(paths);
  const auto anns = test_annotation_list(paths);
  const auto refined = formats::detections_from_text(
      formats::read_file(paths.detections_dir() + "/refined.txt"));

  const auto res = evaluation::fp_analysis_per_class(
      refined, anns, manifest.similarity_groups, cfg.fp_top_n, cfg.eval_iou);

  std::string text = "# false-positive taxonomy, top " +
                     std::to_string(cfg.fp_top_n) + " per class\n";
  text += "# class name loc sim oth bg total\n";
  ordered_json j;
  j["top_n"] = cfg.fp_top_n;
  j["iou_thresh"] = cfg.eval_iou;
  j["per_class"] = ordered_json::array();
  for (size_t c = 0; c < res.per_class.size(); ++c) {
    const auto& bd = res.per_class[c];
    text += std::to_string(c) + ' ' + manifest.class_names[c] + ' ' +
            std::to_string(bd.loc) + ' ' + std::to_string(bd.sim) + ' ' +
            std::to_string(bd.oth) + ' ' + std::to_string(bd.bg) + ' ' +
            std::to_string(bd.total()) + '\n';
    j["per_class"].push_back({{"class_id", int(c)},
                              {"name", manifest.class_names[c]},
                              {"loc", bd.loc},
                              {"sim", bd.sim},
                              {"oth", bd.oth},
                              {"bg", bd.bg}});
  }
  text += "total - " + std::to_string(res.total.loc) + ' ' +
          std::to_string(res.total.sim) + ' ' + std::to_string(res.total.oth) +
          ' ' + std::to_string(res.total.bg) + ' ' +
          std::to_string(res.total.total()) + '\n';
  j["total"] = {{"loc", res.total.loc},
                {"sim", res.total.sim},
                {"oth", res.total.oth},
                {"bg", res.total.bg}};

  formats::write_file_atomic(paths.reports_dir() + "/fp_analysis.txt", text);
  formats::write_file_atomic(paths.reports_dir() + "/fp_analysis.json",
                             j.dump(2) + '\n');

  StageReport rep = make_report(Stage::kAnalyze, paths);
  rep.outputs = analyze_outputs(paths);
  rep.primary_output = paths.reports_dir() + "/fp_analysis.json";
  rep.stats = {{"loc", std::to_string(res.total.loc)},
               {"sim", std::to_string(res.total.sim)},
               {"oth", std::to_string(res.total.oth)},
               {"bg", std::to_string(res.total.bg)}};
  return rep;
}

// ---- visualize ---------------------------------------------------------------

std::string montage_stem(const PipelineConfig& cfg) {
  return "unit_y" + std::to_string(cfg.vis_unit.y) + "_x" +
         std::to_string(cfg.vis_unit.x) + "_c" +
         std::to_string(cfg.vis_unit.channel);
}

std::vector<std::string> visualize_outputs(const PipelineConfig& cfg,
                                           const Paths& p) {
  return {p.montages_dir() + '/' + montage_stem(cfg) + ".ppm",
          p.montages_dir() + '/' + montage_stem(cfg) + ".txt"};
}

StageReport do_visualize(const PipelineConfig& cfg, const Paths& paths,
                         int jobs) {
  if (cfg.extractor != ExtractorKind::kConv)
    throw ConfigError("visualize: requires features.extractor = conv");
  ensure_dir(paths.montages_dir());
  const auto manifest = load_manifest(paths);
  const SplitIds ids = split_ids(manifest);
  const auto test_props = proposals_by_id(paths.proposals_file("test"));

  std::vector<imaging::Image> train_images(ids.train.size());
  parallel_for(ids.train.size(), jobs, [&](size_t i) {
    train_images[i] = load_split_image(paths, "train", ids.train[i]);
  });
  const std::vector<double> fill_mean = imaging::image_mean(train_images);

  std::vector<imaging::Image> images(ids.test.size());
  parallel_for(ids.test.size(), jobs, [&](size_t i) {
    images[i] = load_split_image(paths, "test", ids.test[i]);
  });
  std::vector<features::RegionRef> regions;
  for (size_t i = 0; i < ids.test.size(); ++i) {
    const auto it = test_props.find(ids.test[i]);
    if (it == test_props.end()) continue;
    for (const BoxCorners& b : it->second) regions.push_back({int(i), b});
  }

  const auto hits = features::top_activations(
      cfg.conv, cfg.vis_unit, images, regions, cfg.vis_top_k, cfg.vis_nms,
      cfg.warp, fill_mean);

  const geometry::BoxCorners rf =
      features::receptive_field(cfg.conv, cfg.vis_unit, cfg.warp.out_size);

  std::string sidecar =
      "# top activations for unit y=" + std::to_string(cfg.vis_unit.y) +
      " x=" + std::to_string(cfg.vis_unit.x) +
      " channel=" + std::to_string(cfg.vis_unit.channel) + '\n' +
      "# rank image_id x_min y_min x_max y_max raw normalized\n";
  std::vector<imaging::Patch> cells;
  for (size_t k = 0; k < hits.size(); ++k) {
    const auto& hit = hits[k];
    const auto& region = regions[hit.region_index];
    imaging::Patch patch = imaging::warp_region(
        images[size_t(region.image_index)], region.box, cfg.warp, fill_mean);
    viz::draw_box_outline(patch, rf, 1.0);
    viz::draw_text(patch, viz::format_label(hit.activation),
                   int(rf.x_min) + 2, int(rf.y_min) + 2, 1.0);
    cells.push_back(std::move(patch));

    sidecar += std::to_string(k) + ' ' +
               std::to_string(ids.test[size_t(region.image_index)]);
    for (double v : {region.box.x_min, region.box.y_min, region.box.x_max,
                     region.box.y_max})
      sidecar += ' ' + formats::format_double(v);
    sidecar += ' ' + formats::format_double(hit.raw) + ' ' +
               formats::format_double(hit.activation) + '\n';
  }
  if (cells.empty())
    throw ConfigError("visualize: no regions to rank; run propose first");

  const int cols = int(std::ceil(std::sqrt(double(cells.size()))));
  const imaging::Image grid = viz::montage_grid(cells, cols, 2);
  atomic_save_image(grid, paths.montages_dir() + '/' + montage_stem(cfg) +
                              ".ppm");
  formats::write_file_atomic(
      paths.montages_dir() + '/' + montage_stem(cfg) + ".txt", sidecar);

  StageReport rep = make_report(Stage::kVisualize, paths);
  rep.outputs = visualize_outputs(cfg, paths);
  rep.primary_output = paths.montages_dir() + '/' + montage_stem(cfg) + ".txt";
  rep.stats = {{"hits", std::to_string(hits.size())},
               {"regions", std::to_string(regions.size())}};
  return rep;
}

std::vector<std::string> stage_output_files(const PipelineConfig& cfg,
                                            Stage stage, const Paths& paths) {
  switch (stage) {
    case Stage::kGenData:
      return gen_data_outputs(paths);
    case Stage::kPropose:
      return propose_outputs(paths);
    case Stage::kExtract:
      return extract_outputs(paths);
    case Stage::kTrainSvm:
      return train_svm_outputs(paths);
    case Stage::kTrainBbreg:
      return train_bbreg_outputs(paths);
    case Stage::kDetect:
      return detect_outputs(paths);
    case Stage::kEvaluate:
      return evaluate_outputs(paths);
    case Stage::kAnalyze:
      return analyze_outputs(paths);
    case Stage::kVisualize:
      return visualize_outputs(cfg, paths);
  }
  return {};
}

bool outputs_intact(const PipelineConfig& cfg, Stage stage,
                    const Paths& paths) {
  for (const std::string& f : stage_output_files(cfg, stage, paths))
    if (!fs::exists(f)) return false;
  if (stage == Stage::kGenData) return gen_data_intact(paths);
  if (stage == Stage::kExtract) return extract_intact(paths);
  return true;
}

}  // namespace

StageReport run_stage(const PipelineConfig& cfg, Stage stage,
                      const std::string& out_dir, int jobs) {
  Paths paths{out_dir};
  ensure_dir(out_dir);
  require_upstream(cfg, stage, paths);

  const uint64_t h = stage_hash(cfg, stage);
  const auto stored = read_meta_hash(paths, stage);
  if (stored && *stored == hash_hex(h) && outputs_intact(cfg, stage, paths)) {
    StageReport rep;
    rep.stage = stage;
    rep.cache_hit = true;
    rep.outputs = stage_output_files(cfg, stage, paths);
    // Primary output per stage: gen-data publishes its manifest, everything
    // else the last listed artifact (reports, sidecars).
    rep.primary_output =
        stage == Stage::kGenData ? paths.manifest() : rep.outputs.back();
    return rep;
  }

  StageReport rep;
  switch (stage) {
    case Stage::kGenData:
      rep = do_gen_data(cfg, paths, jobs);
      break;
    case Stage::kPropose:
      rep = do_propose(cfg, paths, jobs);
      break;
    case Stage::kExtract:
      rep = do_extract(cfg, paths, jobs);
      break;
    case Stage::kTrainSvm:
      rep = do_train_svm(cfg, paths, jobs);
      break;
    case Stage::kTrainBbreg:
      rep = do_train_bbreg(cfg, paths, jobs);
      break;
    case Stage::kDetect:
      rep = do_detect(cfg, paths, jobs);
      break;
    case Stage::kEvaluate:
      rep = do_evaluate(cfg, paths, jobs);
      break;
    case Stage::kAnalyze:
      rep = do_analyze(cfg, paths, jobs);
      break;
    case Stage::kVisualize:
      rep = do_visualize(cfg, paths, jobs);
      break;
  }
  write_meta(paths, stage, h);
  return rep;
}

StageReport run_chain(const PipelineConfig& cfg, const std::string& out_dir,
                      int jobs) {
  StageReport last;
  for (Stage s : {Stage::kGenData, Stage::kPropose, Stage::kExtract,
                  Stage::kTrainSvm, Stage::kTrainBbreg, Stage::kDetect,
                  Stage::kEvaluate})
    last = run_stage(cfg, s, out_dir, jobs);
  return last;
}

// ===========================================================================
// Extra subcommands

namespace {

bool safe_variant_name(const std::string& name) {
  if (name.empty()) return false;
  for (char c : name)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-'))
      return false;
  return true;
}

}  // namespace

StageReport ablate(const config::ConfigMap& base_map,
                   const std::vector<AblateVariant>& variants,
                   const std::string& out_dir, int jobs) {
  std::vector<AblateVariant> list = variants;
  if (list.empty()) list.push_back({"base", {}});

  Paths paths{out_dir};
  ensure_dir(paths.reports_dir());

  std::string text = "# ablation table\n# variant map map_raw\n";
  ordered_json j = ordered_json::array();
  StageReport rep;
  rep.stage = Stage::kEvaluate;
  for (const AblateVariant& v : list) {
    if (!safe_variant_name(v.name))
      throw ConfigError("ablate: variant name '" + v.name +
                        "' must be alphanumeric/_/-");
    config::ConfigMap map = base_map;
    for (const std::string& assignment : v.overrides)
      config::apply_override(map, assignment);
    const PipelineConfig cfg = config_from_map(map);
    const StageReport eval =
        run_chain(cfg, out_dir + "/ablate/" + v.name, jobs);
    const std::string* map_s = eval.stat("map");
    const std::string* raw_s = eval.stat("map_raw");
    // Cache hits skip stats; recover them from the written report.
    std::string map_v = map_s ? *map_s : "", raw_v = raw_s ? *raw_s : "";
    if (map_v.empty() || raw_v.empty()) {
      const auto parsed = ordered_json::parse(
          formats::read_file(eval.primary_output));
      map_v = parsed["map"].is_null()
                  ? "undefined"
                  : formats::format_double(parsed["map"].get<double>());
      raw_v = parsed["map_raw"].is_null()
                  ? "undefined"
                  : formats::format_double(parsed["map_raw"].get<double>());
    }
    text += v.name + ' ' + map_v + ' ' + raw_v + '\n';
    j.push_back({{"variant", v.name},
                 {"map", map_v},
                 {"map_raw", raw_v}});
    rep.stats.push_back({"map[" + v.name + "]", map_v});
  }
  formats::write_file_atomic(paths.reports_dir() + "/ablate.txt", text);
  formats::write_file_atomic(paths.reports_dir() + "/ablate.json",
                             j.dump(2) + '\n');
  rep.outputs = {paths.reports_dir() + "/ablate.txt",
                 paths.reports_dir() + "/ablate.json"};
  rep.primary_output = paths.reports_dir() + "/ablate.txt";
  return rep;
}

StageReport run_split(const PipelineConfig& cfg, const std::string& out_dir) {
  Paths paths{out_dir};
  require_upstream(cfg, Stage::kPropose, paths);  // needs gen-data only
  ensure_dir(paths.reports_dir());

  const auto manifest = load_manifest(paths);
  const SplitIds ids = split_ids(manifest);
  const auto anns = annotations_by_id(paths.annotations("train"));

  std::vector<std::vector<int>> counts(
      ids.train.size(), std::vector<int>(size_t(cfg.num_classes()), 0));
  for (size_t i = 0; i < ids.train.size(); ++i)
    for (const auto& obj :
         annotation_or_empty(anns, ids.train[i]).objects)
      ++counts[i][size_t(obj.class_id)];

  const synthdata::SplitResult split = synthdata::balanced_split(
      counts, cfg.split_candidates, cfg.split_steps, cfg.split_seed);

  auto side_text = [&](const std::vector<int>& side) {
    std::string out;
    for (size_t i = 0; i < side.size(); ++i)
      out += (i ? " " : "") + std::to_string(ids.train[size_t(side[i])]);
    return out;
  };
  std::string text = "# balanced split of the train images\n";
  text += "max_relative_imbalance = " +
          formats::format_double(split.max_relative_imbalance) + '\n';
  text += "median_relative_imbalance = " +
          formats::format_double(split.median_relative_imbalance) + '\n';
  text += "side_a = " + side_text(split.side_a) + '\n';
  text += "side_b = " + side_text(split.side_b) + '\n';
  formats::write_file_atomic(paths.reports_dir() + "/split.txt", text);

  StageReport rep;
  rep.stage = Stage::kGenData;
  rep.outputs = {paths.reports_dir() + "/split.txt"};
  rep.primary_output = rep.outputs.front();
  rep.stats = {
      {"side_a", std::to_string(split.side_a.size())},
      {"side_b", std::to_string(split.side_b.size())},
      {"max_relative_imbalance", stat_double(split.max_relative_imbalance)}};
  return rep;
}

StageReport run_tune_nms(const PipelineConfig& cfg, const std::string& out_dir,
                         int jobs) {
  Paths paths{out_dir};
  require_upstream(cfg, Stage::kDetect, paths);
  ensure_dir(paths.reports_dir());

  const DetectInputs in = load_detect_inputs(paths);
  const auto anns = test_annotation_list(paths);

  std::string text = "# nms threshold sweep\n# threshold map map_raw\n";
  ordered_json j = ordered_json::array();
  double best_map = -1.0;
  double best_thresh = cfg.nms_sweep.front();
  StageReport rep;
  rep.stage = Stage::kDetect;
  for (double t : cfg.nms_sweep) {
    const auto [raw, refined] = detect_all(in, t, cfg.score_floor, jobs);
    const auto res_ref = evaluation::evaluate(refined, anns, cfg.num_classes(),
                                              cfg.eval_iou, cfg.eval_mode);
    const auto res_raw = evaluation::evaluate(raw, anns, cfg.num_classes(),
                                              cfg.eval_iou, cfg.eval_mode);
    const double map_v = res_ref.map.value_or(0.0);
    text += formats::format_double(t) + ' ' +
            (res_ref.map ? formats::format_double(*res_ref.map) : "undefined") +
            ' ' +
            (res_raw.map ? formats::format_double(*res_raw.map) : "undefined") +
            '\n';
    j.push_back({{"threshold", t},
                 {"map", res_ref.map ? ordered_json(*res_ref.map)
                                     : ordered_json(nullptr)},
                 {"map_raw", res_raw.map ? ordered_json(*res_raw.map)
                                         : ordered_json(nullptr)}});
    if (map_v > best_map) {
      best_map = map_v;
      best_thresh = t;
    }
  }
  text += "best = " + formats::format_double(best_thresh) + '\n';
  formats::write_file_atomic(paths.reports_dir() + "/tune_nms.txt", text);
  formats::write_file_atomic(paths.reports_dir() + "/tune_nms.json",
                             j.dump(2) + '\n');
  rep.outputs = {paths.reports_dir() + "/tune_nms.txt",
                 paths.reports_dir() + "/tune_nms.json"};
  rep.primary_output = paths.reports_dir() + "/tune_nms.txt";
  rep.stats = {{"best", stat_double(best_thresh)},
               {"best_map", stat_double(best_map)}};
  return rep;
}

}  // namespace rdet::pipeline
