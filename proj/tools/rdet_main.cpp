// Command-line front end over the stage graph. Every subcommand shares the
// same config handling: a config file, then repeatable --set overrides.
// Exit codes: 0 ok, 1 io/internal, 2 usage, 3 missing artifact, 4 config.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "rdet/config.hpp"
#include "rdet/errors.hpp"
#include "rdet/formats.hpp"
#include "rdet/pipeline.hpp"

namespace {

using rdet::pipeline::AblateVariant;
using rdet::pipeline::PipelineConfig;
using rdet::pipeline::Stage;
using rdet::pipeline::StageReport;

struct Options {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out_dir = "run";
  int jobs = 0;  // 0 picks the hardware concurrency
  bool to_stdout = false;
  std::vector<std::string> variant_specs;
};

// "name:key=value,key=value". Commas inside list values produce fragments
// without '='; those are glued back onto the previous assignment.
AblateVariant parse_variant_spec(const std::string& spec) {
  const size_t colon = spec.find(':');
  AblateVariant v;
  v.name = spec.substr(0, colon == std::string::npos ? spec.size() : colon);
  if (colon == std::string::npos) return v;
  std::string rest = spec.substr(colon + 1);
  std::string cur;
  auto flush = [&] {
    if (cur.empty()) return;
    if (cur.find('=') == std::string::npos && !v.overrides.empty())
      v.overrides.back() += ',' + cur;
    else
      v.overrides.push_back(cur);
    cur.clear();
  };
  for (char c : rest) {
    if (c == ',')
      flush();
    else
      cur += c;
  }
  flush();
  return v;
}

rdet::config::ConfigMap load_map(const Options& opt) {
  rdet::config::ConfigMap map = rdet::config::load_config_file(opt.config_path);
  for (const std::string& s : opt.sets) rdet::config::apply_override(map, s);
  return map;
}

void emit(const StageReport& rep, const Options& opt) {
  std::cerr << rdet::pipeline::stage_name(rep.stage)
            << (rep.cache_hit ? ": cached\n" : ": done\n");
  for (const auto& [key, value] : rep.stats)
    std::cerr << "  " << key << " = " << value << '\n';
  for (const std::string& f : rep.outputs) std::cerr << "  wrote " << f << '\n';
  if (opt.to_stdout && !rep.primary_output.empty())
    std::cout << rdet::formats::read_file(rep.primary_output);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic-scene object detection pipeline"};
  app.require_subcommand(1);

  Options opt;
  // Shared options are registered on every subcommand so they can appear
  // after the subcommand name, which is how the tool is documented.
  std::vector<CLI::App*> subs;
  const char* stage_cmds[] = {"gen-data",  "propose",  "extract",
                              "train-svm", "train-bbreg", "detect",
                              "evaluate",  "analyze",  "visualize"};
  const char* stage_desc[] = {
      "render the synthetic dataset and its annotations",
      "write region proposals for both splits",
      "warp proposals and cache feature blocks",
      "train the per-class linear classifiers with hard-negative mining",
      "fit the per-class bounding-box regressors",
      "score, suppress and refine detections on the test split",
      "compute precision/recall and average precision",
      "categorize the top-ranked false positives",
      "render the top-activation montage for one conv unit (conv extractor)"};
  for (size_t i = 0; i < std::size(stage_cmds); ++i)
    subs.push_back(app.add_subcommand(stage_cmds[i], stage_desc[i]));
  CLI::App* sub_ablate = app.add_subcommand(
      "ablate", "run config variants end to end and tabulate their mAP");
  CLI::App* sub_split = app.add_subcommand(
      "split", "balanced two-way split of the train images");
  CLI::App* sub_tune = app.add_subcommand(
      "tune-nms", "sweep the detection NMS threshold and report mAP");
  subs.push_back(sub_ablate);
  subs.push_back(sub_split);
  subs.push_back(sub_tune);

  for (CLI::App* sub : subs) {
    sub->add_option("--config", opt.config_path, "config file")->required();
    sub->add_option("--set", opt.sets,
                    "override, section.key=value (repeatable)");
    sub->add_option("--out", opt.out_dir, "run directory (default: run)");
    sub->add_option("--jobs", opt.jobs, "worker threads, 0 = all cores");
    sub->add_flag("--stdout", opt.to_stdout,
                  "echo the primary output file to stdout");
  }
  sub_ablate->add_option("--variant", opt.variant_specs,
                         "NAME:key=value,... (repeatable)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << '\n';
    return 2;
  }

  try {
    const rdet::config::ConfigMap map = load_map(opt);

    if (sub_ablate->parsed()) {
      std::vector<AblateVariant> variants;
      for (const std::string& spec : opt.variant_specs)
        variants.push_back(parse_variant_spec(spec));
      emit(rdet::pipeline::ablate(map, variants, opt.out_dir, opt.jobs), opt);
      return 0;
    }

    const PipelineConfig cfg = rdet::pipeline::config_from_map(map);
    if (sub_split->parsed()) {
      emit(rdet::pipeline::run_split(cfg, opt.out_dir), opt);
      return 0;
    }
    if (sub_tune->parsed()) {
      emit(rdet::pipeline::run_tune_nms(cfg, opt.out_dir, opt.jobs), opt);
      return 0;
    }
    for (size_t i = 0; i < std::size(stage_cmds); ++i) {
      if (!subs[i]->parsed()) continue;
      const auto stage = rdet::pipeline::stage_from_name(stage_cmds[i]);
      emit(rdet::pipeline::run_stage(cfg, *stage, opt.out_dir, opt.jobs), opt);
      return 0;
    }
    std::cerr << "error: usage: no subcommand\n";
    return 2;
  } catch (const rdet::MissingArtifactError& e) {
    std::cerr << "error: missing-artifact: " << e.what() << '\n';
    return 3;
  } catch (const rdet::ConfigError& e) {
    std::cerr << "error: config: " << e.what() << '\n';
    return 4;
  } catch (const rdet::IoError& e) {
    std::cerr << "error: io: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << '\n';
    return 1;
  }
}
