#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "camforge/errors.hpp"
#include "camforge/pipeline.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitStage = 4;

struct GlobalFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "run";
  int workers = 1;
  std::string preset;
  std::vector<std::string> overrides;
  bool force = false;
};

// --preset wins; otherwise a "preset" key in the config file selects the defaults.
camforge::Preset resolve_preset(const GlobalFlags& g) {
  if (!g.preset.empty()) return camforge::parse_preset(g.preset);
  if (!g.config_path.empty()) {
    std::ifstream in(g.config_path);
    if (!in) throw camforge::ConfigError("cannot open config file " + g.config_path);
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw camforge::ConfigError("config file " + g.config_path + " is not valid JSON: " + e.what());
    }
    if (doc.is_object() && doc.contains("preset") && doc["preset"].is_string()) {
      return camforge::parse_preset(doc["preset"].get<std::string>());
    }
  }
  return camforge::Preset::desk;
}

camforge::PipelineConfig build_config(const GlobalFlags& g, const std::vector<std::string>& extra) {
  camforge::PipelineConfig cfg(resolve_preset(g));
  if (!g.config_path.empty()) cfg.merge_file(g.config_path);
  if (g.seed) cfg.set("seed", *g.seed);
  for (const auto& o : g.overrides) cfg.set_override(o);
  for (const auto& o : extra) cfg.set_override(o);
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weakly supervised lesion segmentation pipeline: CAM seeds, CRF refinement, Mixed-UNet training."};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalFlags g;
  app.add_option("--config", g.config_path, "JSON config file (nested or dotted keys)");
  app.add_option("--seed", g.seed, "Global seed");
  app.add_option("--out", g.out, "Run directory")->capture_default_str();
  app.add_option("--workers", g.workers, "Per-image worker threads")->check(CLI::Range(1, 256))->capture_default_str();
  app.add_option("--preset", g.preset, "Default set")->check(CLI::IsMember({"desk", "full"}));
  app.add_option("--set", g.overrides, "Override a config key, key=value (repeatable)");
  app.add_flag("--force", g.force, "Re-run stages even when their completion record matches");

  std::vector<std::string> extra;
  std::string stage;
  std::vector<std::string> pipeline_stages;

  for (const auto& name : camforge::kStageOrder) {
    auto* sub = app.add_subcommand(name, "Run the " + name + " stage");
    sub->callback([&stage, name] { stage = name; });
    if (name == "cams") {
      sub->add_option_function<std::string>(
             "--prefuse-norm",
             [&extra](const std::string& v) { extra.push_back("cam.prefuse_norm=" + v); },
             "Normalize each scale's CAM before fusion")
          ->check(CLI::IsMember({"true", "false"}));
      sub->add_option_function<double>(
          "--threshold", [&extra](double v) { extra.push_back("cam.threshold=" + std::to_string(v)); },
          "Seed threshold T");
    }
    if (name == "train-seg") {
      sub->add_flag_function(
          "--single-branch", [&extra](std::int64_t) { extra.push_back("unet.single_branch=true"); },
          "Train the single-branch ablation");
    }
  }
  auto* pipe = app.add_subcommand("pipeline", "Run stages in order (all by default)");
  pipe->add_option("--stage", pipeline_stages, "Restrict to a stage (repeatable)")
      ->check(CLI::IsMember(camforge::kStageOrder));
  pipe->callback([&stage] { stage = "pipeline"; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    const auto cfg = build_config(g, extra);
    camforge::RunOptions opt;
    opt.out = g.out;
    opt.workers = g.workers;
    opt.force = g.force;
    opt.log = [](const std::string& line) { std::fprintf(stderr, "%s\n", line.c_str()); };
    camforge::write_resolved_config(cfg, opt.out);
    if (stage == "pipeline") {
      camforge::run_pipeline(cfg, opt, pipeline_stages);
    } else {
      camforge::run_stage(stage, cfg, opt);
    }
  } catch (const camforge::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const camforge::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const camforge::StageError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return kExitStage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "stage '%s' failed: %s\n", stage.c_str(), e.what());
    return kExitStage;
  }
  return 0;
}
