#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "camforge/label_mask.hpp"
#include "camforge/nn/tensor.hpp"

namespace camforge {

enum class Preset { desk, full };

Preset parse_preset(std::string_view name);

// Flat dotted-key configuration. Every key has a typed default; unknown keys
// and type mismatches raise ConfigError.
class PipelineConfig {
 public:
  explicit PipelineConfig(Preset preset = Preset::desk);

  // Nested objects are flattened to dotted keys.
  void merge_json(const nlohmann::json& doc);
  void merge_file(const std::filesystem::path& path);
  // "key=value"; the value is parsed as JSON, falling back to a plain string.
  void set_override(std::string_view assignment);
  void set(const std::string& key, nlohmann::json value);

  const nlohmann::json& get(const std::string& key) const;
  bool get_bool(const std::string& key) const { return get(key).get<bool>(); }
  std::int64_t get_int(const std::string& key) const { return get(key).get<std::int64_t>(); }
  std::uint64_t get_u64(const std::string& key) const { return get(key).get<std::uint64_t>(); }
  double get_double(const std::string& key) const { return get(key).get<double>(); }
  std::string get_string(const std::string& key) const { return get(key).get<std::string>(); }
  std::vector<double> get_doubles(const std::string& key) const;
  std::vector<std::int64_t> get_ints(const std::string& key) const;

  Preset preset() const { return preset_; }
  // Cross-key checks (ranges, split fractions, scale sets).
  void validate() const;
  // Sorted flat object.
  nlohmann::json to_json() const;
  // Flat object restricted to keys under any of `prefixes` ("seed" included
  // when listed).
  nlohmann::json subset(const std::vector<std::string>& prefixes) const;

 private:
  Preset preset_;
  std::map<std::string, nlohmann::json> values_;
};

// Fixed stage order of a full run.
inline const std::vector<std::string> kStageOrder{"gen-data", "train-cls", "cams",          "refine",
                                                  "train-seg", "eval",     "export-heatmaps"};

struct RunOptions {
  std::filesystem::path out;
  int workers = 1;
  bool force = false;                       // ignore completion records
  std::function<void(const std::string&)> log;  // progress lines; may be empty
};

// Outcome of one stage invocation.
struct StageResult {
  std::string stage;
  bool skipped = false;  // completion record matched
};

// Runs one stage. Failures surface as StageError naming the stage, except
// ConfigError and DataError which propagate unchanged.
StageResult run_stage(const std::string& stage, const PipelineConfig& config, const RunOptions& options);

// Runs `stages` (all stages when empty) in pipeline order.
std::vector<StageResult> run_pipeline(const PipelineConfig& config, const RunOptions& options,
                                      const std::vector<std::string>& stages = {});

// Writes config.resolved.json into the run directory.
void write_resolved_config(const PipelineConfig& config, const std::filesystem::path& out);

// Viridis overlay of a [0, 1] map on a grayscale image at `alpha`; returns
// interleaved RGB bytes.
std::vector<std::uint8_t> heatmap_overlay(const nn::Tensor& image, const nn::Tensor& cam, double alpha = 0.5);
void export_heatmap(const std::filesystem::path& cam_png, const std::filesystem::path& image_png,
                    const std::filesystem::path& out_png, double alpha = 0.5);

// One row per image plus a trailing `__aggregate__` row of means.
struct MetricsRow {
  std::string image;
  double pa = 0.0, miou = 0.0, dice = 0.0;
};
std::string metrics_csv(const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

}  // namespace camforge
