#include <cmath>
#include <fstream>

#include "camforge/errors.hpp"
#include "camforge/io_util.hpp"
#include "camforge/pipeline.hpp"

namespace camforge {

using nlohmann::json;

Preset parse_preset(std::string_view name) {
  if (name == "desk") return Preset::desk;
  if (name == "full") return Preset::full;
  throw ConfigError("unknown preset '" + std::string(name) + "' (expected desk or full)");
}

PipelineConfig::PipelineConfig(Preset preset) : preset_(preset) {
  const bool desk = preset == Preset::desk;
  values_ = {
      {"seed", json(std::uint64_t{0})},
      {"data.manifest", json("")},
      {"data.n_pos", json(120)},
      {"data.n_neg", json(120)},
      {"data.size", json(desk ? 64 : 256)},
      {"data.slices_per_group", json(2)},
      {"data.train_frac", json(0.6)},
      {"data.val_frac", json(0.2)},
      {"cls.epochs", json(30)},
      {"cls.batch", json(8)},
      {"cls.lr", json(1e-3)},
      {"cls.gamma", json(0.9)},
      {"cls.weight_decay", json(1e-4)},
      {"cls.augment", json(false)},
      {"cls.widths", json::array({16, 32, 64, 64})},
      {"cls.pooled_blocks", json(2)},
      {"cls.pointwise_blocks", json(2)},
      {"cam.scales", json::array({0.5, 1.0, 1.5, 2.0})},
      {"cam.threshold", json(0.35)},
      {"cam.prefuse_norm", json(true)},
      {"crf.iterations", json(10)},
      {"crf.w_app", json(10.0)},
      {"crf.theta_alpha", json(80.0)},
      {"crf.theta_beta", json(13.0 / 255.0)},
      {"crf.w_smooth", json(3.0)},
      {"crf.theta_gamma", json(3.0)},
      {"crf.unary_clip", json(0.05)},
      {"unet.base_channels", json(desk ? 8 : 64)},
      {"unet.classes", json(2)},
      {"unet.single_branch", json(false)},
      {"seg.epochs", json(desk ? 30 : 100)},
      {"seg.batch", json(desk ? 4 : 8)},
      {"seg.lr", json(1e-3)},
      {"seg.gamma", json(0.9)},
      {"seg.weight_decay", json(1e-4)},
      {"seg.augment", json(true)},
      {"seg.noise_prob", json(0.25)},
      {"seg.empty_seed", json("error")},
      {"heatmap.alpha", json(0.5)},
  };
}

namespace {

void flatten(const json& node, const std::string& prefix, std::vector<std::pair<std::string, json>>& out) {
  if (node.is_object()) {
    for (const auto& [k, v] : node.items()) flatten(v, prefix.empty() ? k : prefix + "." + k, out);
  } else {
    out.emplace_back(prefix, node);
  }
}

bool is_integer(const json& v) { return v.is_number_integer() || v.is_number_unsigned(); }

// Checks `value` against the kind of `current`, coercing integers to
// floating point where the default is floating point.
json coerce(const std::string& key, const json& current, const json& value) {
  auto bad = [&](const char* expected) {
    return ConfigError("config key '" + key + "' expects " + expected + ", got " + value.dump());
  };
  if (current.is_boolean()) {
    if (!value.is_boolean()) throw bad("a boolean");
    return value;
  }
  if (current.is_string()) {
    if (!value.is_string()) throw bad("a string");
    return value;
  }
  if (is_integer(current)) {
    if (is_integer(value)) {
      if (current.is_number_unsigned() && value.is_number_integer() && value.get<std::int64_t>() < 0) {
        throw bad("a non-negative integer");
      }
      return value;
    }
    if (value.is_number_float()) {
      const double d = value.get<double>();
      if (std::floor(d) == d && std::abs(d) < 9e15) return json(static_cast<std::int64_t>(d));
    }
    throw bad("an integer");
  }
  if (current.is_number_float()) {
    if (!value.is_number()) throw bad("a number");
    return json(value.get<double>());
  }
  if (current.is_array()) {
    if (!value.is_array() || value.empty()) throw bad("a non-empty array");
    const bool ints = is_integer(current.front());
    json out = json::array();
    for (const auto& e : value) {
      if (ints ? !is_integer(e) : !e.is_number()) throw bad(ints ? "an array of integers" : "an array of numbers");
      out.push_back(ints ? e : json(e.get<double>()));
    }
    return out;
  }
  throw bad("a supported value");
}

}  // namespace

void PipelineConfig::set(const std::string& key, json value) {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = coerce(key, it->second, value);
}

void PipelineConfig::merge_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config document must be a JSON object");
  std::vector<std::pair<std::string, json>> flat;
  flatten(doc, "", flat);
  for (auto& [k, v] : flat) {
    if (k == "preset") {
      if (!v.is_string() || parse_preset(v.get<std::string>()) != preset_) {
        throw ConfigError("config file preset " + v.dump() + " does not match the selected preset");
      }
      continue;
    }
    set(k, v);
  }
}

void PipelineConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  merge_json(doc);
}

void PipelineConfig::set_override(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override '" + std::string(assignment) + "' is not of the form key=value");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = json(text);
  set(key, value);
}

const json& PipelineConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

std::vector<double> PipelineConfig::get_doubles(const std::string& key) const {
  return get(key).get<std::vector<double>>();
}

std::vector<std::int64_t> PipelineConfig::get_ints(const std::string& key) const {
  return get(key).get<std::vector<std::int64_t>>();
}

void PipelineConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(get_int("data.n_pos") >= 0 && get_int("data.n_neg") >= 0, "data.n_pos and data.n_neg must be >= 0");
  const auto size = get_int("data.size");
  require(size >= 8 && size % 8 == 0, "data.size must be a positive multiple of 8");
  require(get_int("data.slices_per_group") >= 1, "data.slices_per_group must be >= 1");
  const double tf = get_double("data.train_frac"), vf = get_double("data.val_frac");
  require(tf >= 0 && vf >= 0 && tf + vf <= 1.0, "data.train_frac + data.val_frac must lie in [0, 1]");
  for (const char* k : {"cls.epochs", "seg.epochs", "crf.iterations"}) require(get_int(k) >= 0, std::string(k) + " must be >= 0");
  for (const char* k : {"cls.batch", "seg.batch"}) require(get_int(k) >= 1, std::string(k) + " must be >= 1");
  for (const char* k : {"cls.lr", "seg.lr", "cls.weight_decay", "seg.weight_decay"}) {
    require(get_double(k) >= 0, std::string(k) + " must be >= 0");
  }
  for (const char* k : {"cls.gamma", "seg.gamma"}) require(get_double(k) > 0, std::string(k) + " must be > 0");
  for (auto w : get_ints("cls.widths")) require(w >= 1, "cls.widths entries must be >= 1");
  const auto blocks = static_cast<std::int64_t>(get_ints("cls.widths").size());
  require(get_int("cls.pooled_blocks") >= 0 && get_int("cls.pooled_blocks") <= blocks,
          "cls.pooled_blocks must lie in [0, number of blocks]");
  require(get_int("cls.pointwise_blocks") >= 0 && get_int("cls.pointwise_blocks") <= blocks,
          "cls.pointwise_blocks must lie in [0, number of blocks]");
  bool has_unit = false;
  for (double r : get_doubles("cam.scales")) {
    require(r > 0, "cam.scales entries must be > 0");
    has_unit = has_unit || r == 1.0;
  }
  require(has_unit, "cam.scales must include 1.0");
  const double t = get_double("cam.threshold");
  require(t > 0 && t < 1, "cam.threshold must lie in (0, 1)");
  require(get_double("crf.w_app") >= 0 && get_double("crf.w_smooth") >= 0, "CRF kernel weights must be >= 0");
  require(get_double("crf.theta_alpha") > 0 && get_double("crf.theta_beta") > 0 && get_double("crf.theta_gamma") > 0,
          "CRF bandwidths must be > 0");
  const double eps = get_double("crf.unary_clip");
  require(eps > 0 && eps < 0.5, "crf.unary_clip must lie in (0, 0.5)");
  require(get_int("unet.base_channels") >= 1, "unet.base_channels must be >= 1");
  require(get_int("unet.classes") >= 2, "unet.classes must be >= 2");
  const double np = get_double("seg.noise_prob");
  require(np >= 0 && np <= 1, "seg.noise_prob must lie in [0, 1]");
  const auto policy = get_string("seg.empty_seed");
  require(policy == "error" || policy == "ce_only", "seg.empty_seed must be 'error' or 'ce_only'");
  const double alpha = get_double("heatmap.alpha");
  require(alpha >= 0 && alpha <= 1, "heatmap.alpha must lie in [0, 1]");
}

json PipelineConfig::to_json() const {
  json out = json::object();
  out["preset"] = preset_ == Preset::desk ? "desk" : "full";
  for (const auto& [k, v] : values_) out[k] = v;
  return out;
}

json PipelineConfig::subset(const std::vector<std::string>& prefixes) const {
  json out = json::object();
  for (const auto& [k, v] : values_) {
    for (const auto& p : prefixes) {
      if (k == p || (p.back() == '.' && k.rfind(p, 0) == 0)) {
        out[k] = v;
        break;
      }
    }
  }
  return out;
}

void write_resolved_config(const PipelineConfig& config, const std::filesystem::path& out) {
  write_text_atomic(out / "config.resolved.json", config.to_json().dump(2) + "\n");
}

}  // namespace camforge
