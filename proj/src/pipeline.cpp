#include "camforge/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "camforge/cam.hpp"
#include "camforge/classifier.hpp"
#include "camforge/crf.hpp"
#include "camforge/data/dataset.hpp"
#include "camforge/data/image_io.hpp"
#include "camforge/data/synth.hpp"
#include "camforge/errors.hpp"
#include "camforge/io_util.hpp"
#include "camforge/metrics.hpp"
#include "camforge/mixed_unet.hpp"
#include "camforge/seg_train.hpp"

namespace camforge {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------- helpers

struct Context {
  const PipelineConfig& cfg;
  const RunOptions& opt;

  fs::path out() const { return opt.out; }
  void log(const std::string& line) const {
    if (opt.log) opt.log(line);
  }
};

fs::path manifest_path(const Context& ctx) {
  const auto external = ctx.cfg.get_string("data.manifest");
  return external.empty() ? ctx.out() / "data" / "manifest.json" : fs::path(external);
}

data::Dataset load_dataset(const Context& ctx) {
  const auto path = manifest_path(ctx);
  if (!fs::exists(path)) throw DataError("manifest " + path.string() + " does not exist; run gen-data first");
  return data::load_corpus(path, ctx.cfg.get_int("data.size"));
}

// The manifest and every file it references.
std::vector<fs::path> corpus_files(const Context& ctx) {
  const auto path = manifest_path(ctx);
  std::vector<fs::path> files{path};
  if (!fs::exists(path)) return files;
  const auto m = data::read_manifest(path);
  for (const auto& e : m.entries) {
    files.push_back(m.resolve(e.image));
    if (e.mask) files.push_back(m.resolve(*e.mask));
  }
  return files;
}

std::vector<fs::path> files_under(const fs::path& dir, const std::string& suffix = "") {
  std::vector<fs::path> files;
  if (!fs::exists(dir)) return files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto name = e.path().filename().string();
    if (name.find(".tmp") != std::string::npos) continue;
    if (suffix.empty() || (name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)) {
      files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::string record_key(const Context& ctx, const fs::path& p) {
  const auto rel = p.lexically_relative(ctx.out());
  if (!rel.empty() && rel.native().rfind("..", 0) != 0) return rel.generic_string();
  return fs::absolute(p).lexically_normal().generic_string();
}

json hash_files(const Context& ctx, const std::vector<fs::path>& files) {
  json out = json::object();
  for (const auto& f : files) {
    if (!fs::exists(f)) throw DataError("missing input file " + f.string());
    out[record_key(ctx, f)] = sha256_file(f);
  }
  return out;
}

// Runs fn(i) for i in [0, n) on up to `workers` threads. The exception of the
// lowest failing index is rethrown so failures are reproducible.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  const auto threads = static_cast<std::size_t>(std::max(1, workers));
  if (threads == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::mutex mu;
  std::size_t next = 0;
  std::size_t failed_at = n;
  std::exception_ptr failure;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(mu);
        if (next >= n) return;
        i = next++;
      }
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (i < failed_at) {
          failed_at = i;
          failure = std::current_exception();
        }
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(threads, n); ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::string format_scale(double r) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", r);
  return buf;
}

std::string seg_variant(const PipelineConfig& cfg) { return cfg.get_bool("unet.single_branch") ? "single" : "mixed"; }

Cam cam_from_png(const fs::path& path, int class_id) {
  const auto t = data::read_png_gray(path);
  Cam c;
  c.class_id = class_id;
  c.h = t.h();
  c.w = t.w();
  c.values.assign(t.data().begin(), t.data().end());
  return c;
}

int foreground_class(const data::Sample& s, std::int64_t classes) {
  if (s.label > 0) return s.label;
  return classes > 1 ? 1 : 0;
}

// ---------------------------------------------------------------- stages

struct StageSpec {
  std::string record;                 // completion record name
  std::vector<std::string> config_keys;
  std::vector<fs::path> output_dirs;  // cleared before running
  std::function<std::vector<fs::path>(const Context&)> inputs;
  std::function<void(const Context&)> run;
};

void stage_gen_data(const Context& ctx) {
  if (!ctx.cfg.get_string("data.manifest").empty()) {
    const auto path = manifest_path(ctx);
    auto m = data::read_manifest(path);
    data::validate_manifest(m, true);
    ctx.log("[gen-data] using external corpus " + path.string() + " (" + std::to_string(m.entries.size()) + " entries)");
    return;
  }
  data::CorpusSpec spec;
  spec.n_pos = static_cast<int>(ctx.cfg.get_int("data.n_pos"));
  spec.n_neg = static_cast<int>(ctx.cfg.get_int("data.n_neg"));
  spec.size = static_cast<int>(ctx.cfg.get_int("data.size"));
  spec.seed = ctx.cfg.get_u64("seed");
  spec.train_frac = ctx.cfg.get_double("data.train_frac");
  spec.val_frac = ctx.cfg.get_double("data.val_frac");
  spec.slices_per_group = static_cast<int>(ctx.cfg.get_int("data.slices_per_group"));
  const auto m = data::generate_corpus(spec, ctx.out() / "data");
  ctx.log("[gen-data] wrote " + std::to_string(m.entries.size()) + " images");
}

ClassifierConfig classifier_config(const PipelineConfig& cfg, std::int64_t classes) {
  ClassifierConfig c;
  c.num_classes = std::max<std::int64_t>(2, classes);
  c.widths = cfg.get_ints("cls.widths");
  c.pooled_blocks = cfg.get_int("cls.pooled_blocks");
  c.pointwise_blocks = cfg.get_int("cls.pointwise_blocks");
  return c;
}

void stage_train_cls(const Context& ctx) {
  const auto ds = load_dataset(ctx);
  auto model = make_classifier(classifier_config(ctx.cfg, static_cast<std::int64_t>(ds.classes.size())),
                               ctx.cfg.get_u64("seed"));
  ClassifierTrainConfig tc;
  tc.epochs = static_cast<int>(ctx.cfg.get_int("cls.epochs"));
  tc.batch_size = static_cast<int>(ctx.cfg.get_int("cls.batch"));
  tc.lr = ctx.cfg.get_double("cls.lr");
  tc.poly_gamma = ctx.cfg.get_double("cls.gamma");
  tc.weight_decay = ctx.cfg.get_double("cls.weight_decay");
  tc.augment = ctx.cfg.get_bool("cls.augment");
  tc.seed = ctx.cfg.get_u64("seed");
  const auto history = train_classifier(model, ds, tc);
  const auto dir = ctx.out() / "classifier";
  save_classifier(dir / "classifier.ckpt", model);
  write_text_atomic(dir / "history.csv", history_csv(history));
  const auto test = ds.split(data::Split::test);
  const auto score = score_classifier(model, test);
  json metrics = {{"test_images", test.size()}, {"test_loss", score.loss}, {"test_accuracy", score.accuracy}};
  write_text_atomic(dir / "metrics.json", metrics.dump(2) + "\n");
  char buf[96];
  std::snprintf(buf, sizeof(buf), "[train-cls] test accuracy %.4f over %zu images", score.accuracy, test.size());
  ctx.log(buf);
}

void stage_cams(const Context& ctx) {
  const auto ds = load_dataset(ctx);
  auto model = load_classifier(ctx.out() / "classifier" / "classifier.ckpt");
  ScaleSet scales{ctx.cfg.get_doubles("cam.scales")};
  const ThresholdConfig th{ctx.cfg.get_double("cam.threshold")};
  const bool prefuse = ctx.cfg.get_bool("cam.prefuse_norm");
  const auto dir = ctx.out() / "cams";
  fs::create_directories(dir);
  parallel_for(ds.samples.size(), ctx.opt.workers, [&](std::size_t i) {
    const auto& s = ds.samples[i];
    const int c = foreground_class(s, model.config.num_classes);
    const auto set = cam_set(model, s.image, scales, c, prefuse);
    for (const auto& cam : set.per_scale) {
      data::write_png_gray16(dir / (s.stem + ".scale" + format_scale(cam.scale) + ".png"), normalize(cam).to_tensor());
    }
    data::write_png_gray16(dir / (s.stem + ".fused.png"), set.fused.to_tensor());
    // Only images labeled with a foreground class carry foreground seeds.
    const bool positive = s.label > 0;
    const LabelMask empty(s.image.h(), s.image.w());
    data::write_mask_png(dir / (s.stem + ".origin.png"), positive ? threshold(set.origin, th) : empty);
    data::write_mask_png(dir / (s.stem + ".seed.png"), positive ? threshold(set.fused, th) : empty);
  });
  ctx.log("[cams] " + std::to_string(ds.samples.size()) + " images at " + std::to_string(scales.ratios.size()) + " scales");
}

CrfParams crf_params(const PipelineConfig& cfg) {
  CrfParams p;
  p.iterations = static_cast<int>(cfg.get_int("crf.iterations"));
  p.w_app = cfg.get_double("crf.w_app");
  p.theta_alpha = cfg.get_double("crf.theta_alpha");
  p.theta_beta = cfg.get_double("crf.theta_beta");
  p.w_smooth = cfg.get_double("crf.w_smooth");
  p.theta_gamma = cfg.get_double("crf.theta_gamma");
  p.unary_clip = cfg.get_double("crf.unary_clip");
  return p;
}

void stage_refine(const Context& ctx) {
  const auto ds = load_dataset(ctx);
  const auto params = crf_params(ctx.cfg);
  params.validate();
  const auto cams = ctx.out() / "cams";
  const auto dir = ctx.out() / "refine";
  fs::create_directories(dir);
  parallel_for(ds.samples.size(), ctx.opt.workers, [&](std::size_t i) {
    const auto& s = ds.samples[i];
    const auto seed = data::read_mask_png(cams / (s.stem + ".seed.png"));
    LabelMask crf(seed.h, seed.w);
    if (s.label > 0) {
      const auto cam = cam_from_png(cams / (s.stem + ".fused.png"), s.label);
      crf = refine_mask(seed, cam, s.image, params);
    }
    data::write_mask_png(dir / (s.stem + ".crf.png"), crf);
  });
  ctx.log("[refine] " + std::to_string(ds.samples.size()) + " masks");
}

std::vector<SegExample> seg_examples(const Context& ctx, const data::Dataset& ds, data::Split split) {
  std::vector<SegExample> out;
  for (const auto* s : ds.split(split)) {
    SegExample ex{s->image, data::read_mask_png(ctx.out() / "cams" / (s->stem + ".seed.png")),
                  data::read_mask_png(ctx.out() / "refine" / (s->stem + ".crf.png"))};
    if (!ex.seed.same_dims(ex.crf) || ex.seed.h != s->image.h() || ex.seed.w != s->image.w()) {
      throw DataError("pseudo-mask dims of " + s->stem + " do not match its image");
    }
    out.push_back(std::move(ex));
  }
  return out;
}

void stage_train_seg(const Context& ctx) {
  const auto ds = load_dataset(ctx);
  const auto train = seg_examples(ctx, ds, data::Split::train);
  const auto val = seg_examples(ctx, ds, data::Split::val);
  MixedUNetConfig uc;
  uc.base_channels = ctx.cfg.get_int("unet.base_channels");
  uc.num_classes = ctx.cfg.get_int("unet.classes");
  uc.single_branch = ctx.cfg.get_bool("unet.single_branch");
  auto model = make_mixed_unet(uc, ctx.cfg.get_u64("seed"));
  SegTrainConfig tc;
  tc.epochs = static_cast<int>(ctx.cfg.get_int("seg.epochs"));
  tc.batch_size = static_cast<int>(ctx.cfg.get_int("seg.batch"));
  tc.lr = ctx.cfg.get_double("seg.lr");
  tc.poly_gamma = ctx.cfg.get_double("seg.gamma");
  tc.weight_decay = ctx.cfg.get_double("seg.weight_decay");
  tc.augment = ctx.cfg.get_bool("seg.augment");
  tc.augment_config.noise_prob = ctx.cfg.get_double("seg.noise_prob");
  tc.empty_seed = ctx.cfg.get_string("seg.empty_seed") == "ce_only" ? EmptySeedPolicy::ce_only : EmptySeedPolicy::error;
  tc.seed = ctx.cfg.get_u64("seed");
  const auto history = train_segmentation(model, train, val, tc);
  const auto dir = ctx.out() / "seg" / seg_variant(ctx.cfg);
  save_mixed_unet(dir / "model.ckpt", model);
  write_text_atomic(dir / "history.csv", history_csv(history));
  ctx.log("[train-seg] " + seg_variant(ctx.cfg) + " model, " + std::to_string(param_count(uc)) + " parameters, " +
          std::to_string(train.size()) + " training images");
}

// Scores `pred(sample)` against ground truth over `samples`.
std::vector<MetricsRow> score_masks(const std::vector<const data::Sample*>& samples,
                                    const std::function<LabelMask(const data::Sample&)>& pred) {
  std::vector<MetricsRow> rows;
  for (const auto* s : samples) {
    const auto r = evaluate(pred(*s), *s->mask);
    rows.push_back({s->stem, r.pa, r.miou, r.dice});
  }
  return rows;
}

MetricsRow aggregate(const std::vector<MetricsRow>& rows) {
  MetricsRow a{"__aggregate__"};
  for (const auto& r : rows) {
    a.pa += r.pa;
    a.miou += r.miou;
    a.dice += r.dice;
  }
  const double n = std::max<double>(1.0, static_cast<double>(rows.size()));
  a.pa /= n;
  a.miou /= n;
  a.dice /= n;
  return a;
}

void stage_eval(const Context& ctx) {
  const auto ds = load_dataset(ctx);
  std::vector<const data::Sample*> positives, test_positives;
  for (const auto& s : ds.samples) {
    if (s.label > 0 && s.mask) {
      positives.push_back(&s);
      if (s.split == data::Split::test) test_positives.push_back(&s);
    }
  }
  if (positives.empty()) throw DataError("no lesion-positive images with ground-truth masks to evaluate");
  const auto dir = ctx.out() / "eval";
  json summary = json::object();
  const std::pair<const char*, std::string> families[] = {
      {"origin", "cams/%s.origin.png"}, {"refined", "cams/%s.seed.png"}, {"crf", "refine/%s.crf.png"}};
  for (const auto& [name, pattern] : families) {
    const auto rows = score_masks(positives, [&](const data::Sample& s) {
      char rel[512];
      std::snprintf(rel, sizeof(rel), pattern.c_str(), s.stem.c_str());
      return data::read_mask_png(ctx.out() / rel);
    });
    write_text_atomic(dir / (std::string("masks_") + name + ".csv"), metrics_csv(rows));
    const auto a = aggregate(rows);
    summary["masks"][name] = {{"pa", a.pa}, {"miou", a.miou}, {"dice", a.dice}, {"images", rows.size()}};
  }
  for (const char* variant : {"mixed", "single"}) {
    const auto ckpt = ctx.out() / "seg" / variant / "model.ckpt";
    if (!fs::exists(ckpt)) continue;
    auto model = load_mixed_unet(ckpt);
    std::vector<LabelMask> preds(test_positives.size());
    for (std::size_t i = 0; i < test_positives.size(); ++i) preds[i] = predict_mask(model, test_positives[i]->image);
    std::size_t k = 0;
    const auto rows = score_masks(test_positives, [&](const data::Sample& s) {
      data::write_mask_png(dir / (std::string("pred_") + variant) / (s.stem + ".png"), preds[k]);
      return preds[k++];
    });
    write_text_atomic(dir / (std::string("seg_") + variant + ".csv"), metrics_csv(rows));
    const auto a = aggregate(rows);
    summary["seg"][variant] = {{"pa", a.pa}, {"miou", a.miou}, {"dice", a.dice}, {"images", rows.size()}};
  }
  const auto cls_metrics = ctx.out() / "classifier" / "metrics.json";
  if (fs::exists(cls_metrics)) {
    std::ifstream in(cls_metrics);
    summary["classifier"] = json::parse(in);
  }
  write_text_atomic(dir / "summary.json", summary.dump(2) + "\n");
  char buf[160];
  std::snprintf(buf, sizeof(buf), "[eval] MIoU origin %.4f refined %.4f crf %.4f",
                summary["masks"]["origin"]["miou"].get<double>(), summary["masks"]["refined"]["miou"].get<double>(),
                summary["masks"]["crf"]["miou"].get<double>());
  ctx.log(buf);
  if (summary.contains("seg")) {
    for (const auto& [variant, m] : summary["seg"].items()) {
      std::snprintf(buf, sizeof(buf), "[eval] %s network Dice %.4f over %zu test images", variant.c_str(),
                    m["dice"].get<double>(), test_positives.size());
      ctx.log(buf);
    }
  }
}

void stage_export_heatmaps(const Context& ctx) {
  const auto ds = load_dataset(ctx);
  const double alpha = ctx.cfg.get_double("heatmap.alpha");
  const auto dir = ctx.out() / "heatmaps";
  parallel_for(ds.samples.size(), ctx.opt.workers, [&](std::size_t i) {
    const auto& s = ds.samples[i];
    const auto cam = data::read_png_gray(ctx.out() / "cams" / (s.stem + ".fused.png"));
    data::write_png_rgb8(dir / (s.stem + ".png"), s.image.h(), s.image.w(), heatmap_overlay(s.image, cam, alpha));
  });
  ctx.log("[export-heatmaps] " + std::to_string(ds.samples.size()) + " overlays");
}

StageSpec stage_spec(const std::string& stage, const PipelineConfig& cfg) {
  const std::vector<std::string> corpus_keys{"data.manifest", "data.size"};
  auto with = [](std::vector<std::string> a, std::initializer_list<std::string> b) {
    a.insert(a.end(), b);
    return a;
  };
  if (stage == "gen-data") {
    return {"gen-data", {"seed", "data."}, {}, [](const Context& ctx) {
              return ctx.cfg.get_string("data.manifest").empty() ? std::vector<fs::path>{} : corpus_files(ctx);
            },
            stage_gen_data};
  }
  if (stage == "train-cls") {
    return {"train-cls", with(corpus_keys, {"seed", "cls."}), {"classifier"}, corpus_files, stage_train_cls};
  }
  if (stage == "cams") {
    return {"cams", with(corpus_keys, {"cam."}), {"cams"},
            [](const Context& ctx) {
              auto f = corpus_files(ctx);
              f.push_back(ctx.out() / "classifier" / "classifier.ckpt");
              return f;
            },
            stage_cams};
  }
  if (stage == "refine") {
    return {"refine", with(corpus_keys, {"crf."}), {"refine"},
            [](const Context& ctx) {
              auto f = corpus_files(ctx);
              for (const auto& p : files_under(ctx.out() / "cams", ".seed.png")) f.push_back(p);
              for (const auto& p : files_under(ctx.out() / "cams", ".fused.png")) f.push_back(p);
              return f;
            },
            stage_refine};
  }
  if (stage == "train-seg") {
    const auto variant = seg_variant(cfg);
    return {"train-seg-" + variant, with(corpus_keys, {"seed", "unet.", "seg."}), {fs::path("seg") / variant},
            [](const Context& ctx) {
              auto f = corpus_files(ctx);
              for (const auto& p : files_under(ctx.out() / "cams", ".seed.png")) f.push_back(p);
              for (const auto& p : files_under(ctx.out() / "refine")) f.push_back(p);
              return f;
            },
            stage_train_seg};
  }
  if (stage == "eval") {
    return {"eval", corpus_keys, {"eval"},
            [](const Context& ctx) {
              auto f = corpus_files(ctx);
              for (const auto& p : files_under(ctx.out() / "cams", ".origin.png")) f.push_back(p);
              for (const auto& p : files_under(ctx.out() / "cams", ".seed.png")) f.push_back(p);
              for (const auto& p : files_under(ctx.out() / "refine")) f.push_back(p);
              for (const auto& p : files_under(ctx.out() / "seg", ".ckpt")) f.push_back(p);
              if (fs::exists(ctx.out() / "classifier" / "metrics.json")) f.push_back(ctx.out() / "classifier" / "metrics.json");
              return f;
            },
            stage_eval};
  }
  if (stage == "export-heatmaps") {
    return {"export-heatmaps", with(corpus_keys, {"heatmap."}), {"heatmaps"},
            [](const Context& ctx) {
              auto f = corpus_files(ctx);
              for (const auto& p : files_under(ctx.out() / "cams", ".fused.png")) f.push_back(p);
              return f;
            },
            stage_export_heatmaps};
  }
  throw ConfigError("unknown stage '" + stage + "'");
}

std::vector<fs::path> stage_outputs(const Context& ctx, const StageSpec& spec) {
  std::vector<fs::path> files;
  if (spec.record == "gen-data") {
    if (ctx.cfg.get_string("data.manifest").empty()) return files_under(ctx.out() / "data");
    return files;
  }
  for (const auto& d : spec.output_dirs) {
    for (auto& f : files_under(ctx.out() / d)) files.push_back(std::move(f));
  }
  return files;
}

bool record_matches(const Context& ctx, const fs::path& record_path, const json& config, const json& inputs) {
  if (!fs::exists(record_path)) return false;
  json rec;
  try {
    std::ifstream in(record_path);
    rec = json::parse(in);
  } catch (const std::exception&) {
    return false;
  }
  if (rec.value("config", json()) != config || rec.value("inputs", json()) != inputs) return false;
  const auto outputs = rec.value("outputs", json::object());
  for (const auto& [key, hash] : outputs.items()) {
    const fs::path p = fs::path(key).is_absolute() ? fs::path(key) : ctx.out() / key;
    if (!fs::exists(p) || sha256_file(p) != hash.get<std::string>()) return false;
  }
  return true;
}

}  // namespace

StageResult run_stage(const std::string& stage, const PipelineConfig& config, const RunOptions& options) {
  config.validate();
  const Context ctx{config, options};
  const auto spec = stage_spec(stage, config);
  const auto record_path = ctx.out() / "stages" / (spec.record + ".json");
  try {
    const json cfg_subset = config.subset(spec.config_keys);
    const json inputs = hash_files(ctx, spec.inputs(ctx));
    if (!options.force && record_matches(ctx, record_path, cfg_subset, inputs)) {
      ctx.log("[" + stage + "] up to date");
      return {stage, true};
    }
    fs::remove(record_path);
    if (spec.record == "gen-data" && config.get_string("data.manifest").empty()) {
      fs::remove_all(ctx.out() / "data");
    }
    for (const auto& d : spec.output_dirs) fs::remove_all(ctx.out() / d);
    spec.run(ctx);
    json rec = {{"stage", spec.record}, {"config", cfg_subset}, {"inputs", inputs},
                {"outputs", hash_files(ctx, stage_outputs(ctx, spec))}};
    write_text_atomic(record_path, rec.dump(2) + "\n");
    return {stage, false};
  } catch (const ConfigError&) {
    throw;
  } catch (const DataError&) {
    throw;
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

std::vector<StageResult> run_pipeline(const PipelineConfig& config, const RunOptions& options,
                                      const std::vector<std::string>& stages) {
  for (const auto& s : stages) {
    if (std::find(kStageOrder.begin(), kStageOrder.end(), s) == kStageOrder.end()) {
      throw ConfigError("unknown stage '" + s + "'");
    }
  }
  std::vector<StageResult> results;
  for (const auto& s : kStageOrder) {
    if (!stages.empty() && std::find(stages.begin(), stages.end(), s) == stages.end()) continue;
    results.push_back(run_stage(s, config, options));
  }
  return results;
}

// ---------------------------------------------------------------- heatmaps

namespace {

constexpr std::uint8_t kViridis[256][3] = {
#include "viridis.inc"
};

}  // namespace

std::vector<std::uint8_t> heatmap_overlay(const nn::Tensor& image, const nn::Tensor& cam, double alpha) {
  if (image.h() != cam.h() || image.w() != cam.w()) {
    throw ShapeError("heatmap CAM " + cam.shape().str() + " does not match image " + image.shape().str());
  }
  if (image.n() != 1 || cam.n() != 1 || cam.c() != 1) throw ShapeError("heatmap expects single-image inputs");
  const auto plane = image.shape().plane();
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(3 * plane));
  for (std::int64_t i = 0; i < plane; ++i) {
    double gray = 0.0;
    for (std::int64_t c = 0; c < image.c(); ++c) gray += image.plane(0, c)[i];
    gray = std::clamp(gray / static_cast<double>(image.c()), 0.0, 1.0) * 255.0;
    const double v = std::clamp(static_cast<double>(cam[static_cast<std::size_t>(i)]), 0.0, 1.0);
    const auto idx = static_cast<std::size_t>(std::lround(v * 255.0));
    for (int k = 0; k < 3; ++k) {
      const double mixed = alpha * kViridis[idx][k] + (1.0 - alpha) * gray;
      rgb[static_cast<std::size_t>(3 * i + k)] = static_cast<std::uint8_t>(std::lround(std::clamp(mixed, 0.0, 255.0)));
    }
  }
  return rgb;
}

void export_heatmap(const fs::path& cam_png, const fs::path& image_png, const fs::path& out_png, double alpha) {
  const auto cam = data::read_png_gray(cam_png);
  const auto image = data::read_png_gray(image_png);
  data::write_png_rgb8(out_png, image.h(), image.w(), heatmap_overlay(image, cam, alpha));
}

// ---------------------------------------------------------------- csv

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream os;
  os << "image,pa,miou,dice\n";
  char buf[256];
  auto line = [&](const MetricsRow& r) {
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f\n", r.image.c_str(), r.pa, r.miou, r.dice);
    os << buf;
  };
  for (const auto& r : rows) line(r);
  line(aggregate(rows));
  return os.str();
}

std::vector<MetricsRow> read_metrics_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open metrics CSV " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "image,pa,miou,dice") throw DataError("bad metrics CSV header in " + path.string());
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    MetricsRow r;
    std::string field;
    std::getline(ls, r.image, ',');
    try {
      std::getline(ls, field, ',');
      r.pa = std::stod(field);
      std::getline(ls, field, ',');
      r.miou = std::stod(field);
      std::getline(ls, field, ',');
      r.dice = std::stod(field);
    } catch (const std::exception&) {
      throw DataError("malformed metrics CSV line '" + line + "' in " + path.string());
    }
    rows.push_back(r);
  }
  return rows;
}

}  // namespace camforge
