#include <gtest/gtest.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "camforge/data/image_io.hpp"
#include "camforge/errors.hpp"
#include "camforge/io_util.hpp"
#include "camforge/pipeline.hpp"
#include "support.hpp"

using namespace camforge;
using camforge::testing::scratch_dir;
using nlohmann::json;
using nn::Tensor;
namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kTinyOverrides{
    "data.size=16",          "data.n_pos=4",   "data.n_neg=4",     "data.slices_per_group=1",
    "cls.epochs=1",          "cls.widths=[4,4,4,4]", "cam.scales=[0.5,1.0]", "seg.epochs=1",
    "unet.base_channels=2",  "crf.iterations=2"};

PipelineConfig tiny_config(std::uint64_t seed = 5) {
  PipelineConfig cfg;
  for (const auto& o : kTinyOverrides) cfg.set_override(o);
  cfg.set("seed", seed);
  cfg.validate();
  return cfg;
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    out[fs::relative(e.path(), root).string()] = ss.str();
  }
  return out;
}

std::map<std::string, fs::file_time_type> mtimes(const fs::path& root) {
  std::map<std::string, fs::file_time_type> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = e.last_write_time();
  }
  return out;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CAMFORGE_CLI) + " " + args + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(PipelineConfig, UnknownKeyIsConfigError) {
  PipelineConfig cfg;
  EXPECT_THROW(cfg.set_override("cls.epoch=3"), ConfigError);
  EXPECT_THROW(cfg.merge_json(json{{"crf", {{"iters", 3}}}}), ConfigError);
  EXPECT_THROW(cfg.get("nope"), ConfigError);
}

TEST(PipelineConfig, TypeMismatchIsConfigError) {
  PipelineConfig cfg;
  EXPECT_THROW(cfg.set_override("cls.epochs=1.5"), ConfigError);
  EXPECT_THROW(cfg.set_override("cam.prefuse_norm=1"), ConfigError);
  EXPECT_THROW(cfg.set_override("cam.scales=[]"), ConfigError);
  EXPECT_THROW(cfg.set_override("novalue"), ConfigError);
}

TEST(PipelineConfig, OverridesAndNestedMerge) {
  PipelineConfig cfg;
  cfg.set_override("cam.threshold=0.7");
  cfg.set_override("seg.empty_seed=ce_only");
  cfg.set_override("crf.w_app=4");
  cfg.merge_json(json{{"crf", {{"iterations", 3}}}, {"cls.lr", 0.01}});
  EXPECT_DOUBLE_EQ(cfg.get_double("cam.threshold"), 0.7);
  EXPECT_EQ(cfg.get_string("seg.empty_seed"), "ce_only");
  EXPECT_DOUBLE_EQ(cfg.get_double("crf.w_app"), 4.0);
  EXPECT_EQ(cfg.get_int("crf.iterations"), 3);
  EXPECT_DOUBLE_EQ(cfg.get_double("cls.lr"), 0.01);
}

TEST(PipelineConfig, PresetDefaultsAndMismatch) {
  PipelineConfig desk(Preset::desk), full(Preset::full);
  EXPECT_EQ(desk.get_int("data.size"), 64);
  EXPECT_EQ(full.get_int("data.size"), 256);
  EXPECT_EQ(desk.get_int("unet.base_channels"), 8);
  EXPECT_EQ(full.get_int("unet.base_channels"), 64);
  EXPECT_DOUBLE_EQ(desk.get_double("cam.threshold"), 0.35);
  EXPECT_NO_THROW(desk.merge_json(json{{"preset", "desk"}}));
  EXPECT_THROW(desk.merge_json(json{{"preset", "full"}}), ConfigError);
  EXPECT_THROW(parse_preset("laptop"), ConfigError);
}

TEST(PipelineConfig, ValidateRejectsOutOfRange) {
  for (const char* bad : {"data.size=20", "cam.threshold=1.0", "cam.scales=[0.5,2.0]", "crf.unary_clip=0.5",
                          "data.train_frac=0.9", "seg.empty_seed=\"skip\"", "heatmap.alpha=1.5"}) {
    PipelineConfig cfg;
    cfg.set_override(bad);
    EXPECT_THROW(cfg.validate(), ConfigError) << bad;
  }
  EXPECT_NO_THROW(PipelineConfig().validate());
}

TEST(PipelineConfig, FileMergeAndResolvedEcho) {
  const auto dir = scratch_dir("config_file");
  write_text_atomic(dir / "c.json", R"({"preset": "desk", "cam": {"threshold": 0.7}, "seed": 11})");
  PipelineConfig cfg;
  cfg.merge_file(dir / "c.json");
  EXPECT_EQ(cfg.get_u64("seed"), 11u);
  write_resolved_config(cfg, dir / "run");
  std::ifstream in(dir / "run" / "config.resolved.json");
  const auto echoed = json::parse(in);
  EXPECT_EQ(echoed, cfg.to_json());
  EXPECT_DOUBLE_EQ(echoed.at("cam.threshold").get<double>(), 0.7);

  write_text_atomic(dir / "broken.json", "{not json");
  EXPECT_THROW(cfg.merge_file(dir / "broken.json"), ConfigError);
  EXPECT_THROW(cfg.merge_file(dir / "missing.json"), ConfigError);
}

TEST(PipelineConfig, SubsetSelectsPrefixes) {
  const auto sub = PipelineConfig().subset({"crf.", "seed"});
  EXPECT_TRUE(sub.contains("seed"));
  EXPECT_TRUE(sub.contains("crf.iterations"));
  EXPECT_FALSE(sub.contains("cam.threshold"));
}

TEST(Heatmap, ZeroAndFullCamGiveColormapEnds) {
  const Tensor image({1, 1, 4, 5}, 0.6f);
  const auto cold = heatmap_overlay(image, Tensor({1, 1, 4, 5}, 0.0f), 1.0);
  const auto hot = heatmap_overlay(image, Tensor({1, 1, 4, 5}, 1.0f), 1.0);
  for (std::size_t i = 0; i < 20; ++i) {
    EXPECT_EQ(cold[3 * i], 68);
    EXPECT_EQ(cold[3 * i + 1], 1);
    EXPECT_EQ(cold[3 * i + 2], 84);
    EXPECT_EQ(hot[3 * i], 253);
    EXPECT_EQ(hot[3 * i + 1], 231);
    EXPECT_EQ(hot[3 * i + 2], 37);
  }
}

TEST(Heatmap, AlphaBlendsWithGray) {
  const Tensor image({1, 1, 2, 2}, 0.4f);
  const auto gray = heatmap_overlay(image, Tensor({1, 1, 2, 2}, 0.0f), 0.0);
  for (auto v : gray) EXPECT_EQ(v, 102);
  const auto half = heatmap_overlay(image, Tensor({1, 1, 2, 2}, 0.0f), 0.5);
  EXPECT_EQ(half[0], 85);  // (68 + 102) / 2
  EXPECT_EQ(half[1], 52);  // (1 + 102) / 2 rounds half up
}

TEST(Heatmap, DimsMismatchIsShapeError) {
  EXPECT_THROW(heatmap_overlay(Tensor({1, 1, 4, 4}), Tensor({1, 1, 4, 5})), ShapeError);
}

TEST(Heatmap, ReExportIsByteIdentical) {
  const auto dir = scratch_dir("heatmap");
  Rng rng(90);
  data::write_png_gray8(dir / "img.png", camforge::testing::random_tensor({1, 1, 12, 12}, rng, 0.0, 1.0));
  data::write_png_gray16(dir / "cam.png", camforge::testing::random_tensor({1, 1, 12, 12}, rng, 0.0, 1.0));
  export_heatmap(dir / "cam.png", dir / "img.png", dir / "a.png");
  export_heatmap(dir / "cam.png", dir / "img.png", dir / "b.png");
  EXPECT_EQ(read_bytes(dir / "a.png"), read_bytes(dir / "b.png"));
}

TEST(MetricsCsv, RoundTripWithAggregate) {
  const auto dir = scratch_dir("metrics_csv");
  const std::vector<MetricsRow> rows{{"a", 0.9, 0.8, 0.7}, {"b", 0.5, 0.4, 0.3}};
  write_text_atomic(dir / "m.csv", metrics_csv(rows));
  const auto back = read_metrics_csv(dir / "m.csv");
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back[1].image, "b");
  EXPECT_NEAR(back[0].dice, 0.7, 1e-6);
  EXPECT_EQ(back[2].image, "__aggregate__");
  EXPECT_NEAR(back[2].pa, 0.7, 1e-6);
  EXPECT_NEAR(back[2].miou, 0.6, 1e-6);
  EXPECT_NEAR(back[2].dice, 0.5, 1e-6);
  write_text_atomic(dir / "bad.csv", "x,y\n");
  EXPECT_THROW(read_metrics_csv(dir / "bad.csv"), DataError);
}

TEST(Pipeline, UnknownStageIsConfigError) {
  RunOptions opt;
  opt.out = scratch_dir("unknown_stage");
  EXPECT_THROW(run_pipeline(tiny_config(), opt, {"train"}), ConfigError);
}

TEST(Pipeline, MissingUpstreamIsDataError) {
  RunOptions opt;
  opt.out = scratch_dir("missing_upstream");
  EXPECT_THROW(run_stage("cams", tiny_config(), opt), DataError);
}

class TinyRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = scratch_dir("tiny_run");
    RunOptions opt;
    opt.out = dir_;
    run_pipeline(tiny_config(), opt);
  }
  static fs::path dir_;
};
fs::path TinyRun::dir_;

TEST_F(TinyRun, WritesEveryStageOutput) {
  for (const char* p : {"data/manifest.json", "classifier/classifier.ckpt", "classifier/history.csv",
                        "seg/mixed/model.ckpt", "eval/summary.json", "eval/masks_crf.csv", "eval/seg_mixed.csv",
                        "stages/eval.json"}) {
    EXPECT_TRUE(fs::exists(dir_ / p)) << p;
  }
  EXPECT_TRUE(fs::exists(dir_ / "cams" / "case_0000.fused.png"));
  EXPECT_TRUE(fs::exists(dir_ / "refine" / "case_0000.crf.png"));
  EXPECT_TRUE(fs::exists(dir_ / "heatmaps" / "case_0000.png"));
  std::ifstream in(dir_ / "eval" / "summary.json");
  const auto summary = json::parse(in);
  for (const char* k : {"origin", "refined", "crf"}) {
    const double miou = summary.at("masks").at(k).at("miou").get<double>();
    EXPECT_GE(miou, 0.0);
    EXPECT_LE(miou, 1.0);
  }
}

TEST_F(TinyRun, RerunSkipsEveryStageAndTouchesNothing) {
  const auto before = mtimes(dir_);
  RunOptions opt;
  opt.out = dir_;
  const auto results = run_pipeline(tiny_config(), opt);
  ASSERT_EQ(results.size(), kStageOrder.size());
  for (const auto& r : results) EXPECT_TRUE(r.skipped) << r.stage;
  EXPECT_EQ(mtimes(dir_), before);
}

TEST_F(TinyRun, CamStageRerunsOnlyCams) {
  const auto before = snapshot(dir_);
  const auto times = mtimes(dir_);
  RunOptions opt;
  opt.out = dir_;
  opt.force = true;
  run_pipeline(tiny_config(), opt, {"cams"});
  const auto after_times = mtimes(dir_);
  for (const auto& [path, t] : times) {
    const bool cam_output = path.rfind("cams/", 0) == 0 || path == "stages/cams.json";
    if (!cam_output) EXPECT_EQ(after_times.at(path), t) << path;
  }
  EXPECT_NE(after_times.at("cams/case_0000.fused.png"), times.at("cams/case_0000.fused.png"));
  EXPECT_EQ(snapshot(dir_), before);

  // Downstream stages see identical inputs and stay up to date.
  opt.force = false;
  for (const auto& r : run_pipeline(tiny_config(), opt)) EXPECT_TRUE(r.skipped) << r.stage;
}

TEST_F(TinyRun, ChangedKeyInvalidatesStage) {
  const auto other = scratch_dir("tiny_run_threshold");
  fs::copy(dir_, other, fs::copy_options::recursive);
  auto cfg = tiny_config();
  cfg.set("cam.threshold", 0.7);
  RunOptions opt;
  opt.out = other;
  const auto results = run_pipeline(cfg, opt);
  std::map<std::string, bool> skipped;
  for (const auto& r : results) skipped[r.stage] = r.skipped;
  EXPECT_TRUE(skipped.at("gen-data"));
  EXPECT_TRUE(skipped.at("train-cls"));
  EXPECT_FALSE(skipped.at("cams"));
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch_dir("cli_codes");
  const std::string out = "--out " + dir.string();
  EXPECT_EQ(run_cli("--help >/dev/null"), 0);
  EXPECT_EQ(run_cli(out + " bogus"), 2);
  EXPECT_EQ(run_cli(out + " --set nope=1 gen-data"), 2);
  EXPECT_EQ(run_cli(out + " --workers 0 gen-data"), 2);
  EXPECT_EQ(run_cli(out + " --set data.manifest=/nonexistent/manifest.json gen-data"), 3);
  EXPECT_EQ(run_cli(out + " cams"), 3);
  const auto blocked = dir / "blocked";
  fs::create_directories(blocked);
  write_text_atomic(blocked / "stages", "");
  EXPECT_EQ(run_cli("--out " + blocked.string() + " --set data.size=16 --set data.n_pos=2 --set data.n_neg=2 gen-data"), 4);
}

TEST(Cli, WritesResolvedConfigWithOverrides) {
  const auto dir = scratch_dir("cli_resolved");
  ASSERT_EQ(run_cli("--out " + dir.string() +
                    " --seed 3 --set data.size=16 --set data.n_pos=2 --set data.n_neg=2 gen-data"),
            0);
  std::ifstream in(dir / "config.resolved.json");
  const auto cfg = json::parse(in);
  EXPECT_EQ(cfg.at("seed").get<std::uint64_t>(), 3u);
  EXPECT_EQ(cfg.at("data.size").get<int>(), 16);
  EXPECT_TRUE(fs::exists(dir / "data" / "manifest.json"));
}
