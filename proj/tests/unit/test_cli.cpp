#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "oracle.hpp"
#include "surgicam/explain.hpp"
#include "surgicam/io.hpp"
#include "surgicam/pipeline.hpp"

using namespace surgicam;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string err;
};

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / ("surgicam_cli_" + std::string(info->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  Outcome run(const std::string& args) {
    const fs::path err = dir_ / "stderr.txt";
    const std::string cmd = std::string(SURGICAM_BIN) + " " + args + " > " + (dir_ / "stdout.txt").string() +
                            " 2> " + err.string();
    const int status = std::system(cmd.c_str());
    std::ifstream in(err);
    std::stringstream ss;
    ss << in.rdbuf();
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
  }

  void synth(std::size_t images = 4, std::size_t classes = 3) {
    ASSERT_EQ(run("synth --out " + (dir_ / "data").string() + " --seed 7 --images " +
                  std::to_string(images) + " --classes " + std::to_string(classes))
                  .code,
              0);
  }

  std::string model_args() const {
    const fs::path d = dir_ / "data";
    return "--model " + (d / "model.json").string() + " --texts " + (d / "texts.json").string() +
           " --preprocess " + (d / "preprocess.json").string() + " --depth 1";
  }

  std::string images(std::size_t n, bool masks = false) const {
    std::string s = " --images";
    for (std::size_t i = 0; i < n; ++i) s += " " + (dir_ / "data" / ("image_" + std::to_string(i) + ".ppm")).string();
    if (masks) {
      s += " --masks";
      for (std::size_t i = 0; i < n; ++i) s += " " + (dir_ / "data" / ("image_" + std::to_string(i) + ".pgm")).string();
    }
    return s;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, CamMatchesModuleComposition) {
  synth(1, 2);
  const fs::path out = dir_ / "cam";
  ASSERT_EQ(run("cam " + model_args() + images(1) + " --out " + out.string()).code, 0);
  std::size_t pgms = 0;
  for (const auto& e : fs::directory_iterator(out)) pgms += e.path().extension() == ".pgm";
  EXPECT_EQ(pgms, 2u);
  const auto report = io::read_report(out / "report.json");
  EXPECT_EQ(report.surgery.depth_d, 1u);
  EXPECT_EQ(report.flags["command"], "cam");

  const ModelBundle m = io::load_model(dir_ / "data" / "model.json");
  const TextFeatureSet t = io::load_text_features(dir_ / "data" / "texts.json");
  const auto pre = io::load_preprocess_config(dir_ / "data" / "preprocess.json");
  const Tensor raw = io::read_image_ppm(dir_ / "data" / "image_0.ppm");
  PipelineOptions opt;
  opt.surgery.depth_d = 1;
  const ImageAnalysis a = analyze_image(io::preprocess_image(raw, pre, m.config.image_size), m, t, opt);
  const auto maps = similarity_map(a.explain_scores(), m.config.grid_side(), raw.dim(1), raw.dim(2), t.labels);
  for (const auto& map : maps) {
    const auto written = io::read_pgm(out / ("image_0_" + map.class_label + ".pgm"));
    ASSERT_EQ(written.pixels.size(), map.scores.numel());
    for (std::size_t i = 0; i < written.pixels.size(); ++i) {
      EXPECT_EQ(written.pixels[i], io::heatmap_byte(map.scores[i]));
    }
  }
}

TEST_F(CliTest, NoSurgeryEqualsRawAndRunsAreDeterministic) {
  synth(1, 2);
  ASSERT_EQ(run("cam " + model_args() + images(1) + " --no-surgery --out " + (dir_ / "a").string()).code, 0);
  ASSERT_EQ(run("cam " + model_args() + images(1) + " --also-raw --out " + (dir_ / "b").string()).code, 0);
  ASSERT_EQ(run("cam " + model_args() + images(1) + " --also-raw --jobs 3 --out " + (dir_ / "c").string()).code, 0);
  const auto t = io::load_text_features(dir_ / "data" / "texts.json");
  for (const auto& label : t.labels) {
    EXPECT_EQ(io::read_pgm(dir_ / "a" / ("image_0_" + label + ".pgm")).pixels,
              io::read_pgm(dir_ / "b" / ("image_0_" + label + "_raw.pgm")).pixels);
    EXPECT_EQ(io::read_pgm(dir_ / "b" / ("image_0_" + label + ".pgm")).pixels,
              io::read_pgm(dir_ / "c" / ("image_0_" + label + ".pgm")).pixels);
  }
}

TEST_F(CliTest, ErrorsUseExitCodeTwo) {
  synth(1, 2);
  const std::string missing = (dir_ / "nowhere.json").string();
  Outcome o = run("cam --model " + missing + " --texts " + (dir_ / "data" / "texts.json").string() + images(1));
  EXPECT_EQ(o.code, 2);
  EXPECT_EQ(o.err.rfind("error:", 0), 0u) << o.err;
  EXPECT_NE(o.err.find(missing), std::string::npos) << o.err;

  o = run("cam " + model_args() + images(1) + " --depth 5");
  EXPECT_EQ(o.code, 2);
  o = run("eval --texts " + (dir_ / "data" / "texts.json").string() + " --heatmaps " + dir_.string());
  EXPECT_EQ(o.code, 2);
  o = run("cam " + model_args() + images(1) + " --point-threshold 1.5");
  EXPECT_EQ(o.code, 2);
  o = run("bogus");
  EXPECT_EQ(o.code, 2);
}

TEST_F(CliTest, EvalOnConstructedHeatmaps) {
  synth(2, 3);
  const auto t = io::load_text_features(dir_ / "data" / "texts.json");
  for (bool inverted : {false, true}) {
    const fs::path heat = dir_ / (inverted ? "inv" : "heat");
    fs::create_directories(heat);
    for (std::size_t i = 0; i < 2; ++i) {
      const LabelGrid g = io::read_label_pgm(dir_ / "data" / ("image_" + std::to_string(i) + ".pgm"));
      for (std::size_t c = 0; c < t.size(); ++c) {
        SimilarityMap m;
        m.scores = Tensor({g.height, g.width});
        for (std::size_t k = 0; k < g.labels.size(); ++k) {
          const bool fg = g.labels[k] == static_cast<std::int32_t>(c);
          // 255 and 51 after quantization: contrast exactly 0.8.
          m.scores[k] = (fg != inverted) ? 1.0f : 0.2f;
        }
        io::write_heatmap_pgm(m, heat / ("image_" + std::to_string(i) + "_" + t.labels[c] + ".pgm"));
      }
    }
    const fs::path out = dir_ / ("eval_" + heat.filename().string());
    ASSERT_EQ(run("eval --texts " + (dir_ / "data" / "texts.json").string() + images(2, true) +
                  " --heatmaps " + heat.string() + " --out " + out.string())
                  .code,
              0);
    const auto r = io::read_report(out / "report.json");
    EXPECT_NEAR(r.metrics["aggregate"]["mSC"].get<double>(), inverted ? -0.8 : 0.8, 1e-6);
    if (!inverted) EXPECT_DOUBLE_EQ(r.metrics["aggregate"]["mIoU"].get<double>(), 1.0);
  }
}

TEST_F(CliTest, PointsSegmentMultilabelAffinity) {
  synth(4, 3);
  const std::string common = model_args() + images(4, true);
  ASSERT_EQ(run("points " + common + " --out " + (dir_ / "p").string()).code, 0);
  for (const auto& e : fs::directory_iterator(dir_ / "p")) {
    if (e.path().filename() == "report.json") continue;
    const auto j = io::read_json_file(e.path());
    EXPECT_EQ(j["foreground"].size(), j["background"].size());
  }

  ASSERT_EQ(run("segment " + common + " --out " + (dir_ / "s").string()).code, 0);
  std::vector<int> pred, gt;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto p = io::read_label_pgm(dir_ / "s" / ("image_" + std::to_string(i) + "_seg.pgm"));
    const auto g = io::read_label_pgm(dir_ / "data" / ("image_" + std::to_string(i) + ".pgm"));
    pred.insert(pred.end(), p.labels.begin(), p.labels.end());
    gt.insert(gt.end(), g.labels.begin(), g.labels.end());
  }
  const auto seg = io::read_report(dir_ / "s" / "report.json");
  EXPECT_NEAR(seg.metrics["aggregate"]["mIoU"].get<double>(), oracle::miou_multiclass(pred, gt, 3, 255), 1e-10);

  ASSERT_EQ(run("multilabel " + common + " --out " + (dir_ / "m").string()).code, 0);
  const auto ml = io::read_report(dir_ / "m" / "report.json");
  const double map = ml.metrics["aggregate"]["mAP"].get<double>();
  EXPECT_GE(map, 0.0);
  EXPECT_LE(map, 1.0);

  ASSERT_EQ(run("affinity " + common + " --out " + (dir_ / "a").string()).code, 0);
  std::ifstream csv(dir_ / "a" / "affinity.csv");
  std::string line;
  std::size_t rows = 0;
  std::getline(csv, line);
  EXPECT_EQ(line, "layer,module,affinity");
  while (std::getline(csv, line)) rows += !line.empty();
  EXPECT_EQ(rows, 4u);  // 2 layers
}
