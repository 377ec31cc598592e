#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "setdet/data.hpp"
#include "setdet/evaluation.hpp"
#include "setdet_cli/commands.hpp"

namespace setdet {
namespace {

using nlohmann::json;

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "setdet");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli::run(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override { setenv("SETDET_LOG", "quiet", 1); }

  std::filesystem::path write_config(const std::string& name, const json& doc) {
    const auto p = dir_ / name;
    std::ofstream(p) << doc.dump(2);
    return p;
  }

  json tiny_config(const std::string& out) const {
    return {{"model",
             {{"d_model", 8},
              {"n_heads", 2},
              {"n_encoder_layers", 1},
              {"n_decoder_layers", 1},
              {"n_queries", 4},
              {"num_classes", 2},
              {"backbone_channels", 8},
              {"ffn_hidden", 16}}},
            {"optimizer", {{"lr", 0.001}}},
            {"data", {{"synthetic", {{"seed", 1}, {"count", 5}, {"image_size", 32}}}, {"multiscale", false}}},
            {"run", {{"seed", 3}, {"epochs", 2}, {"batch_size", 2}, {"out", (dir_ / out).string()}}}};
  }

  testing::TempDir dir_{"cli"};
};

TEST_F(CliTest, SplitTenImagesIntoFiveFoldsOfTwo) {
  const auto manifest = write_dataset(generate_synthetic(2, 10, 32, 2), {"a", "b"}, dir_ / "data");
  ASSERT_EQ(run_cli({"split", "--manifest", manifest.string(), "--seed", "4", "--out", (dir_ / "s1").string()}), 0);
  ASSERT_EQ(run_cli({"split", "--manifest", manifest.string(), "--seed", "4", "--out", (dir_ / "s2").string()}), 0);
  const auto plan = json::parse(slurp(dir_ / "s1" / "folds.json"));
  ASSERT_EQ(plan.at("folds").size(), 5u);
  for (const auto& f : plan.at("folds")) EXPECT_EQ(f.size(), 2u);
  EXPECT_EQ(slurp(dir_ / "s1" / "folds.json"), slurp(dir_ / "s2" / "folds.json"));
}

TEST_F(CliTest, SplitErrors) {
  const auto manifest = write_dataset(generate_synthetic(2, 3, 32, 2), {"a", "b"}, dir_ / "data");
  EXPECT_EQ(run_cli({"split", "--manifest", manifest.string(), "--k", "5", "--out", (dir_ / "s").string()}), 2);
  EXPECT_EQ(run_cli({"split", "--manifest", (dir_ / "absent.json").string()}), 2);
  EXPECT_EQ(run_cli({"split", "--bogus"}), 2);
  EXPECT_EQ(run_cli({}), 2);
}

TEST_F(CliTest, TrainIsDeterministicAndEchoesConfig) {
  const auto a = write_config("a.json", tiny_config("ra"));
  const auto b = write_config("b.json", tiny_config("rb"));
  ASSERT_EQ(run_cli({"train", "--config", a.string()}), 0);
  ASSERT_EQ(run_cli({"train", "--config", b.string()}), 0);
  for (const char* f : {"config.json", "overrides.json", "report.jsonl", "best.ckpt", "final.ckpt"})
    EXPECT_TRUE(std::filesystem::exists(dir_ / "ra" / f)) << f;
  EXPECT_EQ(slurp(dir_ / "ra" / "config.json"), slurp(a));

  auto strip_time = [](const std::string& text) {
    std::vector<json> rows;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) {
      auto j = json::parse(line);
      j.erase("wall_time");
      rows.push_back(j);
    }
    return rows;
  };
  const auto ra = strip_time(slurp(dir_ / "ra" / "report.jsonl"));
  EXPECT_EQ(ra.size(), 2u);
  EXPECT_EQ(ra, strip_time(slurp(dir_ / "rb" / "report.jsonl")));
}

TEST_F(CliTest, TrainConfigErrorsExitTwo) {
  auto doc = tiny_config("r");
  doc["data"] = {{"manifest", (dir_ / "missing.json").string()}};
  EXPECT_EQ(run_cli({"train", "--config", write_config("m.json", doc).string()}), 2);
  EXPECT_FALSE(std::filesystem::exists(dir_ / "r"));
  EXPECT_EQ(run_cli({"train", "--config", (dir_ / "none.json").string()}), 2);
  EXPECT_EQ(run_cli({"train", "--config", write_config("t.json", tiny_config("r")).string(), "--threshold", "2"}), 2);
  EXPECT_EQ(run_cli({"train", "--config", write_config("f.json", tiny_config("r")).string(), "--fold", "9"}), 2);
}

TEST_F(CliTest, EvalAndInfer) {
  const auto cfg = write_config("c.json", tiny_config("run"));
  ASSERT_EQ(run_cli({"train", "--config", cfg.string(), "--fold", "0"}), 0);
  const auto ckpt = (dir_ / "run" / "final.ckpt").string();
  ASSERT_EQ(run_cli({"eval", "--config", cfg.string(), "--checkpoint", ckpt, "--fold", "0", "--out",
                     (dir_ / "ev").string()}),
            0);
  const auto report = json::parse(slurp(dir_ / "ev" / "eval.json"));
  EXPECT_EQ(report.at("images"), 1);
  EXPECT_GE(report.at("ap50").get<double>(), 0.0);
  EXPECT_LE(report.at("ap50").get<double>(), 1.0);

  const auto sample = generate_synthetic(1, 1, 32, 2)[0];
  write_ppm(sample.image, (dir_ / "img.ppm").string());
  const std::vector<std::string> infer{"infer", "--config", cfg.string(), "--checkpoint", ckpt, "--threshold", "0",
                                       "--out", (dir_ / "inf").string(), (dir_ / "img.ppm").string()};
  ASSERT_EQ(run_cli(infer), 0);
  const auto first = slurp(dir_ / "inf" / "img.detections.json");
  const auto dets = json::parse(first).at("detections");
  EXPECT_EQ(dets.size(), 4u);
  for (const auto& d : dets) {
    const auto box = d.at("box");
    EXPECT_GE(box[0].get<double>(), 0.0);
    EXPECT_LE(box[2].get<double>(), 32.0);
    EXPECT_GE(box[1].get<double>(), 0.0);
    EXPECT_LE(box[3].get<double>(), 32.0);
  }
  EXPECT_TRUE(std::filesystem::exists(dir_ / "inf" / "img.overlay.ppm"));
  ASSERT_EQ(run_cli(infer), 0);
  EXPECT_EQ(slurp(dir_ / "inf" / "img.detections.json"), first);

  // Threshold 1 keeps nothing: the overlay is the input image.
  ASSERT_EQ(run_cli({"infer", "--config", cfg.string(), "--checkpoint", ckpt, "--threshold", "1", "--out",
                     (dir_ / "none").string(), (dir_ / "img.ppm").string()}),
            0);
  EXPECT_TRUE(json::parse(slurp(dir_ / "none" / "img.detections.json")).at("detections").empty());
  EXPECT_EQ(read_ppm((dir_ / "none" / "img.overlay.ppm").string()), read_ppm((dir_ / "img.ppm").string()));

  EXPECT_EQ(run_cli({"infer", "--config", cfg.string(), "--checkpoint", ckpt, "--out", (dir_ / "bad").string(),
                     (dir_ / "absent.ppm").string(), (dir_ / "img.ppm").string()}),
            1);
  EXPECT_TRUE(std::filesystem::exists(dir_ / "bad" / "img.detections.json"));
}

TEST_F(CliTest, CheckpointConfigMismatchExitsTwo) {
  const auto cfg = write_config("c.json", tiny_config("run"));
  ASSERT_EQ(run_cli({"train", "--config", cfg.string()}), 0);
  auto other = tiny_config("other");
  other["model"]["num_classes"] = 3;
  const auto mismatched = write_config("m.json", other);
  EXPECT_EQ(run_cli({"eval", "--config", mismatched.string(), "--checkpoint", (dir_ / "run" / "final.ckpt").string()}),
            2);
  EXPECT_EQ(run_cli({"eval", "--config", cfg.string()}), 2);
}

}  // namespace
}  // namespace setdet
