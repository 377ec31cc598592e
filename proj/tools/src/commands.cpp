#include "setdet_cli/commands.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "setdet/checkpoint.hpp"
#include "setdet/config.hpp"
#include "setdet/data.hpp"
#include "setdet/errors.hpp"
#include "setdet/evaluation.hpp"
#include "setdet/trainer.hpp"

namespace setdet::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// SETDET_LOG=quiet silences progress output; anything else keeps it.
bool verbose() {
  const char* level = std::getenv("SETDET_LOG");
  return !(level && std::string(level) == "quiet");
}

void log_line(const std::string& msg) {
  if (verbose()) std::cerr << msg << '\n';
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFile("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunConfig load_config(const RunOptions& opts) {
  auto cfg = load_run_config(opts.config);
  if (opts.seed) cfg.run.seed = *opts.seed;
  if (opts.out) cfg.run.out = *opts.out;
  if (opts.threshold) cfg.run.threshold = *opts.threshold;
  cfg.validate();
  return cfg;
}

fs::path prepare_output(const RunConfig& cfg, const RunOptions& opts) {
  fs::create_directories(cfg.run.out);
  write_text(cfg.run.out / "config.json", cfg.source_text);
  json overrides = json::object();
  if (opts.seed) overrides["seed"] = *opts.seed;
  if (opts.fold) overrides["fold"] = *opts.fold;
  if (opts.out) overrides["out"] = opts.out->string();
  if (opts.threshold) overrides["threshold"] = *opts.threshold;
  if (opts.checkpoint) overrides["checkpoint"] = opts.checkpoint->string();
  write_text(cfg.run.out / "overrides.json", overrides.dump(2) + "\n");
  return cfg.run.out;
}

std::vector<Sample> load_dataset(const RunConfig& cfg) {
  if (cfg.data.synthetic) {
    const auto& s = *cfg.data.synthetic;
    return generate_synthetic(s.seed, s.count, s.image_size, s.max_objects, cfg.model.num_classes);
  }
  const auto manifest = load_manifest(*cfg.data.manifest);
  if (manifest.categories.size() > cfg.model.num_classes)
    throw ConfigError("manifest has " + std::to_string(manifest.categories.size()) +
                      " categories but model.num_classes is " + std::to_string(cfg.model.num_classes));
  return load_samples(manifest);
}

FoldPlan fold_plan_for(const RunConfig& cfg, const std::vector<Sample>& samples) {
  if (cfg.data.folds) {
    try {
      return fold_plan_from_json(json::parse(read_text(*cfg.data.folds)));
    } catch (const json::exception& e) {
      throw ConfigError("data.folds: " + std::string(e.what()));
    }
  }
  std::vector<std::string> ids;
  for (const auto& s : samples) ids.push_back(s.id);
  return kfold_split(ids, 5, cfg.run.seed);
}

/// Training or validation subset of `samples` for the requested fold.
std::vector<Sample> select_fold(const RunConfig& cfg, std::vector<Sample> samples, std::optional<std::size_t> fold,
                                bool validation) {
  if (!fold) return samples;
  const auto plan = fold_plan_for(cfg, samples);
  if (*fold >= plan.k)
    throw ConfigError("--fold " + std::to_string(*fold) + " out of range for a " + std::to_string(plan.k) + "-fold plan");
  const auto ids = validation ? plan.validation_ids(*fold) : plan.training_ids(*fold);
  const std::set<std::string> wanted(ids.begin(), ids.end());
  std::vector<Sample> out;
  for (auto& s : samples)
    if (wanted.count(s.id)) out.push_back(std::move(s));
  if (out.size() != wanted.size()) throw ConfigError("fold plan references images missing from the dataset");
  return out;
}

bool same_architecture(ModelConfig a, ModelConfig b) {
  a.init_seed = b.init_seed = 0;
  return a == b;
}

DetectionModel model_for(const RunConfig& cfg, const RunOptions& opts) {
  if (!opts.checkpoint) throw ConfigError("--checkpoint is required");
  const auto ckpt = load_checkpoint(opts.checkpoint->string());
  if (ckpt.model_config.num_classes != cfg.model.num_classes)
    throw ConfigError("checkpoint has num_classes " + std::to_string(ckpt.model_config.num_classes) +
                      ", config has " + std::to_string(cfg.model.num_classes));
  if (!same_architecture(ckpt.model_config, cfg.model))
    throw ConfigError("checkpoint model section does not match the config");
  return model_from_checkpoint(ckpt);
}

PredictionSet predict(const DetectionModel& model, const Image& image, std::size_t short_edge) {
  if (short_edge == 0) return model.forward(image);
  Sample tmp;
  tmp.image = image;
  return model.forward(resize_to_short_edge(tmp, short_edge).image);
}

}  // namespace

void cmd_split(const SplitOptions& opts) {
  fs::path manifest_path;
  std::uint64_t seed = 0;
  fs::path out = "out";
  std::string echo;
  if (opts.config) {
    const auto cfg = load_run_config(*opts.config);
    if (cfg.data.manifest) manifest_path = *cfg.data.manifest;
    seed = cfg.run.seed;
    out = cfg.run.out;
    echo = cfg.source_text;
  }
  if (opts.manifest) manifest_path = *opts.manifest;
  if (opts.seed) seed = *opts.seed;
  if (opts.out) out = *opts.out;
  if (manifest_path.empty()) throw ConfigError("split needs --manifest or a config with data.manifest");
  if (!fs::exists(manifest_path)) throw ConfigError("no such manifest " + manifest_path.string());

  const auto manifest = load_manifest(manifest_path);
  const auto plan = kfold_split(manifest.image_ids(), opts.k, seed);
  fs::create_directories(out);
  if (!echo.empty()) write_text(out / "config.json", echo);
  write_text(out / "folds.json", fold_plan_to_json(plan).dump(2) + "\n");
  log_line("split: " + std::to_string(manifest.images.size()) + " images into " + std::to_string(plan.k) +
           " folds -> " + (out / "folds.json").string());
}

void cmd_train(const RunOptions& opts) {
  const auto cfg = load_config(opts);
  const auto out = prepare_output(cfg, opts);
  const auto samples = select_fold(cfg, load_dataset(cfg), opts.fold, false);
  Trainer trainer(cfg.model, cfg.train_config());

  std::ofstream report(out / "report.jsonl", std::ios::trunc);
  if (!report) throw Error("cannot write " + (out / "report.jsonl").string());
  double best = std::numeric_limits<double>::infinity();
  trainer.train(samples, [&](const EpochRecord& rec) {
    report << rec.to_json().dump() << '\n';
    report.flush();
    if (rec.loss.total() < best) {
      best = rec.loss.total();
      save_checkpoint(trainer.checkpoint(cfg.source_text), (out / "best.ckpt").string());
    }
    char line[128];
    std::snprintf(line, sizeof line, "epoch %zu loss %.5f (class %.4f giou %.4f l1 %.4f) %.2fs", rec.epoch,
                  rec.loss.total(), rec.loss.classification, rec.loss.giou, rec.loss.l1, rec.wall_seconds);
    log_line(line);
  });
  save_checkpoint(trainer.checkpoint(cfg.source_text), (out / "final.ckpt").string());
}

void cmd_eval(const RunOptions& opts) {
  const auto cfg = load_config(opts);
  const auto model = model_for(cfg, opts);
  const auto samples = select_fold(cfg, load_dataset(cfg), opts.fold, true);
  const auto out = prepare_output(cfg, opts);
  std::vector<ImageEvaluation> evals;
  for (const auto& s : samples) {
    const auto preds = predict(model, s.image, cfg.data.eval_short_edge);
    evals.push_back(evaluate_image(postprocess(preds, s.size(), cfg.run.threshold), s.annotations));
  }
  auto report = eval_report_to_json(compute_ap(evals));
  report["images"] = samples.size();
  report["threshold"] = cfg.run.threshold;
  write_text(out / "eval.json", report.dump(2) + "\n");
  log_line("eval: AP@0.5 " + std::to_string(report["ap50"].get<double>()) + " over " +
           std::to_string(samples.size()) + " images");
}

std::size_t cmd_infer(const RunOptions& opts) {
  const auto cfg = load_config(opts);
  const auto model = model_for(cfg, opts);
  if (opts.images.empty()) throw ConfigError("infer needs at least one image");
  const auto out = prepare_output(cfg, opts);
  std::size_t failures = 0;
  for (const auto& path : opts.images) {
    try {
      Sample s;
      s.id = path.stem().string();
      s.image = read_ppm(path.string());
      const auto dets = postprocess(predict(model, s.image, cfg.data.eval_short_edge), s.size(), cfg.run.threshold);
      json doc = {{"image", path.string()}, {"detections", detections_to_json(dets)}};
      write_text(out / (s.id + ".detections.json"), doc.dump(2) + "\n");
      render_overlay(s, dets, (out / (s.id + ".overlay.ppm")).string());
      log_line("infer: " + path.string() + ": " + std::to_string(dets.size()) + " detections");
    } catch (const std::exception& e) {
      std::cerr << "infer: " << path.string() << ": " << e.what() << '\n';
      ++failures;
    }
  }
  return failures;
}

int run(int argc, const char* const* argv) {
  CLI::App app{"Set-prediction object detector: split, train, eval, infer"};
  app.require_subcommand(1);

  SplitOptions split;
  auto* split_cmd = app.add_subcommand("split", "Write a k-fold plan for a manifest");
  split_cmd->add_option("--config", split.config, "Run config (JSON)");
  split_cmd->add_option("--manifest", split.manifest, "Dataset manifest (JSON)");
  split_cmd->add_option("--k", split.k, "Number of folds")->capture_default_str();
  split_cmd->add_option("--seed", split.seed, "Shuffle seed");
  split_cmd->add_option("--out", split.out, "Output directory");

  RunOptions run_opts;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", run_opts.config, "Run config (JSON)")->required();
    cmd->add_option("--seed", run_opts.seed, "Override run.seed");
    cmd->add_option("--fold", run_opts.fold, "Fold index");
    cmd->add_option("--out", run_opts.out, "Override run.out");
    cmd->add_option("--threshold", run_opts.threshold, "Override run.threshold");
    cmd->add_option("--checkpoint", run_opts.checkpoint, "Checkpoint file");
  };
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  add_common(train_cmd);
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(eval_cmd);
  auto* infer_cmd = app.add_subcommand("infer", "Detect objects in PPM images");
  add_common(infer_cmd);
  infer_cmd->add_option("images", run_opts.images, "Input images (PPM)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kSuccess : kUsageError;
  }

  try {
    if (*split_cmd) cmd_split(split);
    if (*train_cmd) cmd_train(run_opts);
    if (*eval_cmd) cmd_eval(run_opts);
    if (*infer_cmd && cmd_infer(run_opts) > 0) return kRuntimeFailure;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeFailure;
  }
  return kSuccess;
}

}  // namespace setdet::cli
