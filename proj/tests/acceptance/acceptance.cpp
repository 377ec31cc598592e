// Runs the eight acceptance criteria and prints one PASS/FAIL line for each.
// Exit status is nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "setdet/checkpoint.hpp"
#include "setdet/data.hpp"
#include "setdet/errors.hpp"
#include "setdet/evaluation.hpp"
#include "setdet/geometry.hpp"
#include "setdet/loss.hpp"
#include "setdet/matcher.hpp"
#include "setdet/model.hpp"
#include "setdet/trainer.hpp"

namespace {

using namespace setdet;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

// ---- 1: matcher optimality ---------------------------------------------------

Outcome matcher_optimality() {
  Rng rng(1001);
  std::vector<CostMatrix> cases;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t rows = 1 + uniform_index(rng, 7);
    const std::size_t cols = rows + uniform_index(rng, 9 - rows + 1);
    CostMatrix c(rows, cols);
    for (auto& v : c.costs) v = uniform(rng, -10.0, 10.0);
    cases.push_back(std::move(c));
  }
  // Always include the largest shape.
  cases.back() = CostMatrix(7, 9);
  for (auto& v : cases.back().costs) v = uniform(rng, -10.0, 10.0);

  const auto t0 = Clock::now();
  std::vector<Assignment> solved;
  for (const auto& c : cases) solved.push_back(hungarian_assign(c));
  const double solve_time = seconds_since(t0);

  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < cases.size(); ++i)
    if (solved[i].total_cost != testing::brute_force_min_cost(cases[i])) ++mismatches;
  return {mismatches == 0 && solve_time < 5.0,
          fmt("%zu/1000 exact mismatches, hungarian time %.3fs (limit 5s)", mismatches, solve_time)};
}

// ---- 2: gradient fidelity ------------------------------------------------------

Outcome gradient_fidelity() {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_encoder_layers = 1;
  cfg.n_decoder_layers = 1;
  cfg.n_queries = 4;
  cfg.num_classes = 2;
  cfg.backbone_channels = 8;
  cfg.ffn_hidden = 16;
  cfg.init_seed = 2002;
  DetectionModel model(cfg);
  Rng rng(2002);
  Image img(16, 16);
  for (auto& v : img.data()) v = uniform(rng, 0.0, 1.0);
  const std::vector<Annotation> gts{{0, Box::center_norm(0.3, 0.35, 0.3, 0.4)},
                                    {1, Box::center_norm(0.7, 0.6, 0.35, 0.3)}};
  LossConfig lc;
  lc.num_classes = 2;

  std::vector<Tensor> params;
  std::size_t coords = 0;
  for (const auto& p : model.parameters()) {
    params.push_back(p.tensor);
    coords += p.tensor.size();
  }
  const auto sigma = hungarian_loss(gts, model.forward(img), lc).assignment.sigma;
  bool assignment_stable = true;
  const auto t0 = Clock::now();
  const double err = testing::gradient_check(
      [&](const std::vector<Tensor>&) {
        auto loss = hungarian_loss(gts, model.forward(img), lc);
        assignment_stable &= loss.assignment.sigma == sigma;
        return loss.total;
      },
      params);
  const double elapsed = seconds_since(t0);
  return {err < 1e-4 && assignment_stable && elapsed < 60.0,
          fmt("max relative error %.3e over %zu coordinates (limit 1e-4, floor %.0e), assignment %s, %.1fs (limit 60s)",
              err, coords, testing::kGradientFloor, assignment_stable ? "stable" : "changed", elapsed)};
}

// ---- 3: geometry suite ---------------------------------------------------------

Outcome geometry_suite() {
  std::size_t failed = 0;
  auto check = [&](bool ok) { failed += !ok; };
  const auto full = convert(Box::center_norm(0.5, 0.5, 1, 1), BoxFormat::CornerAbs, ImageSize{640, 480});
  check(full == Box::corner_abs(0, 0, 640, 480));
  check(convert(Box::center_norm(0.25, 0.25, 0.5, 0.5), BoxFormat::CornerAbs, ImageSize{100, 100}) ==
        Box::corner_abs(0, 0, 50, 50));
  const auto a = Box::corner_abs(0, 0, 2, 1);
  check(iou(a, a) == 1.0);
  check(iou(a, Box::corner_abs(5, 5, 6, 6)) == 0.0);
  check(iou(a, Box::corner_abs(1, 0, 3, 1)) == 1.0 / 3.0);
  const auto u = Box::corner_abs(0, 0, 1, 1);
  check(giou(u, u) == 1.0);
  check(giou(u, Box::corner_abs(1, 0, 2, 1)) == 0.0);
  check(giou(u, Box::corner_abs(2, 0, 3, 1)) == -1.0 / 3.0);
  const auto c = Box::center_norm(0.5, 0.5, 0.2, 0.2);
  check(l1_distance(c, c) == 0.0);
  check(std::abs(l1_distance(c, Box::center_norm(0.5, 0.5, 0.4, 0.2)) - 0.2) < 1e-15);

  Rng rng(3003);
  const ImageSize frame{100, 100};
  std::size_t property_failures = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto x = testing::random_corner_box(rng, 100.0), y = testing::random_corner_box(rng, 100.0);
    const double o = iou(x, y), g = giou(x, y);
    const double dx = uniform(rng, -50, 50), dy = uniform(rng, -50, 50), s = uniform(rng, 0.1, 10);
    auto move = [&](const Box& b) { return Box::corner_abs(b.a + dx, b.b + dy, b.c + dx, b.d + dy); };
    auto grow = [&](const Box& b) { return Box::corner_abs(b.a * s, b.b * s, b.c * s, b.d * s); };
    const bool ok = o >= 0.0 && o <= 1.0 && g > -1.0 && g <= 1.0 && g <= o + 1e-15 && iou(y, x) == o &&
                    giou(y, x) == g && std::abs(iou(move(x), move(y)) - o) < 1e-9 &&
                    std::abs(giou(move(x), move(y)) - g) < 1e-9 && std::abs(iou(grow(x), grow(y)) - o) < 1e-9 &&
                    std::abs(giou(grow(x), grow(y)) - g) < 1e-9 && giou(x, x) == iou(x, x) &&
                    l1_distance(convert(x, BoxFormat::CenterNorm, frame), convert(y, BoxFormat::CenterNorm, frame)) ==
                        l1_distance(convert(y, BoxFormat::CenterNorm, frame), convert(x, BoxFormat::CenterNorm, frame));
    property_failures += !ok;
  }
  return {failed == 0 && property_failures == 0,
          fmt("%zu example failures, %zu/10000 property failures", failed, property_failures)};
}

// ---- 4: overfit run --------------------------------------------------------------

Outcome overfit_run() {
  const auto data = generate_synthetic(1, 8, 128, 3, 1);
  ModelConfig mc;
  mc.d_model = 64;
  mc.n_heads = 4;
  mc.n_encoder_layers = 2;
  mc.n_decoder_layers = 2;
  mc.n_queries = 8;
  mc.num_classes = 1;
  mc.backbone_channels = 64;
  mc.ffn_hidden = 128;
  TrainConfig tc;
  tc.epochs = 1600;
  tc.batch_size = 1;
  tc.seed = 0;
  tc.multiscale = false;
  tc.augment = AugmentPolicy::none();
  tc.optimizer.lr = 2e-4;
  tc.loss.num_classes = 1;

  const auto t0 = Clock::now();
  Trainer trainer(mc, tc);
  const auto records = trainer.train(data);
  std::vector<ImageEvaluation> evals;
  std::size_t gts = 0;
  for (const auto& s : data) {
    evals.push_back(evaluate_image(postprocess(trainer.model().forward(s.image), s.size(), 0.3), s.annotations));
    gts += s.annotations.size();
  }
  const auto report = compute_ap(evals);
  const double elapsed = seconds_since(t0);
  const double first = records.front().loss.total(), last = records.back().loss.total();
  return {report.ap50 == 1.0 && last < 0.1 * first && records.size() <= 2000 && elapsed < 600.0,
          fmt("%zu epochs, AP@0.5 %.4f (tp %zu fp %zu of %zu gt), loss %.4f -> %.4f (ratio %.4f, limit 0.1), %.0fs "
              "(limit 600s)",
              records.size(), report.ap50, report.tp, report.fp, gts, first, last, last / first, elapsed)};
}

// ---- 5: resize policy ------------------------------------------------------------

bool resize_conforms(std::size_t w, std::size_t h, const ResizePlan& p) {
  const auto short_out = std::min(p.width, p.height), long_out = std::max(p.width, p.height);
  const auto long_in = static_cast<double>(std::max(w, h));
  const bool short_ok = short_out >= 288 && short_out <= 416;
  const bool cap_ok = long_out == 512 && p.scale == 512.0 / long_in;
  const bool aspect_ok = std::abs(static_cast<double>(p.width) - p.scale * static_cast<double>(w)) <= 0.5 &&
                         std::abs(static_cast<double>(p.height) - p.scale * static_cast<double>(h)) <= 0.5;
  return (short_ok || cap_ok) && aspect_ok;
}

Outcome resize_policy() {
  Rng rng(5005);
  std::size_t failures = 0, capped = 0;
  for (int i = 0; i < 10000; ++i) {
    const std::size_t w = 16 + uniform_index(rng, 4081), h = 16 + uniform_index(rng, 4081);
    const auto p = plan_resize(w, h, kShortEdgeChoices[uniform_index(rng, kShortEdgeChoices.size())]);
    failures += !resize_conforms(w, h, p);
    capped += std::max(p.width, p.height) == 512;
  }
  // The full resampling path on a smaller sample.
  std::size_t image_failures = 0;
  for (int i = 0; i < 50; ++i) {
    Sample s;
    const std::size_t w = 16 + uniform_index(rng, 300), h = 16 + uniform_index(rng, 300);
    s.image = Image(w, h, 0.5);
    // A box starting at x = 1 is never clamped, so its scaled corner is the applied scale.
    s.annotations = {{0, Box::corner_abs(1, 1, 2, 2)}};
    const auto out = resize_multiscale(s, rng);
    const double scale = static_cast<double>(out.image.width()) / static_cast<double>(w);
    ResizePlan p{out.image.width(), out.image.height(), 0.0};
    p.scale = out.annotations.at(0).box.a;
    image_failures += !resize_conforms(w, h, p) || std::abs(scale - p.scale) * static_cast<double>(w) > 0.5;
  }
  return {failures == 0 && image_failures == 0,
          fmt("%zu/10000 planned sizes violate the rule (%zu hit the long-edge cap), %zu/50 resampled images violate it",
              failures, capped, image_failures)};
}

// ---- 6: loss oracle --------------------------------------------------------------

Outcome loss_oracle() {
  Rng rng(6006);
  std::size_t mismatches = 0, literal_mismatches = 0;
  double worst = 0.0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + uniform_index(rng, 6);
    const std::size_t m = uniform_index(rng, std::min<std::size_t>(3, n) + 1);
    const std::size_t k = 1 + uniform_index(rng, 3);
    LossConfig cfg;
    cfg.num_classes = k;
    const auto preds = testing::random_predictions(rng, n, k);
    std::vector<Annotation> gts;
    for (std::size_t i = 0; i < m; ++i)
      gts.push_back({static_cast<int>(uniform_index(rng, k)), testing::random_center_box(rng)});

    // The set loss is defined at the assignment minimizing the match cost.
    double best_match = 1e300, min_loss = 1e300;
    std::vector<std::size_t> argmin;
    testing::for_each_injection(m, n, [&](const std::vector<std::size_t>& s) {
      const double c = testing::match_cost_for(gts, preds, s, cfg);
      if (c < best_match) {
        best_match = c;
        argmin = s;
      }
      min_loss = std::min(min_loss, testing::set_loss_for(gts, preds, s, cfg));
    });
    const double got = hungarian_loss(gts, preds, cfg).total.item();
    const double diff = std::abs(got - testing::set_loss_for(gts, preds, argmin, cfg));
    worst = std::max(worst, diff);
    mismatches += diff >= 1e-9;
    literal_mismatches += std::abs(got - min_loss) >= 1e-9;
  }
  std::printf("note: criterion 6 compares against the set loss recomputed at the brute-force minimum-match-cost "
              "assignment; the loss-minimizing assignment differs from it on %zu/200 instances because matching "
              "scores classes by probability while the loss uses log-probability\n",
              literal_mismatches);
  return {mismatches == 0, fmt("%zu/200 mismatches, worst difference %.3e (limit 1e-9)", mismatches, worst)};
}

// ---- 7: determinism and resume ---------------------------------------------------

std::vector<std::string> report_lines(const std::vector<EpochRecord>& records) {
  std::vector<std::string> out;
  for (const auto& r : records) out.push_back(r.to_json(false).dump());
  return out;
}

std::vector<std::vector<double>> parameter_values(const DetectionModel& model) {
  std::vector<std::vector<double>> out;
  for (const auto& p : model.parameters()) out.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

Outcome determinism_and_resume() {
  ModelConfig mc;
  mc.d_model = 8;
  mc.n_heads = 2;
  mc.n_encoder_layers = 1;
  mc.n_decoder_layers = 1;
  mc.n_queries = 4;
  mc.num_classes = 2;
  mc.backbone_channels = 8;
  mc.ffn_hidden = 16;
  mc.init_seed = 7;
  TrainConfig tc;
  tc.epochs = 4;
  tc.batch_size = 2;
  tc.seed = 7007;
  tc.optimizer.lr = 1e-3;
  tc.loss.num_classes = 2;
  const auto data = generate_synthetic(7, 3, 64, 3, 2);

  Trainer a(mc, tc), b(mc, tc);
  const auto ra = report_lines(a.train(data)), rb = report_lines(b.train(data));
  const bool identical = ra == rb && parameter_values(a.model()) == parameter_values(b.model());

  testing::TempDir dir("acceptance");
  std::size_t resume_failures = 0;
  for (std::size_t split = 1; split < tc.epochs; ++split) {
    TrainConfig first = tc;
    first.epochs = split;
    Trainer head(mc, first);
    auto lines = report_lines(head.train(data));
    const auto path = (dir / ("split" + std::to_string(split) + ".ckpt")).string();
    save_checkpoint(head.checkpoint(), path);
    Trainer tail(load_checkpoint(path), tc);
    for (auto& l : report_lines(tail.train(data))) lines.push_back(l);
    resume_failures += lines != ra || parameter_values(tail.model()) != parameter_values(a.model());
  }
  return {identical && resume_failures == 0,
          fmt("repeat run %s; %zu/%zu save/load split points differ from the uninterrupted run (augmentation and "
              "multi-scale on)",
              identical ? "bitwise identical" : "DIFFERS", resume_failures, tc.epochs - 1)};
}

// ---- 8: post-processing contract -----------------------------------------------

Outcome postprocess_contract() {
  std::vector<std::string> problems;
  DetectionModel model{ModelConfig{}};
  Rng rng(8008);
  Image img(80, 60);
  for (auto& v : img.data()) v = uniform(rng, 0.0, 1.0);
  const auto preds = model.forward(img);
  if (preds.num_queries() != 100) problems.push_back("default config gives " + std::to_string(preds.num_queries()));

  const double below = std::nextafter(0.3, 0.0), above = std::nextafter(0.3, 1.0);
  const PredictionSet edge{Tensor::from({3, 2}, {0.3, 0.7, below, 1.0 - below, above, 1.0 - above}),
                           Tensor::from({3, 4}, {0.5, 0.5, 0.2, 0.2, 0.5, 0.5, 0.2, 0.2, 0.5, 0.5, 0.2, 0.2})};
  const auto kept = postprocess(edge, {100, 100});
  if (kept.size() != 1 || kept[0].score != above) problems.push_back("score 0.3 boundary not strict");
  std::size_t threshold_violations = 0;
  for (int t = 0; t < 200; ++t) {
    const auto p = testing::random_predictions(rng, 100, 2);
    const auto dets = postprocess(p, {64, 64}, 0.3);
    std::size_t expected = 0;
    for (std::size_t q = 0; q < 100; ++q) expected += std::max(p.prob(q, 0), p.prob(q, 1)) > 0.3;
    threshold_violations += dets.size() != expected;
    for (const auto& d : dets) threshold_violations += !(d.score > 0.3);
  }
  if (threshold_violations) problems.push_back(std::to_string(threshold_violations) + " threshold violations");

  std::size_t split_failures = 0;
  for (int t = 0; t < 500; ++t) {
    std::vector<std::string> ids;
    const std::size_t n = 5 + uniform_index(rng, 200);
    for (std::size_t i = 0; i < n; ++i) ids.push_back(std::to_string(rng()));
    const auto plan = kfold_split(ids, 5, static_cast<std::uint64_t>(t));
    std::set<std::string> seen;
    bool ok = plan.assignments.size() == n;
    for (std::size_t f = 0; f < 5; ++f)
      for (const auto& id : plan.validation_ids(f)) ok &= seen.insert(id).second;
    ok &= seen == std::set<std::string>(ids.begin(), ids.end());
    const auto sizes = plan.fold_sizes();
    ok &= *std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()) <= 1;
    split_failures += !ok;
  }
  testing::TempDir dir("acceptance");
  const auto manifest = load_manifest(write_dataset(generate_synthetic(8, 13, 32, 2), {"a", "b"}, dir.path()));
  const auto sizes = kfold_split(manifest.image_ids(), 5, 1).fold_sizes();
  split_failures += *std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()) > 1;
  if (split_failures) problems.push_back(std::to_string(split_failures) + " five-fold split failures");

  std::string detail = fmt("%zu raw predictions; threshold strict on boundary and 200 random sets; 501 five-fold "
                           "splits checked",
                           preds.num_queries());
  for (const auto& p : problems) detail += "; " + p;
  return {problems.empty(), detail};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {"matcher optimality", matcher_optimality},
      {"gradient fidelity", gradient_fidelity},
      {"geometry suite", geometry_suite},
      {"overfit run", overfit_run},
      {"resize policy", resize_policy},
      {"loss oracle", loss_oracle},
      {"determinism and resume", determinism_and_resume},
      {"post-processing contract", postprocess_contract},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("criterion %zu %s: %s (%s)\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
