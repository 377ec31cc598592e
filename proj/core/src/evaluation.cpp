#include "setdet/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "setdet/errors.hpp"

namespace setdet {

using nlohmann::json;

std::vector<Detection> postprocess(const PredictionSet& preds, ImageSize image, double threshold) {
  std::vector<Detection> out;
  const std::size_t k = preds.num_classes();
  for (std::size_t q = 0; q < preds.num_queries(); ++q) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c)
      if (preds.prob(q, c) > preds.prob(q, best)) best = c;
    const double score = preds.prob(q, best);
    if (!(score > threshold)) continue;
    auto box = convert(preds.box(q), BoxFormat::CornerAbs, image);
    box.a = std::clamp(box.a, 0.0, image.width);
    box.c = std::clamp(box.c, 0.0, image.width);
    box.b = std::clamp(box.b, 0.0, image.height);
    box.d = std::clamp(box.d, 0.0, image.height);
    out.push_back({static_cast<int>(best), score, box});
  }
  return out;
}

namespace {

std::vector<std::size_t> score_order(std::span<const Detection> dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  return order;
}

}  // namespace

MatchResult match_for_eval(std::span<const Detection> dets, std::span<const Annotation> gts, double iou_threshold) {
  MatchResult r;
  r.true_positive.assign(dets.size(), false);
  r.false_positive.assign(dets.size(), false);
  r.matched_gt.assign(dets.size(), -1);
  std::vector<bool> claimed(gts.size(), false);
  for (std::size_t d : score_order(dets)) {
    long best = -1;
    double best_iou = iou_threshold;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (claimed[g] || gts[g].class_id != dets[d].class_id) continue;
      const double o = iou(dets[d].box, gts[g].box);
      if (o >= best_iou && (best < 0 || o > best_iou)) {
        best = static_cast<long>(g);
        best_iou = o;
      }
    }
    if (best >= 0) {
      claimed[static_cast<std::size_t>(best)] = true;
      r.true_positive[d] = true;
      r.matched_gt[d] = best;
    } else {
      r.false_positive[d] = true;
    }
  }
  r.false_negatives = static_cast<std::size_t>(std::count(claimed.begin(), claimed.end(), false));
  return r;
}

ImageEvaluation evaluate_image(std::vector<Detection> dets, std::vector<Annotation> gts, double iou_threshold) {
  ImageEvaluation e;
  e.match = match_for_eval(dets, gts, iou_threshold);
  e.detections = std::move(dets);
  e.ground_truths = std::move(gts);
  return e;
}

SizeBucket size_bucket(double area) {
  if (area < kSmallAreaLimit) return SizeBucket::Small;
  if (area <= kLargeAreaLimit) return SizeBucket::Medium;
  return SizeBucket::Large;
}

const char* bucket_name(SizeBucket b) {
  switch (b) {
    case SizeBucket::Small: return "small";
    case SizeBucket::Medium: return "medium";
    case SizeBucket::Large: return "large";
  }
  return "?";
}

double interpolated_ap(std::span<const double> precision, std::span<const double> recall) {
  if (precision.size() != recall.size()) throw ContractError("interpolated_ap: curve arrays differ in length");
  // Running maximum of precision from the right makes the envelope monotone.
  std::vector<double> envelope(precision.begin(), precision.end());
  for (std::size_t i = envelope.size(); i-- > 1;) envelope[i - 1] = std::max(envelope[i - 1], envelope[i]);
  double total = 0.0;
  std::size_t pos = 0;
  for (int step = 0; step <= 100; ++step) {
    const double r = step / 100.0;
    while (pos < recall.size() && recall[pos] < r) ++pos;
    if (pos < recall.size()) total += envelope[pos];
  }
  return total / 101.0;
}

namespace {

struct Scored {
  double score;
  std::size_t image;
  std::size_t det;
  bool tp;
};

// AP for one class; `in_bucket` filters ground truths (nullopt = all sizes).
std::optional<double> class_ap(std::span<const ImageEvaluation> images, int cls, std::optional<SizeBucket> bucket,
                               PrecisionRecall* curve) {
  std::size_t num_gt = 0;
  std::vector<Scored> scored;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& im = images[i];
    for (const auto& g : im.ground_truths)
      if (g.class_id == cls && (!bucket || size_bucket(g.box.area()) == *bucket)) ++num_gt;
    for (std::size_t d = 0; d < im.detections.size(); ++d) {
      const auto& det = im.detections[d];
      if (det.class_id != cls) continue;
      const long g = im.match.matched_gt[d];
      if (bucket) {
        if (g >= 0 && size_bucket(im.ground_truths[static_cast<std::size_t>(g)].box.area()) != *bucket) continue;
        if (g < 0 && size_bucket(det.box.area()) != *bucket) continue;
      }
      scored.push_back({det.score, i, d, g >= 0});
    }
  }
  if (num_gt == 0) return std::nullopt;
  std::stable_sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });
  PrecisionRecall pr;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < scored.size(); ++k) {
    tp += scored[k].tp ? 1 : 0;
    pr.precision.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
    pr.recall.push_back(static_cast<double>(tp) / static_cast<double>(num_gt));
  }
  const double ap = interpolated_ap(pr.precision, pr.recall);
  if (curve) *curve = std::move(pr);
  return ap;
}

}  // namespace

EvalReport compute_ap(std::span<const ImageEvaluation> images) {
  EvalReport rep;
  std::vector<int> classes;
  for (const auto& im : images) {
    for (const auto& g : im.ground_truths) {
      classes.push_back(g.class_id);
      ++rep.bucket_gt_count[static_cast<std::size_t>(size_bucket(g.box.area()))];
    }
    rep.num_gt += im.ground_truths.size();
    rep.tp += static_cast<std::size_t>(std::count(im.match.true_positive.begin(), im.match.true_positive.end(), true));
    rep.fp += static_cast<std::size_t>(std::count(im.match.false_positive.begin(), im.match.false_positive.end(), true));
    rep.fn += im.match.false_negatives;
  }
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());

  double total = 0.0;
  for (int cls : classes) {
    PrecisionRecall curve;
    const auto ap = class_ap(images, cls, std::nullopt, &curve);
    rep.per_class_ap[cls] = *ap;
    rep.per_class_curve[cls] = std::move(curve);
    total += *ap;
  }
  rep.ap50 = classes.empty() ? 0.0 : total / static_cast<double>(classes.size());

  for (std::size_t b = 0; b < 3; ++b) {
    if (rep.bucket_gt_count[b] == 0) continue;
    double sum = 0.0;
    std::size_t n = 0;
    for (int cls : classes) {
      if (const auto ap = class_ap(images, cls, static_cast<SizeBucket>(b), nullptr)) {
        sum += *ap;
        ++n;
      }
    }
    rep.bucket_ap[b] = sum / static_cast<double>(n);
  }
  return rep;
}

json eval_report_to_json(const EvalReport& r) {
  json per_class = json::object();
  for (const auto& [cls, ap] : r.per_class_ap) {
    const auto& curve = r.per_class_curve.at(cls);
    per_class[std::to_string(cls)] = {{"ap50", ap}, {"precision", curve.precision}, {"recall", curve.recall}};
  }
  json buckets = json::object();
  for (std::size_t b = 0; b < 3; ++b) {
    const auto name = bucket_name(static_cast<SizeBucket>(b));
    buckets[name] = {{"gt_count", r.bucket_gt_count[b]},
                     {"ap50", r.bucket_ap[b] ? json(*r.bucket_ap[b]) : json(nullptr)}};
  }
  return {{"ap50", r.ap50}, {"per_class", per_class}, {"size_buckets", buckets},
          {"counts", {{"gt", r.num_gt}, {"tp", r.tp}, {"fp", r.fp}, {"fn", r.fn}}}};
}

json detections_to_json(std::span<const Detection> dets) {
  json arr = json::array();
  for (const auto& d : dets)
    arr.push_back({{"class_id", d.class_id}, {"score", d.score}, {"box", {d.box.a, d.box.b, d.box.c, d.box.d}}});
  return arr;
}

namespace {

void draw_outline(Image& img, const Box& box, const std::array<double, 3>& color) {
  const auto w = static_cast<long>(img.width()), h = static_cast<long>(img.height());
  const long x1 = std::clamp(std::lround(box.a), 0L, w), x2 = std::clamp(std::lround(box.c), 0L, w) - 1;
  const long y1 = std::clamp(std::lround(box.b), 0L, h), y2 = std::clamp(std::lround(box.d), 0L, h) - 1;
  if (x2 < x1 || y2 < y1) return;
  auto put = [&](long x, long y) {
    for (std::size_t c = 0; c < Image::kChannels; ++c)
      img.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = color[c];
  };
  for (long x = x1; x <= x2; ++x) {
    put(x, y1);
    put(x, y2);
  }
  for (long y = y1; y <= y2; ++y) {
    put(x1, y);
    put(x2, y);
  }
}

}  // namespace

void render_overlay(const Sample& sample, std::span<const Detection> dets, const std::string& path) {
  Image canvas = sample.image;
  for (const auto& g : sample.annotations) draw_outline(canvas, g.box, kGroundTruthColor);
  std::vector<std::string> comments;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    draw_outline(canvas, dets[i].box, kDetectionColor);
    char line[160];
    std::snprintf(line, sizeof line, "det %zu class=%d score=%.3f box=%.1f,%.1f,%.1f,%.1f", i, dets[i].class_id,
                  dets[i].score, dets[i].box.a, dets[i].box.b, dets[i].box.c, dets[i].box.d);
    comments.emplace_back(line);
  }
  write_ppm(canvas, path, comments);
}

}  // namespace setdet
