#include "setdet/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "setdet/errors.hpp"

namespace setdet {

double box_loss(const Box& target, const Box& predicted, const LossConfig& cfg) {
  return cfg.lambda_iou * (1.0 - giou(target, predicted)) +
         cfg.lambda_l1 * l1_distance(target, predicted);
}

double classification_loss(std::span<const double> probs, std::size_t target, const LossConfig& cfg) {
  if (probs.size() != cfg.num_classes + 1)
    throw ContractError("classification_loss: expected " + std::to_string(cfg.num_classes + 1) +
                        " probabilities");
  if (target > cfg.num_classes) throw ContractError("classification_loss: target out of range");
  const double nll = -std::log(std::max(probs[target], kProbabilityFloor));
  return target == cfg.no_object() ? cfg.noobject_weight * nll : nll;
}

namespace {

void check_box_rows(const Tensor& pred, std::span<const Box> targets, const char* op) {
  if (pred.rank() != 2 || pred.dim(1) != 4 || pred.dim(0) != targets.size())
    throw DimensionError(std::string(op) + ": prediction rows do not match targets");
  for (const auto& t : targets)
    if (t.format != BoxFormat::CenterNorm) throw ContractError(std::string(op) + ": targets must be CenterNorm");
}

struct Clamped {
  double value;
  double gate;  // d value / d raw
};

Clamped clamp_unit(double raw) {
  if (raw <= 0.0) return {0.0, 0.0};
  if (raw >= 1.0) return {1.0, 0.0};
  return {raw, 1.0};
}

}  // namespace

Tensor giou_loss_sum(const Tensor& pred, std::span<const Box> targets) {
  check_box_rows(pred, targets, "giou_loss_sum");
  const auto pv = pred.values();
  double total = 0.0;
  for (std::size_t k = 0; k < targets.size(); ++k)
    total += 1.0 - giou(targets[k], Box::center_norm(pv[4 * k], pv[4 * k + 1], pv[4 * k + 2], pv[4 * k + 3]));

  std::vector<Corners> tc;
  tc.reserve(targets.size());
  for (const auto& t : targets) tc.push_back(corners_of(t));

  return make_op(
      "giou_loss_sum", {1}, {total}, {pred},
      [tc = std::move(tc)](std::span<const double> g, std::span<const double>, std::span<GradSlot> in) {
        const auto pv = in[0].value;
        auto gp = in[0].grad;
        for (std::size_t k = 0; k < tc.size(); ++k) {
          const double cx = pv[4 * k], cy = pv[4 * k + 1], w = pv[4 * k + 2], h = pv[4 * k + 3];
          const auto x1 = clamp_unit(cx - 0.5 * w), x2 = clamp_unit(cx + 0.5 * w);
          const auto y1 = clamp_unit(cy - 0.5 * h), y2 = clamp_unit(cy + 0.5 * h);
          const auto& t = tc[k];

          const double iw_raw = std::min(x2.value, t.x2) - std::max(x1.value, t.x1);
          const double ih_raw = std::min(y2.value, t.y2) - std::max(y1.value, t.y1);
          const double iw = std::max(0.0, iw_raw), ih = std::max(0.0, ih_raw);
          const double inter = iw * ih;
          const double pw = std::max(0.0, x2.value - x1.value), ph = std::max(0.0, y2.value - y1.value);
          const double area_p = pw * ph;
          const double area_t = std::max(0.0, t.x2 - t.x1) * std::max(0.0, t.y2 - t.y1);
          const double uni = area_p + area_t - inter;
          if (!(uni > 0.0)) continue;  // loss is the constant 1 here
          const double hw = std::max(x2.value, t.x2) - std::min(x1.value, t.x1);
          const double hh = std::max(y2.value, t.y2) - std::min(y1.value, t.y1);
          const double hull = hw * hh;

          // giou = I/U - 1 + U/H with U = Ap + At - I.
          const double dg_di = 1.0 / uni + inter / (uni * uni) - 1.0 / hull;
          const double dg_dap = -inter / (uni * uni) + 1.0 / hull;
          const double dg_dh = -uni / (hull * hull);

          const double di_dx1 = (iw_raw > 0.0 && x1.value > t.x1) ? -ih : 0.0;
          const double di_dx2 = (iw_raw > 0.0 && x2.value < t.x2) ? ih : 0.0;
          const double di_dy1 = (ih_raw > 0.0 && y1.value > t.y1) ? -iw : 0.0;
          const double di_dy2 = (ih_raw > 0.0 && y2.value < t.y2) ? iw : 0.0;
          const double dap_dx1 = pw > 0.0 ? -ph : 0.0, dap_dx2 = pw > 0.0 ? ph : 0.0;
          const double dap_dy1 = ph > 0.0 ? -pw : 0.0, dap_dy2 = ph > 0.0 ? pw : 0.0;
          const double dh_dx1 = x1.value < t.x1 ? -hh : 0.0;
          const double dh_dx2 = x2.value > t.x2 ? hh : 0.0;
          const double dh_dy1 = y1.value < t.y1 ? -hw : 0.0;
          const double dh_dy2 = y2.value > t.y2 ? hw : 0.0;

          // Loss is 1 - giou, so every partial flips sign.
          const double s = -g[0];
          const double gx1 = s * (dg_di * di_dx1 + dg_dap * dap_dx1 + dg_dh * dh_dx1) * x1.gate;
          const double gx2 = s * (dg_di * di_dx2 + dg_dap * dap_dx2 + dg_dh * dh_dx2) * x2.gate;
          const double gy1 = s * (dg_di * di_dy1 + dg_dap * dap_dy1 + dg_dh * dh_dy1) * y1.gate;
          const double gy2 = s * (dg_di * di_dy2 + dg_dap * dap_dy2 + dg_dh * dh_dy2) * y2.gate;

          gp[4 * k] += gx1 + gx2;
          gp[4 * k + 1] += gy1 + gy2;
          gp[4 * k + 2] += 0.5 * (gx2 - gx1);
          gp[4 * k + 3] += 0.5 * (gy2 - gy1);
        }
      });
}

Tensor l1_loss_sum(const Tensor& pred, std::span<const Box> targets) {
  check_box_rows(pred, targets, "l1_loss_sum");
  std::vector<double> tv;
  tv.reserve(4 * targets.size());
  for (const auto& t : targets) tv.insert(tv.end(), {t.a, t.b, t.c, t.d});
  return sum(abs(sub(pred, Tensor::from(pred.shape(), std::move(tv)))));
}

HungarianLoss hungarian_loss(std::span<const Annotation> gts, const PredictionSet& preds,
                             const LossConfig& cfg) {
  if (preds.num_classes() != cfg.num_classes)
    throw ContractError("hungarian_loss: prediction has " + std::to_string(preds.num_classes()) +
                        " classes, config expects " + std::to_string(cfg.num_classes));
  const std::size_t n = preds.num_queries();

  HungarianLoss out;
  const auto costs = build_cost_matrix(gts, preds, cfg.lambda_iou, cfg.lambda_l1);
  out.assignment = hungarian_assign(costs);
  const auto& sigma = out.assignment.sigma;

  std::vector<std::size_t> rows(n), targets(n, cfg.no_object());
  for (std::size_t j = 0; j < n; ++j) rows[j] = j;
  for (std::size_t i = 0; i < gts.size(); ++i) targets[sigma[i]] = static_cast<std::size_t>(gts[i].class_id);
  std::vector<double> weights(n);
  for (std::size_t j = 0; j < n; ++j)
    weights[j] = targets[j] == cfg.no_object() ? -cfg.noobject_weight : -1.0;

  const auto class_term =
      weighted_sum(log_clamped(pick(preds.class_probs, rows, targets), kProbabilityFloor), weights);
  out.parts.classification = class_term.item();
  out.total = class_term;

  if (!gts.empty()) {
    // Matched pairs are summed in query order so the total does not depend
    // on the order of the ground-truth list.
    std::vector<std::size_t> order(gts.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sigma[a] < sigma[b]; });
    std::vector<Box> gt_boxes;
    std::vector<std::size_t> matched_rows;
    gt_boxes.reserve(gts.size());
    matched_rows.reserve(gts.size());
    for (const auto i : order) {
      gt_boxes.push_back(gts[i].box);
      matched_rows.push_back(sigma[i]);
    }
    const auto matched = gather_rows(preds.boxes, matched_rows);
    const auto giou_term = scale(giou_loss_sum(matched, gt_boxes), cfg.lambda_iou);
    const auto l1_term = scale(l1_loss_sum(matched, gt_boxes), cfg.lambda_l1);
    out.parts.giou = giou_term.item();
    out.parts.l1 = l1_term.item();
    out.total = add(add(class_term, giou_term), l1_term);
  }
  return out;
}

}  // namespace setdet
