#include "ovd/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ovd/error.hpp"

namespace ovd {

namespace {

double sigmoid_scalar(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

// Shortest-augmenting-path assignment for a rectangular cost matrix with
// rows <= cols. Returns col index per row.
std::vector<std::int64_t> solve_rows_to_cols(const std::vector<std::vector<double>>& a,
                                             std::int64_t n, std::int64_t m) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0);
  std::vector<double> v(static_cast<std::size_t>(m + 1), 0.0);
  std::vector<std::int64_t> p(static_cast<std::size_t>(m + 1), 0);
  std::vector<std::int64_t> way(static_cast<std::size_t>(m + 1), 0);
  for (std::int64_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::int64_t j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(m + 1), inf);
    std::vector<char> used(static_cast<std::size_t>(m + 1), 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const std::int64_t i0 = p[static_cast<std::size_t>(j0)];
      std::int64_t j1 = -1;
      double delta = inf;
      for (std::int64_t j = 1; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = a[static_cast<std::size_t>(i0 - 1)][static_cast<std::size_t>(j - 1)] -
                           u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (std::int64_t j = 0; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const std::int64_t j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::int64_t> row_to_col(static_cast<std::size_t>(n), -1);
  for (std::int64_t j = 1; j <= m; ++j) {
    if (p[static_cast<std::size_t>(j)] > 0) {
      row_to_col[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
    }
  }
  return row_to_col;
}

}  // namespace

Assignment hungarian_match(const std::vector<std::vector<double>>& cost) {
  Assignment out;
  const auto n = static_cast<std::int64_t>(cost.size());
  if (n == 0) return out;
  const auto k = static_cast<std::int64_t>(cost[0].size());
  if (k == 0) return out;
  for (const auto& row : cost) {
    if (static_cast<std::int64_t>(row.size()) != k) {
      throw ContractError("hungarian_match: ragged cost matrix");
    }
    for (const double c : row) {
      if (!std::isfinite(c)) throw ContractError("hungarian_match: non-finite cost");
    }
  }
  if (n <= k) {
    const auto rc = solve_rows_to_cols(cost, n, k);
    for (std::int64_t i = 0; i < n; ++i) out.pairs.emplace_back(i, rc[static_cast<std::size_t>(i)]);
  } else {
    std::vector<std::vector<double>> t(static_cast<std::size_t>(k),
                                       std::vector<double>(static_cast<std::size_t>(n)));
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < k; ++j)
        t[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] =
            cost[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    const auto rc = solve_rows_to_cols(t, k, n);
    for (std::int64_t j = 0; j < k; ++j) out.pairs.emplace_back(rc[static_cast<std::size_t>(j)], j);
    std::sort(out.pairs.begin(), out.pairs.end());
  }
  return out;
}

std::vector<std::vector<double>> match_cost(const LayerOutput& output, const GroundTruth& gt,
                                            const ClassEmbeddingBank& text,
                                            const MatchWeights& weights) {
  const std::int64_t n = output.boxes.rows();
  const std::int64_t k = gt.size();
  std::vector<std::int64_t> gt_slot(static_cast<std::size_t>(k));
  for (std::int64_t j = 0; j < k; ++j) {
    const std::int64_t slot = text.slot_of_class(gt.objects[static_cast<std::size_t>(j)].class_id);
    if (slot < 0) {
      throw ContractError("match_cost: ground-truth class " +
                          std::to_string(gt.objects[static_cast<std::size_t>(j)].class_id) +
                          " missing from sampled slots");
    }
    gt_slot[static_cast<std::size_t>(j)] = slot;
  }
  std::vector<std::vector<double>> cost(static_cast<std::size_t>(n),
                                        std::vector<double>(static_cast<std::size_t>(k), 0.0));
  for (std::int64_t i = 0; i < n; ++i) {
    const Box pred = {output.boxes.at(i, 0), output.boxes.at(i, 1), output.boxes.at(i, 2),
                      output.boxes.at(i, 3)};
    for (std::int64_t j = 0; j < k; ++j) {
      const auto& obj = gt.objects[static_cast<std::size_t>(j)];
      const double p = sigmoid_scalar(output.scores.at(i, gt_slot[static_cast<std::size_t>(j)]));
      const double pc = std::min(std::max(p, 1e-12), 1.0 - 1e-12);
      const double pos_cost =
          kMatchFocalAlpha * std::pow(1.0 - pc, kMatchFocalGamma) * (-std::log(pc));
      const double neg_cost =
          (1.0 - kMatchFocalAlpha) * std::pow(pc, kMatchFocalGamma) * (-std::log(1.0 - pc));
      double l1 = 0.0;
      for (int d = 0; d < 4; ++d) l1 += std::abs(pred[static_cast<std::size_t>(d)] -
                                                 obj.box_cxcywh[static_cast<std::size_t>(d)]);
      cost[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
          weights.cls * (pos_cost - neg_cost) + weights.l1 * l1 +
          weights.giou * giou_loss_cxcywh(pred, obj.box_cxcywh);
    }
  }
  return cost;
}

Tensor alignment_loss(const Tensor& scores, const SlotMask& valid,
                      const std::vector<AlignmentTarget>& positives,
                      const VarifocalParams& params, double normalizer) {
  const std::int64_t n = scores.rows(), s = scores.cols();
  if (static_cast<std::int64_t>(valid.size()) != s) {
    throw ShapeError("alignment_loss: mask length != slot count");
  }
  std::vector<double> u(static_cast<std::size_t>(n * s), 0.0);
  std::vector<double> pos_mask(static_cast<std::size_t>(n * s), 0.0);
  std::vector<double> neg_mask(static_cast<std::size_t>(n * s), 0.0);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < s; ++j)
      if (valid[static_cast<std::size_t>(j)]) neg_mask[static_cast<std::size_t>(i * s + j)] = 1.0;
  for (const auto& t : positives) {
    if (t.query < 0 || t.query >= n || t.slot < 0 || t.slot >= s ||
        !valid[static_cast<std::size_t>(t.slot)]) {
      throw ContractError("alignment_loss: positive target outside valid score grid");
    }
    const auto k = static_cast<std::size_t>(t.query * s + t.slot);
    if (t.iou > 0.0) {
      u[k] = t.iou;
      pos_mask[k] = 1.0;
      neg_mask[k] = 0.0;
    }
    // IoU of zero keeps the entry on the negative branch, as u = 0.
  }

  const Tensor u_t = Tensor::from({n, s}, std::move(u));
  const Tensor pos_t = Tensor::from({n, s}, std::move(pos_mask));
  const Tensor neg_t = Tensor::from({n, s}, std::move(neg_mask));
  const Tensor theta = clamp(sigmoid(scores), 1e-12, 1.0 - 1e-12);
  const Tensor log_t = log(theta);
  const Tensor log_1mt = log(sub(Tensor::full({n, s}, 1.0), theta));

  // -u (u log t + (1-u) log(1-t)) on positive entries
  const Tensor inner =
      add(mul(u_t, log_t), mul(sub(Tensor::full({n, s}, 1.0), u_t), log_1mt));
  const Tensor pos_term = mul(pos_t, neg(mul(u_t, inner)));
  // -alpha t^gamma log(1-t) on valid negative entries
  const Tensor neg_term =
      mul(neg_t, mul_scalar(neg(mul(pow_scalar(theta, params.gamma), log_1mt)), params.alpha));

  return mul_scalar(sum(add(pos_term, neg_term)), 1.0 / std::max(1.0, normalizer));
}

ImageLossResult detection_loss(const DecoderOutput& output, const GroundTruth& gt,
                               const ClassEmbeddingBank& text, double batch_gt_count,
                               const LossWeights& lw, const VarifocalParams& vf,
                               const MatchWeights& mw) {
  ImageLossResult res;
  const double norm = std::max(1.0, batch_gt_count);
  Tensor total = Tensor::scalar(0.0);
  for (const auto& layer : output.layers) {
    Assignment assign;
    std::vector<AlignmentTarget> positives;
    if (gt.size() > 0) {
      assign = hungarian_match(match_cost(layer, gt, text, mw));
      for (const auto& [qi, gj] : assign.pairs) {
        const auto& obj = gt.objects[static_cast<std::size_t>(gj)];
        const Box pred = {layer.boxes.at(qi, 0), layer.boxes.at(qi, 1), layer.boxes.at(qi, 2),
                          layer.boxes.at(qi, 3)};
        AlignmentTarget t;
        t.query = qi;
        t.slot = text.slot_of_class(obj.class_id);
        t.iou = iou_cxcywh(pred, obj.box_cxcywh);  // detached target
        positives.push_back(t);
      }
    }
    const Tensor l_con = alignment_loss(layer.scores, text.valid, positives, vf, norm);
    total = add(total, mul_scalar(l_con, lw.lambda_con));
    res.parts.l_con += l_con.item();

    if (!assign.pairs.empty()) {
      std::vector<std::int64_t> q_idx;
      std::vector<double> gt_boxes;
      for (const auto& [qi, gj] : assign.pairs) {
        q_idx.push_back(qi);
        const auto& b = gt.objects[static_cast<std::size_t>(gj)].box_cxcywh;
        gt_boxes.insert(gt_boxes.end(), b.begin(), b.end());
      }
      const Tensor pred = gather_rows(layer.boxes, q_idx);
      const Tensor target =
          Tensor::from({static_cast<std::int64_t>(assign.pairs.size()), 4}, std::move(gt_boxes));
      const Tensor l_giou = mul_scalar(sum(giou_loss_pairs(pred, target)), 1.0 / norm);
      const Tensor l_l1 = mul_scalar(sum(l1_loss_pairs(pred, target)), 1.0 / norm);
      total = add(total, add(mul_scalar(l_giou, lw.mu_giou), mul_scalar(l_l1, lw.nu_l1)));
      res.parts.l_giou += l_giou.item();
      res.parts.l_l1 += l_l1.item();
    }
    res.per_layer.push_back(std::move(assign));
  }
  res.total = total;
  res.parts.total = lw.lambda_con * res.parts.l_con + lw.mu_giou * res.parts.l_giou +
                    lw.nu_l1 * res.parts.l_l1;
  return res;
}

}  // namespace ovd
