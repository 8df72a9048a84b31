#pragma once

#include <cstdint>
#include <tuple>
#include <utility>
#include <vector>

#include "ovd/boxes.hpp"
#include "ovd/decoder.hpp"
#include "ovd/text_bank.hpp"

namespace ovd {

struct GroundTruthObject {
  Box box_cxcywh;  // normalized
  std::int64_t class_id = 0;
};

struct GroundTruth {
  std::vector<GroundTruthObject> objects;
  std::int64_t size() const { return static_cast<std::int64_t>(objects.size()); }
};

// One-to-one query/ground-truth pairs; |pairs| == min(N, K).
struct Assignment {
  std::vector<std::pair<std::int64_t, std::int64_t>> pairs;  // (query, gt)
};

struct MatchWeights {
  double cls = 2.0;
  double l1 = 5.0;
  double giou = 2.0;
};

// Focal-style class cost constants for matching.
inline constexpr double kMatchFocalAlpha = 0.25;
inline constexpr double kMatchFocalGamma = 2.0;

struct VarifocalParams {
  double alpha = 0.75;
  double gamma = 2.0;
};

struct LossWeights {
  double lambda_con = 1.0;
  double mu_giou = 2.0;
  double nu_l1 = 5.0;
};

struct LossBreakdown {
  double l_con = 0.0;
  double l_giou = 0.0;
  double l_l1 = 0.0;
  double total = 0.0;
};

// Exact minimum-cost bipartite assignment on an N x K cost matrix
// (shortest augmenting path with potentials). Costs must be finite.
Assignment hungarian_match(const std::vector<std::vector<double>>& cost);

// Matching cost per (query, gt): focal-style cost on the sigmoid similarity
// at the ground-truth class slot, plus L1 and GIoU box costs. Ground-truth
// classes must be present in the sampled slots.
std::vector<std::vector<double>> match_cost(const LayerOutput& output, const GroundTruth& gt,
                                            const ClassEmbeddingBank& text,
                                            const MatchWeights& weights = {});

// Positive target for the alignment loss: matched query, its ground-truth
// class slot, and the (detached) IoU between predicted and ground-truth box.
struct AlignmentTarget {
  std::int64_t query = 0;
  std::int64_t slot = 0;
  double iou = 0.0;
};

// Varifocal image-to-text alignment loss on similarity logits. Positive
// entries (u > 0) use -u(u log t + (1-u) log(1-t)); everything else on valid
// slots uses -alpha t^gamma log(1-t), with t = sigmoid(score) clamped away
// from {0,1}. Sum is divided by `normalizer` (batch ground-truth count,
// floored at one, supplied by the caller).
Tensor alignment_loss(const Tensor& scores, const SlotMask& valid,
                      const std::vector<AlignmentTarget>& positives,
                      const VarifocalParams& params, double normalizer);

struct ImageLossResult {
  Tensor total;  // scalar graph node
  LossBreakdown parts;
  std::vector<Assignment> per_layer;
};

// Composite detection loss for one image: every decoder layer is re-matched,
// per-layer IoU targets are recomputed from that layer's boxes, and the
// weighted sum lambda*L_con + mu*L_GIoU + nu*L_L1 is accumulated over layers.
// Box losses cover matched pairs only; all terms are normalized by
// `batch_gt_count` (floored at one).
ImageLossResult detection_loss(const DecoderOutput& output, const GroundTruth& gt,
                               const ClassEmbeddingBank& text, double batch_gt_count,
                               const LossWeights& lw = {}, const VarifocalParams& vf = {},
                               const MatchWeights& mw = {});

}  // namespace ovd
