#pragma once

#include <array>

#include "ovd/tensor.hpp"

namespace ovd {

// Axis-aligned box as four doubles; the function name states the convention
// (xyxy corners, xywh corner+size, cxcywh center+size).
using Box = std::array<double, 4>;

Box cxcywh_to_xyxy(const Box& b);
Box xyxy_to_cxcywh(const Box& b);
Box xywh_to_xyxy(const Box& b);
Box xyxy_to_xywh(const Box& b);

double box_area_xyxy(const Box& b);
// Intersection over union; degenerate (zero-area) boxes contribute zero overlap.
double iou_xyxy(const Box& a, const Box& b);
double iou_cxcywh(const Box& a, const Box& b);
// Generalized IoU in [-1, 1].
double giou_xyxy(const Box& a, const Box& b);
// 1 - GIoU, in [0, 2].
double giou_loss_cxcywh(const Box& a, const Box& b);

// Differentiable box losses over matched pairs, both [M,4] in cxcywh.
// Returns per-pair columns [M,1].
Tensor giou_loss_pairs(const Tensor& pred_cxcywh, const Tensor& gt_cxcywh);
Tensor l1_loss_pairs(const Tensor& pred_cxcywh, const Tensor& gt_cxcywh);

}  // namespace ovd
