#include "ovd/boxes.hpp"

#include <algorithm>
#include <cmath>

#include "ovd/error.hpp"

namespace ovd {

Box cxcywh_to_xyxy(const Box& b) {
  return {b[0] - b[2] / 2, b[1] - b[3] / 2, b[0] + b[2] / 2, b[1] + b[3] / 2};
}

Box xyxy_to_cxcywh(const Box& b) {
  return {(b[0] + b[2]) / 2, (b[1] + b[3]) / 2, b[2] - b[0], b[3] - b[1]};
}

Box xywh_to_xyxy(const Box& b) { return {b[0], b[1], b[0] + b[2], b[1] + b[3]}; }

Box xyxy_to_xywh(const Box& b) { return {b[0], b[1], b[2] - b[0], b[3] - b[1]}; }

double box_area_xyxy(const Box& b) {
  return std::max(0.0, b[2] - b[0]) * std::max(0.0, b[3] - b[1]);
}

double iou_xyxy(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a[2], b[2]) - std::max(a[0], b[0]));
  const double iy = std::max(0.0, std::min(a[3], b[3]) - std::max(a[1], b[1]));
  const double inter = ix * iy;
  const double uni = box_area_xyxy(a) + box_area_xyxy(b) - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

double iou_cxcywh(const Box& a, const Box& b) {
  return iou_xyxy(cxcywh_to_xyxy(a), cxcywh_to_xyxy(b));
}

double giou_xyxy(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a[2], b[2]) - std::max(a[0], b[0]));
  const double iy = std::max(0.0, std::min(a[3], b[3]) - std::max(a[1], b[1]));
  const double inter = ix * iy;
  const double uni = box_area_xyxy(a) + box_area_xyxy(b) - inter;
  const double hx = std::max(a[2], b[2]) - std::min(a[0], b[0]);
  const double hy = std::max(a[3], b[3]) - std::min(a[1], b[1]);
  const double hull = hx * hy;
  const double iou = uni <= 0.0 ? 0.0 : inter / uni;
  if (hull <= 0.0) return iou;
  return iou - (hull - uni) / hull;
}

double giou_loss_cxcywh(const Box& a, const Box& b) {
  return 1.0 - giou_xyxy(cxcywh_to_xyxy(a), cxcywh_to_xyxy(b));
}

namespace {

struct Corners {
  Tensor x1, y1, x2, y2;
};

Corners to_corners(const Tensor& cxcywh) {
  const Tensor cx = slice_cols(cxcywh, 0, 1);
  const Tensor cy = slice_cols(cxcywh, 1, 1);
  const Tensor hw = mul_scalar(slice_cols(cxcywh, 2, 1), 0.5);
  const Tensor hh = mul_scalar(slice_cols(cxcywh, 3, 1), 0.5);
  return {sub(cx, hw), sub(cy, hh), add(cx, hw), add(cy, hh)};
}

}  // namespace

Tensor giou_loss_pairs(const Tensor& pred_cxcywh, const Tensor& gt_cxcywh) {
  if (pred_cxcywh.cols() != 4 || gt_cxcywh.cols() != 4 ||
      pred_cxcywh.rows() != gt_cxcywh.rows()) {
    throw ShapeError("giou_loss_pairs: expected matching [M,4] inputs");
  }
  const Corners p = to_corners(pred_cxcywh);
  const Corners g = to_corners(gt_cxcywh);
  const Tensor zero = Tensor::zeros({pred_cxcywh.rows(), 1});

  const Tensor iw = maximum(sub(minimum(p.x2, g.x2), maximum(p.x1, g.x1)), zero);
  const Tensor ih = maximum(sub(minimum(p.y2, g.y2), maximum(p.y1, g.y1)), zero);
  const Tensor inter = mul(iw, ih);
  const Tensor area_p = mul(sub(p.x2, p.x1), sub(p.y2, p.y1));
  const Tensor area_g = mul(sub(g.x2, g.x1), sub(g.y2, g.y1));
  const Tensor uni = sub(add(area_p, area_g), inter);
  const Tensor iou = div(inter, uni);

  const Tensor hull =
      mul(sub(maximum(p.x2, g.x2), minimum(p.x1, g.x1)),
          sub(maximum(p.y2, g.y2), minimum(p.y1, g.y1)));
  const Tensor giou = sub(iou, div(sub(hull, uni), hull));
  return add_scalar(neg(giou), 1.0);
}

Tensor l1_loss_pairs(const Tensor& pred_cxcywh, const Tensor& gt_cxcywh) {
  if (pred_cxcywh.cols() != 4 || gt_cxcywh.cols() != 4 ||
      pred_cxcywh.rows() != gt_cxcywh.rows()) {
    throw ShapeError("l1_loss_pairs: expected matching [M,4] inputs");
  }
  return sum_rows(abs(sub(pred_cxcywh, gt_cxcywh)));
}

}  // namespace ovd
