#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ovd/boxes.hpp"
#include "ovd/text_bank.hpp"

namespace ovd {

enum class Protocol { Closed, ZSD, GZSD };

struct EvalConfig {
  std::vector<double> iou_thresholds = {0.50, 0.55, 0.60, 0.65, 0.70, 0.75,
                                        0.80, 0.85, 0.90, 0.95};
  Protocol protocol = Protocol::Closed;
  double score_floor = 0.05;
};

// A scored detection in per-image pixel coordinates.
struct EvalDetection {
  std::int64_t image_id = 0;
  std::int64_t class_id = 0;
  Box box_xyxy{};
  double score = 0.0;
};

struct EvalGtObject {
  std::int64_t image_id = 0;
  std::int64_t class_id = 0;
  Box box_xyxy{};
};

struct ClassResult {
  std::int64_t class_id = 0;
  std::int64_t gt_count = 0;
  double ap50 = 0.0;
  double map = 0.0;     // mean AP over configured thresholds
  double recall50 = 0.0;
};

struct SplitSummary {
  double ap50 = 0.0;
  double map = 0.0;
  double recall = 0.0;        // macro per-class mean
  double micro_recall = 0.0;  // pooled matched / total, auxiliary
  std::int64_t class_count = 0;
};

struct EvalReport {
  Protocol protocol = Protocol::Closed;
  std::vector<ClassResult> per_class;  // classes with at least one ground truth
  SplitSummary all;
  SplitSummary base;
  SplitSummary novel;
  double hm_ap50 = 0.0;
  double hm_map = 0.0;
  double hm_recall = 0.0;

  // One metric per line, "split.class.metric=value".
  std::string to_text(const ClassVocabulary& vocab) const;
  std::string to_json(const ClassVocabulary& vocab) const;
  std::string to_csv(const ClassVocabulary& vocab) const;
};

double harmonic_mean(double a, double b);

// Area under the all-point-interpolated precision/recall curve for one class.
// Detections must belong to one class; greedy one-to-one matching against the
// highest-IoU unmatched ground truth of the same image at the threshold.
double average_precision(const std::vector<EvalDetection>& detections,
                         const std::vector<EvalGtObject>& gt, double iou_thr);

// Matched ground-truth fraction for one class at the threshold.
double recall_at(const std::vector<EvalDetection>& detections,
                 const std::vector<EvalGtObject>& gt, double iou_thr);

// Full evaluation under the configured protocol. ZSD restricts detections and
// ground truth to novel classes; GZSD evaluates everything and rolls up
// base/novel splits with harmonic means; Closed reports plain means.
EvalReport evaluate(const std::vector<EvalDetection>& detections,
                    const std::vector<EvalGtObject>& gt, const ClassVocabulary& vocab,
                    const EvalConfig& cfg);

}  // namespace ovd
