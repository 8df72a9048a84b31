#include "ovd/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "ovd/error.hpp"

namespace ovd {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Greedy one-to-one matching in score order; returns tp flags per detection
// (sorted by score desc, ties by input order) and the matched GT count.
struct MatchSweep {
  std::vector<char> tp;
  std::int64_t matched = 0;
};

MatchSweep greedy_match(const std::vector<EvalDetection>& detections,
                        const std::vector<EvalGtObject>& gt, double iou_thr,
                        std::vector<std::size_t>* order_out = nullptr) {
  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&detections](std::size_t a, std::size_t b) {
    return detections[a].score > detections[b].score;
  });

  std::map<std::int64_t, std::vector<std::size_t>> gt_by_image;
  for (std::size_t g = 0; g < gt.size(); ++g) gt_by_image[gt[g].image_id].push_back(g);
  std::vector<char> gt_used(gt.size(), 0);

  MatchSweep sweep;
  sweep.tp.resize(detections.size(), 0);
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const auto& det = detections[order[rank]];
    const auto it = gt_by_image.find(det.image_id);
    if (it == gt_by_image.end()) continue;
    double best_iou = 0.0;
    std::int64_t best_g = -1;
    for (const auto g : it->second) {
      if (gt_used[g]) continue;
      const double iou = iou_xyxy(det.box_xyxy, gt[g].box_xyxy);
      if (iou >= iou_thr && iou > best_iou) {
        best_iou = iou;
        best_g = static_cast<std::int64_t>(g);
      }
    }
    if (best_g >= 0) {
      gt_used[static_cast<std::size_t>(best_g)] = 1;
      sweep.tp[rank] = 1;
      ++sweep.matched;
    }
  }
  if (order_out) *order_out = std::move(order);
  return sweep;
}

SplitSummary summarize(const std::vector<ClassResult>& classes,
                       const std::vector<std::int64_t>& ids,
                       const std::map<std::int64_t, std::pair<std::int64_t, std::int64_t>>&
                           micro /* class -> (matched, total) */) {
  SplitSummary s;
  std::int64_t matched = 0, total = 0;
  for (const auto& c : classes) {
    if (std::find(ids.begin(), ids.end(), c.class_id) == ids.end()) continue;
    s.ap50 += c.ap50;
    s.map += c.map;
    s.recall += c.recall50;
    ++s.class_count;
    const auto it = micro.find(c.class_id);
    if (it != micro.end()) {
      matched += it->second.first;
      total += it->second.second;
    }
  }
  if (s.class_count > 0) {
    s.ap50 /= static_cast<double>(s.class_count);
    s.map /= static_cast<double>(s.class_count);
    s.recall /= static_cast<double>(s.class_count);
  }
  s.micro_recall = total > 0 ? static_cast<double>(matched) / static_cast<double>(total) : 0.0;
  return s;
}

const char* protocol_name(Protocol p) {
  switch (p) {
    case Protocol::Closed: return "closed";
    case Protocol::ZSD: return "zsd";
    case Protocol::GZSD: return "gzsd";
  }
  return "?";
}

}  // namespace

double harmonic_mean(double a, double b) {
  if (a + b <= 0.0) return 0.0;
  return 2.0 * a * b / (a + b);
}

double average_precision(const std::vector<EvalDetection>& detections,
                         const std::vector<EvalGtObject>& gt, double iou_thr) {
  if (gt.empty()) throw ContractError("average_precision: undefined for zero ground truth");
  if (detections.empty()) return 0.0;
  const MatchSweep sweep = greedy_match(detections, gt, iou_thr);

  const double total_gt = static_cast<double>(gt.size());
  std::vector<double> precision, recall;
  double tp = 0.0, fp = 0.0;
  for (std::size_t i = 0; i < sweep.tp.size(); ++i) {
    if (sweep.tp[i]) ++tp; else ++fp;
    precision.push_back(tp / (tp + fp));
    recall.push_back(tp / total_gt);
  }
  // Monotone (all-point) interpolation: envelope from the right, then area.
  for (std::int64_t i = static_cast<std::int64_t>(precision.size()) - 2; i >= 0; --i) {
    precision[static_cast<std::size_t>(i)] =
        std::max(precision[static_cast<std::size_t>(i)], precision[static_cast<std::size_t>(i + 1)]);
  }
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < precision.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

double recall_at(const std::vector<EvalDetection>& detections,
                 const std::vector<EvalGtObject>& gt, double iou_thr) {
  if (gt.empty()) throw ContractError("recall_at: undefined for zero ground truth");
  const MatchSweep sweep = greedy_match(detections, gt, iou_thr);
  return static_cast<double>(sweep.matched) / static_cast<double>(gt.size());
}

EvalReport evaluate(const std::vector<EvalDetection>& detections,
                    const std::vector<EvalGtObject>& gt, const ClassVocabulary& vocab,
                    const EvalConfig& cfg) {
  for (const auto& d : detections) {
    if (d.class_id < 0 || d.class_id >= vocab.size()) {
      throw ContractError("evaluate: detection class " + std::to_string(d.class_id) +
                          " outside vocabulary");
    }
  }
  for (std::size_t i = 1; i < cfg.iou_thresholds.size(); ++i) {
    if (cfg.iou_thresholds[i] <= cfg.iou_thresholds[i - 1]) {
      throw ContractError("evaluate: iou thresholds must be strictly increasing");
    }
  }
  const auto novel_ids = vocab.novel_indices();
  const auto base_ids = vocab.base_indices();
  if (cfg.protocol == Protocol::ZSD && novel_ids.empty()) {
    throw ProtocolError("evaluate: ZSD protocol with no novel classes");
  }
  if (cfg.protocol == Protocol::GZSD && (novel_ids.empty() || base_ids.empty())) {
    throw ProtocolError("evaluate: GZSD protocol needs both base and novel classes");
  }

  // Class ids under evaluation.
  std::vector<std::int64_t> eval_ids;
  if (cfg.protocol == Protocol::ZSD) {
    eval_ids = novel_ids;
  } else {
    eval_ids.resize(static_cast<std::size_t>(vocab.size()));
    std::iota(eval_ids.begin(), eval_ids.end(), 0);
  }

  EvalReport report;
  report.protocol = cfg.protocol;
  std::map<std::int64_t, std::pair<std::int64_t, std::int64_t>> micro50;
  for (const auto cid : eval_ids) {
    std::vector<EvalGtObject> class_gt;
    for (const auto& g : gt) {
      if (g.class_id == cid) class_gt.push_back(g);
    }
    if (class_gt.empty()) continue;  // AP undefined, excluded from means
    std::vector<EvalDetection> class_det;
    for (const auto& d : detections) {
      if (d.class_id == cid && d.score >= cfg.score_floor) class_det.push_back(d);
    }
    ClassResult r;
    r.class_id = cid;
    r.gt_count = static_cast<std::int64_t>(class_gt.size());
    double ap_sum = 0.0;
    for (const auto thr : cfg.iou_thresholds) ap_sum += average_precision(class_det, class_gt, thr);
    r.map = ap_sum / static_cast<double>(cfg.iou_thresholds.size());
    r.ap50 = average_precision(class_det, class_gt, 0.5);
    r.recall50 = recall_at(class_det, class_gt, 0.5);
    const MatchSweep sweep = greedy_match(class_det, class_gt, 0.5);
    micro50[cid] = {sweep.matched, static_cast<std::int64_t>(class_gt.size())};
    report.per_class.push_back(r);
  }

  report.all = summarize(report.per_class, eval_ids, micro50);
  if (cfg.protocol == Protocol::GZSD) {
    report.base = summarize(report.per_class, base_ids, micro50);
    report.novel = summarize(report.per_class, novel_ids, micro50);
    report.hm_ap50 = harmonic_mean(report.base.ap50, report.novel.ap50);
    report.hm_map = harmonic_mean(report.base.map, report.novel.map);
    report.hm_recall = harmonic_mean(report.base.recall, report.novel.recall);
  } else if (cfg.protocol == Protocol::ZSD) {
    report.novel = report.all;
  }
  return report;
}

std::string EvalReport::to_text(const ClassVocabulary& vocab) const {
  std::ostringstream os;
  const std::string proto = protocol_name(protocol);
  auto emit_split = [&os, &proto](const char* split, const SplitSummary& s) {
    os << proto << "." << split << ".ap50=" << fmt_double(s.ap50) << "\n";
    os << proto << "." << split << ".map=" << fmt_double(s.map) << "\n";
    os << proto << "." << split << ".recall=" << fmt_double(s.recall) << "\n";
    os << proto << "." << split << ".micro_recall=" << fmt_double(s.micro_recall) << "\n";
    os << proto << "." << split << ".classes=" << s.class_count << "\n";
  };
  for (const auto& c : per_class) {
    const std::string& name = vocab.names[static_cast<std::size_t>(c.class_id)];
    std::string key = name;
    for (auto& ch : key) {
      if (ch == ' ') ch = '_';
    }
    os << proto << "." << key << ".ap50=" << fmt_double(c.ap50) << "\n";
    os << proto << "." << key << ".map=" << fmt_double(c.map) << "\n";
    os << proto << "." << key << ".recall=" << fmt_double(c.recall50) << "\n";
    os << proto << "." << key << ".gt_count=" << c.gt_count << "\n";
  }
  emit_split("all", all);
  if (protocol == Protocol::GZSD) {
    emit_split("base", base);
    emit_split("novel", novel);
    os << proto << ".hm.ap50=" << fmt_double(hm_ap50) << "\n";
    os << proto << ".hm.map=" << fmt_double(hm_map) << "\n";
    os << proto << ".hm.recall=" << fmt_double(hm_recall) << "\n";
  }
  if (protocol == Protocol::ZSD) emit_split("novel", novel);
  return os.str();
}

std::string EvalReport::to_json(const ClassVocabulary& vocab) const {
  std::ostringstream os;
  auto split_json = [](const SplitSummary& s) {
    std::ostringstream j;
    j << "{\"ap50\":" << fmt_double(s.ap50) << ",\"map\":" << fmt_double(s.map)
      << ",\"recall\":" << fmt_double(s.recall)
      << ",\"micro_recall\":" << fmt_double(s.micro_recall) << ",\"classes\":" << s.class_count
      << "}";
    return j.str();
  };
  os << "{\"protocol\":\"" << protocol_name(protocol) << "\",";
  os << "\"per_class\":{";
  for (std::size_t i = 0; i < per_class.size(); ++i) {
    const auto& c = per_class[i];
    if (i) os << ",";
    os << "\"" << vocab.names[static_cast<std::size_t>(c.class_id)] << "\":{"
       << "\"ap50\":" << fmt_double(c.ap50) << ",\"map\":" << fmt_double(c.map)
       << ",\"recall\":" << fmt_double(c.recall50) << ",\"gt_count\":" << c.gt_count << "}";
  }
  os << "},\"all\":" << split_json(all);
  if (protocol == Protocol::GZSD) {
    os << ",\"base\":" << split_json(base) << ",\"novel\":" << split_json(novel)
       << ",\"hm\":{\"ap50\":" << fmt_double(hm_ap50) << ",\"map\":" << fmt_double(hm_map)
       << ",\"recall\":" << fmt_double(hm_recall) << "}";
  }
  if (protocol == Protocol::ZSD) os << ",\"novel\":" << split_json(novel);
  os << "}\n";
  return os.str();
}

std::string EvalReport::to_csv(const ClassVocabulary& vocab) const {
  std::ostringstream os;
  os << "class,role,gt_count,ap50,map,recall50\n";
  for (const auto& c : per_class) {
    os << vocab.names[static_cast<std::size_t>(c.class_id)] << ","
       << (vocab.is_novel[static_cast<std::size_t>(c.class_id)] ? "novel" : "base") << ","
       << c.gt_count << "," << fmt_double(c.ap50) << "," << fmt_double(c.map) << ","
       << fmt_double(c.recall50) << "\n";
  }
  return os.str();
}

}  // namespace ovd
