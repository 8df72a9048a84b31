#pragma once

#include <string>

#include "ovd/config.hpp"
#include "ovd/eval.hpp"

namespace ovd {

// Dataset generation: train/eval partitions with COCO-style annotations,
// PNG images, novel-class split file and a dataset manifest.
void run_generate(const RunConfig& cfg);

// Re-tiles a partition (annotations.json + images) into cfg.out_dir.
void run_tile(const RunConfig& cfg);

struct TrainResult {
  std::string checkpoint_path;
  double final_loss = 0.0;
  std::int64_t steps = 0;
};

// Gradient-descent loop over cfg.data_dir/train minimizing the composite
// detection objective with per-batch class sampling; writes checkpoint,
// manifest and loss curve into cfg.out_dir.
TrainResult run_train(const RunConfig& cfg);

// Inference plus metric evaluation over cfg.data_dir/eval under the
// configured protocol; writes report.txt / report.json / per_class.csv.
EvalReport run_eval(const RunConfig& cfg);

// Single-image open-vocabulary inference; returns the printable listing.
std::string run_infer(const RunConfig& cfg);

}  // namespace ovd
