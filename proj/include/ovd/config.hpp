#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ovd/model.hpp"

namespace ovd {

inline constexpr const char* kVersion = "0.1.0";

// Flat run configuration shared by the CLI commands. Precedence is
// CLI flag > config file > these defaults.
struct RunConfig {
  ModelConfig model;

  // loss constants
  LossWeights loss_weights;
  VarifocalParams varifocal;
  MatchWeights match_weights;

  // optimizer / training loop
  std::string optimizer = "adam";  // "adam" or "sgd"
  double learning_rate = 1e-3;
  double clip_norm = 1.0;
  std::int64_t steps = 20000;
  std::int64_t batch_size = 4;
  std::uint64_t seed = 7;
  std::int64_t train_class_slots = 8;
  bool hflip = true;
  bool deterministic = true;
  std::int64_t log_every = 50;

  // data generation
  std::int64_t scenes = 2000;
  std::int64_t eval_scenes = 200;
  std::int64_t canvas = 256;
  std::int64_t min_objects = 5;
  std::int64_t max_objects = 25;
  std::int64_t min_size_px = 4;
  std::int64_t max_size_px = 24;
  double clutter_level = 0.5;
  std::vector<std::string> novel_classes;
  double novel_fraction = 0.25;  // share of eval-scene objects drawn as novel

  // tiling
  std::int64_t tile_size = 800;
  std::int64_t tile_stride = 800;
  double min_visible_fraction = 0.4;

  // evaluation / inference
  std::string protocol = "gzsd";  // closed | zsd | gzsd
  std::string restrict_classes = "none";  // none | base | novel (closed protocol)
  double score_floor = 0.05;
  double infer_floor = 0.5;

  // paths
  std::string data_dir;
  std::string out_dir;
  std::string checkpoint;
  std::string image_path;
  std::string vocab_path;
  std::string split_path;

  // Canonical key=value dump (sorted, stable formatting).
  std::string serialize() const;
  std::uint64_t hash() const;
};

// Key=value manifest helper; writes `status=incomplete` first so a crashed
// run is distinguishable, then rewrites with `status=complete`.
void write_manifest(const std::string& path, const RunConfig& cfg,
                    const std::vector<std::pair<std::string, std::string>>& extra,
                    bool complete);

}  // namespace ovd
