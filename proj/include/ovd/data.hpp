#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ovd/boxes.hpp"
#include "ovd/png_io.hpp"
#include "ovd/text_bank.hpp"

namespace ovd {

struct ColorDef {
  std::string name;
  std::uint8_t r, g, b;
};

// Synthetic compositional scenes: colored shapes on cluttered backgrounds,
// class name = "<color> <shape>".
struct SceneSpec {
  std::int64_t canvas = 256;
  std::vector<std::string> shapes = {"circle", "square", "triangle", "cross", "ring"};
  std::vector<ColorDef> colors = {{"red", 220, 45, 45},     {"green", 45, 190, 70},
                                  {"blue", 50, 85, 220},    {"yellow", 230, 210, 60},
                                  {"magenta", 200, 60, 200}, {"cyan", 60, 200, 210}};
  std::int64_t min_objects = 5;
  std::int64_t max_objects = 25;
  std::int64_t min_size_px = 4;
  std::int64_t max_size_px = 24;
  double max_overlap_iou = 0.3;  // pairwise IoU ceiling between objects
  double clutter_level = 0.5;    // 0 disables background clutter
  std::uint64_t seed = 0;
  // Classes that may be spawned; empty means every color-shape combination.
  std::vector<std::string> allowed_classes;

  std::vector<std::string> all_class_names() const;
};

struct AnnotationObject {
  std::string class_name;
  double x = 0, y = 0, w = 0, h = 0;  // pixels, xywh
};

struct AnnotationRecord {
  std::int64_t image_id = 0;
  std::string file_name;
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::vector<AnnotationObject> objects;
};

struct GeneratedScene {
  Image image;
  AnnotationRecord record;
};

// Deterministic per (spec.seed, index): the scene RNG is seeded with
// spec.seed ^ index.
GeneratedScene generate_scene(const SceneSpec& spec, std::int64_t index);

struct TileSpec {
  std::int64_t tile_size = 800;
  std::int64_t stride = 800;
  double min_visible_fraction = 0.4;  // clipped-area / original-area keep rule
};

struct Tile {
  Image image;
  std::int64_t offset_x = 0;
  std::int64_t offset_y = 0;
  std::vector<AnnotationObject> objects;  // tile-frame coordinates
};

// Covers the image with tiles at stride offsets; the final row/column is
// shifted inward to stay in bounds. Images smaller than a tile are padded
// with black. Annotations are clipped per tile and kept when the visible
// fraction passes the threshold.
std::vector<Tile> tile_image(const Image& image, const std::vector<AnnotationObject>& objects,
                             const TileSpec& spec);

struct Dataset {
  std::vector<AnnotationRecord> records;
  ClassVocabulary vocab;
  std::int64_t clipped_box_count = 0;  // boxes adjusted during ingestion
};

// COCO-style subset: images / annotations / categories.
Dataset load_annotations(const std::string& json_path);
void save_annotations(const std::string& json_path, const std::vector<AnnotationRecord>& records,
                      const std::vector<std::string>& class_names);

}  // namespace ovd
