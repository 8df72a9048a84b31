#include "ovd/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "ovd/error.hpp"
#include "ovd/rng.hpp"

namespace ovd {

namespace {

using json = nlohmann::json;

struct PlacedObject {
  std::string class_name;
  std::string shape;
  std::uint8_t r, g, b;
  // integer pixel bbox, inclusive origin, exclusive end
  std::int64_t x, y, size;
};

bool inside_shape(const std::string& shape, double fx, double fy) {
  // fx, fy in [0,1) within the object's square bbox
  const double cx = fx - 0.5, cy = fy - 0.5;
  if (shape == "circle") return cx * cx + cy * cy <= 0.25;
  if (shape == "square") return true;
  if (shape == "triangle") {
    // upward triangle: apex at top center, base at the bottom edge
    const double half = 0.5 * fy;
    return fy >= 0.0 && std::abs(cx) <= half;
  }
  if (shape == "cross") {
    const double t = 1.0 / 6.0;
    return std::abs(cx) <= t || std::abs(cy) <= t;
  }
  if (shape == "ring") {
    const double d = cx * cx + cy * cy;
    return d <= 0.25 && d >= 0.25 * 0.25;
  }
  throw ContractError("unknown shape '" + shape + "'");
}

double iou_px(std::int64_t ax, std::int64_t ay, std::int64_t as, std::int64_t bx, std::int64_t by,
              std::int64_t bs) {
  const Box a = {static_cast<double>(ax), static_cast<double>(ay), static_cast<double>(ax + as),
                 static_cast<double>(ay + as)};
  const Box b = {static_cast<double>(bx), static_cast<double>(by), static_cast<double>(bx + bs),
                 static_cast<double>(by + bs)};
  return iou_xyxy(a, b);
}

}  // namespace

std::vector<std::string> SceneSpec::all_class_names() const {
  std::vector<std::string> out;
  for (const auto& color : colors)
    for (const auto& shape : shapes) out.push_back(color.name + " " + shape);
  return out;
}

GeneratedScene generate_scene(const SceneSpec& spec, std::int64_t index) {
  if (spec.shapes.empty() || spec.colors.empty()) {
    throw ContractError("generate_scene: shape and color sets must be nonempty");
  }
  Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(index)));
  const std::int64_t s = spec.canvas;

  GeneratedScene scene;
  scene.image.width = s;
  scene.image.height = s;
  scene.image.rgb.assign(static_cast<std::size_t>(3 * s * s), 0);
  scene.record.image_id = index;
  scene.record.width = s;
  scene.record.height = s;

  // Background: mid gray with pixel noise.
  const int bg = 80 + static_cast<int>(rng.uniform_int(40));
  for (std::int64_t i = 0; i < s * s; ++i) {
    const int noise = static_cast<int>(rng.uniform_int(21)) - 10;
    const int v = std::clamp(bg + noise, 0, 255);
    for (int c = 0; c < 3; ++c) scene.image.rgb[static_cast<std::size_t>(3 * i + c)] =
        static_cast<std::uint8_t>(v);
  }
  // Low-contrast clutter rectangles, never annotated.
  if (spec.clutter_level > 0.0) {
    const auto count = static_cast<std::int64_t>(spec.clutter_level * 12.0);
    for (std::int64_t i = 0; i < count; ++i) {
      const std::int64_t cw = 6 + rng.uniform_int(std::max<std::int64_t>(1, s / 5));
      const std::int64_t chh = 6 + rng.uniform_int(std::max<std::int64_t>(1, s / 5));
      const std::int64_t cx = rng.uniform_int(std::max<std::int64_t>(1, s - cw));
      const std::int64_t cy = rng.uniform_int(std::max<std::int64_t>(1, s - chh));
      const int delta = static_cast<int>(rng.uniform_int(51)) - 25;
      for (std::int64_t y = cy; y < cy + chh; ++y)
        for (std::int64_t x = cx; x < cx + cw; ++x)
          for (int c = 0; c < 3; ++c) {
            auto& px = scene.image.at(x, y, c);
            px = static_cast<std::uint8_t>(std::clamp(static_cast<int>(px) + delta, 0, 255));
          }
    }
  }

  // Which classes may spawn here.
  std::vector<std::pair<std::string, std::string>> choices;  // (color, shape)
  std::set<std::string> allowed(spec.allowed_classes.begin(), spec.allowed_classes.end());
  for (const auto& color : spec.colors)
    for (const auto& shape : spec.shapes) {
      const std::string cls = color.name + " " + shape;
      if (allowed.empty() || allowed.count(cls)) choices.emplace_back(color.name, shape);
    }
  if (choices.empty()) throw ContractError("generate_scene: allowed_classes excludes every class");

  const std::int64_t target =
      spec.min_objects + rng.uniform_int(spec.max_objects - spec.min_objects + 1);
  std::vector<PlacedObject> placed;
  for (std::int64_t obj = 0; obj < target; ++obj) {
    bool ok = false;
    for (int attempt = 0; attempt < 60 && !ok; ++attempt) {
      const auto& [color_name, shape] = choices[static_cast<std::size_t>(
          rng.uniform_int(static_cast<std::int64_t>(choices.size())))];
      // Sizes skewed small, as in aerial imagery.
      const double t = rng.uniform();
      const auto size = static_cast<std::int64_t>(
          static_cast<double>(spec.min_size_px) +
          t * t * static_cast<double>(spec.max_size_px - spec.min_size_px));
      if (size >= s) continue;
      const std::int64_t x = rng.uniform_int(s - size);
      const std::int64_t y = rng.uniform_int(s - size);
      bool clash = false;
      for (const auto& p : placed) {
        if (iou_px(x, y, size, p.x, p.y, p.size) > spec.max_overlap_iou) {
          clash = true;
          break;
        }
      }
      if (clash) continue;
      const ColorDef* cd = nullptr;
      for (const auto& c : spec.colors)
        if (c.name == color_name) cd = &c;
      const auto jitter = [&rng](std::uint8_t base) {
        const int v = static_cast<int>(base) + static_cast<int>(rng.uniform_int(31)) - 15;
        return static_cast<std::uint8_t>(std::clamp(v, 0, 255));
      };
      placed.push_back({color_name + " " + shape, shape, jitter(cd->r), jitter(cd->g),
                        jitter(cd->b), x, y, size});
      ok = true;
    }
    if (!ok) {
      throw GenerationError("generate_scene: could not place object " + std::to_string(obj) +
                            " within overlap ceiling " + std::to_string(spec.max_overlap_iou) +
                            " on a " + std::to_string(s) + "px canvas");
    }
  }

  for (const auto& p : placed) {
    for (std::int64_t y = 0; y < p.size; ++y)
      for (std::int64_t x = 0; x < p.size; ++x) {
        const double fx = (static_cast<double>(x) + 0.5) / static_cast<double>(p.size);
        const double fy = (static_cast<double>(y) + 0.5) / static_cast<double>(p.size);
        if (!inside_shape(p.shape, fx, fy)) continue;
        scene.image.at(p.x + x, p.y + y, 0) = p.r;
        scene.image.at(p.x + x, p.y + y, 1) = p.g;
        scene.image.at(p.x + x, p.y + y, 2) = p.b;
      }
    AnnotationObject ann;
    ann.class_name = p.class_name;
    ann.x = static_cast<double>(p.x);
    ann.y = static_cast<double>(p.y);
    ann.w = static_cast<double>(p.size);
    ann.h = static_cast<double>(p.size);
    scene.record.objects.push_back(ann);
  }
  return scene;
}

std::vector<Tile> tile_image(const Image& image, const std::vector<AnnotationObject>& objects,
                             const TileSpec& spec) {
  if (spec.stride <= 0 || spec.stride > spec.tile_size) {
    throw ContractError("tile_image: need 0 < stride <= tile size");
  }
  // Pad small images with black up to a full tile.
  Image padded;
  const Image* src = &image;
  if (image.width < spec.tile_size || image.height < spec.tile_size) {
    padded.width = std::max(image.width, spec.tile_size);
    padded.height = std::max(image.height, spec.tile_size);
    padded.rgb.assign(static_cast<std::size_t>(3 * padded.width * padded.height), 0);
    for (std::int64_t y = 0; y < image.height; ++y)
      for (std::int64_t x = 0; x < image.width; ++x)
        for (int c = 0; c < 3; ++c) padded.at(x, y, c) = image.at(x, y, c);
    src = &padded;
  }

  const auto starts = [&spec](std::int64_t extent) {
    std::vector<std::int64_t> out;
    std::int64_t pos = 0;
    while (true) {
      if (pos + spec.tile_size >= extent) {
        out.push_back(extent - spec.tile_size);
        break;
      }
      out.push_back(pos);
      pos += spec.stride;
    }
    return out;
  };

  std::vector<Tile> tiles;
  for (const auto oy : starts(src->height)) {
    for (const auto ox : starts(src->width)) {
      Tile tile;
      tile.offset_x = ox;
      tile.offset_y = oy;
      tile.image.width = spec.tile_size;
      tile.image.height = spec.tile_size;
      tile.image.rgb.resize(static_cast<std::size_t>(3 * spec.tile_size * spec.tile_size));
      for (std::int64_t y = 0; y < spec.tile_size; ++y) {
        const auto* row = src->rgb.data() + 3 * ((oy + y) * src->width + ox);
        std::copy(row, row + 3 * spec.tile_size,
                  tile.image.rgb.begin() + 3 * y * spec.tile_size);
      }
      for (const auto& obj : objects) {
        const double x1 = std::max(obj.x, static_cast<double>(ox));
        const double y1 = std::max(obj.y, static_cast<double>(oy));
        const double x2 = std::min(obj.x + obj.w, static_cast<double>(ox + spec.tile_size));
        const double y2 = std::min(obj.y + obj.h, static_cast<double>(oy + spec.tile_size));
        const double cw = x2 - x1, chh = y2 - y1;
        if (cw <= 0.0 || chh <= 0.0) continue;
        if (cw * chh < spec.min_visible_fraction * obj.w * obj.h) continue;
        AnnotationObject clipped;
        clipped.class_name = obj.class_name;
        clipped.x = x1 - static_cast<double>(ox);
        clipped.y = y1 - static_cast<double>(oy);
        clipped.w = cw;
        clipped.h = chh;
        tile.objects.push_back(clipped);
      }
      tiles.push_back(std::move(tile));
    }
  }
  return tiles;
}

void save_annotations(const std::string& json_path, const std::vector<AnnotationRecord>& records,
                      const std::vector<std::string>& class_names) {
  json root;
  root["images"] = json::array();
  root["annotations"] = json::array();
  root["categories"] = json::array();
  std::map<std::string, std::int64_t> cat_id;
  for (std::size_t i = 0; i < class_names.size(); ++i) {
    cat_id[class_names[i]] = static_cast<std::int64_t>(i) + 1;
    root["categories"].push_back({{"id", static_cast<std::int64_t>(i) + 1}, {"name", class_names[i]}});
  }
  std::int64_t ann_id = 1;
  for (const auto& rec : records) {
    root["images"].push_back({{"id", rec.image_id},
                              {"file_name", rec.file_name},
                              {"width", rec.width},
                              {"height", rec.height}});
    for (const auto& obj : rec.objects) {
      const auto it = cat_id.find(obj.class_name);
      if (it == cat_id.end()) {
        throw IoError("save_annotations: class '" + obj.class_name + "' missing from category list");
      }
      root["annotations"].push_back({{"id", ann_id++},
                                     {"image_id", rec.image_id},
                                     {"category_id", it->second},
                                     {"bbox", {obj.x, obj.y, obj.w, obj.h}}});
    }
  }
  std::ofstream out(json_path);
  if (!out) throw IoError("save_annotations: cannot open " + json_path);
  out << root.dump(1, '\t') << "\n";
}

Dataset load_annotations(const std::string& json_path) {
  std::ifstream in(json_path);
  if (!in) throw IoError("load_annotations: cannot open " + json_path);
  json root;
  try {
    in >> root;
  } catch (const json::exception& e) {
    throw IoError("load_annotations: " + json_path + ": " + e.what());
  }

  std::map<std::int64_t, std::string> cat_names;
  std::vector<std::string> names_in_order;
  for (const auto& cat : root.at("categories")) {
    const std::int64_t id = cat.at("id").get<std::int64_t>();
    const std::string name = cat.at("name").get<std::string>();
    cat_names[id] = name;
    names_in_order.push_back(name);
  }

  Dataset ds;
  ds.vocab = ClassVocabulary::from_names(names_in_order);

  std::map<std::int64_t, AnnotationRecord> by_id;
  for (const auto& img : root.at("images")) {
    AnnotationRecord rec;
    rec.image_id = img.at("id").get<std::int64_t>();
    rec.file_name = img.at("file_name").get<std::string>();
    rec.width = img.at("width").get<std::int64_t>();
    rec.height = img.at("height").get<std::int64_t>();
    by_id[rec.image_id] = rec;
  }

  for (const auto& ann : root.at("annotations")) {
    const std::int64_t image_id = ann.at("image_id").get<std::int64_t>();
    const std::int64_t cat = ann.at("category_id").get<std::int64_t>();
    const auto rec_it = by_id.find(image_id);
    if (rec_it == by_id.end()) {
      throw IoError("load_annotations: annotation " + std::to_string(ann.at("id").get<std::int64_t>()) +
                    " references unknown image " + std::to_string(image_id));
    }
    const auto cat_it = cat_names.find(cat);
    if (cat_it == cat_names.end()) {
      throw IoError("load_annotations: annotation " + std::to_string(ann.at("id").get<std::int64_t>()) +
                    " references undefined category " + std::to_string(cat));
    }
    const auto& bbox = ann.at("bbox");
    AnnotationObject obj;
    obj.class_name = cat_it->second;
    obj.x = bbox.at(0).get<double>();
    obj.y = bbox.at(1).get<double>();
    obj.w = bbox.at(2).get<double>();
    obj.h = bbox.at(3).get<double>();
    // Clip to image bounds.
    auto& rec = rec_it->second;
    const double x2 = std::min(obj.x + obj.w, static_cast<double>(rec.width));
    const double y2 = std::min(obj.y + obj.h, static_cast<double>(rec.height));
    const double x1 = std::max(obj.x, 0.0);
    const double y1 = std::max(obj.y, 0.0);
    if (x1 != obj.x || y1 != obj.y || x2 != obj.x + obj.w || y2 != obj.y + obj.h) {
      ++ds.clipped_box_count;
    }
    obj.x = x1;
    obj.y = y1;
    obj.w = x2 - x1;
    obj.h = y2 - y1;
    if (obj.w <= 0.0 || obj.h <= 0.0) {
      throw IoError("load_annotations: annotation " + std::to_string(ann.at("id").get<std::int64_t>()) +
                    " on image " + std::to_string(image_id) + " has empty box after clipping");
    }
    rec.objects.push_back(obj);
  }

  for (auto& [id, rec] : by_id) ds.records.push_back(std::move(rec));
  std::sort(ds.records.begin(), ds.records.end(),
            [](const AnnotationRecord& a, const AnnotationRecord& b) {
              return a.image_id < b.image_id;
            });
  return ds;
}

}  // namespace ovd
