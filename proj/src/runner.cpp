#include "ovd/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "ovd/data.hpp"
#include "ovd/error.hpp"
#include "ovd/rng.hpp"

namespace ovd {

namespace fs = std::filesystem;

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string join_list(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += v[i];
  }
  return out;
}

void ensure_dir(const std::string& path) {
  std::error_code ec;
  fs::create_directories(path, ec);
  if (ec) throw IoError("cannot create directory " + path + ": " + ec.message());
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path);
  out << content;
  if (!out) throw IoError("short write to " + path);
}

Image pad_to_multiple(const Image& img, std::int64_t multiple) {
  const std::int64_t w = (img.width + multiple - 1) / multiple * multiple;
  const std::int64_t h = (img.height + multiple - 1) / multiple * multiple;
  if (w == img.width && h == img.height) return img;
  Image out;
  out.width = w;
  out.height = h;
  out.rgb.assign(static_cast<std::size_t>(3 * w * h), 0);
  for (std::int64_t y = 0; y < img.height; ++y)
    for (std::int64_t x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(x, y, c);
  return out;
}

Image hflip_image(const Image& img) {
  Image out = img;
  for (std::int64_t y = 0; y < img.height; ++y)
    for (std::int64_t x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(img.width - 1 - x, y, c) = img.at(x, y, c);
  return out;
}

struct TrainExample {
  Image image;
  std::vector<AnnotationObject> objects;
  std::vector<std::int64_t> class_ids;  // train-vocabulary indices
};

GroundTruth to_ground_truth(const TrainExample& ex, bool flipped) {
  GroundTruth gt;
  const double w = static_cast<double>(ex.image.width);
  const double h = static_cast<double>(ex.image.height);
  for (std::size_t i = 0; i < ex.objects.size(); ++i) {
    const auto& o = ex.objects[i];
    const double x = flipped ? w - o.x - o.w : o.x;
    GroundTruthObject g;
    g.box_cxcywh = {(x + o.w / 2) / w, (o.y + o.h / 2) / h, o.w / w, o.h / h};
    g.class_id = ex.class_ids[i];
    gt.objects.push_back(g);
  }
  return gt;
}

// Adam with bias correction; lr is fixed, no schedule.
class Optimizer {
 public:
  Optimizer(std::string kind, double lr, double clip_norm)
      : kind_(std::move(kind)), lr_(lr), clip_norm_(clip_norm) {}

  void step(const std::vector<std::pair<std::string, Tensor>>& params) {
    if (m_.empty()) {
      for (const auto& [name, t] : params) {
        m_.emplace_back(t.numel(), 0.0);
        v_.emplace_back(t.numel(), 0.0);
      }
    }
    ++t_;
    // Global gradient-norm clip.
    double sq = 0.0;
    for (const auto& [name, t] : params) {
      const auto g = t.grad_vector();
      for (const double x : g) sq += x * x;
    }
    const double norm = std::sqrt(sq);
    const double scale = (clip_norm_ > 0.0 && norm > clip_norm_) ? clip_norm_ / norm : 1.0;

    for (std::size_t p = 0; p < params.size(); ++p) {
      Tensor tensor = params[p].second;
      const auto g = tensor.grad_vector();
      auto& val = tensor.mutable_values();
      if (kind_ == "sgd") {
        for (std::size_t i = 0; i < val.size(); ++i) val[i] -= lr_ * scale * g[i];
        continue;
      }
      auto& m = m_[p];
      auto& v = v_[p];
      const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
      const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
      for (std::size_t i = 0; i < val.size(); ++i) {
        const double gi = scale * g[i];
        m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * gi;
        v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * gi * gi;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        val[i] -= lr_ * mhat / (std::sqrt(vhat) + kEps);
      }
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  std::string kind_;
  double lr_;
  double clip_norm_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

ClassVocabulary load_dataset_vocab(const RunConfig& cfg, const std::string& annotations_path) {
  Dataset ds = load_annotations(annotations_path);
  ClassVocabulary vocab = ds.vocab;
  const std::string split =
      !cfg.split_path.empty() ? cfg.split_path : cfg.data_dir + "/novel_classes.txt";
  if (fs::exists(split)) {
    std::ifstream in(split);
    std::vector<std::string> novel;
    std::string line;
    while (std::getline(in, line)) {
      while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.pop_back();
      if (!line.empty()) novel.push_back(line);
    }
    vocab.apply_novel_split(novel);
  }
  return vocab;
}

}  // namespace

// ---- config serialization ----

std::string RunConfig::serialize() const {
  std::ostringstream os;
  os << "batch_size=" << batch_size << "\n";
  os << "canvas=" << canvas << "\n";
  os << "channels=" << model.channels << "\n";
  os << "checkpoint=" << checkpoint << "\n";
  os << "clip_norm=" << fmt_double(clip_norm) << "\n";
  os << "clutter_level=" << fmt_double(clutter_level) << "\n";
  os << "data_dir=" << data_dir << "\n";
  os << "deterministic=" << (deterministic ? 1 : 0) << "\n";
  os << "enable_gate=" << (model.enable_gate ? 1 : 0) << "\n";
  os << "enable_tg_fe=" << (model.enable_tg_fe ? 1 : 0) << "\n";
  os << "enable_tg_qe=" << (model.enable_tg_qe ? 1 : 0) << "\n";
  os << "enable_vg_tr=" << (model.enable_vg_tr ? 1 : 0) << "\n";
  os << "eval_scenes=" << eval_scenes << "\n";
  os << "head_alpha=" << fmt_double(model.head_alpha) << "\n";
  os << "head_beta=" << fmt_double(model.head_beta) << "\n";
  os << "head_dim=" << model.head_dim << "\n";
  os << "hflip=" << (hflip ? 1 : 0) << "\n";
  os << "infer_floor=" << fmt_double(infer_floor) << "\n";
  os << "init_seed=" << model.init_seed << "\n";
  os << "layers=" << model.layers << "\n";
  os << "learning_rate=" << fmt_double(learning_rate) << "\n";
  os << "log_every=" << log_every << "\n";
  os << "loss_lambda_con=" << fmt_double(loss_weights.lambda_con) << "\n";
  os << "loss_mu_giou=" << fmt_double(loss_weights.mu_giou) << "\n";
  os << "loss_nu_l1=" << fmt_double(loss_weights.nu_l1) << "\n";
  os << "match_cls=" << fmt_double(match_weights.cls) << "\n";
  os << "match_giou=" << fmt_double(match_weights.giou) << "\n";
  os << "match_l1=" << fmt_double(match_weights.l1) << "\n";
  os << "max_objects=" << max_objects << "\n";
  os << "max_size_px=" << max_size_px << "\n";
  os << "min_objects=" << min_objects << "\n";
  os << "min_size_px=" << min_size_px << "\n";
  os << "min_visible_fraction=" << fmt_double(min_visible_fraction) << "\n";
  os << "novel_classes=" << join_list(novel_classes) << "\n";
  os << "optimizer=" << optimizer << "\n";
  os << "protocol=" << protocol << "\n";
  os << "queries=" << model.queries << "\n";
  os << "restrict_classes=" << restrict_classes << "\n";
  os << "scenes=" << scenes << "\n";
  os << "score_floor=" << fmt_double(score_floor) << "\n";
  os << "seed=" << seed << "\n";
  os << "steps=" << steps << "\n";
  os << "text_dim=" << model.text_dim << "\n";
  os << "tile_size=" << tile_size << "\n";
  os << "tile_stride=" << tile_stride << "\n";
  os << "train_class_slots=" << train_class_slots << "\n";
  os << "varifocal_alpha=" << fmt_double(varifocal.alpha) << "\n";
  os << "varifocal_gamma=" << fmt_double(varifocal.gamma) << "\n";
  os << "vocab_path=" << vocab_path << "\n";
  return os.str();
}

std::uint64_t RunConfig::hash() const { return fnv1a64(serialize()); }

void write_manifest(const std::string& path, const RunConfig& cfg,
                    const std::vector<std::pair<std::string, std::string>>& extra,
                    bool complete) {
  std::ostringstream os;
  os << "status=" << (complete ? "complete" : "incomplete") << "\n";
  os << "version=" << kVersion << "\n";
  os << "config_hash=" << cfg.hash() << "\n";
  for (const auto& [k, v] : extra) os << k << "=" << v << "\n";
  os << cfg.serialize();
  write_file(path, os.str());
}

// ---- generate ----

void run_generate(const RunConfig& cfg) {
  if (cfg.out_dir.empty()) throw ContractError("generate: --out directory required");
  ensure_dir(cfg.out_dir);
  write_manifest(cfg.out_dir + "/dataset_manifest.txt", cfg, {}, false);

  SceneSpec spec;
  spec.canvas = cfg.canvas;
  spec.min_objects = cfg.min_objects;
  spec.max_objects = cfg.max_objects;
  spec.min_size_px = cfg.min_size_px;
  spec.max_size_px = cfg.max_size_px;
  spec.clutter_level = cfg.clutter_level;

  const auto all_classes = spec.all_class_names();
  std::set<std::string> novel(cfg.novel_classes.begin(), cfg.novel_classes.end());
  for (const auto& n : novel) {
    if (std::find(all_classes.begin(), all_classes.end(), n) == all_classes.end()) {
      throw ContractError("generate: novel class '" + n + "' is not a color-shape combination");
    }
  }
  std::vector<std::string> base_classes;
  for (const auto& c : all_classes)
    if (!novel.count(c)) base_classes.push_back(c);
  if (base_classes.empty()) throw ContractError("generate: every class marked novel");

  const auto emit_partition = [&](const std::string& name, std::int64_t count,
                                  const std::vector<std::string>& allowed, std::uint64_t seed) {
    const std::string dir = cfg.out_dir + "/" + name;
    ensure_dir(dir + "/images");
    SceneSpec part = spec;
    part.allowed_classes = allowed;
    part.seed = seed;
    std::vector<AnnotationRecord> records;
    for (std::int64_t i = 0; i < count; ++i) {
      GeneratedScene scene = generate_scene(part, i);
      char buf[32];
      std::snprintf(buf, sizeof(buf), "images/%06lld.png", static_cast<long long>(i));
      scene.record.file_name = buf;
      write_png(dir + "/" + scene.record.file_name, scene.image);
      records.push_back(std::move(scene.record));
    }
    save_annotations(dir + "/annotations.json", records, all_classes);
    return records.size();
  };

  const auto n_train = emit_partition("train", cfg.scenes, base_classes, cfg.seed);
  const auto n_eval = emit_partition("eval", cfg.eval_scenes, {}, cfg.seed ^ 0x65766l);

  std::ostringstream split;
  for (const auto& n : cfg.novel_classes) split << n << "\n";
  write_file(cfg.out_dir + "/novel_classes.txt", split.str());

  write_manifest(cfg.out_dir + "/dataset_manifest.txt", cfg,
                 {{"train_images", std::to_string(n_train)},
                  {"eval_images", std::to_string(n_eval)},
                  {"classes", std::to_string(all_classes.size())},
                  {"novel", std::to_string(cfg.novel_classes.size())}},
                 true);
}

// ---- tile ----

void run_tile(const RunConfig& cfg) {
  if (cfg.data_dir.empty() || cfg.out_dir.empty()) {
    throw ContractError("tile: --data and --out required");
  }
  ensure_dir(cfg.out_dir + "/images");
  write_manifest(cfg.out_dir + "/dataset_manifest.txt", cfg, {}, false);
  Dataset ds = load_annotations(cfg.data_dir + "/annotations.json");
  TileSpec spec;
  spec.tile_size = cfg.tile_size;
  spec.stride = cfg.tile_stride;
  spec.min_visible_fraction = cfg.min_visible_fraction;

  std::vector<AnnotationRecord> out_records;
  std::int64_t next_id = 0;
  for (const auto& rec : ds.records) {
    const Image img = read_png(cfg.data_dir + "/" + rec.file_name);
    const auto tiles = tile_image(img, rec.objects, spec);
    for (const auto& tile : tiles) {
      AnnotationRecord tr;
      tr.image_id = next_id++;
      char buf[48];
      std::snprintf(buf, sizeof(buf), "images/%06lld.png", static_cast<long long>(tr.image_id));
      tr.file_name = buf;
      tr.width = tile.image.width;
      tr.height = tile.image.height;
      tr.objects = tile.objects;
      write_png(cfg.out_dir + "/" + tr.file_name, tile.image);
      out_records.push_back(std::move(tr));
    }
  }
  save_annotations(cfg.out_dir + "/annotations.json", out_records, ds.vocab.names);
  write_manifest(cfg.out_dir + "/dataset_manifest.txt", cfg,
                 {{"source_images", std::to_string(ds.records.size())},
                  {"tiles", std::to_string(out_records.size())}},
                 true);
}

// ---- train ----

TrainResult run_train(const RunConfig& cfg) {
  if (cfg.data_dir.empty() || cfg.out_dir.empty()) {
    throw ContractError("train: --data and --out required");
  }
  ensure_dir(cfg.out_dir);
  const std::string manifest_path = cfg.out_dir + "/run_manifest.txt";
  write_manifest(manifest_path, cfg, {}, false);

  const std::string train_dir = cfg.data_dir + "/train";
  const ClassVocabulary full_vocab = load_dataset_vocab(cfg, train_dir + "/annotations.json");
  Dataset ds = load_annotations(train_dir + "/annotations.json");

  // Training vocabulary: base classes only; novel classes never participate.
  std::vector<std::string> base_names;
  for (std::size_t i = 0; i < full_vocab.names.size(); ++i)
    if (!full_vocab.is_novel[i]) base_names.push_back(full_vocab.names[i]);
  const ClassVocabulary train_vocab = ClassVocabulary::from_names(base_names);

  std::vector<TrainExample> examples;
  for (const auto& rec : ds.records) {
    TrainExample ex;
    ex.image = read_png(train_dir + "/" + rec.file_name);
    if (ex.image.width != rec.width || ex.image.height != rec.height) {
      throw IoError("train: image size mismatch for " + rec.file_name);
    }
    for (const auto& obj : rec.objects) {
      const std::int64_t id = train_vocab.index_of(obj.class_name);
      if (id < 0) {
        throw ContractError("train: class '" + obj.class_name +
                            "' in training annotations is not a base class");
      }
      ex.objects.push_back(obj);
      ex.class_ids.push_back(id);
    }
    examples.push_back(std::move(ex));
  }
  if (examples.empty()) throw ContractError("train: empty training partition");

  Model model(cfg.model);
  const ClassEmbeddingBank full_bank = embed_class_names(train_vocab, cfg.model.text_dim);
  Optimizer opt(cfg.optimizer, cfg.learning_rate, cfg.clip_norm);
  Rng rng(cfg.seed);

  std::ostringstream curve;
  curve << "step,l_con,l_giou,l_l1,total\n";
  double final_loss = 0.0;

  for (std::int64_t step = 1; step <= cfg.steps; ++step) {
    // Assemble the batch and its ground-truth count first.
    struct Item {
      std::size_t index;
      bool flip;
      std::uint64_t sample_seed;
    };
    std::vector<Item> batch;
    double batch_gt = 0.0;
    for (std::int64_t b = 0; b < cfg.batch_size; ++b) {
      Item it;
      it.index = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(examples.size())));
      it.flip = cfg.hflip && rng.uniform() < 0.5;
      it.sample_seed = rng.next_u64();
      batch.push_back(it);
      batch_gt += static_cast<double>(examples[it.index].objects.size());
    }

    LossBreakdown parts;
    try {
      Tape tape;
      Tensor total = Tensor::scalar(0.0);
      for (const auto& it : batch) {
        const TrainExample& ex = examples[it.index];
        SamplingPolicy policy;
        policy.n_slots = cfg.train_class_slots;
        policy.seed = it.sample_seed;
        std::set<std::int64_t> pos_set(ex.class_ids.begin(), ex.class_ids.end());
        const std::vector<std::int64_t> positives(pos_set.begin(), pos_set.end());
        const ClassEmbeddingBank bank =
            sample_training_classes(train_vocab, full_bank, positives, policy);
        const Image img = it.flip ? hflip_image(ex.image) : ex.image;
        const GroundTruth gt = to_ground_truth(ex, it.flip);
        const auto fwd = model.forward(image_to_tensor(img), bank);
        auto loss = detection_loss(fwd.dec, gt, bank, batch_gt, cfg.loss_weights,
                                   cfg.varifocal, cfg.match_weights);
        total = add(total, loss.total);
        parts.l_con += loss.parts.l_con;
        parts.l_giou += loss.parts.l_giou;
        parts.l_l1 += loss.parts.l_l1;
        parts.total += loss.parts.total;
      }
      model.zero_grad();
      backward(total);
      final_loss = total.item();
    } catch (const NumericError& e) {
      std::ostringstream msg;
      msg << "training aborted at step " << step << ": " << e.what() << " (l_con=" << parts.l_con
          << " l_giou=" << parts.l_giou << " l_l1=" << parts.l_l1 << ")";
      throw Error(msg.str());
    }
    opt.step(model.parameters());

    curve << step << "," << fmt_double(parts.l_con) << "," << fmt_double(parts.l_giou) << ","
          << fmt_double(parts.l_l1) << "," << fmt_double(parts.total) << "\n";
    if (cfg.log_every > 0 && (step % cfg.log_every == 0 || step == 1)) {
      std::cout << "step " << step << "/" << cfg.steps << " loss " << parts.total << " (con "
                << parts.l_con << ", giou " << parts.l_giou << ", l1 " << parts.l_l1 << ")\n";
    }
  }

  TrainResult res;
  res.checkpoint_path = cfg.out_dir + "/model.ckpt";
  res.final_loss = final_loss;
  res.steps = cfg.steps;
  model.save_checkpoint(res.checkpoint_path);
  write_file(cfg.out_dir + "/loss_curve.csv", curve.str());
  write_manifest(manifest_path, cfg,
                 {{"checkpoint", "model.ckpt"},
                  {"loss_curve", "loss_curve.csv"},
                  {"steps_completed", std::to_string(cfg.steps)},
                  {"final_loss", fmt_double(final_loss)}},
                 true);
  return res;
}

// ---- eval ----

EvalReport run_eval(const RunConfig& cfg) {
  if (cfg.checkpoint.empty() || cfg.data_dir.empty() || cfg.out_dir.empty()) {
    throw ContractError("eval: --checkpoint, --data and --out required");
  }
  ensure_dir(cfg.out_dir);
  const std::string manifest_path = cfg.out_dir + "/run_manifest.txt";
  write_manifest(manifest_path, cfg, {}, false);

  Model model = Model::load_checkpoint(cfg.checkpoint);
  const std::string eval_dir = cfg.data_dir + "/eval";
  const ClassVocabulary vocab = load_dataset_vocab(cfg, eval_dir + "/annotations.json");
  Dataset ds = load_annotations(eval_dir + "/annotations.json");

  Protocol protocol;
  if (cfg.protocol == "closed") protocol = Protocol::Closed;
  else if (cfg.protocol == "zsd") protocol = Protocol::ZSD;
  else if (cfg.protocol == "gzsd") protocol = Protocol::GZSD;
  else throw ContractError("eval: unknown protocol '" + cfg.protocol + "'");

  // Inference vocabulary under the protocol.
  std::vector<std::int64_t> infer_ids;
  if (protocol == Protocol::ZSD) {
    infer_ids = vocab.novel_indices();
    if (infer_ids.empty()) throw ProtocolError("eval: ZSD with no novel classes");
  } else if (cfg.restrict_classes == "base") {
    infer_ids = vocab.base_indices();
  } else if (cfg.restrict_classes == "novel") {
    infer_ids = vocab.novel_indices();
  } else {
    infer_ids.resize(static_cast<std::size_t>(vocab.size()));
    for (std::size_t i = 0; i < infer_ids.size(); ++i) infer_ids[i] = static_cast<std::int64_t>(i);
  }
  const std::set<std::int64_t> infer_set(infer_ids.begin(), infer_ids.end());

  const ClassEmbeddingBank bank =
      embed_class_names(vocab, model.config().text_dim).subset(infer_ids);

  std::vector<EvalDetection> detections;
  std::vector<EvalGtObject> gt;
  for (const auto& rec : ds.records) {
    const Image raw = read_png(eval_dir + "/" + rec.file_name);
    const Image padded = pad_to_multiple(raw, 32);
    const DetectionSet dets = model.detect(image_to_tensor(padded), bank);
    const double pw = static_cast<double>(padded.width);
    const double ph = static_cast<double>(padded.height);
    for (std::size_t q = 0; q < dets.boxes_cxcywh.size(); ++q) {
      for (std::size_t c = 0; c < dets.classes.size(); ++c) {
        const double score = dets.scores[q][c];
        if (score < cfg.score_floor) continue;
        const auto& b = dets.boxes_cxcywh[q];
        Box xyxy = cxcywh_to_xyxy({b[0] * pw, b[1] * ph, b[2] * pw, b[3] * ph});
        xyxy[0] = std::clamp(xyxy[0], 0.0, static_cast<double>(rec.width));
        xyxy[1] = std::clamp(xyxy[1], 0.0, static_cast<double>(rec.height));
        xyxy[2] = std::clamp(xyxy[2], 0.0, static_cast<double>(rec.width));
        xyxy[3] = std::clamp(xyxy[3], 0.0, static_cast<double>(rec.height));
        if (xyxy[2] <= xyxy[0] || xyxy[3] <= xyxy[1]) continue;
        EvalDetection d;
        d.image_id = rec.image_id;
        d.class_id = dets.classes[c];
        d.box_xyxy = xyxy;
        d.score = score;
        detections.push_back(d);
      }
    }
    for (const auto& obj : rec.objects) {
      const std::int64_t cid = vocab.index_of(obj.class_name);
      if (cid < 0) throw ContractError("eval: unknown class '" + obj.class_name + "' in annotations");
      if (protocol != Protocol::ZSD && cfg.restrict_classes != "none" && !infer_set.count(cid)) {
        continue;  // restricted closed-set evaluation ignores other-split objects
      }
      EvalGtObject g;
      g.image_id = rec.image_id;
      g.class_id = cid;
      g.box_xyxy = xywh_to_xyxy({obj.x, obj.y, obj.w, obj.h});
      gt.push_back(g);
    }
  }

  EvalConfig ecfg;
  ecfg.protocol = protocol;
  ecfg.score_floor = cfg.score_floor;
  const EvalReport report = evaluate(detections, gt, vocab, ecfg);

  write_file(cfg.out_dir + "/report.txt", report.to_text(vocab));
  write_file(cfg.out_dir + "/report.json", report.to_json(vocab));
  write_file(cfg.out_dir + "/per_class.csv", report.to_csv(vocab));
  write_manifest(manifest_path, cfg,
                 {{"report", "report.txt"},
                  {"report_json", "report.json"},
                  {"per_class", "per_class.csv"},
                  {"images", std::to_string(ds.records.size())},
                  {"detections", std::to_string(detections.size())}},
                 true);
  return report;
}

// ---- infer ----

std::string run_infer(const RunConfig& cfg) {
  if (cfg.checkpoint.empty() || cfg.image_path.empty() || cfg.vocab_path.empty()) {
    throw ContractError("infer: --checkpoint, --image and --vocab required");
  }
  Model model = Model::load_checkpoint(cfg.checkpoint);
  const ClassVocabulary vocab = load_vocabulary_file(cfg.vocab_path);
  const ClassEmbeddingBank bank = embed_class_names(vocab, model.config().text_dim);
  const Image raw = read_png(cfg.image_path);
  const Image padded = pad_to_multiple(raw, 32);
  const DetectionSet dets = model.detect(image_to_tensor(padded), bank);

  struct Line {
    double score;
    std::size_t order;
    std::string text;
  };
  std::vector<Line> lines;
  const double pw = static_cast<double>(padded.width);
  const double ph = static_cast<double>(padded.height);
  for (std::size_t q = 0; q < dets.boxes_cxcywh.size(); ++q) {
    for (std::size_t c = 0; c < dets.classes.size(); ++c) {
      const double score = dets.scores[q][c];
      if (score < cfg.infer_floor) continue;
      const auto& b = dets.boxes_cxcywh[q];
      const Box xyxy = cxcywh_to_xyxy({b[0] * pw, b[1] * ph, b[2] * pw, b[3] * ph});
      char buf[160];
      std::snprintf(buf, sizeof(buf), "%s %.4f [%.1f, %.1f, %.1f, %.1f]",
                    vocab.names[static_cast<std::size_t>(dets.classes[c])].c_str(), score,
                    xyxy[0], xyxy[1], xyxy[2], xyxy[3]);
      lines.push_back({score, lines.size(), buf});
    }
  }
  std::stable_sort(lines.begin(), lines.end(), [](const Line& a, const Line& b) {
    return a.score > b.score;
  });
  std::ostringstream os;
  for (const auto& l : lines) os << l.text << "\n";
  if (lines.empty()) os << "(no detections above " << cfg.infer_floor << ")\n";
  return os.str();
}

}  // namespace ovd
