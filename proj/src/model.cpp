#include "ovd/model.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "ovd/error.hpp"
#include "ovd/png_io.hpp"

namespace ovd {

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
  Rng rng(cfg.init_seed);
  backbone_ = init_backbone(cfg.channels, rng);
  encoder_ = init_encoder(rng, cfg.channels, cfg.text_dim, cfg.head_dim);
  encoder_.enable_tg_fe = cfg.enable_tg_fe;
  encoder_.enable_vg_tr = cfg.enable_vg_tr;
  encoder_.enable_gate = cfg.enable_gate;
  decoder_ = init_decoder(rng, cfg.channels, cfg.text_dim, cfg.head_dim, cfg.layers);
  decoder_.enable_tg_qe = cfg.enable_tg_qe;
  decoder_.enable_gate = cfg.enable_gate;
  head_ = init_contrastive_head(rng, cfg.channels, cfg.text_dim, cfg.head_alpha, cfg.head_beta);
  register_params();
}

void Model::register_params() {
  params_.clear();
  for (std::size_t i = 0; i < backbone_.stems.size(); ++i) {
    const std::string p = "backbone.stem" + std::to_string(kStrides[i]);
    params_.emplace_back(p + ".w", backbone_.stems[i].w);
    params_.emplace_back(p + ".b", backbone_.stems[i].b);
    params_.emplace_back(p + ".ln_g", backbone_.stems[i].ln_g);
    params_.emplace_back(p + ".ln_b", backbone_.stems[i].ln_b);
  }
  auto add_fusion = [this](const std::string& p, const FusionParams& f) {
    params_.emplace_back(p + ".w_q", f.w_q);
    params_.emplace_back(p + ".w_k", f.w_k);
    params_.emplace_back(p + ".w_v", f.w_v);
  };
  auto add_mixing = [this](const std::string& p, const MixingParams& m) {
    params_.emplace_back(p + ".w1", m.w1);
    params_.emplace_back(p + ".b1", m.b1);
    params_.emplace_back(p + ".w2", m.w2);
    params_.emplace_back(p + ".b2", m.b2);
    params_.emplace_back(p + ".ln_g", m.ln_g);
    params_.emplace_back(p + ".ln_b", m.ln_b);
  };
  add_fusion("encoder.tg_fe", encoder_.tg_fe);
  add_fusion("encoder.vg_tr", encoder_.vg_tr);
  add_mixing("encoder.mix", encoder_.mix);
  add_fusion("decoder.tg_qe", decoder_.tg_qe);
  for (std::size_t l = 0; l < decoder_.layers.size(); ++l) {
    const std::string p = "decoder.layer" + std::to_string(l);
    add_fusion(p + ".cross", decoder_.layers[l].cross);
    params_.emplace_back(p + ".ln1_g", decoder_.layers[l].ln1_g);
    params_.emplace_back(p + ".ln1_b", decoder_.layers[l].ln1_b);
    add_mixing(p + ".ffn", decoder_.layers[l].ffn);
  }
  params_.emplace_back("decoder.sel_box_w", decoder_.sel_box_w);
  params_.emplace_back("decoder.sel_box_b", decoder_.sel_box_b);
  params_.emplace_back("decoder.box_w", decoder_.box_w);
  params_.emplace_back("decoder.box_b", decoder_.box_b);
  params_.emplace_back("head.proj", head_.proj);
  params_.emplace_back("head.alpha", head_.alpha);
  params_.emplace_back("head.beta", head_.beta);
}

Model::ForwardResult Model::forward(const Tensor& image, const ClassEmbeddingBank& bank) const {
  ForwardResult r;
  const MultiScaleFeatures feats = encode_image(image, backbone_);
  r.enc = encoder_forward(feats, bank, encoder_);
  r.queries = select_queries(r.enc, head_, cfg_.queries, decoder_);
  r.dec = decoder_forward(r.enc, r.queries, head_, decoder_);
  return r;
}

DetectionSet Model::detect(const Tensor& image, const ClassEmbeddingBank& bank) const {
  // No tape active here means no graph is recorded.
  const ForwardResult r = forward(image, bank);
  return decode_detections(r.dec.final_layer(), r.enc.text);
}

void Model::zero_grad() const {
  for (const auto& [name, t] : params_) {
    Tensor copy = t;
    copy.zero_grad();
  }
}

void Model::save_checkpoint(const std::string& path) const {
  std::ostringstream header;
  header << "ovd-checkpoint v1\n";
  header << "channels=" << cfg_.channels << "\n";
  header << "text_dim=" << cfg_.text_dim << "\n";
  header << "head_dim=" << cfg_.head_dim << "\n";
  header << "layers=" << cfg_.layers << "\n";
  header << "queries=" << cfg_.queries << "\n";
  header << "head_alpha=" << cfg_.head_alpha << "\n";
  header << "head_beta=" << cfg_.head_beta << "\n";
  header << "enable_tg_fe=" << (cfg_.enable_tg_fe ? 1 : 0) << "\n";
  header << "enable_vg_tr=" << (cfg_.enable_vg_tr ? 1 : 0) << "\n";
  header << "enable_tg_qe=" << (cfg_.enable_tg_qe ? 1 : 0) << "\n";
  header << "enable_gate=" << (cfg_.enable_gate ? 1 : 0) << "\n";
  header << "init_seed=" << cfg_.init_seed << "\n";
  std::int64_t offset = 0;
  for (const auto& [name, t] : params_) {
    header << "tensor " << name << " " << t.ndim();
    for (std::int64_t i = 0; i < t.ndim(); ++i) header << " " << t.dim(i);
    header << " " << offset << "\n";
    offset += t.numel() * static_cast<std::int64_t>(sizeof(double));
  }
  header << "data\n";

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("save_checkpoint: cannot open " + path);
  const std::string h = header.str();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& [name, t] : params_) {
    const auto v = t.values();
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  if (!out) throw IoError("save_checkpoint: short write to " + path);
}

Model Model::load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_checkpoint: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "ovd-checkpoint v1") {
    throw IoError("load_checkpoint: " + path + " is not a checkpoint file");
  }
  ModelConfig cfg;
  struct Entry {
    std::string name;
    Shape shape;
    std::int64_t offset;
  };
  std::vector<Entry> entries;
  while (std::getline(in, line)) {
    if (line == "data") break;
    std::istringstream is(line);
    std::string key;
    if (line.rfind("tensor ", 0) == 0) {
      is >> key;  // "tensor"
      Entry e;
      std::int64_t rank = 0;
      is >> e.name >> rank;
      for (std::int64_t i = 0; i < rank; ++i) {
        std::int64_t d = 0;
        is >> d;
        e.shape.push_back(d);
      }
      is >> e.offset;
      if (!is) throw IoError("load_checkpoint: malformed tensor line: " + line);
      entries.push_back(std::move(e));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError("load_checkpoint: malformed header line: " + line);
    key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "channels") cfg.channels = std::stoll(value);
    else if (key == "text_dim") cfg.text_dim = std::stoll(value);
    else if (key == "head_dim") cfg.head_dim = std::stoll(value);
    else if (key == "layers") cfg.layers = std::stoll(value);
    else if (key == "queries") cfg.queries = std::stoll(value);
    else if (key == "head_alpha") cfg.head_alpha = std::stod(value);
    else if (key == "head_beta") cfg.head_beta = std::stod(value);
    else if (key == "enable_tg_fe") cfg.enable_tg_fe = value == "1";
    else if (key == "enable_vg_tr") cfg.enable_vg_tr = value == "1";
    else if (key == "enable_tg_qe") cfg.enable_tg_qe = value == "1";
    else if (key == "enable_gate") cfg.enable_gate = value == "1";
    else if (key == "init_seed") cfg.init_seed = std::stoull(value);
    else throw IoError("load_checkpoint: unknown header key '" + key + "'");
  }

  Model model(cfg);
  const std::streampos data_start = in.tellg();
  if (entries.size() != model.params_.size()) {
    throw IoError("load_checkpoint: parameter count mismatch in " + path);
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& [name, tensor] = model.params_[i];
    const auto& e = entries[i];
    if (e.name != name || e.shape != tensor.shape()) {
      throw IoError("load_checkpoint: parameter '" + e.name + "' does not match model layout");
    }
    in.seekg(data_start + static_cast<std::streamoff>(e.offset));
    auto& dst = tensor.mutable_values();
    in.read(reinterpret_cast<char*>(dst.data()),
            static_cast<std::streamsize>(dst.size() * sizeof(double)));
    if (!in) throw IoError("load_checkpoint: truncated tensor data for '" + e.name + "'");
  }
  return model;
}

Tensor image_to_tensor(const Image& img) {
  std::vector<double> data(static_cast<std::size_t>(3 * img.width * img.height));
  const std::int64_t plane = img.width * img.height;
  for (std::int64_t y = 0; y < img.height; ++y)
    for (std::int64_t x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        data[static_cast<std::size_t>(c * plane + y * img.width + x)] =
            static_cast<double>(img.at(x, y, c)) / 255.0;
  return Tensor::from({3, img.height, img.width}, std::move(data));
}

}  // namespace ovd
