#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ovd/decoder.hpp"
#include "ovd/losses.hpp"
#include "ovd/png_io.hpp"

namespace ovd {

struct ModelConfig {
  std::int64_t channels = 64;   // visual width C
  std::int64_t text_dim = 64;   // class embedding width d
  std::int64_t head_dim = 64;   // attention projection width d_h
  std::int64_t layers = 3;      // decoder depth L
  std::int64_t queries = 30;    // selected query count (500 at full scale)
  double head_alpha = 5.0;
  double head_beta = -2.0;
  bool enable_tg_fe = true;
  bool enable_vg_tr = true;
  bool enable_tg_qe = true;
  bool enable_gate = true;
  std::uint64_t init_seed = 1;
};

// Full detector: patch-embedding backbone, image-text collaboration encoder,
// query selection, text-guided decoder, shared contrastive head.
class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  struct ForwardResult {
    EnhancedState enc;
    QuerySet queries;
    DecoderOutput dec;
  };

  // Differentiable forward for one [3,H,W] image tensor.
  ForwardResult forward(const Tensor& image, const ClassEmbeddingBank& bank) const;

  // Inference: forward without tape, final layer decoded.
  DetectionSet detect(const Tensor& image, const ClassEmbeddingBank& bank) const;

  const ModelConfig& config() const { return cfg_; }
  const std::vector<std::pair<std::string, Tensor>>& parameters() const { return params_; }
  ContrastiveHead& head() { return head_; }
  EncoderParams& encoder() { return encoder_; }
  DecoderParams& decoder() { return decoder_; }
  BackboneParams& backbone() { return backbone_; }

  void zero_grad() const;

  // Flat binary of named 64-bit tensors behind a text header.
  void save_checkpoint(const std::string& path) const;
  static Model load_checkpoint(const std::string& path);

 private:
  void register_params();

  ModelConfig cfg_;
  BackboneParams backbone_;
  EncoderParams encoder_;
  DecoderParams decoder_;
  ContrastiveHead head_;
  std::vector<std::pair<std::string, Tensor>> params_;
};

// Converts an interleaved RGB image to a [3,H,W] tensor in [0,1].
Tensor image_to_tensor(const Image& img);

}  // namespace ovd
