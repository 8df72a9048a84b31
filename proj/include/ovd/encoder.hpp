#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "ovd/backbone.hpp"
#include "ovd/text_bank.hpp"

namespace ovd {

// Single-head cross-attention projections. For text-into-image fusion the
// query side is visual (w_q: C -> d_h) and key/value are textual
// (w_k: d -> d_h, w_v: d -> C); for image-into-text refinement the roles swap.
struct FusionParams {
  Tensor w_q;
  Tensor w_k;
  Tensor w_v;
  std::int64_t head_dim = 0;
};

// Pointwise two-layer feed-forward with residual and layer normalization.
struct MixingParams {
  Tensor w1, b1;
  Tensor w2, b2;
  Tensor ln_g, ln_b;
};

struct EncoderParams {
  FusionParams tg_fe;  // one set shared by all three scales
  FusionParams vg_tr;
  MixingParams mix;    // shared across scales
  bool enable_tg_fe = true;
  bool enable_vg_tr = true;
  bool enable_gate = true;
};

// Encoder result: enhanced multi-scale tokens, refined class embeddings, and
// the per-level foreground gate values (diagnostic).
struct EnhancedState {
  MultiScaleFeatures features;
  ClassEmbeddingBank text;
  std::vector<Tensor> gate_maps;  // per level, [HW,1]
};

FusionParams init_fusion(Rng& rng, std::int64_t query_dim, std::int64_t kv_dim,
                         std::int64_t head_dim, std::int64_t value_dim);
MixingParams init_mixing(Rng& rng, std::int64_t dim, std::int64_t hidden);
EncoderParams init_encoder(Rng& rng, std::int64_t channels, std::int64_t text_dim,
                           std::int64_t head_dim);

// Text-guided feature enhancement: visual tokens cross-attend to class
// embeddings; the injected text value is scaled by sigmoid of the per-token
// maximum attention logit over valid slots, suppressing injection into
// likely-background tokens. Returns (enhanced tokens, gate column).
std::pair<Tensor, Tensor> tg_fe(const Tensor& tokens, const ClassEmbeddingBank& text,
                                const FusionParams& params, bool gate_enabled = true);

// Visual-guided text refinement: class embeddings cross-attend to the
// concatenated enhanced visual tokens. Padding slots bypass the update.
Tensor vg_tr(const ClassEmbeddingBank& text, const Tensor& all_tokens,
             const FusionParams& params);

Tensor mixing_block(const Tensor& tokens, const MixingParams& params);

EnhancedState encoder_forward(const MultiScaleFeatures& feats, const ClassEmbeddingBank& text,
                              const EncoderParams& params);

}  // namespace ovd
