#pragma once

#include <cstdint>
#include <vector>

#include "ovd/encoder.hpp"

namespace ovd {

// Scaled-and-shifted cosine similarity head between projected visual vectors
// and class embeddings; alpha and beta are single learnable scalars.
struct ContrastiveHead {
  Tensor proj;   // [C, d]
  Tensor alpha;  // [1,1]
  Tensor beta;   // [1,1]
};

struct DecoderLayerParams {
  FusionParams cross;  // query -> visual tokens attention, w_v: C -> C
  Tensor ln1_g, ln1_b;
  MixingParams ffn;
};

struct DecoderParams {
  FusionParams tg_qe;  // shared across layers
  std::vector<DecoderLayerParams> layers;
  Tensor sel_box_w, sel_box_b;  // selection-time box head [C,4],[1,4]
  Tensor box_w, box_b;          // refinement box head, shared by layers
  bool enable_tg_qe = true;
  bool enable_gate = true;
};

struct QuerySet {
  Tensor content;                        // [N, C]
  Tensor ref_boxes;                      // [N, 4] normalized cxcywh
  std::vector<std::int64_t> token_indices;  // flat indices into concatenated tokens
};

struct LayerOutput {
  Tensor boxes;   // [N,4] cxcywh in (0,1)
  Tensor scores;  // [N, n_slots], padding slots at -1e30
};

struct DecoderOutput {
  std::vector<LayerOutput> layers;  // last entry is the final prediction
  const LayerOutput& final_layer() const { return layers.back(); }
};

// Final decoded predictions for one image. Padding slots are dropped, so
// score columns align with `classes` (vocabulary indices).
struct DetectionSet {
  std::vector<std::array<double, 4>> boxes_cxcywh;
  std::vector<std::vector<double>> scores;  // [N][n_classes], sigmoid probabilities
  std::vector<std::int64_t> classes;        // vocabulary index per score column
};

ContrastiveHead init_contrastive_head(Rng& rng, std::int64_t channels, std::int64_t text_dim,
                                      double alpha_init = 5.0, double beta_init = -2.0);
DecoderParams init_decoder(Rng& rng, std::int64_t channels, std::int64_t text_dim,
                           std::int64_t head_dim, std::int64_t num_layers);

// Similarity logits S = alpha * cos(proj(v), t) + beta per (row, slot);
// padding slots are filled with -1e30.
Tensor contrastive_scores(const Tensor& vectors, const ClassEmbeddingBank& text,
                          const ContrastiveHead& head);

// Top-K encoder tokens by max-over-valid-slots similarity become the initial
// object queries; reference boxes come from each token's grid anchor plus a
// learned content delta. Ties broken by lower flat token index.
QuerySet select_queries(const EnhancedState& enhanced, const ContrastiveHead& head,
                        std::int64_t k, const DecoderParams& params);

// Text-guided query enhancement: same gated cross-attention as tg_fe with
// object queries in place of visual tokens.
std::pair<Tensor, Tensor> tg_qe(const Tensor& queries, const ClassEmbeddingBank& text,
                                const FusionParams& params, bool gate_enabled = true);

// Per layer: TG-QE, cross-attention to the concatenated enhanced tokens,
// feed-forward, box refinement on inverse-sigmoid references, contrastive
// scores. Auxiliary per-layer outputs are kept for the training loss.
DecoderOutput decoder_forward(const EnhancedState& enhanced, const QuerySet& queries,
                              const ContrastiveHead& head, const DecoderParams& params);

// Sigmoid scores, padding slots dropped.
DetectionSet decode_detections(const LayerOutput& out, const ClassEmbeddingBank& text);

}  // namespace ovd
