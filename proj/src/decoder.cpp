#include "ovd/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ovd/error.hpp"

namespace ovd {

namespace {

constexpr double kAnchorCells = 2.5;  // anchor side length in grid cells

double sigmoid_scalar(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

ContrastiveHead init_contrastive_head(Rng& rng, std::int64_t channels, std::int64_t text_dim,
                                      double alpha_init, double beta_init) {
  ContrastiveHead h;
  h.proj = init_linear(rng, channels, text_dim);
  h.alpha = Tensor::scalar(alpha_init).set_requires_grad(true);
  h.beta = Tensor::scalar(beta_init).set_requires_grad(true);
  return h;
}

DecoderParams init_decoder(Rng& rng, std::int64_t channels, std::int64_t text_dim,
                           std::int64_t head_dim, std::int64_t num_layers) {
  DecoderParams p;
  p.tg_qe = init_fusion(rng, channels, text_dim, head_dim, channels);
  for (std::int64_t l = 0; l < num_layers; ++l) {
    DecoderLayerParams layer;
    layer.cross = init_fusion(rng, channels, channels, head_dim, channels);
    layer.ln1_g = Tensor::full({1, channels}, 1.0).set_requires_grad(true);
    layer.ln1_b = Tensor::zeros({1, channels}).set_requires_grad(true);
    layer.ffn = init_mixing(rng, channels, 2 * channels);
    p.layers.push_back(std::move(layer));
  }
  p.sel_box_w = init_linear(rng, channels, 4);
  p.sel_box_b = Tensor::zeros({1, 4}).set_requires_grad(true);
  p.box_w = init_linear(rng, channels, 4);
  p.box_b = Tensor::zeros({1, 4}).set_requires_grad(true);
  return p;
}

Tensor contrastive_scores(const Tensor& vectors, const ClassEmbeddingBank& text,
                          const ContrastiveHead& head) {
  const Tensor projected = l2_normalize_rows(matmul(vectors, head.proj));
  const Tensor classes = l2_normalize_rows(text.embeddings);
  const Tensor cosine = matmul(projected, transpose(classes));
  const Tensor scores = scalar_affine(cosine, head.alpha, head.beta);
  return mask_cols(scores, text.valid, -1e30);
}

QuerySet select_queries(const EnhancedState& enhanced, const ContrastiveHead& head,
                        std::int64_t k, const DecoderParams& params) {
  std::vector<Tensor> parts;
  for (const auto& level : enhanced.features.levels) parts.push_back(level.tokens);
  const Tensor all_tokens = concat_rows(parts);
  const std::int64_t total = all_tokens.rows();
  if (k > total) {
    throw CapacityError("select_queries: requested " + std::to_string(k) + " queries from " +
                        std::to_string(total) + " tokens");
  }

  const Tensor scores = contrastive_scores(all_tokens, enhanced.text, head);
  const std::int64_t n_slots = scores.cols();
  std::vector<double> best(static_cast<std::size_t>(total),
                           -std::numeric_limits<double>::infinity());
  for (std::int64_t t = 0; t < total; ++t) {
    for (std::int64_t s = 0; s < n_slots; ++s) {
      if (!enhanced.text.valid[static_cast<std::size_t>(s)]) continue;
      best[static_cast<std::size_t>(t)] = std::max(best[static_cast<std::size_t>(t)], scores.at(t, s));
    }
  }
  std::vector<std::int64_t> order(static_cast<std::size_t>(total));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&best](std::int64_t a, std::int64_t b) {
    if (best[static_cast<std::size_t>(a)] != best[static_cast<std::size_t>(b)])
      return best[static_cast<std::size_t>(a)] > best[static_cast<std::size_t>(b)];
    return a < b;
  });
  order.resize(static_cast<std::size_t>(k));

  // Grid anchor per selected token: cell center, side proportional to stride.
  std::vector<double> anchors;
  anchors.reserve(static_cast<std::size_t>(k * 4));
  for (const auto flat : order) {
    std::int64_t rem = flat;
    const FeatureLevel* lvl = nullptr;
    for (const auto& level : enhanced.features.levels) {
      const std::int64_t count = level.grid_h * level.grid_w;
      if (rem < count) {
        lvl = &level;
        break;
      }
      rem -= count;
    }
    const std::int64_t gy = rem / lvl->grid_w;
    const std::int64_t gx = rem % lvl->grid_w;
    const double img_w = static_cast<double>(lvl->grid_w * lvl->stride);
    const double img_h = static_cast<double>(lvl->grid_h * lvl->stride);
    const double cx = (static_cast<double>(gx) + 0.5) * static_cast<double>(lvl->stride) / img_w;
    const double cy = (static_cast<double>(gy) + 0.5) * static_cast<double>(lvl->stride) / img_h;
    const double w = std::min(0.9, kAnchorCells * static_cast<double>(lvl->stride) / img_w);
    const double h = std::min(0.9, kAnchorCells * static_cast<double>(lvl->stride) / img_h);
    anchors.insert(anchors.end(), {cx, cy, w, h});
  }

  QuerySet qs;
  qs.content = gather_rows(all_tokens, order);
  const Tensor anchor_t = Tensor::from({k, 4}, std::move(anchors));
  const Tensor delta = add_rowvec(matmul(qs.content, params.sel_box_w), params.sel_box_b);
  qs.ref_boxes = sigmoid(add(inverse_sigmoid(anchor_t), delta));
  qs.token_indices = std::move(order);
  return qs;
}

std::pair<Tensor, Tensor> tg_qe(const Tensor& queries, const ClassEmbeddingBank& text,
                                const FusionParams& params, bool gate_enabled) {
  return tg_fe(queries, text, params, gate_enabled);
}

DecoderOutput decoder_forward(const EnhancedState& enhanced, const QuerySet& queries,
                              const ContrastiveHead& head, const DecoderParams& params) {
  if (params.layers.empty()) throw ContractError("decoder_forward: needs at least one layer");
  std::vector<Tensor> parts;
  for (const auto& level : enhanced.features.levels) parts.push_back(level.tokens);
  const Tensor tokens = concat_rows(parts);

  DecoderOutput out;
  Tensor q = queries.content;
  Tensor ref = queries.ref_boxes;
  for (const auto& layer : params.layers) {
    if (params.enable_tg_qe) {
      q = tg_qe(q, enhanced.text, params.tg_qe, params.enable_gate).first;
    }
    // Cross-attention to visual tokens.
    {
      const double scale = 1.0 / std::sqrt(static_cast<double>(layer.cross.head_dim));
      const Tensor qq = matmul(q, layer.cross.w_q);
      const Tensor kk = matmul(tokens, layer.cross.w_k);
      const Tensor vv = matmul(tokens, layer.cross.w_v);
      const Tensor attn = mul_scalar(matmul(qq, transpose(kk)), scale);
      const Tensor pooled = matmul(softmax_rows(attn), vv);
      q = layer_norm_rows(add(q, pooled), layer.ln1_g, layer.ln1_b);
    }
    q = mixing_block(q, layer.ffn);
    const Tensor delta = add_rowvec(matmul(q, params.box_w), params.box_b);
    ref = sigmoid(add(inverse_sigmoid(ref), delta));
    LayerOutput lo;
    lo.boxes = ref;
    lo.scores = contrastive_scores(q, enhanced.text, head);
    out.layers.push_back(std::move(lo));
  }
  return out;
}

DetectionSet decode_detections(const LayerOutput& out, const ClassEmbeddingBank& text) {
  DetectionSet ds;
  const std::int64_t n = out.boxes.rows();
  const std::int64_t n_slots = out.scores.cols();
  for (std::int64_t s = 0; s < n_slots; ++s) {
    if (text.valid[static_cast<std::size_t>(s)]) {
      ds.classes.push_back(text.slot_to_class[static_cast<std::size_t>(s)]);
    }
  }
  for (std::int64_t i = 0; i < n; ++i) {
    ds.boxes_cxcywh.push_back(
        {out.boxes.at(i, 0), out.boxes.at(i, 1), out.boxes.at(i, 2), out.boxes.at(i, 3)});
    std::vector<double> row;
    for (std::int64_t s = 0; s < n_slots; ++s) {
      if (!text.valid[static_cast<std::size_t>(s)]) continue;
      row.push_back(sigmoid_scalar(out.scores.at(i, s)));
    }
    ds.scores.push_back(std::move(row));
  }
  return ds;
}

}  // namespace ovd
