#include "ovd/encoder.hpp"

#include <cmath>

#include "ovd/error.hpp"

namespace ovd {

FusionParams init_fusion(Rng& rng, std::int64_t query_dim, std::int64_t kv_dim,
                         std::int64_t head_dim, std::int64_t value_dim) {
  FusionParams p;
  p.w_q = init_linear(rng, query_dim, head_dim);
  p.w_k = init_linear(rng, kv_dim, head_dim);
  p.w_v = init_linear(rng, kv_dim, value_dim);
  p.head_dim = head_dim;
  return p;
}

MixingParams init_mixing(Rng& rng, std::int64_t dim, std::int64_t hidden) {
  MixingParams p;
  p.w1 = init_linear(rng, dim, hidden);
  p.b1 = Tensor::zeros({1, hidden}).set_requires_grad(true);
  p.w2 = init_linear(rng, hidden, dim);
  p.b2 = Tensor::zeros({1, dim}).set_requires_grad(true);
  p.ln_g = Tensor::full({1, dim}, 1.0).set_requires_grad(true);
  p.ln_b = Tensor::zeros({1, dim}).set_requires_grad(true);
  return p;
}

EncoderParams init_encoder(Rng& rng, std::int64_t channels, std::int64_t text_dim,
                           std::int64_t head_dim) {
  EncoderParams p;
  p.tg_fe = init_fusion(rng, channels, text_dim, head_dim, channels);
  p.vg_tr = init_fusion(rng, text_dim, channels, head_dim, text_dim);
  p.mix = init_mixing(rng, channels, 2 * channels);
  return p;
}

std::pair<Tensor, Tensor> tg_fe(const Tensor& tokens, const ClassEmbeddingBank& text,
                                const FusionParams& params, bool gate_enabled) {
  if (text.valid_count() == 0) throw MaskError("tg_fe: no valid text slots");
  const double scale = 1.0 / std::sqrt(static_cast<double>(params.head_dim));
  const Tensor q = matmul(tokens, params.w_q);                  // [HW, d_h]
  const Tensor k = matmul(text.embeddings, params.w_k);         // [n, d_h]
  const Tensor v = matmul(text.embeddings, params.w_v);         // [n, C]
  const Tensor attn = mul_scalar(matmul(q, transpose(k)), scale);  // [HW, n]
  const Tensor weights = softmax_rows(attn, &text.valid);
  const Tensor injected = matmul(weights, v);                   // [HW, C]
  const Tensor gate = sigmoid(rowmax(attn, &text.valid));       // [HW, 1]
  Tensor out;
  if (gate_enabled) {
    out = add(tokens, scale_rows(injected, gate));
  } else {
    out = add(tokens, injected);
  }
  return {out, gate};
}

Tensor vg_tr(const ClassEmbeddingBank& text, const Tensor& all_tokens,
             const FusionParams& params) {
  if (all_tokens.rows() < 1) throw ShapeError("vg_tr: empty visual token set");
  const double scale = 1.0 / std::sqrt(static_cast<double>(params.head_dim));
  const Tensor q = matmul(text.embeddings, params.w_q);         // [n, d_h]
  const Tensor k = matmul(all_tokens, params.w_k);              // [M, d_h]
  const Tensor v = matmul(all_tokens, params.w_v);              // [M, d]
  const Tensor attn = mul_scalar(matmul(q, transpose(k)), scale);  // [n, M]
  const Tensor weights = softmax_rows(attn);
  const Tensor update = matmul(weights, v);                     // [n, d]
  return add_rows_where(text.embeddings, update, text.valid);
}

Tensor mixing_block(const Tensor& tokens, const MixingParams& params) {
  Tensor h = silu(add_rowvec(matmul(tokens, params.w1), params.b1));
  h = add_rowvec(matmul(h, params.w2), params.b2);
  return layer_norm_rows(add(tokens, h), params.ln_g, params.ln_b);
}

EnhancedState encoder_forward(const MultiScaleFeatures& feats, const ClassEmbeddingBank& text,
                              const EncoderParams& params) {
  EnhancedState out;
  out.features.channels = feats.channels;
  std::vector<Tensor> level_tokens;
  for (const auto& level : feats.levels) {
    Tensor x = level.tokens;
    if (params.enable_tg_fe) {
      auto [enhanced, gate] = tg_fe(x, text, params.tg_fe, params.enable_gate);
      x = enhanced;
      out.gate_maps.push_back(gate);
    } else {
      out.gate_maps.push_back(Tensor::full({x.rows(), 1}, 1.0));
    }
    x = mixing_block(x, params.mix);
    FeatureLevel l;
    l.tokens = x;
    l.grid_h = level.grid_h;
    l.grid_w = level.grid_w;
    l.stride = level.stride;
    out.features.levels.push_back(l);
    level_tokens.push_back(x);
  }
  out.text = text;
  if (params.enable_vg_tr) {
    const Tensor all_tokens = concat_rows(level_tokens);
    out.text.embeddings = vg_tr(text, all_tokens, params.vg_tr);
  }
  return out;
}

}  // namespace ovd
