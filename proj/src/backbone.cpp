#include "ovd/backbone.hpp"

#include <cmath>

#include "ovd/error.hpp"

namespace ovd {

Tensor init_linear(Rng& rng, std::int64_t fan_in, std::int64_t fan_out) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> w(static_cast<std::size_t>(fan_in * fan_out));
  for (auto& v : w) v = rng.uniform(-bound, bound);
  Tensor t = Tensor::from({fan_in, fan_out}, std::move(w));
  t.set_requires_grad(true);
  return t;
}

BackboneParams init_backbone(std::int64_t channels, Rng& rng) {
  BackboneParams p;
  p.channels = channels;
  for (std::size_t i = 0; i < kStrides.size(); ++i) {
    const std::int64_t patch = kStrides[i];
    const std::int64_t fan_in = 3 * patch * patch;
    p.stems[i].w = init_linear(rng, fan_in, channels);
    p.stems[i].b = Tensor::zeros({1, channels}).set_requires_grad(true);
    p.stems[i].ln_g = Tensor::full({1, channels}, 1.0).set_requires_grad(true);
    p.stems[i].ln_b = Tensor::zeros({1, channels}).set_requires_grad(true);
  }
  return p;
}

MultiScaleFeatures encode_image(const Tensor& image, const BackboneParams& params) {
  if (image.ndim() != 3 || image.dim(0) != 3) {
    throw ShapeError("encode_image: expected [3,H,W] image, got " + shape_str(image.shape()));
  }
  const std::int64_t h = image.dim(1), w = image.dim(2);
  if (h % 32 != 0 || w % 32 != 0) {
    throw ShapeError("encode_image: image " + std::to_string(h) + "x" + std::to_string(w) +
                     " not divisible by 32");
  }
  MultiScaleFeatures out;
  out.channels = params.channels;
  for (std::size_t i = 0; i < kStrides.size(); ++i) {
    const std::int64_t patch = kStrides[i];
    const PatchStem& stem = params.stems[i];
    Tensor x = patchify(image, patch);
    x = add_rowvec(matmul(x, stem.w), stem.b);
    x = silu(x);
    x = layer_norm_rows(x, stem.ln_g, stem.ln_b);
    FeatureLevel level;
    level.tokens = x;
    level.grid_h = h / patch;
    level.grid_w = w / patch;
    level.stride = patch;
    out.levels.push_back(std::move(level));
  }
  return out;
}

}  // namespace ovd
