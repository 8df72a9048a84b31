#include "ovd/gradcheck.hpp"

#include <cmath>
#include <ostream>

#include "ovd/decoder.hpp"
#include "ovd/error.hpp"
#include "ovd/losses.hpp"
#include "ovd/model.hpp"
#include "ovd/rng.hpp"

namespace ovd {

double finite_diff_max_rel_err(const ScalarFn& f, std::vector<Tensor> leaves, double eps) {
  for (auto& leaf : leaves) {
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    const Tensor loss = f(leaves);
    backward(loss);
  }
  for (const auto& leaf : leaves) analytic.push_back(leaf.grad_vector());
  for (auto& leaf : leaves) leaf.set_requires_grad(false);

  double max_rel = 0.0;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    auto& vals = leaves[l].mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      vals[i] = saved + eps;
      const double up = f(leaves).item();
      vals[i] = saved - eps;
      const double down = f(leaves).item();
      vals[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[l][i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1.0});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& v : data) v = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(data));
}

// Keeps every element at least `margin` away from the given points; finite
// differences straddle kinks otherwise.
Tensor away_from(Tensor t, std::initializer_list<double> points, double margin = 5e-3) {
  auto& vals = t.mutable_values();
  for (auto& v : vals) {
    for (const double p : points) {
      if (std::abs(v - p) < margin) v += 2.0 * margin;
    }
  }
  return t;
}

// Separates elements within each row so rowmax has no near-ties.
Tensor separate_rows(Tensor t, double margin = 5e-3) {
  const std::int64_t m = t.rows(), n = t.cols();
  auto& vals = t.mutable_values();
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      for (std::int64_t k = 0; k < j; ++k) {
        auto& a = vals[static_cast<std::size_t>(i * n + j)];
        const double b = vals[static_cast<std::size_t>(i * n + k)];
        if (std::abs(a - b) < margin) a += 3.0 * margin;
      }
    }
  }
  return t;
}

// Random constant weights turn a tensor output into a scalar probe.
Tensor probe(const Tensor& out, Rng& rng) {
  return sum(mul(out, random_tensor(rng, out.shape())));
}

SlotMask random_mask(Rng& rng, std::int64_t n) {
  SlotMask mask(static_cast<std::size_t>(n), 0);
  bool any = false;
  for (auto& m : mask) {
    m = rng.uniform() < 0.7 ? 1 : 0;
    any = any || m;
  }
  if (!any) mask[static_cast<std::size_t>(rng.uniform_int(n))] = 1;
  return mask;
}

ClassEmbeddingBank make_bank(const Tensor& embeddings, SlotMask valid) {
  ClassEmbeddingBank bank;
  bank.embeddings = embeddings;
  bank.valid = std::move(valid);
  bank.slot_to_class.resize(static_cast<std::size_t>(embeddings.rows()));
  std::int64_t next = 0;
  for (std::size_t i = 0; i < bank.slot_to_class.size(); ++i) {
    bank.slot_to_class[i] = bank.valid[i] ? next++ : -1;
  }
  return bank;
}

using InstanceFn = std::function<double(std::uint64_t seed)>;

struct SuiteCase {
  std::string name;
  int instances;
  InstanceFn run;
};

std::vector<SuiteCase> build_cases(int instances) {
  std::vector<SuiteCase> cases;
  auto emit = [&cases, instances](const std::string& name, InstanceFn fn, int count = 0) {
    cases.push_back({name, count > 0 ? count : instances, std::move(fn)});
  };

  // -- elementwise binaries --
  emit("add", [](std::uint64_t seed) {
    Rng rng(seed);
    auto a = random_tensor(rng, {3, 4});
    auto b = random_tensor(rng, {3, 4});
    return finite_diff_max_rel_err(
        [](const std::vector<Tensor>& l) {
          Rng r(99);
          return probe(add(l[0], l[1]), r);
        },
        {a, b});
  });
  emit("sub_mul", [](std::uint64_t seed) {
    Rng rng(seed);
    auto a = random_tensor(rng, {2, 5});
    auto b = random_tensor(rng, {2, 5});
    return finite_diff_max_rel_err(
        [](const std::vector<Tensor>& l) {
          Rng r(7);
          return probe(mul(sub(l[0], l[1]), l[1]), r);
        },
        {a, b});
  });
  emit("div", [](std::uint64_t seed) {
    Rng rng(seed);
    auto a = random_tensor(rng, {3, 3});
    auto b = random_tensor(rng, {3, 3}, 0.5, 2.0);
    return finite_diff_max_rel_err(
        [](const std::vector<Tensor>& l) {
          Rng r(7);
          return probe(div(l[0], l[1]), r);
        },
        {a, b});
  });
  emit("minimum_maximum", [](std::uint64_t seed) {
    Rng rng(seed);
    auto a = random_tensor(rng, {3, 3});
    auto b = random_tensor(rng, {3, 3});
    // keep the two operands separated so the winner is stable under eps
    auto& av = a.mutable_values();
    const auto bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i) {
      if (std::abs(av[i] - bv[i]) < 5e-3) av[i] += 2e-2;
    }
    return finite_diff_max_rel_err(
        [](const std::vector<Tensor>& l) {
          Rng r(7);
          return probe(add(minimum(l[0], l[1]), maximum(l[0], l[1])), r);
        },
        {a, b});
  });

  // -- elementwise unaries --
  emit("scalar_chain", [](std::uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor(rng, {2, 4});
    return finite_diff_max_rel_err(
        [](const std::vector<Tensor>& l) {
          Rng r(7);
          return probe(add_scalar(mul_scalar(neg(l[0]), 1.7), 0.3), r);
        },
        {x});
  });
  emit("exp_log", [](std::uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor(rng, {3, 3}, 0.2, 2.0);
    return finite_diff_max_rel_err(
        [](const std::vector<Tensor>& l) {
          Rng r(7);
          return probe(log(add_scalar(exp(l[0]), 1.0)), r);
        },
        {x});
  });
  emit("sqrt", [](std::uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor(rng, {2, 3}, 0.3, 3.0);
    return finite_diff_max_rel_err(
        [](const std::vector<Tensor>& l) {
          Rng r(7);
          return probe(ovd::sqrt(l[0]), r);
        },
        {x});
  });
  emit("abs", [](std::uint64_t seed) {
    Rng rng(seed);
    auto x = away_from(random_tensor(rng, {3, 4}), {0.0});
    return finite_diff_max_rel_err(
        [](const std::vector<Tensor>& l) {
          Rng r(7);
          return probe(ovd::abs(l[0]), r);
        },
        {x});
  });
  emit("pow_scalar", [](std::uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor(rng, {3, 3}, 0.1, 0.9);
    return finite_diff_max_rel_err(
        [](const std::vector<Tensor>& l) {
          Rng r(7);
          return probe(pow_scalar(l[0], 2.0), r);
        },
        {x});
  });
  emit("sigmoid_silu", [](std::uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor(rng, {3, 4}, -3.0, 3.0);
    return finite_diff_max_rel_err(
        [](const std::vector<Tensor>& l) {
          Rng r(7);
          return probe(add(sigmoid(l[0]), silu(l[0])), r);
        },
        {x});
  });
  emit("clamp", [](std::uint64_t seed) {
    Rng rng(seed);
    auto x = away_from(random_tensor(rng, {3, 4}, -2.0, 2.0), {-1.0, 1.0});
    return finite_diff_max_rel_err(
        [](const std::vector<Tensor>& l) {
          Rng r(7);
          return probe(clamp(l[0], -1.0, 1.0), r);
        },
        {x});
  });
  emit("inverse_sigmoid", [](std::uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor(rng, {2, 4}, 0.05, 0.95);
    return finite_diff_max_rel_err(
        [](const std::vector<Tensor>& l) {
          Rng r(7);
          return probe(inverse_sigmoid(l[0]), r);
        },
        {x});
  });

  // -- structural --
  emit("matmul", [](std::uint64_t seed) {
    Rng rng(seed);
    auto a = random_tensor(rng, {3, 4});
    auto b = random_tensor(rng, {4, 2});
    return finite_diff_max_rel_err(
        [](const std::vector<Tensor>& l) {
          Rng r(7);
          return probe(matmul(l[0], l[1]), r);
        },
        {a, b});
  });
  emit("matmul_chain", [](std::uint64_t seed) {
    Rng rng(seed);
    auto a = random_tensor(rng, {2, 3});
    auto b = random_tensor(rng, {3, 3});
    auto c = random_tensor(rng, {3, 2});
    return finite_diff_max_rel_err(
        [](const std::vector<Tensor>& l) {
          Rng r(7);
          return probe(matmul(matmul(l[0], l[1]), l[2]), r);
        },
        {a, b, c});
  });
  emit("transpose", [](std::uint64_t seed) {
    Rng rng(seed);
    auto a = random_tensor(rng, {3, 5});
    return finite_diff_max_rel_err(
        [](const std::vector<Tensor>& l) {
          Rng r(7);
          return probe(transpose(l[0]), r);
        },
        {a});
  });
  emit("softmax_rows", [](std::uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor(rng, {3, 5}, -2.0, 2.0);
    return finite_diff_max_rel_err(
        [](const std::vector<Tensor>& l) {
          Rng r(7);
          return probe(softmax_rows(l[0]), r);
        },
        {x});
  });
  emit("softmax_rows_masked", [](std::uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor(rng, {3, 5}, -2.0, 2.0);
    const SlotMask mask = random_mask(rng, 5);
    return finite_diff_max_rel_err(
        [mask](const std::vector<Tensor>& l) {
          Rng r(7);
          return probe(softmax_rows(l[0], &mask), r);
        },
        {x});
  });
  emit("rowmax", [](std::uint64_t seed) {
    Rng rng(seed);
    auto x = separate_rows(random_tensor(rng, {4, 4}));
    const SlotMask mask = random_mask(rng, 4);
    return finite_diff_max_rel_err(
        [mask](const std::vector<Tensor>& l) {
          Rng r(7);
          return probe(rowmax(l[0], &mask), r);
        },
        {x});
  });
  emit("l2_normalize_rows", [](std::uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor(rng, {3, 4});
    // keep rows clearly away from the eps threshold
    auto& vals = x.mutable_values();
    vals[0] += 1.0;
    return finite_diff_max_rel_err(
        [](const std::vector<Tensor>& l) {
          Rng r(7);
          return probe(l2_normalize_rows(l[0]), r);
        },
        {x});
  });
  emit("layer_norm_rows", [](std::uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor(rng, {3, 5});
    auto g = random_tensor(rng, {1, 5}, 0.5, 1.5);
    auto b = random_tensor(rng, {1, 5});
    return finite_diff_max_rel_err(
        [](const std::vector<Tensor>& l) {
          Rng r(7);
          return probe(layer_norm_rows(l[0], l[1], l[2]), r);
        },
        {x, g, b});
  });
  emit("sum_ops", [](std::uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor(rng, {3, 4});
    return finite_diff_max_rel_err(
        [](const std::vector<Tensor>& l) {
          Rng r(7);
          return add(sum(l[0]), probe(sum_rows(l[0]), r));
        },
        {x});
  });
  emit("concat_slice_gather", [](std::uint64_t seed) {
    Rng rng(seed);
    auto a = random_tensor(rng, {2, 4});
    auto b = random_tensor(rng, {3, 4});
    return finite_diff_max_rel_err(
        [](const std::vector<Tensor>& l) {
          Rng r(7);
          const Tensor cat = concat_rows({l[0], l[1]});
          const Tensor sl = slice_cols(cat, 1, 2);
          const Tensor ga = gather_rows(cat, {0, 4, 2, 0});
          return add(probe(sl, r), probe(ga, r));
        },
        {a, b});
  });
  emit("add_rowvec_scale_rows", [](std::uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor(rng, {3, 4});
    auto v = random_tensor(rng, {1, 4});
    auto s = random_tensor(rng, {3, 1});
    return finite_diff_max_rel_err(
        [](const std::vector<Tensor>& l) {
          Rng r(7);
          return probe(scale_rows(add_rowvec(l[0], l[1]), l[2]), r);
        },
        {x, v, s});
  });
  emit("add_rows_where_mask_cols", [](std::uint64_t seed) {
    Rng rng(seed);
    auto base = random_tensor(rng, {4, 3});
    auto upd = random_tensor(rng, {4, 3});
    const SlotMask rows = random_mask(rng, 4);
    const SlotMask valid = random_mask(rng, 3);
    return finite_diff_max_rel_err(
        [rows, valid](const std::vector<Tensor>& l) {
          Rng r(7);
          return probe(mask_cols(add_rows_where(l[0], l[1], rows), valid, -5.0), r);
        },
        {base, upd});
  });
  emit("scalar_affine", [](std::uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor(rng, {3, 3});
    auto alpha = random_tensor(rng, {1, 1}, 0.5, 2.0);
    auto beta = random_tensor(rng, {1, 1});
    return finite_diff_max_rel_err(
        [](const std::vector<Tensor>& l) {
          Rng r(7);
          return probe(scalar_affine(l[0], l[1], l[2]), r);
        },
        {x, alpha, beta});
  });
  emit("patchify", [](std::uint64_t seed) {
    Rng rng(seed);
    auto img = random_tensor(rng, {3, 8, 8});
    return finite_diff_max_rel_err(
        [](const std::vector<Tensor>& l) {
          Rng r(7);
          return probe(patchify(l[0], 4), r);
        },
        {img});
  });

  // -- composite forwards --
  emit("tg_fe", [](std::uint64_t seed) {
    Rng rng(seed);
    auto tokens = random_tensor(rng, {4, 5});
    auto emb = random_tensor(rng, {3, 4});
    auto wq = random_tensor(rng, {5, 3});
    auto wk = random_tensor(rng, {4, 3});
    auto wv = random_tensor(rng, {4, 5});
    SlotMask valid = random_mask(rng, 3);
    return finite_diff_max_rel_err(
        [valid](const std::vector<Tensor>& l) {
          Rng r(7);
          FusionParams p{l[2], l[3], l[4], 3};
          const auto bank = make_bank(l[1], valid);
          auto [out, gate] = tg_fe(l[0], bank, p);
          return add(probe(out, r), probe(gate, r));
        },
        {tokens, emb, wq, wk, wv});
  });
  emit("vg_tr", [](std::uint64_t seed) {
    Rng rng(seed);
    auto emb = random_tensor(rng, {3, 4});
    auto tokens = random_tensor(rng, {5, 6});
    auto wq = random_tensor(rng, {4, 3});
    auto wk = random_tensor(rng, {6, 3});
    auto wv = random_tensor(rng, {6, 4});
    SlotMask valid = random_mask(rng, 3);
    return finite_diff_max_rel_err(
        [valid](const std::vector<Tensor>& l) {
          Rng r(7);
          FusionParams p{l[2], l[3], l[4], 3};
          const auto bank = make_bank(l[0], valid);
          return probe(vg_tr(bank, l[1], p), r);
        },
        {emb, tokens, wq, wk, wv});
  });
  emit("tg_qe", [](std::uint64_t seed) {
    Rng rng(seed + 101);
    auto queries = random_tensor(rng, {3, 4});
    auto emb = random_tensor(rng, {2, 5});
    auto wq = random_tensor(rng, {4, 2});
    auto wk = random_tensor(rng, {5, 2});
    auto wv = random_tensor(rng, {5, 4});
    SlotMask valid = random_mask(rng, 2);
    return finite_diff_max_rel_err(
        [valid](const std::vector<Tensor>& l) {
          Rng r(7);
          FusionParams p{l[2], l[3], l[4], 2};
          const auto bank = make_bank(l[1], valid);
          auto [out, gate] = tg_qe(l[0], bank, p);
          return add(probe(out, r), probe(gate, r));
        },
        {queries, emb, wq, wk, wv});
  });
  emit("contrastive_head", [](std::uint64_t seed) {
    Rng rng(seed);
    auto q = random_tensor(rng, {3, 5});
    auto emb = random_tensor(rng, {4, 3});
    auto proj = random_tensor(rng, {5, 3});
    auto alpha = random_tensor(rng, {1, 1}, 1.0, 4.0);
    auto beta = random_tensor(rng, {1, 1});
    SlotMask valid = random_mask(rng, 4);
    return finite_diff_max_rel_err(
        [valid](const std::vector<Tensor>& l) {
          Rng r(7);
          ContrastiveHead h{l[2], l[3], l[4]};
          const auto bank = make_bank(l[1], valid);
          const Tensor s = contrastive_scores(l[0], bank, h);
          // probe only valid columns; masked columns are constants
          return probe(mask_cols(s, bank.valid, 0.0), r);
        },
        {q, emb, proj, alpha, beta});
  });
  emit("alignment_loss", [](std::uint64_t seed) {
    Rng rng(seed);
    auto scores = random_tensor(rng, {4, 3}, -2.0, 2.0);
    SlotMask valid = random_mask(rng, 3);
    std::vector<AlignmentTarget> positives;
    std::vector<std::int64_t> valid_slots;
    for (std::size_t j = 0; j < valid.size(); ++j)
      if (valid[j]) valid_slots.push_back(static_cast<std::int64_t>(j));
    const std::int64_t n_pos = 1 + rng.uniform_int(2);
    for (std::int64_t p = 0; p < n_pos; ++p) {
      AlignmentTarget t;
      t.query = rng.uniform_int(4);
      t.slot = valid_slots[static_cast<std::size_t>(
          rng.uniform_int(static_cast<std::int64_t>(valid_slots.size())))];
      t.iou = rng.uniform(0.1, 1.0);
      positives.push_back(t);
    }
    return finite_diff_max_rel_err(
        [valid, positives](const std::vector<Tensor>& l) {
          return alignment_loss(l[0], valid, positives, {}, 2.0);
        },
        {scores});
  });
  emit("giou_loss", [](std::uint64_t seed) {
    Rng rng(seed);
    auto raw = random_tensor(rng, {3, 4}, -1.0, 1.0);
    std::vector<double> gt;
    for (int i = 0; i < 3; ++i) {
      const double w = rng.uniform(0.2, 0.5), h = rng.uniform(0.2, 0.5);
      const double cx = rng.uniform(0.3, 0.7), cy = rng.uniform(0.3, 0.7);
      gt.insert(gt.end(), {cx, cy, w, h});
    }
    const Tensor gt_t = Tensor::from({3, 4}, std::move(gt));
    return finite_diff_max_rel_err(
        [gt_t](const std::vector<Tensor>& l) {
          Rng r(7);
          const Tensor pred = sigmoid(l[0]);
          return add(probe(giou_loss_pairs(pred, gt_t), r),
                     probe(l1_loss_pairs(pred, gt_t), r));
        },
        {raw});
  });
  emit("encode_image", [](std::uint64_t seed) {
    Rng rng(seed);
    auto img = random_tensor(rng, {3, 32, 32}, 0.0, 1.0);
    Rng init(seed + 5);
    BackboneParams params = init_backbone(4, init);
    std::vector<Tensor> leaves = {img};
    for (auto& stem : params.stems) {
      leaves.push_back(stem.w);
      leaves.push_back(stem.b);
      leaves.push_back(stem.ln_g);
      leaves.push_back(stem.ln_b);
    }
    return finite_diff_max_rel_err(
        [&params](const std::vector<Tensor>& l) {
          Rng r(7);
          const auto feats = encode_image(l[0], params);
          Tensor acc = Tensor::scalar(0.0);
          for (const auto& level : feats.levels) acc = add(acc, probe(level.tokens, r));
          return acc;
        },
        leaves, 1e-4);
  }, 25);
  emit("decoder_layer", [](std::uint64_t seed) {
    Rng rng(seed);
    const std::int64_t C = 4, d = 4;
    Rng init(seed + 9);
    DecoderParams params = init_decoder(init, C, d, 4, 1);
    auto content = random_tensor(rng, {2, C});
    auto emb = random_tensor(rng, {2, d});
    SlotMask valid(2, 1);

    EnhancedState enhanced;
    enhanced.features.channels = C;
    FeatureLevel lvl;
    lvl.tokens = random_tensor(rng, {4, C});
    lvl.grid_h = 2;
    lvl.grid_w = 2;
    lvl.stride = 8;
    enhanced.features.levels.push_back(lvl);
    enhanced.text = make_bank(emb, valid);

    Rng hinit(seed + 13);
    ContrastiveHead head = init_contrastive_head(hinit, C, d);

    std::vector<double> refs = {0.3, 0.4, 0.2, 0.25, 0.6, 0.5, 0.3, 0.2};
    const Tensor ref_t = Tensor::from({2, 4}, std::move(refs));

    std::vector<Tensor> leaves = {content, lvl.tokens, emb, params.tg_qe.w_q, params.tg_qe.w_k,
                                  params.tg_qe.w_v, params.box_w, head.proj};
    return finite_diff_max_rel_err(
        [&params, &head, &enhanced, ref_t](const std::vector<Tensor>& l) {
          Rng r(7);
          EnhancedState st = enhanced;
          st.features.levels[0].tokens = l[1];
          st.text.embeddings = l[2];
          QuerySet qs;
          qs.content = l[0];
          qs.ref_boxes = ref_t;
          const DecoderOutput out = decoder_forward(st, qs, head, params);
          return add(probe(out.final_layer().boxes, r),
                     probe(mask_cols(out.final_layer().scores, st.text.valid, 0.0), r));
        },
        leaves, 1e-4);
  }, 25);

  return cases;
}

}  // namespace

bool run_gradient_suite(std::ostream& out, int instances, double tol,
                        std::vector<GradSuiteEntry>* results) {
  const auto cases = build_cases(instances);
  bool all_pass = true;
  for (const auto& c : cases) {
    double max_err = 0.0;
    for (int i = 0; i < c.instances; ++i) {
      const auto seed = 0xC0FFEEULL + static_cast<std::uint64_t>(i) * 7919ULL;
      max_err = std::max(max_err, c.run(seed));
    }
    const bool pass = max_err < tol;
    all_pass = all_pass && pass;
    out << (pass ? "PASS" : "FAIL") << " gradcheck " << c.name << " instances=" << c.instances
        << " max_rel_err=" << max_err << "\n";
    if (results) results->push_back({c.name, c.instances, max_err, pass});
  }
  return all_pass;
}

}  // namespace ovd
