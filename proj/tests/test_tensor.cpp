#include <doctest.h>

#include <cmath>

#include "ovd/error.hpp"
#include "ovd/gradcheck.hpp"
#include "ovd/rng.hpp"
#include "ovd/tensor.hpp"

using namespace ovd;

TEST_CASE("matmul known products") {
  const Tensor id = Tensor::matrix({{1, 0}, {0, 1}});
  const Tensor m = Tensor::matrix({{3, 4}, {5, 6}});
  const Tensor left = matmul(id, m);
  const Tensor right = matmul(m, id);
  for (std::int64_t i = 0; i < 2; ++i)
    for (std::int64_t j = 0; j < 2; ++j) {
      CHECK(left.at(i, j) == m.at(i, j));   // bitwise for exact-representable values
      CHECK(right.at(i, j) == m.at(i, j));
    }

  const Tensor a = Tensor::matrix({{1, 2}});
  const Tensor b = Tensor::matrix({{3}, {4}});
  CHECK(matmul(a, b).item() == 11.0);

  const Tensor z = Tensor::zeros({2, 3});
  const Tensor az = matmul(m, Tensor::zeros({2, 3}));
  for (const double v : az.values()) CHECK(v == 0.0);
  CHECK(az.shape() == Shape{2, 3});
  CHECK_THROWS_AS(matmul(a, Tensor::zeros({3, 2})), ShapeError);
  (void)z;
}

TEST_CASE("softmax rows") {
  const Tensor flat = softmax_rows(Tensor::matrix({{0, 0, 0}}));
  for (std::int64_t j = 0; j < 3; ++j) CHECK(flat.at(0, j) == doctest::Approx(1.0 / 3).epsilon(1e-12));

  SlotMask mask = {1, 1, 0};
  const Tensor masked = softmax_rows(Tensor::matrix({{0, 0, 0}}), &mask);
  CHECK(masked.at(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(masked.at(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(masked.at(0, 2) == 0.0);

  const Tensor probe = softmax_rows(Tensor::matrix({{1, 2, 3}}));
  CHECK(probe.at(0, 0) == doctest::Approx(0.09003).epsilon(1e-4));
  CHECK(probe.at(0, 1) == doctest::Approx(0.24473).epsilon(1e-4));
  CHECK(probe.at(0, 2) == doctest::Approx(0.66524).epsilon(1e-4));

  SlotMask none = {0, 0, 0};
  CHECK_THROWS_AS(softmax_rows(Tensor::matrix({{1, 2, 3}}), &none), MaskError);

  // rows sum to one over valid columns
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> data(12);
    for (auto& v : data) v = rng.uniform(-30.0, 30.0);
    SlotMask m = {1, 0, 1, 1};
    const Tensor y = softmax_rows(Tensor::from({3, 4}, data), &m);
    for (std::int64_t i = 0; i < 3; ++i) {
      double s = 0.0;
      for (std::int64_t j = 0; j < 4; ++j) s += y.at(i, j);
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(y.at(i, 1) == 0.0);
    }
  }
}

TEST_CASE("masked softmax entries receive exactly zero gradient") {
  Tensor x = Tensor::matrix({{0.5, -1.0, 2.0, 0.1}});
  x.set_requires_grad(true);
  SlotMask mask = {1, 0, 1, 1};
  {
    Tape tape;
    const Tensor y = softmax_rows(x, &mask);
    backward(sum(mul(y, Tensor::matrix({{0.3, 10.0, -0.7, 1.1}}))));
  }
  CHECK(x.grad_at(0, 1) == 0.0);
  CHECK(x.grad_at(0, 0) != 0.0);
}

TEST_CASE("sigmoid values") {
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  CHECK(sigmoid(Tensor::scalar(-50.0)).item() < 1e-20);
  CHECK(sigmoid(Tensor::scalar(1.0)).item() == doctest::Approx(0.7310586).epsilon(1e-6));
}

TEST_CASE("l2 normalize rows") {
  const Tensor y = l2_normalize_rows(Tensor::matrix({{3, 4}}));
  CHECK(y.at(0, 0) == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(y.at(0, 1) == doctest::Approx(0.8).epsilon(1e-12));

  const Tensor unit = Tensor::matrix({{1.0, 0.0, 0.0}});
  const Tensor fixed = l2_normalize_rows(unit);
  for (std::int64_t j = 0; j < 3; ++j) CHECK(fixed.at(0, j) == unit.at(0, j));

  const Tensor zero = l2_normalize_rows(Tensor::zeros({1, 4}), 1e-12);
  for (const double v : zero.values()) CHECK(v == 0.0);
}

TEST_CASE("backward basics") {
  SUBCASE("sum gives ones") {
    Tensor x = Tensor::full({2, 2}, 3.0).set_requires_grad(true);
    Tape tape;
    backward(sum(x));
    for (std::int64_t i = 0; i < 2; ++i)
      for (std::int64_t j = 0; j < 2; ++j) CHECK(x.grad_at(i, j) == 1.0);
  }
  SUBCASE("chain rule by hand") {
    Tensor w = Tensor::scalar(1.0).set_requires_grad(true);
    Tape tape;
    const Tensor loss = mul(sigmoid(Tensor::scalar(0.0)), w);
    backward(loss);
    CHECK(w.grad_at(0, 0) == 0.5);
  }
  SUBCASE("non-scalar loss rejected") {
    Tensor x = Tensor::zeros({2, 2}).set_requires_grad(true);
    Tape tape;
    CHECK_THROWS_AS(backward(add_scalar(x, 1.0)), ContractError);
  }
  SUBCASE("no active tape rejected") {
    CHECK_THROWS_AS(backward(Tensor::scalar(1.0)), ContractError);
  }
}

TEST_CASE("gradient accumulation is additive across consumers") {
  Tensor x = Tensor::matrix({{0.4, -0.3}, {0.8, 0.2}}).set_requires_grad(true);
  const Tensor w = Tensor::matrix({{1.5, 0.25}, {-2.0, 1.0}});

  std::vector<double> both, first_only, second_only;
  {
    Tape tape;
    x.zero_grad();
    backward(add(sum(mul(x, w)), sum(sigmoid(x))));
    both = x.grad_vector();
  }
  {
    Tape tape;
    x.zero_grad();
    backward(sum(mul(x, w)));
    first_only = x.grad_vector();
  }
  {
    Tape tape;
    x.zero_grad();
    backward(sum(sigmoid(x)));
    second_only = x.grad_vector();
  }
  for (std::size_t i = 0; i < both.size(); ++i) {
    CHECK(both[i] == doctest::Approx(first_only[i] + second_only[i]).epsilon(1e-15));
  }
}

TEST_CASE("matmul chain gradient matches finite differences") {
  Rng rng(42);
  std::vector<double> av(6), bv(6);
  for (auto& v : av) v = rng.uniform(-1, 1);
  for (auto& v : bv) v = rng.uniform(-1, 1);
  const double err = finite_diff_max_rel_err(
      [](const std::vector<Tensor>& l) {
        Rng r(5);
        std::vector<double> wv(4);
        for (auto& v : wv) v = r.uniform(-1, 1);
        return sum(mul(matmul(l[0], l[1]), Tensor::from({2, 2}, wv)));
      },
      {Tensor::from({2, 3}, av), Tensor::from({3, 2}, bv)});
  CHECK(err < 1e-6);
}

TEST_CASE("non-finite results are rejected") {
  CHECK_THROWS_AS(ovd::exp(Tensor::scalar(1000.0)), NumericError);
  CHECK_THROWS_AS(div(Tensor::scalar(1.0), Tensor::scalar(0.0)), NumericError);
  CHECK_THROWS_AS(ovd::log(Tensor::scalar(-1.0)), NumericError);
  CHECK_THROWS_AS(Tensor::scalar(std::nan("")), NumericError);
}

TEST_CASE("rowmax respects masks and routes gradient to the argmax") {
  SlotMask mask = {1, 0, 1};
  Tensor x = Tensor::matrix({{1.0, 99.0, 2.0}, {5.0, 99.0, 3.0}}).set_requires_grad(true);
  Tensor m;
  {
    Tape tape;
    m = rowmax(x, &mask);
    backward(sum(m));
  }
  CHECK(m.at(0, 0) == 2.0);
  CHECK(m.at(1, 0) == 5.0);
  CHECK(x.grad_at(0, 2) == 1.0);
  CHECK(x.grad_at(0, 1) == 0.0);
  CHECK(x.grad_at(1, 0) == 1.0);
}

TEST_CASE("structural op shapes and errors") {
  const Tensor a = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  CHECK(transpose(a).at(2, 1) == 6.0);
  CHECK(concat_rows({a, a}).rows() == 4);
  CHECK(slice_cols(a, 1, 2).at(0, 0) == 2.0);
  CHECK_THROWS_AS(slice_cols(a, 2, 2), ShapeError);
  CHECK(gather_rows(a, {1, 0, 1}).at(0, 0) == 4.0);
  CHECK_THROWS_AS(gather_rows(a, {2}), ShapeError);
  CHECK_THROWS_AS(scale_rows(a, Tensor::zeros({3, 1})), ShapeError);
  CHECK_THROWS_AS(add_rowvec(a, Tensor::zeros({1, 2})), ShapeError);
}

TEST_CASE("tensor invariants") {
  const Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor::zeros({0, 2}), ShapeError);
}

TEST_CASE("detach cuts gradient flow") {
  Tensor x = Tensor::scalar(2.0).set_requires_grad(true);
  Tape tape;
  const Tensor y = mul(x.detach(), Tensor::scalar(3.0));
  CHECK_FALSE(y.requires_grad());
}
