#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "subcon/autodiff.hpp"

using namespace subcon;

namespace {

using Builder = std::function<Var(Tape&, Var)>;

// Analytic gradient of build(x) at x0 against central differences.
double gradient_error(const Builder& build, const Tensor& x0) {
  Tape tape;
  auto x = tape.parameter(x0);
  auto loss = build(tape, x);
  tape.backward(loss);
  const auto analytic = tape.grad(x);
  const auto numeric = oracle::numeric_gradient(
      [&](const Tensor& xv) {
        Tape t;
        return build(t, t.parameter(xv)).value().item();
      },
      x0);
  return oracle::relative_error(analytic, numeric);
}

// Random projection so every output entry contributes differently.
Var project(Tape& t, Var y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return ad::weighted_sum(y, oracle::random_tensor(rng, y.rows(), y.cols()));
}

}  // namespace

TEST_CASE("forward values") {
  Tape t;
  auto x = t.constant(Tensor(1, 3, {-2.0, 0.0, 3.0}));
  auto slope = t.constant(Tensor::scalar(0.25));
  const auto& y = ad::prelu(x, slope).value();
  CHECK(y[0] == -0.5);
  CHECK(y[1] == 0.0);
  CHECK(y[2] == 3.0);

  const auto& s = ad::sigmoid(t.constant(Tensor(1, 2, {0.0, 1000.0}))).value();
  CHECK(s[0] == 0.5);
  CHECK(s[1] == 1.0);

  const auto& n = ad::l2_normalize_rows(t.constant(Tensor(2, 2, {3.0, 4.0, 0.0, -2.0}))).value();
  CHECK(n(0, 0) == doctest::Approx(0.6));
  CHECK(n(0, 1) == doctest::Approx(0.8));
  CHECK(n(1, 1) == doctest::Approx(-1.0));

  auto a = t.constant(Tensor(2, 3, {1, 2, 3, 4, 5, 6}));
  auto b = t.constant(Tensor(3, 1, {1, 0, -1}));
  const auto& m = ad::matmul(a, b).value();
  CHECK(m(0, 0) == -2.0);
  CHECK(m(1, 0) == -2.0);
}

TEST_CASE("log-sum-exp is stable") {
  const std::vector<double> big{1000.0, 1000.0};
  CHECK(log_sum_exp(big) == doctest::Approx(1000.0 + std::log(2.0)));
  const std::vector<double> small{-1000.0, -1000.0};
  CHECK(log_sum_exp(small) == doctest::Approx(-1000.0 + std::log(2.0)));

  Tape t;
  const Tensor mask(1, 3, {1.0, 0.0, 1.0});
  const auto& r = ad::masked_log_sum_exp(t.constant(Tensor(1, 3, {800.0, 5000.0, 800.0})), mask)
                      .value();
  CHECK(r.item() == doctest::Approx(800.0 + std::log(2.0)));
}

TEST_CASE("tape rules") {
  SUBCASE("non-finite forward values throw") {
    Tape t;
    auto x = t.constant(Tensor(1, 2, {std::numeric_limits<double>::max(), 1.0}));
    CHECK_THROWS_AS(ad::scale(x, 10.0), NonFiniteError);
    CHECK_THROWS_AS(ad::l2_normalize_rows(t.constant(Tensor(1, 2))), NonFiniteError);
  }
  SUBCASE("shape mismatches throw") {
    Tape t;
    auto a = t.constant(Tensor(2, 3));
    auto b = t.constant(Tensor(2, 3));
    CHECK_THROWS_AS(ad::matmul(a, b), ShapeError);
    CHECK_THROWS_AS(ad::add(a, t.constant(Tensor(3, 2))), ShapeError);
    CHECK_THROWS_AS(ad::prelu(a, b), ShapeError);
  }
  SUBCASE("backward once, scalar only") {
    Tape t;
    auto x = t.parameter(Tensor(1, 2, {1.0, 2.0}));
    CHECK_THROWS(t.backward(x));
    auto l = ad::sum(x);
    t.backward(l);
    CHECK_THROWS(t.backward(l));
    CHECK(t.grad(x)[0] == 1.0);
  }
  SUBCASE("unreachable inputs get zero gradient") {
    Tape t;
    auto x = t.parameter(Tensor(1, 2, {1.0, 2.0}));
    auto y = t.parameter(Tensor(1, 2, {3.0, 4.0}));
    t.backward(ad::sum(x));
    CHECK(t.grad(y)[0] == 0.0);
    CHECK(t.grad(y)[1] == 0.0);
  }
  SUBCASE("fan-out accumulates") {
    Tape t;
    auto x = t.parameter(Tensor::scalar(3.0));
    t.backward(ad::add(ad::scale(x, 2.0), ad::scale(x, 5.0)));
    CHECK(t.grad(x).item() == 7.0);
  }
}

TEST_CASE("gradients match finite differences") {
  std::mt19937_64 rng(2024);
  int cases = 0;
  auto check = [&](const Builder& build, const Tensor& x) {
    CHECK(gradient_error(build, x) < 1e-6);
    ++cases;
  };

  for (int r = 0; r < 10; ++r) {
    const std::uint64_t seed = rng();
    const auto w = oracle::random_tensor(rng, 4, 3);
    const auto x = oracle::random_tensor(rng, 2, 4);

    check([&](Tape& t, Var v) { return project(t, ad::matmul(v, t.constant(w)), seed); }, x);
    check([&](Tape& t, Var v) { return project(t, ad::matmul(t.constant(x), v), seed); }, w);
    check([&](Tape& t, Var v) { return project(t, ad::sigmoid(v), seed); }, x);
    check([&](Tape& t, Var v) { return project(t, ad::l2_normalize_rows(v), seed); }, x);
    check([&](Tape& t, Var v) {
      return project(t, ad::prelu(v, t.constant(Tensor::scalar(0.25))), seed);
    }, x);
    check([&](Tape& t, Var v) {
      return project(t, ad::prelu(t.constant(x), v), seed);
    }, Tensor::scalar(0.1 + 0.1 * r));
    check([&](Tape& t, Var v) { return project(t, ad::dot_products_matrix(v), seed); }, x);
    check([&](Tape& t, Var v) {
      Tensor mask(2, 4, 1.0);
      mask(0, r % 4) = 0.0;
      return ad::sum(ad::masked_log_sum_exp(v, mask));
    }, x);
    const auto m = oracle::random_tensor(rng, 4, 3);
    check([&](Tape& t, Var v) {
      return project(t, ad::row_weighted_sum(v, t.constant(m)), seed);
    }, oracle::random_tensor(rng, 1, 4));
    check([&](Tape& t, Var v) {
      return project(t, ad::add_row_broadcast(t.constant(x), v), seed);
    }, oracle::random_tensor(rng, 1, 4));
    check([&](Tape& t, Var v) {
      const std::size_t rows[] = {1, 0, 1};
      return project(t, ad::select_rows(v, rows), seed);
    }, x);
    check([&](Tape& t, Var v) {
      const Var parts[] = {v, ad::scale(v, -2.0), t.constant(x)};
      return project(t, ad::concat_rows(parts), seed);
    }, x);
    check([&](Tape& t, Var v) {
      SparseMatrix s;
      s.rows = 3;
      s.cols = 2;
      s.offsets = {0, 1, 3, 3};
      s.indices = {1, 0, 1};
      s.values = {0.5, -1.0, 2.0};
      return project(t, ad::spmm(s, v), seed);
    }, x);
    check([&](Tape& t, Var v) {
      return project(t, ad::sub(ad::add(v, t.constant(x)), ad::scale(v, 3.0)), seed);
    }, x);
  }
  CHECK(cases >= 100);
}

TEST_CASE("sparse matmul equals dense") {
  SparseMatrix s;
  s.rows = 2;
  s.cols = 3;
  s.offsets = {0, 2, 3};
  s.indices = {0, 2, 1};
  s.values = {1.0, 2.0, -1.0};
  const auto dense = s.to_dense();
  std::mt19937_64 rng(1);
  const auto x = oracle::random_tensor(rng, 3, 4);
  Tape t;
  const auto& a = ad::spmm(s, t.constant(x)).value();
  const auto& b = ad::matmul(t.constant(dense), t.constant(x)).value();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]));
}
