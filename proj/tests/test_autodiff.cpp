#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "lfx/autodiff/adam.hpp"
#include "lfx/autodiff/gradcheck.hpp"
#include "lfx/autodiff/ops.hpp"
#include "oracles.hpp"

using namespace lfx;
using namespace lfx::ad;

namespace {

using T = Tensor<double>;
using Mask = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using testing::probe;
using testing::random_param;

constexpr double kTol = 1e-4;

}  // namespace

TEST_CASE("conv2d: identity and counting examples") {
  Buffer<double> xv(2 * 4 * 4);
  for (Eigen::Index i = 0; i < xv.size(); ++i) xv[i] = double(i) * 0.5 - 3;
  auto x = T::constant({1, 2, 4, 4}, xv);
  Buffer<double> eye(4);
  eye << 1, 0, 0, 1;
  auto y = conv2d(x, T::constant({2, 2, 1, 1}, eye));
  CHECK((y.value() == x.value()).all());

  auto ones = T::constant({1, 1, 5, 5}, Buffer<double>::Ones(25));
  Conv2dOptions o;
  o.padding = {1, 1};
  auto z = conv2d(ones, T::constant({1, 1, 3, 3}, Buffer<double>::Ones(9)), o);
  CHECK(z.shape() == Shape{1, 1, 5, 5});
  CHECK(z.value()[2 * 5 + 2] == 9.0);
  CHECK(z.value()[0] == 4.0);
  CHECK(z.value()[4] == 4.0);
  CHECK(z.value()[2] == 6.0);

  Conv2dOptions s;
  s.stride = {2, 2};
  s.dilation = {1, 2};
  auto q = conv2d(T::constant({1, 1, 7, 9}, Buffer<double>::Ones(63)),
                  T::constant({1, 1, 3, 3}, Buffer<double>::Ones(9)), s);
  // (7 - 3)/2 + 1 = 3 rows, (9 - 5)/2 + 1 = 3 cols
  CHECK(q.shape() == Shape{1, 1, 3, 3});
  CHECK_THROWS_AS(conv2d(T::constant({1, 2, 3, 3}, Buffer<double>::Ones(18)),
                         T::constant({1, 1, 3, 3}, Buffer<double>::Ones(9))),
                  ShapeError);
}

TEST_CASE("conv2d gradient matches central differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    auto x = random_param({2, 3, 5, 5}, rng);
    auto w = random_param({4, 3, 3, 3}, rng);
    auto b = random_param({4}, rng);
    Conv2dOptions o;
    o.padding = {1, 1};
    auto res = grad_check([&] { return probe(conv2d(x, w, b, o), seed + 100); }, {x, w, b},
                          {1e-5, 64, 1e-3, seed});
    CHECK_MESSAGE(res.max_rel_error < kTol, res.worst);

    Conv2dOptions o2;
    o2.stride = {2, 1};
    o2.dilation = {1, 2};
    o2.padding = {0, 2};
    auto res2 = grad_check([&] { return probe(conv2d(x, w, b, o2), seed + 200); }, {x, w, b},
                           {1e-5, 64, 1e-3, seed});
    CHECK_MESSAGE(res2.max_rel_error < kTol, res2.worst);

    // kernel covering the whole input
    auto xc = random_param({5, 3, 3, 3}, rng);
    Conv2dOptions o3;
    o3.stride = {3, 3};
    auto res3 = grad_check([&] { return probe(conv2d(xc, w, b, o3), seed + 300); }, {xc, w, b},
                           {1e-5, 64, 1e-3, seed});
    CHECK_MESSAGE(res3.max_rel_error < kTol, res3.worst);
  }
}

TEST_CASE("conv2d with a kernel covering the input is a per-sample dot product") {
  std::mt19937_64 rng(21);
  auto x = random_param({4, 2, 3, 2}, rng);
  auto w = random_param({3, 2, 3, 2}, rng);
  auto y = conv2d(x, w);
  REQUIRE(y.shape() == Shape{4, 3, 1, 1});
  for (std::size_t n = 0; n < 4; ++n)
    for (std::size_t co = 0; co < 3; ++co) {
      double acc = 0;
      for (std::size_t k = 0; k < 12; ++k) acc += x.value()[Eigen::Index(n * 12 + k)] * w.value()[Eigen::Index(co * 12 + k)];
      CHECK(y.value()[Eigen::Index(n * 3 + co)] == doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("softmax_masked examples") {
  std::mt19937_64 rng(1);
  auto x = random_param({2, 3, 4}, rng);
  Mask zero = Mask::Zero(3, 4);
  auto a = softmax_masked(x, zero);
  auto b = softmax_masked(x, Mask());
  CHECK(((a.value() - b.value()).abs() < 1e-15).all());
  for (Eigen::Index r = 0; r < 6; ++r) {
    double s = 0;
    double ref_den = 0;
    for (Eigen::Index k = 0; k < 4; ++k) {
      s += a.value()[r * 4 + k];
      ref_den += std::exp(x.value()[r * 4 + k]);
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
    CHECK(std::abs(a.value()[r * 4] - std::exp(x.value()[r * 4]) / ref_den) < 1e-14);
  }

  const double inf = std::numeric_limits<double>::infinity();
  Mask diag = Mask::Constant(3, 3, -inf);
  for (int i = 0; i < 3; ++i) diag(i, i) = 0;
  auto sq = random_param({3, 3}, rng);
  auto oh = softmax_masked(sq, diag);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(oh.value()[i * 3 + j] == (i == j ? 1.0 : 0.0));

  Mask dead = Mask::Zero(3, 3);
  dead.row(1).setConstant(-inf);
  CHECK_THROWS_AS(softmax_masked(sq, dead), NumericError);
}

TEST_CASE("layer_norm normalizes each token") {
  std::mt19937_64 rng(2);
  auto x = random_param({4, 6, 8}, rng, -100.0, 100.0);
  auto g = T::constant({8}, Buffer<double>::Ones(8));
  auto b = T::constant({8}, Buffer<double>::Zero(8));
  auto y = layer_norm(x, g, b, 1e-5);
  for (Eigen::Index r = 0; r < 24; ++r) {
    const auto row = y.value().segment(r * 8, 8);
    CHECK(std::abs(row.mean()) < 1e-6);
    CHECK(std::abs((row - row.mean()).square().mean() - 1.0) < 1e-6);
  }
}

TEST_CASE("every differentiable op passes a finite-difference check over 5 seeds") {
  for (std::uint64_t seed = 0; seed < 5; ++seed)
    for (const auto& c : testing::op_cases(seed)) {
      auto res = grad_check(c.loss, c.wrt, {1e-6, 48, 1e-3, seed});
      CHECK_MESSAGE(res.max_rel_error < kTol, c.name << " seed " << seed << ": " << res.worst);
    }
}

TEST_CASE("reverse pass of a permutation is the inverse permutation, bit exact") {
  std::mt19937_64 rng(4);
  auto a = random_param({2, 3, 4, 5}, rng);
  auto p = permute(a, {3, 1, 0, 2});
  Buffer<double> seed_grad(p.value().size());
  for (Eigen::Index i = 0; i < seed_grad.size(); ++i) seed_grad[i] = double(i) + 0.25;
  backward(sum(mul(p, T::constant(p.shape(), seed_grad))));
  // grad_a at (i,j,k,l) must be the upstream value at (l,j,i,k)
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 4; ++k)
        for (std::size_t l = 0; l < 5; ++l)
          REQUIRE(a.grad()[Eigen::Index(((i * 3 + j) * 4 + k) * 5 + l)] ==
                  seed_grad[Eigen::Index(((l * 3 + j) * 2 + i) * 4 + k)]);
}

TEST_CASE("backward: scalar check and exact linear gradient") {
  std::mt19937_64 rng(6);
  auto x = random_param({4, 3}, rng);
  auto w = random_param({3, 2}, rng);
  CHECK_THROWS_AS(backward(matmul(x, w)), ShapeError);

  auto xc = T::constant({4, 3}, x.value());
  backward(sum(matmul(xc, w)));
  // d/dW sum(x W) = column sums of x broadcast over the output columns
  for (Eigen::Index k = 0; k < 3; ++k) {
    double colsum = 0;
    for (Eigen::Index r = 0; r < 4; ++r) colsum += xc.value()[r * 3 + k];
    CHECK(w.grad()[k * 2 + 0] == doctest::Approx(colsum).epsilon(1e-15));
    CHECK(w.grad()[k * 2 + 1] == doctest::Approx(colsum).epsilon(1e-15));
  }
}

TEST_CASE("non-finite values raise immediately") {
  auto a = T::constant({2}, Buffer<double>::Constant(2, 1e308));
  CHECK_THROWS_AS(scale(a, 10.0), NumericError);
}

TEST_CASE("adam step matches the hand-computed bias-corrected recurrence") {
  AdamState<double> st;
  CHECK(st.beta1 == 0.9);
  CHECK(st.beta2 == 0.999);
  st.lr = 2e-4;
  auto p = T::parameter({1}, Buffer<double>::Zero(1));
  std::vector<T> params{p};
  p.grad()[0] = 1.0;
  adam_step(params, st);
  // m = 0.1, v = 0.001; m_hat = 1, v_hat = 1 -> p = -lr / (1 + eps)
  CHECK(p.value()[0] == doctest::Approx(-2e-4 / (1.0 + 1e-8)).epsilon(1e-14));

  p.grad()[0] = -0.5;
  adam_step(params, st);
  const double m2 = 0.9 * 0.1 + 0.1 * -0.5;
  const double v2 = 0.999 * 0.001 + 0.001 * 0.25;
  const double mh = m2 / (1 - 0.81), vh = v2 / (1 - 0.998001);
  CHECK(p.value()[0] ==
        doctest::Approx(-2e-4 / (1.0 + 1e-8) - 2e-4 * mh / (std::sqrt(vh) + 1e-8)).epsilon(1e-12));
  CHECK(st.step == 2);

  // determinism
  AdamState<double> s1, s2;
  auto q1 = T::parameter({3}, Buffer<double>::Constant(3, 0.3));
  auto q2 = T::parameter({3}, Buffer<double>::Constant(3, 0.3));
  std::vector<T> v1{q1}, v2v{q2};
  for (int i = 0; i < 5; ++i) {
    q1.grad().setConstant(0.1 * i - 0.2);
    q2.grad().setConstant(0.1 * i - 0.2);
    adam_step(v1, s1);
    adam_step(v2v, s2);
  }
  CHECK((q1.value() == q2.value()).all());
}
