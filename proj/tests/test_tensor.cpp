#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "ckd/grad_check.hpp"
#include "ckd/ops.hpp"
#include "ckd/rng.hpp"
#include "ckd/tensor.hpp"

using namespace ckd;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                     bool requires_grad = false) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_values(shape, std::move(v), requires_grad);
}

}  // namespace

TEST_CASE("matmul by the identity returns the operand") {
  Rng rng(11);
  Tensor a = random_tensor({3, 3}, rng);
  Tensor eye = Tensor::from_values({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor out = matmul(eye, a);
  for (std::size_t i = 0; i < 9; ++i) CHECK(out.values()[i] == doctest::Approx(a.values()[i]).epsilon(1e-15));
}

TEST_CASE("softmax of a constant row is uniform") {
  Tensor out = softmax(Tensor::from_values({4}, {0, 0, 0, 0}));
  for (double v : out.values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("backward of sum(x^2) doubles the input") {
  Tensor x = Tensor::from_values({3}, {1, 2, 3}, true);
  backward(sum(mul(x, x)));
  const std::vector<double> expect = {2, 4, 6};
  for (std::size_t i = 0; i < 3; ++i) CHECK(x.grad().values()[i] == doctest::Approx(expect[i]).epsilon(1e-12));

  // same value from central differences
  const double fd = grad_check([](const Tensor& t) { return sum(mul(t, t)); },
                               Tensor::from_values({3}, {1, 2, 3}));
  CHECK(fd <= 1e-6);
}

TEST_CASE("grad_check reference cases") {
  Rng rng(5);
  Tensor w = random_tensor({4, 4}, rng);

  SUBCASE("mean(sigmoid(Wx)) is within 1e-4") {
    Tensor x0 = random_tensor({4, 2}, rng);
    CHECK(grad_check([&](const Tensor& x) { return mean(sigmoid(matmul(w, x))); }, x0) <= 1e-4);
  }
  SUBCASE("sum is exact to 1e-12") {
    // linear function: no truncation error, so a large power-of-two epsilon
    // keeps the difference quotient exact instead of amplifying cancellation
    CHECK(grad_check([](const Tensor& x) { return sum(x); }, random_tensor({7}, rng), 0.25) <= 1e-12);
  }
  SUBCASE("log_softmax coordinate") {
    Tensor pick0 = Tensor::from_values({3}, {1, 0, 0});
    CHECK(grad_check([&](const Tensor& x) { return sum(mul(log_softmax(x), pick0)); },
                     Tensor::from_values({3}, {1, 2, 3})) <= 1e-4);
  }
  SUBCASE("non-scalar f is rejected") {
    CHECK_THROWS_AS(grad_check([](const Tensor& x) { return add(x, x); }, random_tensor({3}, rng)),
                    Error);
  }
}

TEST_CASE("every core op passes the finite-difference suite") {
  for (const auto& r : run_grad_check_suite(3)) {
    INFO(r.name);
    CHECK(r.max_rel_error <= 1e-4);
  }
}

TEST_CASE("gradients accumulate when a tensor is used twice") {
  Tensor x = Tensor::from_values({2}, {1.5, -0.5}, true);
  backward(sum(add(x, x)));
  CHECK(x.grad().values()[0] == doctest::Approx(2.0));
  CHECK(x.grad().values()[1] == doctest::Approx(2.0));
}

TEST_CASE("backward through a chain of ops matches finite differences") {
  Rng rng(17);
  Tensor w1 = random_tensor({5, 4}, rng);
  Tensor w2 = random_tensor({4, 3}, rng);
  auto f = [&](const Tensor& x) {
    Tensor h = sigmoid(matmul(x, w1));
    Tensor z = relu(add_scalar(matmul(h, w2), 0.2));
    return mean(mul(z, z));
  };
  CHECK(grad_check(f, random_tensor({2, 5}, rng)) <= 1e-4);
}

TEST_CASE("shape mismatches name the op and both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({3, 3});
  try {
    add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(e.op_name == "add");
    CHECK(e.lhs_shape == Shape{2, 3});
    CHECK(e.rhs_shape == Shape{3, 3});
    CHECK(std::string(e.what()).find("add") != std::string::npos);
  }
  CHECK_THROWS_AS(matmul(a, Tensor::zeros({2, 2})), ShapeError);
  CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({3, 1, 3, 3}), Tensor(), 1),
                  ShapeError);
  CHECK_THROWS_AS(reshape(a, {7}), ShapeError);
}

TEST_CASE("forward evaluation is bit-deterministic") {
  Rng rng(23);
  Tensor x = random_tensor({2, 3, 8, 8}, rng);
  Tensor w = random_tensor({4, 3, 3, 3}, rng);
  Tensor b = random_tensor({4}, rng);
  Tensor y1 = conv2d(x, w, b, 1);
  Tensor y2 = conv2d(x, w, b, 1);
  REQUIRE(y1.numel() == y2.numel());
  CHECK(std::memcmp(y1.values().data(), y2.values().data(), y1.numel() * sizeof(double)) == 0);

  Tensor s1 = softmax(x);
  Tensor s2 = softmax(x);
  CHECK(std::memcmp(s1.values().data(), s2.values().data(), s1.numel() * sizeof(double)) == 0);
}

TEST_CASE("requires_grad propagates through ops and marks results non-leaf") {
  Tensor a = Tensor::zeros({2, 2}, true);
  Tensor b = Tensor::zeros({2, 2});
  Tensor c = add(a, b);
  CHECK(c.requires_grad());
  CHECK_THROWS_AS(c.set_requires_grad(false), Error);
  CHECK_THROWS_AS(c.values_mut(), Error);

  Tensor d = add(b, b);  // no tracked input
  CHECK_FALSE(d.requires_grad());
}

TEST_CASE("backward rejects non-scalar and constant losses") {
  Tensor x = Tensor::zeros({3}, true);
  CHECK_THROWS_AS(backward(add(x, x)), Error);
  CHECK_THROWS_AS(backward(Tensor::scalar(1.0)), Error);
}

TEST_CASE("parameter version counts in-place mutations") {
  Tensor p = Tensor::zeros({4}, true);
  CHECK(p.version() == 0);
  p.values_mut()[0] = 1.0;
  p.values_mut()[1] = 2.0;
  CHECK(p.version() == 2);
}

TEST_CASE("maxpool picks the max and avgpool averages") {
  Tensor x = Tensor::from_values({1, 1, 2, 2}, {1, 5, 3, 2});
  CHECK(maxpool2d(x, 2).values()[0] == doctest::Approx(5.0));
  CHECK(avgpool2d(x, 2).values()[0] == doctest::Approx(2.75));
  CHECK_THROWS_AS(maxpool2d(Tensor::zeros({1, 1, 3, 3}), 2), Error);
}

TEST_CASE("concat joins along the requested axis") {
  Tensor a = Tensor::from_values({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from_values({2, 1}, {9, 8});
  Tensor c = concat({a, b}, 1);
  CHECK(c.shape() == Shape{2, 3});
  CHECK(c.values() == std::vector<double>{1, 2, 9, 3, 4, 8});
  CHECK_THROWS_AS(concat({a, Tensor::zeros({3, 1})}, 1), ShapeError);
}

TEST_CASE("frobenius norm and reductions") {
  Tensor x = Tensor::from_values({2, 2}, {3, 4, 0, 0});
  CHECK(frobenius_norm(x).value() == doctest::Approx(5.0));
  CHECK(sum(x).value() == doctest::Approx(7.0));
  CHECK(mean(x).value() == doctest::Approx(1.75));
  Tensor rows = sum_axis(x, 0);
  CHECK(rows.values() == std::vector<double>{3, 4});
  Tensor cols = sum_axis(x, 1);
  CHECK(cols.values() == std::vector<double>{7, 0});
}
