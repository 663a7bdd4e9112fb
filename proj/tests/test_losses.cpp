#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ckd/losses.hpp"
#include "ckd/grad_check.hpp"
#include "ckd/ops.hpp"
#include "ckd/rng.hpp"

using namespace ckd;

namespace {

// ---- independent HSIC-based CKA oracle (plain loops, no Tensor machinery) --
// CKA(X,Y) = HSIC(K,L) / sqrt(HSIC(K,K) HSIC(L,L)) with linear kernels
// K = X X', L = Y Y' and HSIC(K,L) = tr(K H L H) / (n-1)^2.

using Mat = std::vector<std::vector<double>>;

Mat gram(const Mat& x) {
  const std::size_t n = x.size();
  Mat k(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t d = 0; d < x[0].size(); ++d) k[i][j] += x[i][d] * x[j][d];
  return k;
}

Mat center(const Mat& k) {
  const std::size_t n = k.size();
  std::vector<double> row_mean(n, 0.0), col_mean(n, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      row_mean[i] += k[i][j] / n;
      col_mean[j] += k[i][j] / n;
      total += k[i][j] / (n * n);
    }
  Mat out(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i][j] = k[i][j] - row_mean[i] - col_mean[j] + total;
  return out;
}

double hsic(const Mat& k, const Mat& l) {
  const std::size_t n = k.size();
  const Mat kc = center(k), lc = center(l);
  double tr = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) tr += kc[i][j] * lc[j][i];
  return tr / ((n - 1.0) * (n - 1.0));
}

double cka_oracle(const Mat& x, const Mat& y) {
  const Mat k = gram(x), l = gram(y);
  return hsic(k, l) / std::sqrt(hsic(k, k) * hsic(l, l));
}

Tensor to_tensor(const Mat& m) {
  std::vector<double> v;
  for (const auto& row : m)
    for (double d : row) v.push_back(d);
  return Tensor::from_values({m.size(), m[0].size()}, std::move(v));
}

Mat random_mat(std::size_t n, std::size_t p, Rng& rng) {
  Mat m(n, std::vector<double>(p));
  for (auto& row : m)
    for (double& v : row) v = rng.uniform(-1.0, 1.0);
  return m;
}

TemporalActivations acts_from(const std::vector<Mat>& feats) {
  TemporalActivations a;
  for (const Mat& f : feats) a.features.push_back(to_tensor(f));
  return a;
}

}  // namespace

TEST_CASE("linear_cka basics") {
  Rng rng(41);
  SUBCASE("self-similarity is 1") {
    Tensor x = to_tensor(random_mat(8, 5, rng));
    CHECK(linear_cka(x, x).value() == doctest::Approx(1.0).epsilon(1e-10));
  }
  SUBCASE("hand example agrees with the frozen oracle value") {
    Tensor x = Tensor::from_values({3, 2}, {1, 0, 0, 1, -1, -1});
    Tensor y = Tensor::from_values({3, 1}, {1, -1, 0});
    // oracle gives 1/sqrt(10)
    CHECK(linear_cka(x, y).value() == doctest::Approx(0.31622776601683794).epsilon(1e-12));
    CHECK(cka_oracle({{1, 0}, {0, 1}, {-1, -1}}, {{1}, {-1}, {0}}) ==
          doctest::Approx(0.31622776601683794).epsilon(1e-12));
  }
  SUBCASE("rotation invariance") {
    Mat x = random_mat(8, 2, rng);
    const double c = std::cos(0.83), s = std::sin(0.83);
    Mat xr(8, std::vector<double>(2));
    for (std::size_t i = 0; i < 8; ++i) {
      xr[i][0] = c * x[i][0] - s * x[i][1];
      xr[i][1] = s * x[i][0] + c * x[i][1];
    }
    Tensor y = to_tensor(random_mat(8, 3, rng));
    CHECK(linear_cka(to_tensor(x), y).value() ==
          doctest::Approx(linear_cka(to_tensor(xr), y).value()).epsilon(1e-10));
  }
  SUBCASE("isotropic scaling invariance") {
    Tensor x = to_tensor(random_mat(6, 4, rng));
    Tensor y = to_tensor(random_mat(6, 3, rng));
    const double base = linear_cka(x, y).value();
    for (double c : {0.001, -2.5, 700.0}) {
      CHECK(linear_cka(x, scale(y, c)).value() == doctest::Approx(base).epsilon(1e-8));
      CHECK(linear_cka(scale(x, c), y).value() == doctest::Approx(base).epsilon(1e-8));
    }
  }
  SUBCASE("bounded in [0,1] on random pairs") {
    for (int trial = 0; trial < 100; ++trial) {
      Rng r2(1000 + trial);
      Tensor x = to_tensor(random_mat(5, 3, r2));
      Tensor y = to_tensor(random_mat(5, 4, r2));
      const double v = linear_cka(x, y).value();
      CHECK(v >= 0.0);
      CHECK(v <= 1.0 + 1e-12);
    }
  }
  SUBCASE("matches the HSIC oracle on random matrices") {
    for (int trial = 0; trial < 20; ++trial) {
      Rng r2(2000 + trial);
      Mat x = random_mat(8, 5, r2), y = random_mat(8, 3, r2);
      CHECK(linear_cka(to_tensor(x), to_tensor(y)).value() ==
            doctest::Approx(cka_oracle(x, y)).epsilon(1e-10));
    }
  }
  SUBCASE("degenerate zero-variance features give 0") {
    Tensor flat = Tensor::full({6, 3}, 0.7);  // centering wipes it out
    Tensor y = to_tensor(random_mat(6, 2, rng));
    CHECK(linear_cka(flat, y).value() == 0.0);
  }
  SUBCASE("errors") {
    Tensor x = to_tensor(random_mat(4, 2, rng));
    CHECK_THROWS_AS(linear_cka(x, to_tensor(random_mat(5, 2, rng))), ShapeError);
    CHECK_THROWS_AS(linear_cka(to_tensor(random_mat(1, 2, rng)), to_tensor(random_mat(1, 2, rng))),
                    Error);
  }
}

TEST_CASE("domain_alignment_loss composition") {
  Rng rng(51);
  Mat f1 = random_mat(5, 4, rng), f2 = random_mat(5, 4, rng);
  Mat g1 = random_mat(5, 4, rng), g2 = random_mat(5, 4, rng);

  SUBCASE("coinciding features and theta -> +inf drive the loss to 0") {
    auto a = acts_from({f1, f2});
    auto b = acts_from({f1, f2});
    Tensor theta = Tensor::full({2}, 20.0);
    Tensor cls_e = Tensor::scalar(1.7);
    CHECK(domain_alignment_loss(a, b, theta, cls_e).value() == doctest::Approx(0.0).epsilon(1e-6));
  }
  SUBCASE("theta -> -inf collapses to the regularizer") {
    auto a = acts_from({f1, f2});
    auto b = acts_from({g1, g2});
    Tensor theta = Tensor::full({2}, -40.0);
    Tensor cls_e = Tensor::scalar(1.7);
    CHECK(domain_alignment_loss(a, b, theta, cls_e).value() == doctest::Approx(1.7).epsilon(1e-9));
  }
  SUBCASE("theta = 0 splits evenly, matching the CKA oracle") {
    auto a = acts_from({f1, f2});
    auto b = acts_from({g1, g2});
    Tensor theta = Tensor::zeros({2});
    const double cls_e = 0.9;
    // 0.5 * mean_t(1 - CKA_t) + 0.5 * cls_e
    const double expect =
        0.5 * 0.5 * ((1.0 - cka_oracle(f1, g1)) + (1.0 - cka_oracle(f2, g2))) + 0.5 * cls_e;
    CHECK(domain_alignment_loss(a, b, theta, Tensor::scalar(cls_e)).value() ==
          doctest::Approx(expect).epsilon(1e-10));
  }
  SUBCASE("gradient w.r.t. theta matches finite differences") {
    auto a = acts_from({f1, f2});
    auto b = acts_from({g1, g2});
    Tensor cls_e = Tensor::scalar(0.9);
    auto f = [&](const Tensor& th) { return domain_alignment_loss(a, b, th, cls_e); };
    CHECK(grad_check(f, Tensor::from_values({2}, {0.3, -0.6})) <= 1e-4);
  }
  SUBCASE("timestep mismatch is rejected") {
    auto a = acts_from({f1, f2});
    auto b = acts_from({g1});
    CHECK_THROWS_AS(domain_alignment_loss(a, b, Tensor::zeros({2}), Tensor::scalar(0.0)), Error);
  }
}

TEST_CASE("tet_loss values") {
  SUBCASE("uniform logits give ln(num_classes)") {
    std::vector<Tensor> logits = {Tensor::zeros({4, 6}), Tensor::zeros({4, 6})};
    CHECK(tet_loss(logits, {0, 5, 2, 3}).value() == doctest::Approx(std::log(6.0)).epsilon(1e-9));
  }
  SUBCASE("a saturated correct logit drives the loss to 0") {
    std::vector<double> row = {50.0, 0.0, 0.0};
    std::vector<Tensor> logits(3, Tensor::from_values({1, 3}, row));
    CHECK(tet_loss(logits, {0}).value() <= 1e-9);
  }
  SUBCASE("T=2 hand logits match scalar arithmetic") {
    Tensor l1 = Tensor::from_values({1, 3}, {1, 0, 0});
    Tensor l2 = Tensor::from_values({1, 3}, {0, 2, 1});
    const double ce1 = -std::log(std::exp(1.0) / (std::exp(1.0) + 2.0));
    const double ce2 = -std::log(1.0 / (1.0 + std::exp(2.0) + std::exp(1.0)));
    CHECK(tet_loss({l1, l2}, {0}).value() == doctest::Approx(0.5 * (ce1 + ce2)).epsilon(1e-12));
  }
  SUBCASE("label out of range is rejected") {
    CHECK_THROWS_AS(tet_loss({Tensor::zeros({1, 3})}, {3}), Error);
    CHECK_THROWS_AS(tet_loss({Tensor::zeros({1, 3})}, {-1}), Error);
  }
  SUBCASE("batch permutation invariance") {
    Rng rng(61);
    std::vector<double> v(4 * 3);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    Tensor l = Tensor::from_values({4, 3}, v);
    std::vector<double> pv = {v[6], v[7], v[8], v[0], v[1], v[2], v[9], v[10], v[11], v[3], v[4], v[5]};
    Tensor lp = Tensor::from_values({4, 3}, pv);
    CHECK(tet_loss({l}, {0, 1, 2, 1}).value() ==
          doctest::Approx(tet_loss({lp}, {2, 0, 1, 1}).value()).epsilon(1e-12));
  }
}

TEST_CASE("kd_loss values") {
  SUBCASE("identical logits give 0") {
    Tensor z = Tensor::from_values({2, 3}, {1, 2, 3, -1, 0, 1});
    CHECK(kd_loss(z, z, 2.0).value() == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("frozen hand value: KL between mirrored softmaxes is 2 tanh(1)") {
    Tensor zt = Tensor::from_values({1, 2}, {2, 0});
    Tensor zs = Tensor::from_values({1, 2}, {0, 2});
    CHECK(kd_loss(zt, zs, 1.0).value() == doctest::Approx(2.0 * std::tanh(1.0)).epsilon(1e-12));
  }
  SUBCASE("infinite temperature softens everything to uniform") {
    Tensor zt = Tensor::from_values({1, 3}, {5, -1, 0});
    Tensor zs = Tensor::from_values({1, 3}, {-2, 2, 1});
    CHECK(kd_loss(zt, zs, 1e9).value() <= 1e-12);
  }
  SUBCASE("non-negative, zero only at equality") {
    Rng rng(71);
    for (int trial = 0; trial < 25; ++trial) {
      std::vector<double> a(6), b(6);
      for (double& x : a) x = rng.uniform(-2.0, 2.0);
      for (double& x : b) x = rng.uniform(-2.0, 2.0);
      const double v = kd_loss(Tensor::from_values({2, 3}, a), Tensor::from_values({2, 3}, b), 1.5).value();
      CHECK(v >= -1e-15);
    }
    Tensor zt = Tensor::from_values({1, 2}, {1, 0});
    CHECK(kd_loss(zt, Tensor::from_values({1, 2}, {0.9, 0}), 1.0).value() > 1e-4);
  }
  SUBCASE("gradient reaches the student only") {
    Tensor zt = Tensor::from_values({1, 2}, {2, 0}, true);  // even a tracked teacher input
    Tensor zs = Tensor::from_values({1, 2}, {0, 1}, true);
    Tensor loss = kd_loss(zt, zs, 1.0);
    backward(loss);
    CHECK(zs.has_grad());
    CHECK_FALSE(zt.has_grad());
  }
  SUBCASE("invalid temperature and shapes") {
    Tensor z = Tensor::zeros({1, 2});
    CHECK_THROWS_AS(kd_loss(z, z, 0.0), Error);
    CHECK_THROWS_AS(kd_loss(z, Tensor::zeros({1, 3}), 1.0), ShapeError);
  }
}

TEST_CASE("phase_switch is an inverted stable sigmoid") {
  CHECK(phase_switch(19.5, 1.0, 19.5) == 0.5);
  CHECK(phase_switch(150.0, 100.0, 149.0) < 1e-40);
  CHECK(phase_switch(150.0, 100.0, 149.0) > 0.0);
  CHECK(phase_switch(0.0, 0.01, 150.0) == doctest::Approx(0.8175744761936437).epsilon(1e-12));
  double prev = 1.0;
  for (int i = 0; i <= 1000; ++i) {
    const double e = -200.0 + 0.6 * i;
    const double g = phase_switch(e, 0.7, 100.0);
    CHECK(g <= prev + 1e-18);
    CHECK(g > 0.0);
    CHECK(g < 1.0);
    prev = g;
  }
}

TEST_CASE("loss composition arithmetic") {
  CkdLossConfig cfg;  // alpha = beta = 1
  SUBCASE("alpha=beta=1 keeps all terms") {
    Tensor out = static_stream_loss(Tensor::scalar(1.0), Tensor::scalar(2.0), Tensor::scalar(4.0), 0.5, cfg);
    CHECK(out.value() == doctest::Approx(5.0));
  }
  SUBCASE("gamma=0 removes the distillation term") {
    Tensor out = static_stream_loss(Tensor::scalar(1.0), Tensor::scalar(2.0), Tensor::scalar(100.0), 0.0, cfg);
    CHECK(out.value() == doctest::Approx(3.0));
    Tensor no_kd = static_stream_loss(Tensor::scalar(1.0), Tensor::scalar(2.0), Tensor(), 0.7, cfg);
    CHECK(no_kd.value() == doctest::Approx(3.0));
  }
  SUBCASE("total loss adds the dynamic term") {
    CHECK(total_loss(Tensor::scalar(0.0), Tensor::scalar(0.0)).value() == 0.0);
    CHECK(total_loss(Tensor::scalar(3.5), Tensor::scalar(1.5)).value() == doctest::Approx(5.0));
  }
  SUBCASE("gradient of the sum equals the sum of per-term gradients") {
    Tensor x1 = Tensor::from_values({3}, {0.4, -0.2, 1.1}, true);
    backward(total_loss(sum(mul(x1, x1)), mean(x1)));
    Tensor combined = x1.grad();

    Tensor xa = Tensor::from_values({3}, {0.4, -0.2, 1.1}, true);
    backward(sum(mul(xa, xa)));
    Tensor xb = Tensor::from_values({3}, {0.4, -0.2, 1.1}, true);
    backward(mean(xb));
    for (std::size_t i = 0; i < 3; ++i)
      CHECK(combined.values()[i] ==
            doctest::Approx(xa.grad().values()[i] + xb.grad().values()[i]).epsilon(1e-12));

    auto f = [](const Tensor& x) { return total_loss(sum(mul(x, x)), mean(x)); };
    CHECK(grad_check(f, Tensor::from_values({3}, {0.4, -0.2, 1.1})) <= 1e-4);
  }
}

TEST_CASE("loss config validation") {
  CkdLossConfig cfg;
  cfg.theta = Tensor::zeros({4});
  CHECK_NOTHROW(cfg.validate(4));
  CHECK_THROWS_AS(cfg.validate(5), ConfigError);
  cfg.kd_temperature = 0.0;
  CHECK_THROWS_AS(cfg.validate(4), ConfigError);
}
