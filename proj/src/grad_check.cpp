#include "ckd/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "ckd/ops.hpp"
#include "ckd/rng.hpp"
#include "ckd/spiking.hpp"

namespace ckd {

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  Tensor xa = Tensor::from_values(x.shape(), x.values(), true);
  Tensor loss = f(xa);
  if (loss.numel() != 1)
    throw Error("grad_check: f must be scalar-valued, got shape " + shape_str(loss.shape()));
  std::vector<double> analytic(x.numel(), 0.0);
  if (loss.requires_grad()) {
    backward(loss);
    if (xa.has_grad()) analytic = xa.grad().values();
  }

  double max_err = 0.0;
  std::vector<double> vals = x.values();
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const double keep = vals[i];
    vals[i] = keep + eps;
    const double fp = f(Tensor::from_values(x.shape(), vals)).value();
    vals[i] = keep - eps;
    const double fm = f(Tensor::from_values(x.shape(), vals)).value();
    vals[i] = keep;
    const double numeric = (fp - fm) / (2.0 * eps);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    max_err = std::max(max_err, std::abs(analytic[i] - numeric) / denom);
  }
  return max_err;
}

namespace {

Tensor rand_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_values(shape, std::move(v));
}

// Values bounded away from 0, for ops with a kink there.
Tensor rand_tensor_away_from(const Shape& shape, Rng& rng, double margin) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) {
    const double m = rng.uniform(margin, 1.0);
    x = rng.bernoulli(0.5) ? m : -m;
  }
  return Tensor::from_values(shape, std::move(v));
}

// Pairwise gaps of at least 0.006 so the max-pool argmax cannot flip under
// the finite-difference perturbation.
Tensor rand_tensor_distinct(const Shape& shape, Rng& rng) {
  const std::size_t n = shape_numel(shape);
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = 0.01 * static_cast<double>(i) + rng.uniform(0.0, 0.004);
  for (std::size_t i = n; i > 1; --i)
    std::swap(v[i - 1], v[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
  return Tensor::from_values(shape, std::move(v));
}

// Weighted mean turns any op output into a scalar with a non-trivial
// cotangent, so the whole Jacobian is exercised.
Tensor pick(const Tensor& y, const Tensor& weights) { return mean(mul(y, weights)); }

// Constant one-hot row [1, n] selecting row r of an [n, m] matrix via matmul.
Tensor selector_row(std::size_t r, std::size_t n) {
  std::vector<double> v(n, 0.0);
  v[r] = 1.0;
  return Tensor::from_values({1, n}, std::move(v));
}

struct Case {
  std::string name;
  std::function<double(Rng&)> run;  // max rel error for one seed
};

double lif_network_case(Rng& rng) {
  LifConfig cfg;  // tau 0.5, V_th 1.0, width 1.0
  const std::size_t steps = 3, in_dim = 4, neurons = 3;
  Tensor layer_w = rand_tensor({in_dim, neurons}, rng, -0.8, 0.8);
  std::vector<Tensor> step_weights;
  for (std::size_t t = 0; t < steps; ++t) step_weights.push_back(rand_tensor({1, neurons}, rng));

  auto net = [&](const Tensor& x) {
    Tensor membrane = Tensor::zeros({1, neurons});
    Tensor total;
    for (std::size_t t = 0; t < steps; ++t) {
      Tensor row = matmul(selector_row(t, steps), x);
      Tensor current = matmul(row, layer_w);
      LifStepResult r = lif_step(membrane, current, cfg, /*smooth=*/true);
      membrane = r.u_next;
      Tensor term = mean(mul(r.spikes, step_weights[t]));
      total = t == 0 ? term : add(total, term);
    }
    return total;
  };

  // Resample inputs until every pre-spike potential sits clear of the
  // surrogate kinks at v - V_th in {-w, 0, +w}; finite differences are only
  // trustworthy where the smooth forward is C2.
  Tensor x0;
  for (int attempt = 0; attempt < 200; ++attempt) {
    x0 = rand_tensor({steps, in_dim}, rng, -2.0, 2.0);
    std::vector<double> u(neurons, 0.0);
    double clearance = 1e9;
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t j = 0; j < neurons; ++j) {
        double cur = 0.0;
        for (std::size_t i = 0; i < in_dim; ++i)
          cur += x0.values()[t * in_dim + i] * layer_w.values()[i * neurons + j];
        const double v = cfg.tau_leak * u[j] + cur;
        const double d = v - cfg.v_threshold;
        clearance = std::min({clearance, std::abs(d), std::abs(d - cfg.surrogate_width),
                              std::abs(d + cfg.surrogate_width)});
        // replicate the smooth forward to advance the membrane
        double s;
        const double w = cfg.surrogate_width;
        if (d <= -w)
          s = 0.0;
        else if (d >= w)
          s = 1.0;
        else if (d < 0.0)
          s = (d + w) * (d + w) / (2.0 * w * w);
        else
          s = 0.5 + d / w - d * d / (2.0 * w * w);
        u[j] = v * (1.0 - s);
      }
    }
    if (clearance > 0.02) break;
  }
  return grad_check(net, x0);
}

std::vector<Case> build_cases() {
  std::vector<Case> cases;
  auto add_case = [&](const std::string& name, std::function<double(Rng&)> fn) {
    cases.push_back({name, std::move(fn)});
  };

  add_case("add", [](Rng& rng) {
    Tensor k = rand_tensor({3, 4}, rng), w = rand_tensor({3, 4}, rng);
    return grad_check([&](const Tensor& x) { return pick(add(x, k), w); }, rand_tensor({3, 4}, rng));
  });
  add_case("sub", [](Rng& rng) {
    Tensor k = rand_tensor({3, 4}, rng), w = rand_tensor({3, 4}, rng);
    Tensor x0 = rand_tensor({3, 4}, rng);
    return std::max(grad_check([&](const Tensor& x) { return pick(sub(x, k), w); }, x0),
                    grad_check([&](const Tensor& x) { return pick(sub(k, x), w); }, x0));
  });
  add_case("mul", [](Rng& rng) {
    Tensor k = rand_tensor({3, 4}, rng), w = rand_tensor({3, 4}, rng);
    Tensor x0 = rand_tensor({3, 4}, rng);
    return std::max(grad_check([&](const Tensor& x) { return pick(mul(x, k), w); }, x0),
                    grad_check([&](const Tensor& x) { return pick(mul(x, x), w); }, x0));
  });
  add_case("div", [](Rng& rng) {
    Tensor k = rand_tensor_away_from({3, 4}, rng, 0.5), w = rand_tensor({3, 4}, rng);
    Tensor x0 = rand_tensor_away_from({3, 4}, rng, 0.5);
    return std::max(grad_check([&](const Tensor& x) { return pick(div(x, k), w); }, x0),
                    grad_check([&](const Tensor& x) { return pick(div(k, x), w); }, x0));
  });
  add_case("scale", [](Rng& rng) {
    Tensor w = rand_tensor({5}, rng);
    return grad_check([&](const Tensor& x) { return pick(scale(x, -1.7), w); }, rand_tensor({5}, rng));
  });
  add_case("add_scalar", [](Rng& rng) {
    Tensor w = rand_tensor({5}, rng);
    return grad_check([&](const Tensor& x) { return pick(add_scalar(x, 0.3), w); }, rand_tensor({5}, rng));
  });
  add_case("relu", [](Rng& rng) {
    Tensor w = rand_tensor({4, 4}, rng);
    return grad_check([&](const Tensor& x) { return pick(relu(x), w); },
                      rand_tensor_away_from({4, 4}, rng, 0.1));
  });
  add_case("sigmoid", [](Rng& rng) {
    Tensor w = rand_tensor({4, 4}, rng);
    return grad_check([&](const Tensor& x) { return pick(sigmoid(x), w); }, rand_tensor({4, 4}, rng, -3, 3));
  });
  add_case("exp", [](Rng& rng) {
    Tensor w = rand_tensor({4, 4}, rng);
    return grad_check([&](const Tensor& x) { return pick(ckd::exp(x), w); }, rand_tensor({4, 4}, rng));
  });
  add_case("log", [](Rng& rng) {
    Tensor w = rand_tensor({4, 4}, rng);
    return grad_check([&](const Tensor& x) { return pick(ckd::log(x), w); },
                      rand_tensor({4, 4}, rng, 0.5, 2.0));
  });
  add_case("matmul", [](Rng& rng) {
    Tensor k = rand_tensor({4, 3}, rng), w = rand_tensor({2, 3}, rng);
    double e1 = grad_check([&](const Tensor& x) { return pick(matmul(x, k), w); }, rand_tensor({2, 4}, rng));
    Tensor k2 = rand_tensor({2, 4}, rng);
    double e2 = grad_check([&](const Tensor& x) { return pick(matmul(k2, x), w); }, rand_tensor({4, 3}, rng));
    return std::max(e1, e2);
  });
  add_case("transpose", [](Rng& rng) {
    Tensor w = rand_tensor({4, 3}, rng);
    return grad_check([&](const Tensor& x) { return pick(transpose(x), w); }, rand_tensor({3, 4}, rng));
  });
  add_case("softmax", [](Rng& rng) {
    Tensor w = rand_tensor({3, 5}, rng);
    return grad_check([&](const Tensor& x) { return pick(softmax(x), w); }, rand_tensor({3, 5}, rng, -2, 2));
  });
  add_case("log_softmax", [](Rng& rng) {
    Tensor w = rand_tensor({3, 5}, rng);
    return grad_check([&](const Tensor& x) { return pick(log_softmax(x), w); },
                      rand_tensor({3, 5}, rng, -2, 2));
  });
  add_case("sum", [](Rng& rng) {
    return grad_check([](const Tensor& x) { return sum(x); }, rand_tensor({3, 4}, rng));
  });
  add_case("mean", [](Rng& rng) {
    return grad_check([](const Tensor& x) { return mean(x); }, rand_tensor({3, 4}, rng));
  });
  add_case("sum_axis", [](Rng& rng) {
    Tensor w0 = rand_tensor({4, 5}, rng), w1 = rand_tensor({2, 5}, rng), w2 = rand_tensor({2, 4}, rng);
    Tensor x0 = rand_tensor({2, 4, 5}, rng);
    double e = grad_check([&](const Tensor& x) { return pick(sum_axis(x, 0), w0); }, x0);
    e = std::max(e, grad_check([&](const Tensor& x) { return pick(sum_axis(x, 1), w1); }, x0));
    return std::max(e, grad_check([&](const Tensor& x) { return pick(sum_axis(x, 2), w2); }, x0));
  });
  add_case("mean_axis", [](Rng& rng) {
    Tensor w = rand_tensor({2, 5}, rng);
    return grad_check([&](const Tensor& x) { return pick(mean_axis(x, 1), w); },
                      rand_tensor({2, 4, 5}, rng));
  });
  add_case("frobenius_norm", [](Rng& rng) {
    return grad_check([](const Tensor& x) { return frobenius_norm(x); },
                      rand_tensor_away_from({3, 4}, rng, 0.2));
  });
  add_case("reshape", [](Rng& rng) {
    Tensor w = rand_tensor({12}, rng);
    return grad_check([&](const Tensor& x) { return pick(reshape(x, {12}), w); }, rand_tensor({3, 4}, rng));
  });
  add_case("flatten", [](Rng& rng) {
    Tensor w = rand_tensor({12}, rng);
    return grad_check([&](const Tensor& x) { return pick(flatten(x), w); }, rand_tensor({2, 2, 3}, rng));
  });
  add_case("concat", [](Rng& rng) {
    Tensor k = rand_tensor({2, 3}, rng), w = rand_tensor({2, 9}, rng);
    return grad_check([&](const Tensor& x) { return pick(concat({x, k, x}, 1), w); },
                      rand_tensor({2, 3}, rng));
  });
  add_case("conv2d", [](Rng& rng) {
    Tensor cw = rand_tensor({3, 2, 3, 3}, rng), cb = rand_tensor({3}, rng);
    Tensor w = rand_tensor({2, 3, 5, 6}, rng);
    Tensor x0 = rand_tensor({2, 2, 5, 6}, rng);
    double e = grad_check([&](const Tensor& x) { return pick(conv2d(x, cw, cb, 1), w); }, x0);
    e = std::max(e, grad_check([&](const Tensor& x) { return pick(conv2d(x0, x, cb, 1), w); }, cw));
    e = std::max(e, grad_check([&](const Tensor& x) { return pick(conv2d(x0, cw, x, 1), w); }, cb));
    Tensor wp0 = rand_tensor({2, 3, 3, 4}, rng);
    return std::max(e, grad_check([&](const Tensor& x) { return pick(conv2d(x, cw, cb, 0), wp0); }, x0));
  });
  add_case("maxpool2d", [](Rng& rng) {
    Tensor w = rand_tensor({1, 2, 2, 2}, rng);
    return grad_check([&](const Tensor& x) { return pick(maxpool2d(x, 2), w); },
                      rand_tensor_distinct({1, 2, 4, 4}, rng));
  });
  add_case("avgpool2d", [](Rng& rng) {
    Tensor w = rand_tensor({1, 2, 2, 2}, rng);
    return grad_check([&](const Tensor& x) { return pick(avgpool2d(x, 2), w); },
                      rand_tensor({1, 2, 4, 4}, rng));
  });
  add_case("add_rowvec", [](Rng& rng) {
    Tensor v = rand_tensor({4}, rng), w = rand_tensor({3, 4}, rng);
    Tensor x0 = rand_tensor({3, 4}, rng);
    double e1 = grad_check([&](const Tensor& x) { return pick(add_rowvec(x, v), w); }, x0);
    double e2 = grad_check([&](const Tensor& x) { return pick(add_rowvec(x0, x), w); }, rand_tensor({4}, rng));
    return std::max(e1, e2);
  });
  add_case("lif_surrogate_path", lif_network_case);

  return cases;
}

}  // namespace

std::vector<GradCheckResult> run_grad_check_suite(std::size_t seeds) {
  std::vector<GradCheckResult> results;
  for (const Case& c : build_cases()) {
    double worst = 0.0;
    for (std::size_t s = 0; s < seeds; ++s) {
      Rng rng(hash_seed(0xc4ec, s * 131 + 7));
      worst = std::max(worst, c.run(rng));
    }
    results.push_back({c.name, worst});
  }
  return results;
}

}  // namespace ckd
