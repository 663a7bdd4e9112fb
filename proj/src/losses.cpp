#include "ckd/losses.hpp"

#include <algorithm>
#include <cmath>

#include "ckd/ops.hpp"

namespace ckd {

void CkdLossConfig::validate(std::size_t timesteps) const {
  if (!(kd_temperature > 0.0)) throw ConfigError("kd_temperature must be > 0");
  if (!(k_switch > 0.0)) throw ConfigError("k_switch must be > 0");
  if (theta.defined() && theta.numel() != timesteps)
    throw ConfigError("theta length " + std::to_string(theta.numel()) + " != timesteps " +
                      std::to_string(timesteps));
}

namespace {

// Centering matrix I - 1/n as a constant tensor; column-centers via H*X.
Tensor centering_matrix(std::size_t n) {
  std::vector<double> h(n * n, -1.0 / static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) h[i * n + i] += 1.0;
  return Tensor::from_values({n, n}, std::move(h));
}

Tensor one_minus(const Tensor& x) { return add_scalar(scale(x, -1.0), 1.0); }

}  // namespace

Tensor linear_cka(const Tensor& x, const Tensor& y) {
  if (x.shape().size() != 2 || y.shape().size() != 2 || x.shape()[0] != y.shape()[0])
    throw ShapeError("linear_cka", x.shape(), y.shape());
  const std::size_t n = x.shape()[0];
  if (n < 2) throw Error("linear_cka needs at least 2 rows, got " + std::to_string(n));

  Tensor h = centering_matrix(n);
  Tensor xc = matmul(h, x);
  Tensor yc = matmul(h, y);
  Tensor cross = matmul(transpose(yc), xc);
  Tensor num = sum(mul(cross, cross));  // ||Yc' Xc||_F^2
  Tensor dx = frobenius_norm(matmul(transpose(xc), xc));
  Tensor dy = frobenius_norm(matmul(transpose(yc), yc));
  if (dx.value() < 1e-12 || dy.value() < 1e-12) return Tensor::scalar(0.0);
  return div(num, mul(dx, dy));
}

Tensor domain_alignment_loss(const TemporalActivations& static_acts,
                             const TemporalActivations& dynamic_acts, const Tensor& theta,
                             const Tensor& cls_e) {
  const std::size_t t_steps = static_acts.features.size();
  if (t_steps != dynamic_acts.features.size())
    throw Error("domain_alignment_loss: static stream has " + std::to_string(t_steps) +
                " timesteps, dynamic has " + std::to_string(dynamic_acts.features.size()));
  if (theta.numel() != t_steps) throw ShapeError("domain_alignment_loss theta", theta.shape(), {t_steps});

  std::vector<Tensor> misalign;
  misalign.reserve(t_steps);
  for (std::size_t t = 0; t < t_steps; ++t)
    misalign.push_back(one_minus(linear_cka(static_acts.features[t], dynamic_acts.features[t])));

  Tensor sig = sigmoid(theta);
  Tensor align_term = mean(mul(sig, concat(misalign, 0)));
  Tensor reg_term = mul(mean(one_minus(sig)), cls_e);
  return add(align_term, reg_term);
}

Tensor tet_loss(const std::vector<Tensor>& logits, const std::vector<int>& labels) {
  if (logits.empty()) throw Error("tet_loss needs at least one timestep");
  const std::size_t batch = logits.front().shape()[0];
  const std::size_t classes = logits.front().shape()[1];
  if (labels.size() != batch)
    throw Error("tet_loss: " + std::to_string(labels.size()) + " labels for batch " + std::to_string(batch));
  std::vector<double> onehot(batch * classes, 0.0);
  for (std::size_t i = 0; i < batch; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
      throw Error("tet_loss: label " + std::to_string(labels[i]) + " out of range for " +
                  std::to_string(classes) + " classes");
    onehot[i * classes + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  Tensor pickmat = Tensor::from_values({batch, classes}, std::move(onehot));

  Tensor acc;
  for (const Tensor& lt : logits) {
    if (lt.shape() != logits.front().shape()) throw ShapeError("tet_loss", logits.front().shape(), lt.shape());
    Tensor ce = scale(sum(mul(pickmat, log_softmax(lt))), -1.0 / static_cast<double>(batch));
    acc = acc.defined() ? add(acc, ce) : ce;
  }
  return scale(acc, 1.0 / static_cast<double>(logits.size()));
}

Tensor kd_loss(const Tensor& teacher_logits, const Tensor& student_logits, double temperature) {
  if (!(temperature > 0.0)) throw Error("kd_loss: temperature must be > 0");
  if (teacher_logits.shape() != student_logits.shape())
    throw ShapeError("kd_loss", teacher_logits.shape(), student_logits.shape());
  const std::size_t batch = teacher_logits.shape()[0];

  // Teacher side is a constant: distillation must not touch the teacher.
  Tensor zt = Tensor::from_values(teacher_logits.shape(), teacher_logits.values());
  Tensor p = softmax(scale(zt, 1.0 / temperature));
  Tensor log_p = log_softmax(scale(zt, 1.0 / temperature));
  Tensor log_q = log_softmax(scale(student_logits, 1.0 / temperature));
  Tensor kl = sum(mul(p, sub(log_p, log_q)));
  return scale(kl, 1.0 / static_cast<double>(batch));
}

double phase_switch(double epoch, double k, double e_th) {
  // gamma = sigma(k (e_th - epoch)), evaluated on the non-overflowing branch
  // and clamped to the nearest representable values inside (0,1) where the
  // exponential saturates.
  const double y = k * (e_th - epoch);
  const double g = y >= 0.0 ? 1.0 / (1.0 + std::exp(-y)) : std::exp(y) / (1.0 + std::exp(y));
  return std::clamp(g, std::nextafter(0.0, 1.0), std::nextafter(1.0, 0.0));
}

Tensor static_stream_loss(const Tensor& cls_s, const Tensor& da, const Tensor& kd, double gamma,
                          const CkdLossConfig& cfg) {
  Tensor out = add(scale(cls_s, cfg.alpha), scale(da, cfg.beta));
  if (kd.defined()) out = add(out, scale(kd, gamma));
  return out;
}

Tensor total_loss(const Tensor& static_loss, const Tensor& cls_e) { return add(static_loss, cls_e); }

}  // namespace ckd
