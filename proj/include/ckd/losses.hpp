#pragma once

#include <vector>

#include "ckd/spiking.hpp"
#include "ckd/tensor.hpp"

namespace ckd {

struct CkdLossConfig {
  double alpha = 1.0;          // weight of the static-stream classification loss
  double beta = 1.0;           // weight of the domain-alignment loss
  double kd_temperature = 2.0; // softening temperature of the distillation loss
  double k_switch = 1.0;       // slope of the phase switch
  double e_threshold = 19.5;   // epoch at which the phase switch crosses 0.5
  Tensor theta;                // learnable per-timestep weights, length T

  void validate(std::size_t timesteps) const;
};

// Linear centered kernel alignment between two feature matrices with the
// same row count: ||Yc' Xc||_F^2 / (||Xc' Xc||_F ||Yc' Yc||_F) after
// column centering. Differentiable; returns 0 when either stream has no
// variance (denominator factor below 1e-12).
Tensor linear_cka(const Tensor& x, const Tensor& y);

// Per-timestep sigmoid(theta_t)-weighted (1 - CKA) between the two streams'
// features, with (1 - sigmoid(theta_t)) routed to the dynamic classification
// loss as a live regularizer. cls_e stays differentiable inside the sum.
Tensor domain_alignment_loss(const TemporalActivations& static_acts,
                             const TemporalActivations& dynamic_acts, const Tensor& theta,
                             const Tensor& cls_e);

// Per-timestep cross-entropy averaged over time.
Tensor tet_loss(const std::vector<Tensor>& logits, const std::vector<int>& labels);

// Batch-mean KL(softmax(Z_t/tau) || softmax(Z_s/tau)) summed over classes.
// The teacher side is detached; no tau^2 rescaling is applied.
Tensor kd_loss(const Tensor& teacher_logits, const Tensor& student_logits, double temperature);

// gamma(e) = 1 - 1/(1 + exp(-k (e - e_th))): 1 early, 0 late, 0.5 at e_th.
double phase_switch(double epoch, double k, double e_th);

// alpha*cls_s + beta*da + gamma*kd; pass an undefined kd tensor to drop the
// distillation term.
Tensor static_stream_loss(const Tensor& cls_s, const Tensor& da, const Tensor& kd, double gamma,
                          const CkdLossConfig& cfg);

Tensor total_loss(const Tensor& static_loss, const Tensor& cls_e);

}  // namespace ckd
