#pragma once

#include <functional>
#include <vector>

#include "ckd/tensor.hpp"

namespace ckd {

namespace autograd {
// Builds an op result node: links parents and installs the backward closure
// only when some input requires grad. Shared by the core ops below and by
// the custom spiking ops.
Tensor make_op(const Shape& shape, std::vector<double> values, const std::vector<Tensor>& inputs,
               std::function<void(Node&)> backprop);
}  // namespace autograd

// Elementwise, operand shapes must match.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

// With scalar constants.
Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);

// Unary.
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);

// 2-D linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Softmax family along the last axis.
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);

// Reductions.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_axis(const Tensor& x, std::size_t axis);
Tensor mean_axis(const Tensor& x, std::size_t axis);
Tensor frobenius_norm(const Tensor& x);

// Shape manipulation.
Tensor reshape(const Tensor& x, const Shape& shape);
Tensor flatten(const Tensor& x);
Tensor concat(const std::vector<Tensor>& xs, std::size_t axis);

// Neural-net building blocks. conv2d expects x [N,C,H,W], w [OC,IC,KH,KW],
// optional bias [OC] (pass a default-constructed Tensor for none); stride 1,
// zero padding. Pools use square k windows with stride k.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t padding);
Tensor maxpool2d(const Tensor& x, std::size_t k);
Tensor avgpool2d(const Tensor& x, std::size_t k);
// x [n,m] plus row vector [m]; the linear-layer bias broadcast.
Tensor add_rowvec(const Tensor& x, const Tensor& v);

}  // namespace ckd
