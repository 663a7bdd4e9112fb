#include "ckd/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace ckd {

using autograd::Node;
using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

namespace autograd {

Tensor make_op(const Shape& shape, std::vector<double> values, const std::vector<Tensor>& inputs,
               std::function<void(Node&)> backprop) {
  bool req = false;
  for (const Tensor& t : inputs)
    if (t.requires_grad()) req = true;
  Tensor out = Tensor::from_values(shape, std::move(values), req);
  if (req) {
    auto& n = *out.node();
    n.parents.reserve(inputs.size());
    for (const Tensor& t : inputs) n.parents.push_back(t.node());
    n.backprop = std::move(backprop);
  }
  return out;
}

}  // namespace autograd

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError(op, a.shape(), b.shape());
}

// Grad buffer of a parent, or nullptr when that parent does not require grad.
std::vector<double>* grad_of(Node& self, std::size_t i) {
  Node* p = self.parents[i].get();
  if (!p->requires_grad) return nullptr;
  p->ensure_grad();
  return &p->grad;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return autograd::make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k)
      if (auto* g = grad_of(self, k))
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return autograd::make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = grad_of(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return autograd::make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& av = self.parents[0]->values;
    const auto& bv = self.parents[1]->values;
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * bv[i];
    if (auto* g = grad_of(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * av[i];
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape("div", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] / b.values()[i];
  return autograd::make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& av = self.parents[0]->values;
    const auto& bv = self.parents[1]->values;
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] / bv[i];
    if (auto* g = grad_of(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        (*g)[i] -= self.grad[i] * av[i] / (bv[i] * bv[i]);
  });
}

Tensor scale(const Tensor& x, double c) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * c;
  return autograd::make_op(x.shape(), std::move(out), {x}, [c](Node& self) {
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * c;
  });
}

Tensor add_scalar(const Tensor& x, double c) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] + c;
  return autograd::make_op(x.shape(), std::move(out), {x}, [](Node& self) {
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] > 0.0 ? x.values()[i] : 0.0;
  return autograd::make_op(x.shape(), std::move(out), {x}, [](Node& self) {
    const auto& xv = self.parents[0]->values;
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        if (xv[i] > 0.0) (*g)[i] += self.grad[i];  // subgradient at 0 is 0
  });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.values()[i];
    out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  return autograd::make_op(x.shape(), std::move(out), {x}, [](Node& self) {
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const double y = self.values[i];
        (*g)[i] += self.grad[i] * y * (1.0 - y);
      }
  });
}

Tensor exp(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x.values()[i]);
  return autograd::make_op(x.shape(), std::move(out), {x}, [](Node& self) {
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * self.values[i];
  });
}

Tensor log(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (x.values()[i] <= 0.0) throw Error("log of non-positive value at index " + std::to_string(i));
    out[i] = std::log(x.values()[i]);
  }
  return autograd::make_op(x.shape(), std::move(out), {x}, [](Node& self) {
    const auto& xv = self.parents[0]->values;
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] / xv[i];
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
    throw ShapeError("matmul", a.shape(), b.shape());
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> out(m * n);
  {
    ECMap A(a.values().data(), m, k);
    ECMap B(b.values().data(), k, n);
    EMap C(out.data(), m, n);
    C.noalias() = A * B;
  }
  return autograd::make_op({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    ECMap G(self.grad.data(), m, n);
    ECMap A(self.parents[0]->values.data(), m, k);
    ECMap B(self.parents[1]->values.data(), k, n);
    if (auto* g = grad_of(self, 0)) EMap(g->data(), m, k).noalias() += G * B.transpose();
    if (auto* g = grad_of(self, 1)) EMap(g->data(), k, n).noalias() += A.transpose() * G;
  });
}

Tensor transpose(const Tensor& a) {
  if (a.shape().size() != 2) throw ShapeError("transpose", a.shape(), {});
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.values()[i * n + j];
  return autograd::make_op({n, m}, std::move(out), {a}, [m, n](Node& self) {
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*g)[i * n + j] += self.grad[j * m + i];
  });
}

namespace {

// Shared layout for last-axis softmax ops: rows x cols with cols = last dim.
void softmax_rows(const std::vector<double>& x, std::vector<double>& out, std::size_t rows,
                  std::size_t cols, bool log_form) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * cols;
    double* yr = out.data() + r * cols;
    double mx = xr[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(xr[c] - mx);
    if (log_form) {
      const double lz = std::log(z);
      for (std::size_t c = 0; c < cols; ++c) yr[c] = xr[c] - mx - lz;
    } else {
      for (std::size_t c = 0; c < cols; ++c) yr[c] = std::exp(xr[c] - mx) / z;
    }
  }
}

}  // namespace

Tensor softmax(const Tensor& x) {
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.numel() / cols;
  std::vector<double> out(x.numel());
  softmax_rows(x.values(), out, rows, cols, false);
  return autograd::make_op(x.shape(), std::move(out), {x}, [rows, cols](Node& self) {
    if (auto* g = grad_of(self, 0))
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = self.values.data() + r * cols;
        const double* gy = self.grad.data() + r * cols;
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += gy[c] * y[c];
        for (std::size_t c = 0; c < cols; ++c) (*g)[r * cols + c] += y[c] * (gy[c] - dot);
      }
  });
}

Tensor log_softmax(const Tensor& x) {
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.numel() / cols;
  std::vector<double> out(x.numel());
  softmax_rows(x.values(), out, rows, cols, true);
  return autograd::make_op(x.shape(), std::move(out), {x}, [rows, cols](Node& self) {
    if (auto* g = grad_of(self, 0))
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = self.values.data() + r * cols;
        const double* gy = self.grad.data() + r * cols;
        double gsum = 0.0;
        for (std::size_t c = 0; c < cols; ++c) gsum += gy[c];
        for (std::size_t c = 0; c < cols; ++c)
          (*g)[r * cols + c] += gy[c] - std::exp(y[c]) * gsum;
      }
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return autograd::make_op({1}, {s}, {x}, [](Node& self) {
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum_axis(const Tensor& x, std::size_t axis) {
  if (axis >= x.shape().size()) throw Error("sum_axis: axis " + std::to_string(axis) + " out of range");
  const Shape& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t ad = s[axis];
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) out_shape.push_back(s[i]);
  if (out_shape.empty()) out_shape = {1};
  std::vector<double> out(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t a = 0; a < ad; ++a)
      for (std::size_t i = 0; i < inner; ++i)
        out[o * inner + i] += x.values()[(o * ad + a) * inner + i];
  return autograd::make_op(out_shape, std::move(out), {x}, [outer, ad, inner](Node& self) {
    if (auto* g = grad_of(self, 0))
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t a = 0; a < ad; ++a)
          for (std::size_t i = 0; i < inner; ++i)
            (*g)[(o * ad + a) * inner + i] += self.grad[o * inner + i];
  });
}

Tensor mean_axis(const Tensor& x, std::size_t axis) {
  return scale(sum_axis(x, axis), 1.0 / static_cast<double>(x.shape()[axis]));
}

Tensor frobenius_norm(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v * v;
  const double norm = std::sqrt(s);
  return autograd::make_op({1}, {norm}, {x}, [](Node& self) {
    const double y = self.values[0];
    if (y < 1e-300) return;  // subgradient 0 at the origin
    const auto& xv = self.parents[0]->values;
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[0] * xv[i] / y;
  });
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (shape_numel(shape) != x.numel()) throw ShapeError("reshape", x.shape(), shape);
  std::vector<double> out = x.values();
  return autograd::make_op(shape, std::move(out), {x}, [](Node& self) {
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
  });
}

Tensor flatten(const Tensor& x) { return reshape(x, {x.numel()}); }

Tensor concat(const std::vector<Tensor>& xs, std::size_t axis) {
  if (xs.empty()) throw Error("concat of zero tensors");
  const Shape& s0 = xs[0].shape();
  if (axis >= s0.size()) throw Error("concat: axis out of range");
  std::size_t axis_total = 0;
  for (const Tensor& t : xs) {
    if (t.shape().size() != s0.size()) throw ShapeError("concat", s0, t.shape());
    for (std::size_t i = 0; i < s0.size(); ++i)
      if (i != axis && t.shape()[i] != s0[i]) throw ShapeError("concat", s0, t.shape());
    axis_total += t.shape()[axis];
  }
  Shape out_shape = s0;
  out_shape[axis] = axis_total;
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];

  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> axis_sizes;
  std::size_t off = 0;
  for (const Tensor& t : xs) {
    const std::size_t ad = t.shape()[axis];
    axis_sizes.push_back(ad);
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(t.values().data() + o * ad * inner, ad * inner,
                  out.data() + (o * axis_total + off) * inner);
    off += ad;
  }
  std::vector<Tensor> inputs = xs;
  return autograd::make_op(out_shape, std::move(out), inputs,
                           [outer, inner, axis_total, axis_sizes](Node& self) {
                             std::size_t off = 0;
                             for (std::size_t k = 0; k < axis_sizes.size(); ++k) {
                               const std::size_t ad = axis_sizes[k];
                               if (auto* g = grad_of(self, k))
                                 for (std::size_t o = 0; o < outer; ++o)
                                   for (std::size_t j = 0; j < ad * inner; ++j)
                                     (*g)[o * ad * inner + j] +=
                                         self.grad[(o * axis_total + off) * inner + j];
                               off += ad;
                             }
                           });
}

namespace {

struct ConvDims {
  std::size_t n, ic, h, w, oc, kh, kw, pad, oh, ow;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, std::size_t padding) {
  if (x.shape().size() != 4 || w.shape().size() != 4 || x.shape()[1] != w.shape()[1])
    throw ShapeError("conv2d", x.shape(), w.shape());
  ConvDims d{};
  d.n = x.shape()[0];
  d.ic = x.shape()[1];
  d.h = x.shape()[2];
  d.w = x.shape()[3];
  d.oc = w.shape()[0];
  d.kh = w.shape()[2];
  d.kw = w.shape()[3];
  d.pad = padding;
  if (d.h + 2 * padding < d.kh || d.w + 2 * padding < d.kw)
    throw ShapeError("conv2d", x.shape(), w.shape());
  d.oh = d.h + 2 * padding - d.kh + 1;
  d.ow = d.w + 2 * padding - d.kw + 1;
  return d;
}

// col is (ic*kh*kw) x (oh*ow) for one sample.
void im2col(const double* x, const ConvDims& d, double* col) {
  const std::size_t cols = d.oh * d.ow;
  for (std::size_t c = 0; c < d.ic; ++c)
    for (std::size_t ky = 0; ky < d.kh; ++ky)
      for (std::size_t kx = 0; kx < d.kw; ++kx) {
        double* row = col + ((c * d.kh + ky) * d.kw + kx) * cols;
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(d.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) {
            std::fill_n(row + oy * d.ow, d.ow, 0.0);
            continue;
          }
          const double* xrow = x + (c * d.h + iy) * d.w;
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(d.pad);
            row[oy * d.ow + ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) ? 0.0 : xrow[ix];
          }
        }
      }
}

void col2im_add(const double* col, const ConvDims& d, double* gx) {
  const std::size_t cols = d.oh * d.ow;
  for (std::size_t c = 0; c < d.ic; ++c)
    for (std::size_t ky = 0; ky < d.kh; ++ky)
      for (std::size_t kx = 0; kx < d.kw; ++kx) {
        const double* row = col + ((c * d.kh + ky) * d.kw + kx) * cols;
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(d.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
          double* grow = gx + (c * d.h + iy) * d.w;
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(d.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(d.w)) grow[ix] += row[oy * d.ow + ox];
          }
        }
      }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t padding) {
  const ConvDims d = conv_dims(x, w, padding);
  const bool has_bias = bias.defined();
  if (has_bias && (bias.shape().size() != 1 || bias.shape()[0] != d.oc))
    throw ShapeError("conv2d bias", w.shape(), bias.shape());

  const std::size_t kk = d.ic * d.kh * d.kw;
  const std::size_t cols = d.oh * d.ow;
  // The im2col buffer is kept for the weight gradient and freed with the tape.
  auto col = std::make_shared<std::vector<double>>(d.n * kk * cols);
  std::vector<double> out(d.n * d.oc * cols);
  {
    ECMap W(w.values().data(), d.oc, kk);
    for (std::size_t s = 0; s < d.n; ++s) {
      double* col_s = col->data() + s * kk * cols;
      im2col(x.values().data() + s * d.ic * d.h * d.w, d, col_s);
      EMap O(out.data() + s * d.oc * cols, d.oc, cols);
      O.noalias() = W * ECMap(col_s, kk, cols);
      if (has_bias)
        for (std::size_t o = 0; o < d.oc; ++o) O.row(o).array() += bias.values()[o];
    }
  }

  std::vector<Tensor> inputs = has_bias ? std::vector<Tensor>{x, w, bias} : std::vector<Tensor>{x, w};
  return autograd::make_op(
      {d.n, d.oc, d.oh, d.ow}, std::move(out), inputs, [d, kk, cols, has_bias, col](Node& self) {
        ECMap W(self.parents[1]->values.data(), d.oc, kk);
        std::vector<double>* gx = grad_of(self, 0);
        std::vector<double>* gw = grad_of(self, 1);
        std::vector<double>* gb = has_bias ? grad_of(self, 2) : nullptr;
        std::vector<double> gcol(gx ? kk * cols : 0);
        for (std::size_t s = 0; s < d.n; ++s) {
          ECMap G(self.grad.data() + s * d.oc * cols, d.oc, cols);
          const double* col_s = col->data() + s * kk * cols;
          if (gw) EMap(gw->data(), d.oc, kk).noalias() += G * ECMap(col_s, kk, cols).transpose();
          if (gx) {
            EMap(gcol.data(), kk, cols).noalias() = W.transpose() * G;
            col2im_add(gcol.data(), d, gx->data() + s * d.ic * d.h * d.w);
          }
          if (gb)
            for (std::size_t o = 0; o < d.oc; ++o) (*gb)[o] += G.row(o).sum();
        }
      });
}

Tensor maxpool2d(const Tensor& x, std::size_t k) {
  if (x.shape().size() != 4) throw ShapeError("maxpool2d", x.shape(), {});
  const std::size_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  if (k == 0 || h % k != 0 || w % k != 0)
    throw Error("maxpool2d: spatial dims " + shape_str({h, w}) + " not divisible by window " + std::to_string(k));
  const std::size_t oh = h / k, ow = w / k;
  std::vector<double> out(n * c * oh * ow);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  for (std::size_t img = 0; img < n * c; ++img) {
    const double* xp = x.values().data() + img * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = (oy * k) * w + ox * k;
        double bv = xp[best];
        for (std::size_t dy = 0; dy < k; ++dy)
          for (std::size_t dx = 0; dx < k; ++dx) {
            const std::size_t idx = (oy * k + dy) * w + ox * k + dx;
            if (xp[idx] > bv) {
              bv = xp[idx];
              best = idx;
            }
          }
        out[img * oh * ow + oy * ow + ox] = bv;
        (*argmax)[img * oh * ow + oy * ow + ox] = img * h * w + best;
      }
  }
  return autograd::make_op({n, c, oh, ow}, std::move(out), {x}, [argmax](Node& self) {
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[(*argmax)[i]] += self.grad[i];
  });
}

Tensor avgpool2d(const Tensor& x, std::size_t k) {
  if (x.shape().size() != 4) throw ShapeError("avgpool2d", x.shape(), {});
  const std::size_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  if (k == 0 || h % k != 0 || w % k != 0)
    throw Error("avgpool2d: spatial dims " + shape_str({h, w}) + " not divisible by window " + std::to_string(k));
  const std::size_t oh = h / k, ow = w / k;
  const double inv = 1.0 / static_cast<double>(k * k);
  std::vector<double> out(n * c * oh * ow, 0.0);
  for (std::size_t img = 0; img < n * c; ++img) {
    const double* xp = x.values().data() + img * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double s = 0.0;
        for (std::size_t dy = 0; dy < k; ++dy)
          for (std::size_t dx = 0; dx < k; ++dx) s += xp[(oy * k + dy) * w + ox * k + dx];
        out[img * oh * ow + oy * ow + ox] = s * inv;
      }
  }
  return autograd::make_op({n, c, oh, ow}, std::move(out), {x}, [k, h, w, oh, ow, inv](Node& self) {
    if (auto* g = grad_of(self, 0)) {
      const std::size_t imgs = self.grad.size() / (oh * ow);
      for (std::size_t img = 0; img < imgs; ++img)
        for (std::size_t oy = 0; oy < oh; ++oy)
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const double gv = self.grad[img * oh * ow + oy * ow + ox] * inv;
            for (std::size_t dy = 0; dy < k; ++dy)
              for (std::size_t dx = 0; dx < k; ++dx)
                (*g)[img * h * w + (oy * k + dy) * w + ox * k + dx] += gv;
          }
    }
  });
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  if (x.shape().size() != 2 || v.shape().size() != 1 || x.shape()[1] != v.shape()[0])
    throw ShapeError("add_rowvec", x.shape(), v.shape());
  const std::size_t n = x.shape()[0], m = x.shape()[1];
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = x.values()[i * m + j] + v.values()[j];
  return autograd::make_op({n, m}, std::move(out), {x, v}, [n, m](Node& self) {
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = grad_of(self, 1))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) (*g)[j] += self.grad[i * m + j];
  });
}

}  // namespace ckd
