#include "ckd/tensor.hpp"

#include <algorithm>
#include <unordered_set>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace ckd {

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

static std::shared_ptr<autograd::Node> make_node(const Shape& shape, std::vector<double> values,
                                                 bool requires_grad) {
  for (std::size_t d : shape)
    if (d == 0) throw Error("tensor dimensions must be positive, got " + shape_str(shape));
  if (shape_numel(shape) != values.size())
    throw Error("value count " + std::to_string(values.size()) + " does not match shape " + shape_str(shape));
  auto n = std::make_shared<autograd::Node>();
  n->shape = shape;
  n->values = std::move(values);
  n->requires_grad = requires_grad;
  return n;
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return Tensor(make_node(shape, std::vector<double>(shape_numel(shape), 0.0), requires_grad));
}

Tensor Tensor::full(const Shape& shape, double v, bool requires_grad) {
  return Tensor(make_node(shape, std::vector<double>(shape_numel(shape), v), requires_grad));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return Tensor(make_node({1}, {v}, requires_grad));
}

Tensor Tensor::from_values(const Shape& shape, std::vector<double> values, bool requires_grad) {
  return Tensor(make_node(shape, std::move(values), requires_grad));
}

double Tensor::value() const {
  if (numel() != 1) throw Error("value() on tensor with " + std::to_string(numel()) + " elements");
  return values()[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  auto& n = check();
  if (!n.is_leaf()) throw Error("requires_grad can only be toggled on leaf tensors");
  n.requires_grad = on;
  return *this;
}

Tensor Tensor::grad() const {
  auto& n = check();
  if (n.grad.empty()) throw Error("tensor has no gradient (backward not run or not on the tape)");
  return Tensor::from_values(n.shape, n.grad);
}

void Tensor::zero_grad() {
  auto& n = check();
  n.grad.clear();
}

std::vector<double>& Tensor::values_mut() {
  auto& n = check();
  if (!n.is_leaf()) throw Error("in-place mutation is restricted to leaf tensors");
  ++n.version;
  return n.values;
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw Error("backward on undefined tensor");
  if (loss.numel() != 1) throw Error("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  if (!loss.requires_grad()) throw Error("backward: loss does not depend on any tensor requiring grad");

  // Post-order DFS: parents land before children, the loss lands last.
  std::vector<autograd::Node*> order;
  std::unordered_set<autograd::Node*> seen;
  struct Frame {
    autograd::Node* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.node().get(), 0});
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      autograd::Node* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad();
  loss.node()->grad[0] = 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    autograd::Node* n = *it;
    if (n->backprop) {
      n->ensure_grad();
      n->backprop(*n);
    }
    // Intermediate grads are fully consumed once pushed to parents.
    if (!n->is_leaf()) n->grad.clear();
  }

  // Discard the tape so node memory is reclaimed as handles go out of scope.
  for (autograd::Node* n : order) {
    n->parents.clear();
    n->backprop = nullptr;
  }
}

}  // namespace ckd
