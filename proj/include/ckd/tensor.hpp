#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ckd/error.hpp"

namespace ckd {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Tunes glibc so the multi-megabyte buffers recycled every forward/backward
// cycle stay on the heap free list instead of being mmapped and unmapped
// each time (roughly 3x on training throughput). Call once at process start;
// a no-op on other C libraries.
void tune_allocator();

namespace autograd {

// One value node of the differentiation tape. Ops create nodes; backward()
// walks the parent links in reverse topological order and then severs them,
// so a tape lives for exactly one forward/backward cycle.
struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // sized on demand during backward; kept on leaves
  bool requires_grad = false;
  std::uint64_t version = 0;  // bumped on in-place value mutation

  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;

  bool is_leaf() const { return parents.empty(); }
  void accumulate_grad_index(std::size_t i, double g) {
    if (grad.empty()) grad.assign(values.size(), 0.0);
    grad[i] += g;
  }
  void ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
  }
};

}  // namespace autograd

// Value-semantic handle to an immutable tensor. Copies share the underlying
// node. The only sanctioned mutation is values_mut() on leaf tensors, which
// the optimizer uses between forward/backward cycles.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double v, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor from_values(const Shape& shape, std::vector<double> values, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return check().shape; }
  std::size_t numel() const { return check().values.size(); }
  const std::vector<double>& values() const { return check().values; }
  double value() const;  // single-element tensors only

  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tensor& set_requires_grad(bool on);

  bool has_grad() const { return node_ && !node_->grad.empty(); }
  Tensor grad() const;  // gradient as a plain tensor; error if absent
  void zero_grad();

  // Leaf-only in-place access; bumps the version counter.
  std::vector<double>& values_mut();
  std::uint64_t version() const { return check().version; }

  // Internal: node access for op construction.
  const std::shared_ptr<autograd::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<autograd::Node> n) : node_(std::move(n)) {}

 private:
  autograd::Node& check() const {
    if (!node_) throw Error("operation on undefined tensor");
    return *node_;
  }
  std::shared_ptr<autograd::Node> node_;
};

// Runs reverse-mode differentiation from a scalar loss, accumulating
// gradients into every reachable tensor that requires grad, then discards
// the tape (parent links and closures).
void backward(const Tensor& loss);

// A named leaf tensor with requires_grad = true; the unit of optimization
// and checkpointing.
struct Parameter {
  std::string name;
  Tensor tensor;
};

}  // namespace ckd
