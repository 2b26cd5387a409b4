#pragma once

// Dense fp64 tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto a shared node. Operations (see ops.hpp)
// build a DAG of nodes; calling backward() on a scalar result accumulates
// gradients into every reachable node that requires them. Values are
// immutable after an op produces them; only grad buffers mutate.

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace distill {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty = absent
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward;

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }

  double* grad_ptr() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad.data();
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) {
    return filled(std::move(shape), 0.0);
  }

  static Tensor filled(Shape shape, double value) {
    check_shape(shape);
    auto node = std::make_shared<detail::TensorNode>();
    node->data.assign(static_cast<std::size_t>(shape_numel(shape)), value);
    node->shape = std::move(shape);
    return Tensor(std::move(node));
  }

  static Tensor from_data(Shape shape, std::vector<double> data) {
    check_shape(shape);
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
      throw std::invalid_argument("tensor data length " +
                                  std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
    }
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    return Tensor(std::move(node));
  }

  static Tensor scalar(double v) { return from_data({1}, {v}); }

  bool defined() const { return node_ != nullptr; }

  const Shape& shape() const { return node()->shape; }
  std::int64_t numel() const { return node()->numel(); }

  std::vector<double>& data() { return node()->data; }
  const std::vector<double>& data() const { return node()->data; }

  bool requires_grad() const { return node()->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    node()->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return !node()->grad.empty(); }
  std::vector<double>& grad() {
    if (!has_grad()) throw std::logic_error("tensor has no gradient buffer");
    return node()->grad;
  }
  const std::vector<double>& grad() const {
    if (!has_grad()) throw std::logic_error("tensor has no gradient buffer");
    return node()->grad;
  }

  void zero_grad() const {
    node()->grad.assign(node()->data.size(), 0.0);
  }

  double item() const {
    if (numel() != 1) {
      throw std::invalid_argument("item() on non-scalar tensor " +
                                  shape_str(shape()));
    }
    return node()->data[0];
  }

  // Same values, no history, no gradient requirement.
  Tensor detach() const {
    auto n = std::make_shared<detail::TensorNode>();
    n->shape = node()->shape;
    n->data = node()->data;
    return Tensor(std::move(n));
  }

  Tensor clone() const {
    Tensor t = detach();
    t.set_requires_grad(requires_grad());
    return t;
  }

  /// Reverse-mode sweep from a scalar. Accumulates into the grad buffers of
  /// every ancestor with requires_grad; call zero_grad between steps.
  void backward() const {
    auto* root = node();
    if (root->numel() != 1) {
      throw std::invalid_argument("backward() requires a scalar tensor, got " +
                                  shape_str(root->shape));
    }
    if (!root->requires_grad) return;

    // Topological order, parents first.
    std::vector<detail::TensorNode*> order;
    std::unordered_set<detail::TensorNode*> seen;
    std::vector<std::pair<detail::TensorNode*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    seen.insert(root);
    while (!stack.empty()) {
      auto& [cur, next_parent] = stack.back();
      if (next_parent < cur->parents.size()) {
        detail::TensorNode* p = cur->parents[next_parent++].get();
        if (p->requires_grad && seen.insert(p).second) {
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(cur);
        stack.pop_back();
      }
    }

    root->grad_ptr()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      detail::TensorNode* n = *it;
      if (n->backward && !n->grad.empty()) n->backward(*n);
    }
  }

  detail::TensorNode* node() const {
    if (!node_) throw std::logic_error("use of undefined tensor");
    return node_.get();
  }

  const std::shared_ptr<detail::TensorNode>& handle() const { return node_; }

  explicit Tensor(std::shared_ptr<detail::TensorNode> node)
      : node_(std::move(node)) {}

 private:
  static void check_shape(const Shape& shape) {
    if (shape.empty()) throw std::invalid_argument("tensor shape is empty");
    for (int d : shape) {
      if (d <= 0) {
        throw std::invalid_argument("tensor dimensions must be positive, got " +
                                    shape_str(shape));
      }
    }
  }

  std::shared_ptr<detail::TensorNode> node_;
};

namespace detail {

// Op construction helper: output requires grad iff any parent does, and only
// then does the node keep its parents and backward closure. Forwards through
// frozen networks therefore record no history at all.
inline Tensor make_op_result(Shape shape, std::vector<double> data,
                             std::vector<Tensor> parents,
                             std::function<void(TensorNode&)> backward) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.handle());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

}  // namespace detail

}  // namespace distill
