#pragma once

// Dense tensors with reverse-mode automatic differentiation.
//
// A BasicTensor is a handle to a graph node. Forward ops allocate a new node
// that records its inputs and a backward closure; backward() walks the nodes
// reachable from a scalar root in reverse topological order, visiting each
// node once. Values are immutable after construction except through
// mutable_data() on leaves (the optimizer step). Gradients accumulate into
// the `grad` buffer of every node that requires it.
//
// A graph is confined to one thread. For data-parallel training, each worker
// forwards through shadow() copies of the parameters: shadows share the value
// buffer but own their gradient, so per-shard gradients can be reduced in a
// fixed order afterwards.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cvc/error.hpp"

namespace cvc {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

template <class T>
struct Node {
  Shape shape;
  std::shared_ptr<std::vector<T>> value;
  std::vector<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this->grad and accumulates into inputs[i]->grad.
  std::function<void(Node&)> backward;
  const char* op = "leaf";

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(value->size(), T(0));
    return grad;
  }
};

template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, T v, bool requires_grad = false);
  static BasicTensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false);
  static BasicTensor scalar(T v) { return from_data({}, {v}); }

  // Builds an op node. `backward` may be empty when no input needs a gradient.
  static BasicTensor from_op(Shape shape, std::vector<T> data,
                             std::vector<BasicTensor> inputs,
                             std::function<void(Node<T>&)> backward, const char* op);
  // As from_op, but aliasing an existing value buffer (views such as reshape).
  static BasicTensor from_op_shared(Shape shape, std::shared_ptr<std::vector<T>> data,
                                    std::vector<BasicTensor> inputs,
                                    std::function<void(Node<T>&)> backward, const char* op);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->value->size(); }

  std::span<const T> data() const { return *node_->value; }
  // Only for leaves; mutating an interior node corrupts saved activations.
  std::span<T> mutable_data();
  T item() const;
  T at(std::size_t i) const { return (*node_->value)[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on);
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  // Reverse pass from a scalar. Seeds d(self)/d(self) = 1.
  void backward() const;

  // Same values, no history.
  BasicTensor detach() const;
  // New leaf sharing the value buffer, with its own gradient.
  BasicTensor shadow() const;
  BasicTensor clone() const;

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  explicit BasicTensor(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}
  std::shared_ptr<Node<T>> node_;
};

using Tensor = BasicTensor<float>;
// 64-bit mode, used for gradient verification.
using TensorD = BasicTensor<double>;

template <class T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

template <class T>
bool all_finite(const BasicTensor<T>& t);

// Throws NumericalError naming `where` if any element is NaN or Inf.
template <class T>
void ensure_finite(const BasicTensor<T>& t, const std::string& where);

}  // namespace cvc
