#include "cvc/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace cvc {

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

template <class T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <class T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T v, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<T>(n, v), requires_grad);
}

template <class T>
BasicTensor<T> BasicTensor<T>::from_data(Shape shape, std::vector<T> data, bool requires_grad) {
  if (shape_numel(shape) != data.size())
    throw DimensionError("tensor: shape " + shape_str(shape) + " does not hold " +
                         std::to_string(data.size()) + " values");
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::make_shared<std::vector<T>>(std::move(data));
  n->requires_grad = requires_grad;
  return BasicTensor(std::move(n));
}

template <class T>
BasicTensor<T> BasicTensor<T>::from_op(Shape shape, std::vector<T> data,
                                       std::vector<BasicTensor> inputs,
                                       std::function<void(Node<T>&)> backward, const char* op) {
  auto t = from_data(std::move(shape), std::move(data));
  auto& n = *t.node_;
  n.op = op;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (any) {
    n.requires_grad = true;
    n.inputs.reserve(inputs.size());
    for (auto& in : inputs) n.inputs.push_back(in.node_);
    n.backward = std::move(backward);
  }
  return t;
}

template <class T>
BasicTensor<T> BasicTensor<T>::from_op_shared(Shape shape, std::shared_ptr<std::vector<T>> data,
                                              std::vector<BasicTensor> inputs,
                                              std::function<void(Node<T>&)> backward,
                                              const char* op) {
  if (shape_numel(shape) != data->size())
    throw DimensionError("tensor view: shape " + shape_str(shape) + " does not hold " +
                         std::to_string(data->size()) + " values");
  auto t = from_op({}, {T(0)}, std::move(inputs), std::move(backward), op);
  t.node_->shape = std::move(shape);
  t.node_->value = std::move(data);
  return t;
}

template <class T>
std::span<T> BasicTensor<T>::mutable_data() {
  if (!node_->inputs.empty()) throw Error("mutable_data() on a non-leaf tensor");
  return *node_->value;
}

template <class T>
T BasicTensor<T>::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return (*node_->value)[0];
}

template <class T>
void BasicTensor<T>::set_requires_grad(bool on) {
  if (!node_->inputs.empty()) throw Error("set_requires_grad on a non-leaf tensor");
  node_->requires_grad = on;
}

template <class T>
void BasicTensor<T>::backward() const {
  if (numel() != 1) throw DimensionError("backward() needs a scalar, got " + shape_str(shape()));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order without recursion
  // depth limits on long graphs.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node<T>* child = n->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && !n->grad.empty()) {
      n->backward(*n);
      // Interior gradients are dead once propagated.
      if (n != node_.get()) std::vector<T>().swap(n->grad);
    }
  }
}

template <class T>
BasicTensor<T> BasicTensor<T>::detach() const {
  auto n = std::make_shared<Node<T>>();
  n->shape = node_->shape;
  n->value = node_->value;
  return BasicTensor(std::move(n));
}

template <class T>
BasicTensor<T> BasicTensor<T>::shadow() const {
  auto t = detach();
  t.node_->requires_grad = node_->requires_grad;
  return t;
}

template <class T>
BasicTensor<T> BasicTensor<T>::clone() const {
  return from_data(node_->shape, *node_->value, node_->requires_grad && node_->inputs.empty());
}

template <class T>
bool all_finite(const BasicTensor<T>& t) {
  for (T v : t.data())
    if (!std::isfinite(v)) return false;
  return true;
}

template <class T>
void ensure_finite(const BasicTensor<T>& t, const std::string& where) {
  if (!all_finite(t)) throw NumericalError("non-finite values in " + where);
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template bool all_finite(const BasicTensor<float>&);
template bool all_finite(const BasicTensor<double>&);
template void ensure_finite(const BasicTensor<float>&, const std::string&);
template void ensure_finite(const BasicTensor<double>&, const std::string&);

}  // namespace cvc
