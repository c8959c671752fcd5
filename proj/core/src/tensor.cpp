#include "xhved/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace xhved {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void contract_fail(const std::string& what) { throw ContractViolation(what); }

bool grad_mode_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : impl_(std::make_shared<Impl>()) {
  impl_->data.assign(xhved::numel(shape), fill);
  impl_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<Impl>()) {
  require(xhved::numel(shape) == values.size(),
          "tensor: shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) +
              " values");
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

template <typename T>
T Tensor<T>::item() const {
  require(numel() == 1, "item: tensor has " + std::to_string(numel()) + " elements");
  return impl_->data[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  require(is_leaf() || on, "set_requires_grad(false) on a non-leaf tensor");
  impl_->requires_grad = on;
  return *this;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!impl_->has_grad()) return {};
  return impl_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  impl_->grad.clear();
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(impl_->shape, impl_->data);
}

template <typename T>
void Tensor<T>::backward() const {
  require(numel() == 1, "backward: root must be a scalar, got shape " + shape_str(shape()));
  if (!impl_->requires_grad) return;

  // Iterative post-order DFS gives a topological order; every node is
  // visited exactly once.
  std::vector<Impl*> order;
  std::unordered_set<Impl*> seen;
  std::vector<std::pair<Impl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  seen.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const auto* fn = node->grad_fn.get();
    if (fn && next < fn->inputs.size()) {
      Impl* child = fn->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  for (Impl* n : order) {
    if (n->grad_fn) n->grad.clear();
  }
  impl_->grad_buffer()[0] += T(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Impl* n = *it;
    if (!n->grad_fn) continue;
    if (n->has_grad()) n->grad_fn->backward(*n);
    if (n != impl_.get()) {
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

namespace detail {

template <typename T>
void check_finite(std::span<const T> values, const char* op) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(std::string("non-finite value produced by ") + op + " at flat index " +
                         std::to_string(i));
    }
  }
}

template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> values,
                      std::vector<const Tensor<T>*> inputs,
                      std::function<void(const TensorImpl<T>& out)> backward) {
  check_finite<T>(values, op);
  Tensor<T> out(std::move(shape), std::move(values));
  if (!g_grad_enabled) return out;
  bool needs = false;
  for (const auto* in : inputs) needs = needs || in->requires_grad();
  if (!needs) return out;
  auto node = std::make_shared<Node<T>>();
  node->op = op;
  node->inputs.reserve(inputs.size());
  for (const auto* in : inputs) node->inputs.push_back(in->impl());
  node->backward = std::move(backward);
  out.impl()->requires_grad = true;
  out.impl()->grad_fn = std::move(node);
  return out;
}

template void check_finite<float>(std::span<const float>, const char*);
template void check_finite<double>(std::span<const double>, const char*);
template Tensor<float> make_result<float>(const char*, Shape, std::vector<float>,
                                          std::vector<const Tensor<float>*>,
                                          std::function<void(const TensorImpl<float>&)>);
template Tensor<double> make_result<double>(const char*, Shape, std::vector<double>,
                                            std::vector<const Tensor<double>*>,
                                            std::function<void(const TensorImpl<double>&)>);

}  // namespace detail

namespace {
thread_local BranchTrace* g_trace = nullptr;
}

BranchTrace::BranchTrace() : previous_(g_trace) { g_trace = this; }
BranchTrace::~BranchTrace() { g_trace = previous_; }
bool BranchTrace::active() { return g_trace != nullptr; }
void BranchTrace::record(std::uint64_t decision) {
  g_trace->hash_ = (g_trace->hash_ ^ (decision + 0x632be59bd9b4e019ULL)) * 0x100000001b3ULL;
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace xhved
