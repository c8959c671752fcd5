#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace xhved {

using Shape = std::vector<std::size_t>;

/// Thrown when a caller breaks an operation's shape or argument contract.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Thrown when a primitive produces NaN/Inf or a loss becomes non-finite.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

[[noreturn]] void contract_fail(const std::string& what);
inline void require(bool cond, const std::string& what) {
  if (!cond) contract_fail(what);
}

template <typename T>
struct TensorImpl;

template <typename T>
struct Node {
  const char* op = "";
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  // Reads out.grad and accumulates into the grads of `inputs`.
  std::function<void(const TensorImpl<T>& out)> backward;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::shared_ptr<Node<T>> grad_fn;

  T* grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad.data();
  }
  bool has_grad() const { return grad.size() == data.size() && !data.empty(); }
};

/// Shared handle to a dense row-major buffer that can take part in a
/// recorded computation graph. Copies alias the same storage.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using Impl = TensorImpl<T>;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  std::vector<T>& values() { return impl_->data; }
  const std::vector<T>& values() const { return impl_->data; }
  T item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const { return !impl_->grad_fn; }
  /// Accumulated gradient; empty span if nothing has flowed here yet.
  std::span<const T> grad() const;
  void zero_grad();

  /// Reverse-mode sweep from this scalar. Leaf grads accumulate.
  void backward() const;

  /// Same values, new storage, no graph history.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  const std::shared_ptr<Impl>& impl() const { return impl_; }

 private:
  std::shared_ptr<Impl> impl_;
};

/// RAII switch that disables graph recording on the current thread.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

namespace detail {

// Builds an op result, checks finiteness, and attaches a graph node when any
// input needs a gradient.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> values,
                      std::vector<const Tensor<T>*> inputs,
                      std::function<void(const TensorImpl<T>& out)> backward);

template <typename T>
void check_finite(std::span<const T> values, const char* op);

}  // namespace detail

/// Records which side of every non-differentiable point (leaky-relu, clamp,
/// max, |x|) a forward pass took, while a BranchTrace is alive on the
/// current thread. Two evaluations with equal signatures lie in the same
/// smooth piece of the function.
class BranchTrace {
 public:
  BranchTrace();
  ~BranchTrace();
  BranchTrace(const BranchTrace&) = delete;
  BranchTrace& operator=(const BranchTrace&) = delete;

  std::uint64_t signature() const { return hash_; }
  void reset() { hash_ = kSeed; }

  static bool active();
  static void record(std::uint64_t decision);

 private:
  static constexpr std::uint64_t kSeed = 0x9e3779b97f4a7c15ULL;
  std::uint64_t hash_ = kSeed;
  BranchTrace* previous_ = nullptr;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace xhved
