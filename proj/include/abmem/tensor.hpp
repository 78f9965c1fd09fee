#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace abmem {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Operand extents are incompatible with the requested operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite values or arguments outside an operation's domain.
class NumericError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct TensorImpl;
using BackwardFn = std::function<void(TensorImpl& self)>;

// Storage and tape bookkeeping for one tensor. Grad is allocated on first use.
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  BackwardFn backward;

  std::vector<double>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

// Dense row-major tensor of doubles with reverse-mode gradient support.
// Copies share storage; use clone() or detach() for an independent copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor vector(std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t size() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() { return impl_->data; }
  // Zero-length span until a gradient has been accumulated or zero_grad() ran.
  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> mutable_grad() { return impl_->ensure_grad(); }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool flag) { impl_->requires_grad = flag; }
  void zero_grad();

  double item() const;
  double operator[](std::size_t i) const { return impl_->data[i]; }
  double at(std::size_t row, std::size_t col) const;

  // New leaf with copied data and no gradient history.
  Tensor detach() const;
  // New leaf with copied data, keeping requires_grad.
  Tensor clone() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Ordered record of the non-leaf tensors created while gradients are enabled.
// One tape per thread; backward walks it once in reverse recording order.
class Tape {
 public:
  static Tape& current();

  void record(std::shared_ptr<TensorImpl> node);
  void backward(const Tensor& loss);
  void clear();
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<std::shared_ptr<TensorImpl>> nodes_;
};

// Disables recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Builds an op result. Records it on the current tape when gradients are
// enabled and some parent requires them; otherwise `backward` is dropped.
Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                   BackwardFn backward);

// Seeds d(loss)/d(loss) = 1 and propagates through the current tape.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Differentiable operations.

Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]
Tensor matvec(const Tensor& a, const Tensor& x);  // [m,n] x [n]
Tensor vecmat(const Tensor& x, const Tensor& a);  // [m] x [m,n], i.e. a^T x

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor log(const Tensor& a);

Tensor softmax(const Tensor& logits);
Tensor log_softmax(const Tensor& logits);

Tensor concat(const Tensor& a, const Tensor& b);
Tensor concat(std::span<const Tensor> parts);
Tensor slice(const Tensor& a, std::size_t offset, std::size_t length);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-8);

Tensor sum(const Tensor& a);
Tensor dot(const Tensor& a, const Tensor& b);
Tensor add_n(std::span<const Tensor> terms);

// Multiplies by a fixed mask (no gradient into the mask).
Tensor mask_mul(const Tensor& a, std::vector<double> mask);

// -log softmax(logits)[label], fused for stability.
Tensor cross_entropy(const Tensor& logits, std::size_t label);

}  // namespace abmem
