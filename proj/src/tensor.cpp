#include "abmem/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "abmem/kernels.hpp"

namespace abmem {
namespace {

thread_local bool t_grad_enabled = true;

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& a, std::size_t rank) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_string(a.shape()));
  }
}

void require_finite(const char* op, std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite input");
  }
}

inline std::vector<double>& grad_of(TensorImpl& self, std::size_t parent) {
  return self.parents[parent]->ensure_grad();
}

inline bool wants(const TensorImpl& self, std::size_t parent) {
  return self.parents[parent]->requires_grad;
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
  std::vector<double> out(a.size());
  std::transform(a.data().begin(), a.data().end(), out.begin(), fwd);
  return make_result(a.shape(), std::move(out), {a}, [deriv](TensorImpl& self) {
    auto& ga = grad_of(self, 0);
    const auto& x = self.parents[0]->data;
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * deriv(x[i], self.data[i]);
  });
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor: shape " + shape_string(shape) + " does not hold " +
                         std::to_string(data.size()) + " values");
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::vector(std::vector<double> data, bool requires_grad) {
  const auto n = data.size();
  return from({n}, std::move(data), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

void Tensor::zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0); }

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item: tensor " + shape_string(shape()) + " is not scalar");
  return impl_->data[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  return impl_->data[row * impl_->shape.at(1) + col];
}

Tensor Tensor::detach() const { return from(shape(), impl_->data, false); }

Tensor Tensor::clone() const { return from(shape(), impl_->data, impl_->requires_grad); }

Tape& Tape::current() {
  thread_local Tape tape;
  return tape;
}

void Tape::record(std::shared_ptr<TensorImpl> node) { nodes_.push_back(std::move(node)); }

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw DimensionError("backward: loss " + shape_string(loss.shape()) + " is not scalar");
  }
  const auto& root = loss.impl();
  auto it = std::find(nodes_.rbegin(), nodes_.rend(), root);
  if (it == nodes_.rend()) {
    if (root->requires_grad && !root->backward) {
      root->ensure_grad()[0] += 1.0;  // a leaf is its own loss
      return;
    }
    throw std::logic_error("backward: loss is not on the tape");
  }
  // Intermediate gradients from an earlier call would otherwise be pushed
  // into the leaves a second time.
  for (auto& node : nodes_) node->grad.clear();
  root->ensure_grad()[0] += 1.0;
  for (; it != nodes_.rend(); ++it) {
    TensorImpl& node = **it;
    if (node.grad.empty() || !node.backward) continue;  // unreachable from loss
    node.backward(node);
  }
}

void Tape::clear() { nodes_.clear(); }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                   BackwardFn backward) {
  bool track = false;
  if (t_grad_enabled) {
    track = std::any_of(parents.begin(), parents.end(),
                        [](const Tensor& p) { return p.requires_grad(); });
  }
  Tensor out = Tensor::from(std::move(shape), std::move(data), track);
  if (track) {
    auto& impl = *out.impl();
    impl.parents.reserve(parents.size());
    for (auto& p : parents) impl.parents.push_back(p.impl());
    impl.backward = std::move(backward);
    Tape::current().record(out.impl());
  }
  return out;
}

void backward(const Tensor& loss) { Tape::current().backward(loss); }

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: inner extents differ, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  kernels::gemm({m, n, k}, a.data(), b.data(), out, false);
  return make_result({m, n}, std::move(out), {a, b}, [m, n, k](TensorImpl& self) {
    const auto& ad = self.parents[0]->data;
    const auto& bd = self.parents[1]->data;
    if (wants(self, 0)) {  // dA += G B^T
      kernels::gemm({m, k, n, false, true}, self.grad, bd, grad_of(self, 0), true);
    }
    if (wants(self, 1)) {  // dB += A^T G
      kernels::gemm({k, n, m, true, false}, ad, self.grad, grad_of(self, 1), true);
    }
  });
}

Tensor matvec(const Tensor& a, const Tensor& x) {
  require_rank("matvec", a, 2);
  require_rank("matvec", x, 1);
  if (a.dim(1) != x.dim(0)) {
    throw DimensionError("matvec: extents differ, " + shape_string(a.shape()) + " x " +
                         shape_string(x.shape()));
  }
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m);
  kernels::gemm({m, 1, n}, a.data(), x.data(), out, false);
  return make_result({m}, std::move(out), {a, x}, [m, n](TensorImpl& self) {
    if (wants(self, 0)) {  // dA += g x^T
      kernels::gemm({m, n, 1}, self.grad, self.parents[1]->data, grad_of(self, 0), true);
    }
    if (wants(self, 1)) {  // dx += A^T g
      kernels::gemm({n, 1, m, true, false}, self.parents[0]->data, self.grad, grad_of(self, 1),
                    true);
    }
  });
}

Tensor vecmat(const Tensor& x, const Tensor& a) {
  require_rank("vecmat", x, 1);
  require_rank("vecmat", a, 2);
  if (a.dim(0) != x.dim(0)) {
    throw DimensionError("vecmat: extents differ, " + shape_string(x.shape()) + " x " +
                         shape_string(a.shape()));
  }
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(n);
  kernels::gemm({1, n, m}, x.data(), a.data(), out, false);
  return make_result({n}, std::move(out), {x, a}, [m, n](TensorImpl& self) {
    if (wants(self, 0)) {  // dx += A g
      kernels::gemm({m, 1, n}, self.parents[1]->data, self.grad, grad_of(self, 0), true);
    }
    if (wants(self, 1)) {  // dA += x g^T
      kernels::gemm({m, n, 1}, self.parents[0]->data, self.grad, grad_of(self, 1), true);
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](TensorImpl& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!wants(self, p)) continue;
      auto& g = grad_of(self, p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](TensorImpl& self) {
    if (wants(self, 0)) {
      auto& g = grad_of(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self, 1)) {
      auto& g = grad_of(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](TensorImpl& self) {
    const auto& ad = self.parents[0]->data;
    const auto& bd = self.parents[1]->data;
    if (wants(self, 0)) {
      auto& g = grad_of(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bd[i];
    }
    if (wants(self, 1)) {
      auto& g = grad_of(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * ad[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  return unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor log(const Tensor& a) {
  for (double v : a.data()) {
    if (!(v > 0.0)) throw NumericError("log: non-positive input");
  }
  return unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor softmax(const Tensor& logits) {
  require_rank("softmax", logits, 1);
  if (logits.size() == 0) throw DimensionError("softmax: empty input");
  require_finite("softmax", logits.data());
  const auto e = logits.data();
  const double peak = *std::max_element(e.begin(), e.end());
  std::vector<double> out(e.size());
  double total = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) total += (out[i] = std::exp(e[i] - peak));
  for (double& v : out) v /= total;
  return make_result(logits.shape(), std::move(out), {logits}, [](TensorImpl& self) {
    const auto& y = self.data;
    double inner = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) inner += self.grad[i] * y[i];
    auto& g = grad_of(self, 0);
    for (std::size_t i = 0; i < y.size(); ++i) g[i] += y[i] * (self.grad[i] - inner);
  });
}

Tensor log_softmax(const Tensor& logits) {
  require_rank("log_softmax", logits, 1);
  if (logits.size() == 0) throw DimensionError("log_softmax: empty input");
  require_finite("log_softmax", logits.data());
  const auto e = logits.data();
  const double peak = *std::max_element(e.begin(), e.end());
  double total = 0.0;
  for (double v : e) total += std::exp(v - peak);
  const double log_norm = peak + std::log(total);
  std::vector<double> out(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) out[i] = e[i] - log_norm;
  return make_result(logits.shape(), std::move(out), {logits}, [](TensorImpl& self) {
    double gsum = 0.0;
    for (double v : self.grad) gsum += v;
    auto& g = grad_of(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] - std::exp(self.data[i]) * gsum;
  });
}

Tensor concat(const Tensor& a, const Tensor& b) {
  const Tensor parts[] = {a, b};
  return concat(parts);
}

Tensor concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat: no operands");
  std::vector<double> out;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.rank() != 1) {
      throw DimensionError("concat: rank mismatch, operand " + shape_string(p.shape()) +
                           " is not a vector");
    }
    offsets.push_back(out.size());
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  const auto n = out.size();
  return make_result({n}, std::move(out), {parts.begin(), parts.end()},
                     [offsets](TensorImpl& self) {
                       for (std::size_t p = 0; p < self.parents.size(); ++p) {
                         if (!wants(self, p)) continue;
                         auto& g = grad_of(self, p);
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offsets[p] + i];
                       }
                     });
}

Tensor slice(const Tensor& a, std::size_t offset, std::size_t length) {
  require_rank("slice", a, 1);
  if (offset + length > a.size()) {
    throw DimensionError("slice: range [" + std::to_string(offset) + ", " +
                         std::to_string(offset + length) + ") exceeds " + shape_string(a.shape()));
  }
  std::vector<double> out(a.data().begin() + static_cast<std::ptrdiff_t>(offset),
                          a.data().begin() + static_cast<std::ptrdiff_t>(offset + length));
  return make_result({length}, std::move(out), {a}, [offset](TensorImpl& self) {
    auto& g = grad_of(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[offset + i] += self.grad[i];
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_rank("layer_norm", x, 1);
  require_same_shape("layer_norm", x, gain);
  require_same_shape("layer_norm", x, bias);
  const std::size_t n = x.size();
  if (n < 2) throw DimensionError("layer_norm: degenerate input of extent " + std::to_string(n));

  const auto xd = x.data();
  double mean = 0.0;
  for (double v : xd) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : xd) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  const double inv_std = 1.0 / std::sqrt(var + eps);

  std::vector<double> normed(n), out(n);
  for (std::size_t i = 0; i < n; ++i) {
    normed[i] = (xd[i] - mean) * inv_std;
    out[i] = gain[i] * normed[i] + bias[i];
  }
  return make_result({n}, std::move(out), {x, gain, bias},
                     [normed = std::move(normed), inv_std](TensorImpl& self) {
                       const std::size_t n = normed.size();
                       const auto& gain = self.parents[1]->data;
                       if (wants(self, 1)) {
                         auto& g = grad_of(self, 1);
                         for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * normed[i];
                       }
                       if (wants(self, 2)) {
                         auto& g = grad_of(self, 2);
                         for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i];
                       }
                       if (wants(self, 0)) {
                         double mean_d = 0.0, mean_dn = 0.0;
                         for (std::size_t i = 0; i < n; ++i) {
                           const double d = self.grad[i] * gain[i];
                           mean_d += d;
                           mean_dn += d * normed[i];
                         }
                         mean_d /= static_cast<double>(n);
                         mean_dn /= static_cast<double>(n);
                         auto& g = grad_of(self, 0);
                         for (std::size_t i = 0; i < n; ++i) {
                           const double d = self.grad[i] * gain[i];
                           g[i] += inv_std * (d - mean_d - normed[i] * mean_dn);
                         }
                       }
                     });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_result({}, {total}, {a}, [](TensorImpl& self) {
    auto& g = grad_of(self, 0);
    for (double& v : g) v += self.grad[0];
  });
}

Tensor dot(const Tensor& a, const Tensor& b) {
  require_same_shape("dot", a, b);
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += a[i] * b[i];
  return make_result({}, {total}, {a, b}, [](TensorImpl& self) {
    const auto& ad = self.parents[0]->data;
    const auto& bd = self.parents[1]->data;
    if (wants(self, 0)) {
      auto& g = grad_of(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * bd[i];
    }
    if (wants(self, 1)) {
      auto& g = grad_of(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * ad[i];
    }
  });
}

Tensor add_n(std::span<const Tensor> terms) {
  if (terms.empty()) throw DimensionError("add_n: no operands");
  std::vector<double> out(terms[0].size(), 0.0);
  for (const auto& t : terms) {
    require_same_shape("add_n", terms[0], t);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += t[i];
  }
  return make_result(terms[0].shape(), std::move(out), {terms.begin(), terms.end()},
                     [](TensorImpl& self) {
                       for (std::size_t p = 0; p < self.parents.size(); ++p) {
                         if (!wants(self, p)) continue;
                         auto& g = grad_of(self, p);
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                       }
                     });
}

Tensor mask_mul(const Tensor& a, std::vector<double> mask) {
  if (mask.size() != a.size()) {
    throw DimensionError("mask_mul: mask of " + std::to_string(mask.size()) + " values for " +
                         shape_string(a.shape()));
  }
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * mask[i];
  return make_result(a.shape(), std::move(out), {a}, [mask = std::move(mask)](TensorImpl& self) {
    auto& g = grad_of(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

Tensor cross_entropy(const Tensor& logits, std::size_t label) {
  require_rank("cross_entropy", logits, 1);
  if (label >= logits.size()) {
    throw DimensionError("cross_entropy: label " + std::to_string(label) + " outside " +
                         shape_string(logits.shape()));
  }
  require_finite("cross_entropy", logits.data());
  const auto e = logits.data();
  const double peak = *std::max_element(e.begin(), e.end());
  std::vector<double> probs(e.size());
  double total = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) total += (probs[i] = std::exp(e[i] - peak));
  for (double& p : probs) p /= total;
  const double loss = -(e[label] - peak - std::log(total));
  return make_result({}, {loss}, {logits},
                     [probs = std::move(probs), label](TensorImpl& self) {
                       auto& g = grad_of(self, 0);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         g[i] += self.grad[0] * (probs[i] - (i == label ? 1.0 : 0.0));
                       }
                     });
}

}  // namespace abmem
