#include "abmem/memory.hpp"

#include <cmath>

namespace abmem {
namespace {

void require_matrix(const char* what, const Tensor& t) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(what) + ": expected a matrix, got " + shape_string(t.shape()));
  }
}

void require_finite(const char* what, const Tensor& t) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite entry");
  }
}

}  // namespace

Addressing address(const Tensor& query, const Tensor& keys, const Tensor& key_proj) {
  require_matrix("address", keys);
  require_matrix("address", key_proj);
  if (keys.dim(0) == 0) throw DimensionError("address: empty bank");
  if (key_proj.dim(0) != keys.dim(1) || query.rank() != 1 || key_proj.dim(1) != query.size()) {
    throw DimensionError("address: keys " + shape_string(keys.shape()) + ", projection " +
                         shape_string(key_proj.shape()) + ", query " +
                         shape_string(query.shape()) + " are inconsistent");
  }
  Tensor logits = matvec(keys, matvec(key_proj, query));
  Tensor weights = softmax(logits);
  return {std::move(weights), std::move(logits)};
}

Readout read(const Tensor& weights, const Tensor& keys, const Tensor& values) {
  require_matrix("read", keys);
  require_matrix("read", values);
  if (weights.rank() != 1 || weights.size() != keys.dim(0) || keys.dim(0) != values.dim(0)) {
    throw DimensionError("read: weights " + shape_string(weights.shape()) + " vs keys " +
                         shape_string(keys.shape()) + " and values " +
                         shape_string(values.shape()));
  }
  double total = 0.0;
  for (double w : weights.data()) total += w;
  if (std::abs(total - 1.0) > 1e-9) {
    throw NumericError("read: weights sum to " + std::to_string(total) + ", expected 1");
  }
  return {vecmat(weights, keys), vecmat(weights, values)};
}

Tensor erase_add(const Tensor& slots, const Tensor& w, const Tensor& erase, const Tensor& add) {
  require_matrix("write", slots);
  const std::size_t n = slots.dim(0), d = slots.dim(1);
  if (w.rank() != 1 || w.size() != n || erase.rank() != 1 || erase.size() != d ||
      add.rank() != 1 || add.size() != d) {
    throw DimensionError("write: slots " + shape_string(slots.shape()) + ", w " +
                         shape_string(w.shape()) + ", erase " + shape_string(erase.shape()) +
                         ", add " + shape_string(add.shape()) + " are inconsistent");
  }
  require_finite("write", w);
  require_finite("write", erase);
  require_finite("write", add);

  const auto s = slots.data();
  std::vector<double> out(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      out[i * d + j] = s[i * d + j] * (1.0 - w[i] * erase[j]) + w[i] * add[j];
    }
  }
  return make_result({n, d}, std::move(out), {slots, w, erase, add}, [n, d](TensorImpl& self) {
    const auto& s = self.parents[0]->data;
    const auto& w = self.parents[1]->data;
    const auto& e = self.parents[2]->data;
    const auto& a = self.parents[3]->data;
    const auto& g = self.grad;
    if (self.parents[0]->requires_grad) {
      auto& gs = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) gs[i * d + j] += g[i * d + j] * (1.0 - w[i] * e[j]);
      }
    }
    if (self.parents[1]->requires_grad) {
      auto& gw = self.parents[1]->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += g[i * d + j] * (a[j] - s[i * d + j] * e[j]);
        gw[i] += acc;
      }
    }
    if (self.parents[2]->requires_grad) {
      auto& ge = self.parents[2]->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) ge[j] -= g[i * d + j] * s[i * d + j] * w[i];
      }
    }
    if (self.parents[3]->requires_grad) {
      auto& ga = self.parents[3]->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) ga[j] += g[i * d + j] * w[i];
      }
    }
  });
}

KeyValueBank::KeyValueBank(Tensor keys, Tensor values)
    : keys_(std::move(keys)), values_(std::move(values)) {
  require_matrix("bank keys", keys_);
  require_matrix("bank values", values_);
  if (keys_.dim(0) != values_.dim(0)) {
    throw DimensionError("bank: " + std::to_string(keys_.dim(0)) + " keys but " +
                         std::to_string(values_.dim(0)) + " values");
  }
}

KeyValueBank::KeyValueBank(const KeyValueBank& other)
    : keys_(other.keys_),
      values_(other.values_),
      reads_(other.read_count()),
      writes_(other.write_count()) {}

KeyValueBank& KeyValueBank::operator=(const KeyValueBank& other) {
  keys_ = other.keys_;
  values_ = other.values_;
  reads_.store(other.read_count());
  writes_.store(other.write_count());
  return *this;
}

Addressing KeyValueBank::address(const Tensor& query, const Tensor& key_proj) const {
  return abmem::address(query, keys_, key_proj);
}

Readout KeyValueBank::read(const Tensor& weights) const {
  reads_.fetch_add(1, std::memory_order_relaxed);
  return abmem::read(weights, keys_, values_);
}

void KeyValueBank::reset_counters() {
  reads_.store(0);
  writes_.store(0);
}

ExternalBank::ExternalBank(Tensor keys, Tensor values)
    : KeyValueBank(std::move(keys), std::move(values)) {
  if (slots() == 0) throw DimensionError("external bank: needs at least one slot");
}

AbstractionBank::AbstractionBank(Tensor keys, Tensor values)
    : KeyValueBank(std::move(keys), std::move(values)) {}

void AbstractionBank::write(const Tensor& w, const Tensor& erase_key, const Tensor& erase_value,
                            const Tensor& add_key, const Tensor& add_value) {
  Tensor keys = erase_add(keys_, w, erase_key, add_key);
  Tensor values = erase_add(values_, w, erase_value, add_value);
  keys_ = std::move(keys);
  values_ = std::move(values);
  writes_.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace abmem
