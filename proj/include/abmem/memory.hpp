#pragma once

#include <atomic>
#include <cstddef>

#include "abmem/tensor.hpp"

namespace abmem {

struct Addressing {
  Tensor weights;  // softmax(logits), [N]
  Tensor logits;   // [N]
};

// Content-based addressing through a learned bilinear form:
// logits_i = key_i^T (key_proj * query), key_proj shaped [d_key, d_query].
Addressing address(const Tensor& query, const Tensor& keys, const Tensor& key_proj);

struct Readout {
  Tensor key;    // sum_i a_i key_i
  Tensor value;  // sum_i a_i value_i
};

// Attention-weighted blend of every slot. Weights must sum to 1 within 1e-9.
Readout read(const Tensor& weights, const Tensor& keys, const Tensor& values);

// slots[i] <- slots[i] * (1 - w_i * erase) + w_i * add for every row i.
Tensor erase_add(const Tensor& slots, const Tensor& w, const Tensor& erase, const Tensor& add);

// Key/value slot matrices plus access counters. Keys are [N, d_key] and
// values [N, d_value]; the counters are safe to bump from parallel readers.
class KeyValueBank {
 public:
  KeyValueBank() = default;
  KeyValueBank(Tensor keys, Tensor values);
  KeyValueBank(const KeyValueBank& other);
  KeyValueBank& operator=(const KeyValueBank& other);

  std::size_t slots() const { return keys_.dim(0); }
  std::size_t key_dim() const { return keys_.dim(1); }
  std::size_t value_dim() const { return values_.dim(1); }
  const Tensor& keys() const { return keys_; }
  const Tensor& values() const { return values_; }

  Addressing address(const Tensor& query, const Tensor& key_proj) const;
  Readout read(const Tensor& weights) const;

  std::size_t read_count() const { return reads_.load(std::memory_order_relaxed); }
  std::size_t write_count() const { return writes_.load(std::memory_order_relaxed); }
  void reset_counters();

 protected:
  Tensor keys_;
  Tensor values_;
  mutable std::atomic<std::size_t> reads_{0};
  std::atomic<std::size_t> writes_{0};
};

// Read-only bank of (visual embedding, label embedding) slots.
class ExternalBank : public KeyValueBank {
 public:
  ExternalBank() = default;
  ExternalBank(Tensor keys, Tensor values);
};

// Smaller writable bank. Writes replace the slot tensors with their
// erase/add update, so a sequence of writes stays on the gradient tape.
class AbstractionBank : public KeyValueBank {
 public:
  AbstractionBank() = default;
  AbstractionBank(Tensor keys, Tensor values);

  void write(const Tensor& w, const Tensor& erase_key, const Tensor& erase_value,
             const Tensor& add_key, const Tensor& add_value);
};

}  // namespace abmem
