#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "abmem/rng.hpp"
#include "abmem/tensor.hpp"

namespace abmem {

// A trainable tensor with a unique name. `decay` marks weight matrices that
// receive weight decay; biases, norm parameters and memory contents don't.
struct Parameter {
  std::string name;
  Tensor value;
  bool decay = false;
};

class ParameterStore {
 public:
  // Registers a leaf tensor; throws if the name is already taken.
  Tensor add(std::string name, Tensor value, bool decay);

  std::span<Parameter> all() { return params_; }
  std::span<const Parameter> all() const { return params_; }
  const Parameter* find(std::string_view name) const;
  Parameter* find(std::string_view name);
  const Tensor& get(std::string_view name) const;

  void zero_grad();
  std::size_t scalar_count() const;

 private:
  std::vector<Parameter> params_;
};

// U(-L, L) with L = sqrt(6 / (fan_in + fan_out)), shaped [fan_out, fan_in].
Tensor glorot_init(int fan_in, int fan_out, Rng& rng);

// FC(x) = W x + b.
class AffineLayer {
 public:
  AffineLayer() = default;
  AffineLayer(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
              Rng& rng);

  Tensor forward(const Tensor& x) const;
  std::size_t in_features() const { return weight_.dim(1); }
  std::size_t out_features() const { return weight_.dim(0); }
  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }
  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }

 private:
  Tensor weight_;
  Tensor bias_;
};

struct LstmState {
  Tensor h;
  Tensor c;
};

// One-layer LSTM with layer normalisation on each gate pre-activation slab
// and on the cell state before its tanh. The affine map acts on [x; h_prev]
// and its rows are laid out as gate slabs in the order (i, f, o, g).
class LstmCell {
 public:
  static constexpr std::size_t kInput = 0;
  static constexpr std::size_t kForget = 1;
  static constexpr std::size_t kOutput = 2;
  static constexpr std::size_t kCandidate = 3;
  static constexpr double kNormEps = 1e-8;

  LstmCell() = default;
  LstmCell(ParameterStore& store, const std::string& name, std::size_t input, std::size_t hidden,
           Rng& rng);

  LstmState step(const Tensor& x, const Tensor& h_prev, const Tensor& c_prev) const;
  LstmState zero_state() const;

  std::size_t input_size() const { return input_; }
  std::size_t hidden_size() const { return hidden_; }

  const AffineLayer& gates() const { return gates_; }
  AffineLayer& gates() { return gates_; }
  const Tensor& gate_gain(std::size_t slab) const { return gate_gain_[slab]; }
  const Tensor& gate_bias(std::size_t slab) const { return gate_bias_[slab]; }
  const Tensor& cell_gain() const { return cell_gain_; }
  const Tensor& cell_bias() const { return cell_bias_; }

 private:
  std::size_t input_ = 0;
  std::size_t hidden_ = 0;
  AffineLayer gates_;
  Tensor gate_gain_[4];
  Tensor gate_bias_[4];
  Tensor cell_gain_;
  Tensor cell_bias_;
};

// Inverted dropout: zeroes entries with probability p and scales survivors
// by 1/(1-p) when training; identity otherwise.
Tensor dropout(const Tensor& x, double p, bool training, Rng& rng);

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-4;
  double clip_norm = 10.0;
};

struct OptimizerState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;

  OptimizerState() = default;
  OptimizerState(AdamConfig cfg, std::span<const Parameter> params);
};

struct AdamReport {
  double grad_norm = 0.0;  // global L2 norm before clipping
  double clip_scale = 1.0;
};

// Global-norm clip, decoupled weight decay on `decay` parameters, then the
// bias-corrected ADAM update. grads[i] belongs to params[i].
AdamReport adam_step(OptimizerState& state, std::span<Parameter> params,
                     std::span<const std::vector<double>> grads);

// Same, reading each parameter's accumulated gradient.
AdamReport adam_step(OptimizerState& state, std::span<Parameter> params);

}  // namespace abmem
