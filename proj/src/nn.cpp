#include "abmem/nn.hpp"

#include <algorithm>
#include <cmath>

namespace abmem {

Tensor ParameterStore::add(std::string name, Tensor value, bool decay) {
  if (find(name) != nullptr) throw std::invalid_argument("parameter registered twice: " + name);
  value.set_requires_grad(true);
  params_.push_back({std::move(name), value, decay});
  return value;
}

const Parameter* ParameterStore::find(std::string_view name) const {
  auto it = std::find_if(params_.begin(), params_.end(),
                         [&](const Parameter& p) { return p.name == name; });
  return it == params_.end() ? nullptr : &*it;
}

Parameter* ParameterStore::find(std::string_view name) {
  return const_cast<Parameter*>(std::as_const(*this).find(name));
}

const Tensor& ParameterStore::get(std::string_view name) const {
  const auto* p = find(name);
  if (p == nullptr) throw std::out_of_range("unknown parameter: " + std::string(name));
  return p->value;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

Tensor glorot_init(int fan_in, int fan_out, Rng& rng) {
  if (fan_in <= 0 || fan_out <= 0) {
    throw std::invalid_argument("glorot_init: fans must be positive");
  }
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> data(static_cast<std::size_t>(fan_in) * static_cast<std::size_t>(fan_out));
  for (double& v : data) v = dist(rng);
  return Tensor::from({static_cast<std::size_t>(fan_out), static_cast<std::size_t>(fan_in)},
                      std::move(data));
}

AffineLayer::AffineLayer(ParameterStore& store, const std::string& name, std::size_t in,
                         std::size_t out, Rng& rng) {
  weight_ = store.add(name + ".weight",
                      glorot_init(static_cast<int>(in), static_cast<int>(out), rng), true);
  bias_ = store.add(name + ".bias", Tensor::zeros({out}), false);
}

Tensor AffineLayer::forward(const Tensor& x) const {
  return add(matvec(weight_, x), bias_);
}

LstmCell::LstmCell(ParameterStore& store, const std::string& name, std::size_t input,
                   std::size_t hidden, Rng& rng)
    : input_(input), hidden_(hidden) {
  if (hidden < 2) throw std::invalid_argument("lstm: hidden extent must be at least 2");
  gates_ = AffineLayer(store, name + ".gates", input + hidden, 4 * hidden, rng);
  static constexpr const char* kSlab[] = {"i", "f", "o", "g"};
  for (std::size_t s = 0; s < 4; ++s) {
    gate_gain_[s] = store.add(name + ".ln_" + kSlab[s] + ".gain",
                              Tensor::vector(std::vector<double>(hidden, 1.0)), false);
    const double bias = s == kForget ? 1.0 : 0.0;
    gate_bias_[s] = store.add(name + ".ln_" + kSlab[s] + ".bias",
                              Tensor::vector(std::vector<double>(hidden, bias)), false);
  }
  cell_gain_ = store.add(name + ".ln_c.gain", Tensor::vector(std::vector<double>(hidden, 1.0)),
                         false);
  cell_bias_ = store.add(name + ".ln_c.bias", Tensor::zeros({hidden}), false);
}

LstmState LstmCell::zero_state() const {
  return {Tensor::zeros({hidden_}), Tensor::zeros({hidden_})};
}

LstmState LstmCell::step(const Tensor& x, const Tensor& h_prev, const Tensor& c_prev) const {
  if (x.rank() != 1 || x.size() != input_ || h_prev.rank() != 1 || h_prev.size() != hidden_ ||
      c_prev.rank() != 1 || c_prev.size() != hidden_) {
    throw DimensionError("lstm_step: expected x[" + std::to_string(input_) + "], h/c[" +
                         std::to_string(hidden_) + "], got " + shape_string(x.shape()) + ", " +
                         shape_string(h_prev.shape()) + ", " + shape_string(c_prev.shape()));
  }
  const Tensor pre = gates_.forward(input_ == 0 ? h_prev : concat(x, h_prev));
  Tensor act[4];
  for (std::size_t s = 0; s < 4; ++s) {
    const Tensor normed =
        layer_norm(slice(pre, s * hidden_, hidden_), gate_gain_[s], gate_bias_[s], kNormEps);
    act[s] = s == kCandidate ? tanh(normed) : sigmoid(normed);
  }
  Tensor c = add(mul(act[kForget], c_prev), mul(act[kInput], act[kCandidate]));
  Tensor h = mul(act[kOutput], tanh(layer_norm(c, cell_gain_, cell_bias_, kNormEps)));
  return {std::move(h), std::move(c)};
}

Tensor dropout(const Tensor& x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout: p must lie in [0, 1)");
  if (!training || p == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - p);
  const double survivor = 1.0 / (1.0 - p);
  std::vector<double> mask(x.size());
  for (double& m : mask) m = keep(rng) ? survivor : 0.0;
  return mask_mul(x, std::move(mask));
}

OptimizerState::OptimizerState(AdamConfig cfg, std::span<const Parameter> params)
    : config(cfg) {
  for (const auto& p : params) {
    first_moment.emplace_back(p.value.size(), 0.0);
    second_moment.emplace_back(p.value.size(), 0.0);
  }
}

AdamReport adam_step(OptimizerState& state, std::span<Parameter> params,
                     std::span<const std::vector<double>> grads) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
    throw std::invalid_argument("adam_step: " + std::to_string(params.size()) + " parameters, " +
                                std::to_string(grads.size()) + " gradients, " +
                                std::to_string(state.first_moment.size()) + " moment slots");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!grads[i].empty() && grads[i].size() != params[i].value.size()) {
      throw std::invalid_argument("adam_step: gradient for " + params[i].name +
                                  " has the wrong extent");
    }
  }

  const auto& cfg = state.config;
  AdamReport report;
  double sq = 0.0;
  for (const auto& g : grads) {
    for (double v : g) sq += v * v;
  }
  report.grad_norm = std::sqrt(sq);
  if (report.grad_norm > cfg.clip_norm) report.clip_scale = cfg.clip_norm / report.grad_norm;

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto value = params[i].value.mutable_data();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    const bool decay = params[i].decay && cfg.weight_decay != 0.0;
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double g = grads[i].empty() ? 0.0 : grads[i][j] * report.clip_scale;
      if (decay) value[j] -= cfg.learning_rate * cfg.weight_decay * value[j];
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      value[j] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
  return report;
}

AdamReport adam_step(OptimizerState& state, std::span<Parameter> params) {
  std::vector<std::vector<double>> grads;
  grads.reserve(params.size());
  for (const auto& p : params) grads.emplace_back(p.value.grad().begin(), p.value.grad().end());
  return adam_step(state, params, grads);
}

}  // namespace abmem
