#include "abmem/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "abmem/data.hpp"
#include "abmem/memory.hpp"
#include "abmem/nn.hpp"

namespace abmem {
namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = dist(rng);
  return Tensor::from(std::move(shape), std::move(data), true);
}

// Fixed random weights so the scalar loss sees every output entry.
Tensor probe_loss(const Tensor& out, const Tensor& probe) { return dot(out, probe); }

}  // namespace

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult check_gradients(std::string name, std::vector<Tensor> leaves,
                                const std::function<Tensor()>& loss_fn,
                                const GradCheckOptions& options) {
  Tape& tape = Tape::current();
  tape.clear();
  for (auto& leaf : leaves) leaf.zero_grad();
  backward(loss_fn());
  std::vector<std::vector<double>> analytic;
  for (const auto& leaf : leaves) analytic.emplace_back(leaf.grad().begin(), leaf.grad().end());
  tape.clear();

  std::vector<std::pair<std::size_t, std::size_t>> entries;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    for (std::size_t i = 0; i < leaves[l].size(); ++i) entries.emplace_back(l, i);
  }
  if (options.sample_entries > 0 && options.sample_entries < entries.size()) {
    Rng rng = make_rng(options.seed, "gradcheck.sample");
    std::vector<std::pair<std::size_t, std::size_t>> picked;
    for (std::size_t k : sample_without_replacement(entries.size(), options.sample_entries, rng)) {
      picked.push_back(entries[k]);
    }
    entries = std::move(picked);
  }

  GradCheckResult result;
  result.name = std::move(name);
  NoGradGuard no_grad;
  for (const auto& [l, i] : entries) {
    auto data = leaves[l].mutable_data();
    {
      const double original = data[i];
      data[i] = original + options.step;
      const double up = loss_fn().item();
      data[i] = original - options.step;
      const double down = loss_fn().item();
      data[i] = original;
      const double numeric = (up - down) / (2.0 * options.step);
      result.max_rel_error = std::max(result.max_rel_error, relative_error(analytic[l][i], numeric));
      ++result.entries;
    }
  }
  result.passed = result.max_rel_error < options.tolerance;
  return result;
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.visual_dim = 6;
  c.label_dim = 4;
  c.abs_key_dim = 4;
  c.abs_value_dim = 3;
  c.external_slots = 8;
  c.abstraction_slots = 4;
  c.steps = 2;
  c.hidden = 5;
  c.n_way = 3;
  c.dropout = 0.0;
  c.batch_size = 2;
  return c;
}

std::vector<GradCheckResult> run_op_gradchecks(const GradCheckOptions& options) {
  Rng rng = make_rng(options.seed, "gradcheck.ops");
  std::vector<GradCheckResult> out;
  auto run = [&](std::string name, std::vector<Tensor> leaves, std::function<Tensor()> fn) {
    out.push_back(check_gradients(std::move(name), std::move(leaves), fn, options));
  };

  {
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
    Tensor probe = random_tensor({3, 2}, rng);
    run("matmul", {a, b}, [=] { return probe_loss(matmul(a, b), probe); });
  }
  {
    Tensor a = random_tensor({4, 5}, rng), x = random_tensor({5}, rng), p = random_tensor({4}, rng);
    run("matvec", {a, x}, [=] { return probe_loss(matvec(a, x), p); });
  }
  {
    Tensor a = random_tensor({4, 5}, rng), x = random_tensor({4}, rng), p = random_tensor({5}, rng);
    run("vecmat", {x, a}, [=] { return probe_loss(vecmat(x, a), p); });
  }
  {
    Tensor a = random_tensor({2, 3}, rng), b = random_tensor({2, 3}, rng);
    Tensor p = random_tensor({2, 3}, rng);
    run("add", {a, b}, [=] { return probe_loss(add(a, b), p); });
    run("sub", {a, b}, [=] { return probe_loss(sub(a, b), p); });
    run("mul", {a, b}, [=] { return probe_loss(mul(a, b), p); });
    run("scale", {a}, [=] { return probe_loss(scale(a, -1.7), p); });
    run("sigmoid", {a}, [=] { return probe_loss(sigmoid(a), p); });
    run("tanh", {a}, [=] { return probe_loss(tanh(a), p); });
    run("mask_mul", {a}, [=] { return probe_loss(mask_mul(a, {2.0, 0.0, 2.0, 2.0, 0.0, 2.0}), p); });
    const Tensor terms[] = {a, b, a};
    run("add_n", {a, b}, [=] { return probe_loss(add_n(terms), p); });
  }
  {
    Tensor x = random_tensor({2, 3}, rng, 0.5, 2.0), p = random_tensor({2, 3}, rng);
    run("log", {x}, [=] { return probe_loss(log(x), p); });
  }
  {
    Tensor e = random_tensor({6}, rng), p = random_tensor({6}, rng);
    run("softmax", {e}, [=] { return probe_loss(softmax(e), p); });
    run("log_softmax", {e}, [=] { return probe_loss(log_softmax(e), p); });
    run("cross_entropy", {e}, [=] { return cross_entropy(e, 2); });
    run("sum", {e}, [=] { return sum(mul(e, p)); });
    run("dot", {e, p}, [=] { return dot(e, p); });
    run("slice", {e}, [=] { return probe_loss(slice(e, 1, 4), slice(p, 0, 4).detach()); });
  }
  {
    Tensor a = random_tensor({4}, rng), b = random_tensor({6}, rng), p = random_tensor({10}, rng);
    run("concat", {a, b}, [=] { return probe_loss(concat(a, b), p); });
  }
  {
    Tensor x = random_tensor({8}, rng), gain = random_tensor({8}, rng), bias = random_tensor({8}, rng);
    Tensor p = random_tensor({8}, rng);
    run("layer_norm", {x, gain, bias}, [=] { return probe_loss(layer_norm(x, gain, bias), p); });
  }
  {
    ParameterStore store;
    Rng init = make_rng(options.seed, "gradcheck.lstm");
    LstmCell cell(store, "cell", 4, 3, init);
    Tensor x = random_tensor({4}, rng), h = random_tensor({3}, rng), c = random_tensor({3}, rng);
    std::vector<Tensor> leaves{x, h, c};
    for (const auto& p : store.all()) leaves.push_back(p.value);
    run("lstm_step", leaves, [=] {
      const auto s = cell.step(x, h, c);
      return add(sum(s.h), scale(sum(s.c), 0.5));
    });
  }
  {
    Tensor q = random_tensor({5}, rng), keys = random_tensor({6, 4}, rng);
    Tensor proj = random_tensor({4, 5}, rng), values = random_tensor({6, 3}, rng);
    Tensor p = random_tensor({6}, rng), pk = random_tensor({4}, rng), pv = random_tensor({3}, rng);
    run("address", {q, keys, proj}, [=] { return probe_loss(address(q, keys, proj).weights, p); });
    run("read", {q, keys, proj, values}, [=] {
      const auto r = read(address(q, keys, proj).weights, keys, values);
      return add(dot(r.key, pk), dot(r.value, pv));
    });
  }
  {
    Tensor slots = random_tensor({3, 4}, rng), logits = random_tensor({3}, rng);
    Tensor pre_erase = random_tensor({4}, rng), add_vec = random_tensor({4}, rng);
    Tensor p = random_tensor({3, 4}, rng);
    run("write", {slots, logits, pre_erase, add_vec}, [=] {
      return probe_loss(erase_add(slots, softmax(logits), sigmoid(pre_erase), add_vec), p);
    });
  }
  {
    Tensor w = random_tensor({4, 3}, rng), x = random_tensor({3, 2}, rng);
    const Tensor mix = Tensor::vector({0.3, -0.8});
    run("composite", {w, x}, [=] {
      const Tensor probs = softmax(matvec(tanh(matmul(w, x)), mix));
      return sum(scale(log(slice(probs, 1, 1)), -1.0));
    });
  }
  return out;
}

GradCheckResult run_model_gradcheck(const GradCheckOptions& options, bool full) {
  const ModelConfig cfg = tiny_config();
  AbstractionMemoryModel model(cfg);
  Rng rng = make_rng(options.seed, "gradcheck.model");
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  auto random_vec = [&](std::size_t n) {
    std::vector<double> v(n);
    for (double& x : v) x = unit(rng);
    return v;
  };
  const ExternalBank external(
      Tensor::from({cfg.external_slots, cfg.visual_dim}, random_vec(cfg.external_slots * cfg.visual_dim)),
      Tensor::from({cfg.external_slots, cfg.label_dim}, random_vec(cfg.external_slots * cfg.label_dim)));
  const std::vector<TrainExample> batch{{random_vec(cfg.visual_dim), 0},
                                        {random_vec(cfg.visual_dim), 2}};
  std::vector<Tensor> leaves;
  for (const auto& p : model.parameters().all()) leaves.push_back(p.value);
  GradCheckOptions opts = options;
  opts.sample_entries = full ? 0 : 20;
  return check_gradients(full ? "model(all)" : "model(tiny)", leaves,
                         [&] { return model.batch_loss(batch, external); }, opts);
}

std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckOptions& options,
                                                bool full_model) {
  auto out = run_op_gradchecks(options);
  out.push_back(run_model_gradcheck(options, full_model));
  return out;
}

}  // namespace abmem
