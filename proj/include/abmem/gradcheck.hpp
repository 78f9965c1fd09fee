#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "abmem/model.hpp"
#include "abmem/tensor.hpp"

namespace abmem {

struct GradCheckOptions {
  double step = 1e-5;       // central difference half-width
  double tolerance = 1e-4;  // on |a - b| / max(|a|, |b|, 1e-8)
  std::uint64_t seed = 0;
  // When nonzero, only this many entries (drawn uniformly from all leaf
  // entries with the seed) are perturbed.
  std::size_t sample_entries = 0;
};

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t entries = 0;
  bool passed = false;
};

double relative_error(double analytic, double numeric);

// Compares tape gradients of `loss_fn` w.r.t. every entry of `leaves` with
// central finite differences. `loss_fn` must be deterministic.
GradCheckResult check_gradients(std::string name, std::vector<Tensor> leaves,
                                const std::function<Tensor()>& loss_fn,
                                const GradCheckOptions& options = {});

// d1=6, d2=4, N1=8, N2=4, T=2, hidden=5, no dropout.
ModelConfig tiny_config();

std::vector<GradCheckResult> run_op_gradchecks(const GradCheckOptions& options = {});
// Twenty sampled parameter entries by default; `full` perturbs every one.
GradCheckResult run_model_gradcheck(const GradCheckOptions& options = {}, bool full = false);

// Every differentiable op followed by the tiny end-to-end model.
std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckOptions& options = {},
                                                bool full_model = false);

}  // namespace abmem
