#pragma once

#include <functional>
#include <set>

#include "abmem/data.hpp"
#include "abmem/model.hpp"
#include "abmem/run_config.hpp"

namespace abmem {

// Label ids [0, external_classes) feed the external pool; the episode is
// drawn from the remaining (novel) labels, so the two never overlap.
struct Workspace {
  std::set<std::uint32_t> external_vocab;
  std::set<std::uint32_t> novel_vocab;
  Episode episode;
  ExternalPool pool;
};

// Throws DataError when the bank cannot supply the configured episode.
Workspace prepare_workspace(const RunConfig& config, const EmbeddingSet& data);

// Copies the bank's embedding dims into the model config.
void adopt_bank_dims(RunConfig& config, const EmbeddingSet& data);

struct StepMetrics {
  std::size_t step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
};

// Episodic training on the support set: reshuffled passes over the support
// cut into batches, a fresh N1-slot external bank per batch. Stops early
// when `on_step` returns false.
void train_model(AbstractionMemoryModel& model, const Workspace& ws, const RunConfig& config,
                 const std::function<bool(const StepMetrics&)>& on_step);

struct EvalResult {
  std::vector<Prediction> predictions;
  double accuracy = 0.0;
};

EvalResult evaluate(const AbstractionMemoryModel& model, std::span<const LabeledPoint> queries,
                    int workers);

}  // namespace abmem
