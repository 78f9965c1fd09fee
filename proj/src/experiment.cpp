#include "abmem/experiment.hpp"

#include <algorithm>

namespace abmem {

void adopt_bank_dims(RunConfig& config, const EmbeddingSet& data) {
  config.model.visual_dim = data.visual_dim;
  config.model.label_dim = data.label_dim;
}

Workspace prepare_workspace(const RunConfig& config, const EmbeddingSet& data) {
  if (config.external_classes == 0) throw DataError("external_classes must be at least 1");
  if (config.external_classes >= data.labels.size()) {
    throw DataError("external_classes (" + std::to_string(config.external_classes) +
                    ") leaves no novel labels in a bank of " +
                    std::to_string(data.labels.size()));
  }
  Workspace ws;
  for (std::uint32_t id = 0; id < data.labels.size(); ++id) {
    (id < config.external_classes ? ws.external_vocab : ws.novel_vocab).insert(id);
  }
  Rng episode_rng = make_rng(config.model.seed, "episode");
  ws.episode = sample_episode(data.records, config.model.n_way, config.k_shot,
                              config.queries_per_class, episode_rng, ws.novel_vocab);
  Rng flip_rng = make_rng(config.model.seed, "label_flip");
  ws.pool = external_pool(data.records, data.labels, ws.external_vocab, config.label_flip,
                          &flip_rng);
  return ws;
}

void train_model(AbstractionMemoryModel& model, const Workspace& ws, const RunConfig& config,
                 const std::function<bool(const StepMetrics&)>& on_step) {
  const auto& support = ws.episode.support;
  if (support.empty()) throw DataError("training: empty support set");
  Rng batch_rng = make_rng(config.model.seed, "batch");
  Rng external_rng = make_rng(config.model.seed, "external");
  const std::size_t batch_size = std::min(config.model.batch_size, support.size());

  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  std::vector<TrainExample> batch;
  for (std::size_t step = 1; step <= config.train_steps; ++step) {
    batch.clear();
    while (batch.size() < batch_size) {
      if (cursor == order.size()) {
        order = sample_without_replacement(support.size(), support.size(), batch_rng);
        cursor = 0;
      }
      const auto& p = support[order[cursor++]];
      batch.push_back({p.x, p.cls});
    }
    const ExternalBank external = build_external(ws.pool, config.model.external_slots, external_rng);
    const TrainStepReport report = model.train_step(batch, external);
    if (!on_step({step, report.loss, report.grad_norm})) break;
  }
}

EvalResult evaluate(const AbstractionMemoryModel& model, std::span<const LabeledPoint> queries,
                    int workers) {
  EvalResult r;
  r.predictions = model.infer_all(queries, workers);
  r.accuracy = accuracy(r.predictions, queries);
  return r;
}

}  // namespace abmem
