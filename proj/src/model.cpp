#include "abmem/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace abmem {
namespace {

Tensor maybe_dropout(const Tensor& x, double p, const PassMode& mode) {
  if (!mode.training || p == 0.0) return x;
  if (mode.rng == nullptr) throw std::logic_error("training pass without a dropout rng");
  return dropout(x, p, true, *mode.rng);
}

void require_finite(const Tensor& t, const char* what, std::size_t step) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("write_phase: non-finite ") + what + " at step " +
                         std::to_string(step));
    }
  }
}

std::size_t argmax(std::span<const double> values) {
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

}  // namespace

std::string to_string(ClassifierKind kind) { return kind == ClassifierKind::lstm ? "lstm" : "fc"; }
std::string to_string(HeadInit init) { return init == HeadInit::glorot ? "glorot" : "zero"; }

ClassifierKind parse_classifier(const std::string& text) {
  if (text == "lstm") return ClassifierKind::lstm;
  if (text == "fc") return ClassifierKind::fc;
  throw std::invalid_argument("classifier must be 'lstm' or 'fc', got '" + text + "'");
}

HeadInit parse_head_init(const std::string& text) {
  if (text == "glorot") return HeadInit::glorot;
  if (text == "zero") return HeadInit::zero;
  throw std::invalid_argument("head_init must be 'glorot' or 'zero', got '" + text + "'");
}

void ModelConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("model config: ") + what);
  };
  require(visual_dim > 0 && label_dim > 0, "embedding dims must be positive");
  require(abs_key_dim > 0 && abs_value_dim > 0, "abstraction dims must be positive");
  require(external_slots >= 1, "external_slots must be at least 1");
  require(abstraction_slots >= 1, "abstraction_slots must be at least 1");
  require(abstraction_slots < external_slots, "abstraction_slots must be below external_slots");
  require(steps >= 1, "steps must be at least 1");
  require(hidden >= 2, "hidden must be at least 2");
  require(n_way >= 1, "n_way must be at least 1");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
  require(learning_rate > 0.0, "learning_rate must be positive");
  require(clip_norm > 0.0, "clip_norm must be positive");
  require(weight_decay >= 0.0, "weight_decay must be non-negative");
  require(batch_size >= 1, "batch_size must be at least 1");
}

AbstractionMemoryModel::AbstractionMemoryModel(const ModelConfig& config)
    : config_(config), dropout_rng_(make_rng(config.seed, "dropout")) {
  config_.validate();
  const auto& c = config_;
  Rng rng = make_rng(c.seed, "init");
  const auto glorot = [&rng](std::size_t fan_in, std::size_t fan_out) {
    return glorot_init(static_cast<int>(fan_in), static_cast<int>(fan_out), rng);
  };

  query_proj_ = AffineLayer(store_, "query_proj", c.visual_dim, c.hidden, rng);
  read_lstm_ = LstmCell(store_, "read_lstm", c.hidden, c.hidden, rng);
  ext_key_proj_ = store_.add("ext.key_proj", glorot(c.hidden, c.visual_dim), true);
  abs_key_proj_ = store_.add("abs.key_proj", glorot(c.hidden, c.abs_key_dim), true);

  embed_key_ = AffineLayer(store_, "write.embed_key", c.visual_dim, c.abs_key_dim, rng);
  embed_value_ = AffineLayer(store_, "write.embed_value", c.label_dim, c.abs_value_dim, rng);
  write_lstm_ = LstmCell(store_, "write_lstm", c.hidden + c.abs_key_dim + c.abs_value_dim,
                         c.hidden, rng);
  erase_key_ = AffineLayer(store_, "write.erase_key", c.hidden, c.abs_key_dim, rng);
  erase_value_ = AffineLayer(store_, "write.erase_value", c.hidden, c.abs_value_dim, rng);
  add_key_ = AffineLayer(store_, "write.add_key", c.abs_key_dim, c.abs_key_dim, rng);
  add_value_ = AffineLayer(store_, "write.add_value", c.abs_value_dim, c.abs_value_dim, rng);

  const std::size_t readout = c.abs_key_dim + c.abs_value_dim;
  std::size_t head_in = readout;
  if (c.classifier == ClassifierKind::lstm) {
    cls_lstm_ = LstmCell(store_, "cls_lstm", readout, c.hidden, rng);
    head_in = c.hidden;
  }
  head_ = AffineLayer(store_, "cls.head", head_in, c.n_way, rng);
  if (c.head_init == HeadInit::zero) {
    std::fill(head_.weight().mutable_data().begin(), head_.weight().mutable_data().end(), 0.0);
  }

  Tensor keys = store_.add("abs.keys", glorot(c.abs_key_dim, c.abstraction_slots), false);
  Tensor values = store_.add("abs.values", glorot(c.abs_value_dim, c.abstraction_slots), false);
  committed_ = AbstractionBank(keys, values);

  optimizer_ = OptimizerState(
      AdamConfig{c.learning_rate, 0.9, 0.999, 1e-8, c.weight_decay, c.clip_norm}, store_.all());
}

Tensor AbstractionMemoryModel::embed_query(const Tensor& query_embedding) const {
  if (query_embedding.rank() != 1 || query_embedding.size() != config_.visual_dim) {
    throw DimensionError("query: expected [" + std::to_string(config_.visual_dim) + "], got " +
                         shape_string(query_embedding.shape()));
  }
  return query_proj_.forward(query_embedding);
}

std::vector<Readout> AbstractionMemoryModel::read_recurrence(const Tensor& projected_query,
                                                             const KeyValueBank& bank,
                                                             const Tensor& key_proj,
                                                             std::size_t steps,
                                                             PassMode mode) const {
  if (bank.slots() == 0) throw DimensionError("read_recurrence: empty bank");
  LstmState state{projected_query, Tensor::zeros({config_.hidden})};
  Tensor feedback = Tensor::zeros({config_.hidden});
  std::vector<Readout> out;
  out.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    state = read_lstm_.step(maybe_dropout(feedback, config_.dropout, mode), state.h, state.c);
    const Tensor query = maybe_dropout(state.h, config_.dropout, mode);
    Readout r = bank.read(bank.address(query, key_proj).weights);
    feedback = vecmat(r.key, key_proj);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<WriteRecord> AbstractionMemoryModel::write_phase(AbstractionBank& bank,
                                                             const Tensor& projected_query,
                                                             std::span<const Readout> readouts,
                                                             PassMode mode) const {
  std::vector<WriteRecord> records;
  records.reserve(readouts.size());
  LstmState state = write_lstm_.zero_state();
  for (std::size_t t = 0; t < readouts.size(); ++t) {
    const Tensor key_embed = embed_key_.forward(readouts[t].key);
    const Tensor value_embed = embed_value_.forward(readouts[t].value);
    const Tensor parts[] = {projected_query, key_embed, value_embed};
    state = write_lstm_.step(maybe_dropout(concat(parts), config_.dropout, mode), state.h, state.c);
    const Tensor controller = maybe_dropout(state.h, config_.dropout, mode);
    require_finite(controller, "controller state", t);

    WriteRecord rec;
    rec.w = bank.address(controller, abs_key_proj_).weights;
    rec.erase_key = sigmoid(erase_key_.forward(controller));
    rec.erase_value = sigmoid(erase_value_.forward(controller));
    rec.add_key = add_key_.forward(key_embed);
    rec.add_value = add_value_.forward(value_embed);
    require_finite(rec.erase_key, "erase vector", t);
    require_finite(rec.erase_value, "erase vector", t);
    require_finite(rec.add_key, "add vector", t);
    require_finite(rec.add_value, "add vector", t);
    bank.write(rec.w, rec.erase_key, rec.erase_value, rec.add_key, rec.add_value);
    records.push_back(std::move(rec));
  }
  return records;
}

Tensor AbstractionMemoryModel::classify_logits(const Tensor& projected_query,
                                               const KeyValueBank& bank, PassMode mode) const {
  const auto readouts = read_recurrence(projected_query, bank, abs_key_proj_, config_.steps, mode);
  Tensor logits;
  if (config_.classifier == ClassifierKind::lstm) {
    LstmState state = cls_lstm_.zero_state();
    for (const auto& r : readouts) {
      const Tensor u = maybe_dropout(concat(r.key, r.value), config_.dropout, mode);
      state = cls_lstm_.step(u, state.h, state.c);
    }
    logits = head_.forward(maybe_dropout(state.h, config_.dropout, mode));
  } else {
    logits = head_.forward(concat(readouts.back().key, readouts.back().value));
  }
  if (logits.size() != config_.n_way) {
    throw DimensionError("classify: head emits " + std::to_string(logits.size()) +
                         " classes, expected " + std::to_string(config_.n_way));
  }
  return logits;
}

Prediction AbstractionMemoryModel::classify(const Tensor& query_embedding,
                                            const AbstractionBank& bank) const {
  NoGradGuard no_grad;
  const Tensor probs = softmax(classify_logits(embed_query(query_embedding), bank));
  Prediction p;
  p.probabilities.assign(probs.data().begin(), probs.data().end());
  p.label = argmax(p.probabilities);
  return p;
}

QueryForward AbstractionMemoryModel::forward_query(const Tensor& query_embedding,
                                                   std::size_t label,
                                                   const ExternalBank& external,
                                                   PassMode mode) const {
  if (label >= config_.n_way) {
    throw std::invalid_argument("label " + std::to_string(label) + " outside [0, " +
                                std::to_string(config_.n_way) + ")");
  }
  QueryForward out;
  const Tensor projected = embed_query(query_embedding);
  out.external_readouts =
      read_recurrence(projected, external, ext_key_proj_, config_.steps, mode);
  AbstractionBank working(committed_.keys(), committed_.values());
  out.writes = write_phase(working, projected, out.external_readouts, mode);
  out.logits = classify_logits(projected, working, mode);
  out.loss = cross_entropy(out.logits, label);
  return out;
}

Tensor AbstractionMemoryModel::batch_loss(std::span<const TrainExample> batch,
                                          const ExternalBank& external, PassMode mode,
                                          std::vector<std::vector<WriteRecord>>* writes) const {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  std::vector<Tensor> losses;
  losses.reserve(batch.size());
  for (const auto& ex : batch) {
    auto fwd = forward_query(Tensor::vector(ex.x), ex.label, external, mode);
    losses.push_back(fwd.loss);
    if (writes != nullptr) writes->push_back(std::move(fwd.writes));
  }
  return scale(add_n(losses), 1.0 / static_cast<double>(batch.size()));
}

TrainStepReport AbstractionMemoryModel::train_step(std::span<const TrainExample> batch,
                                                   const ExternalBank& external) {
  Tape& tape = Tape::current();
  tape.clear();
  store_.zero_grad();

  const std::size_t reads_before = external.read_count();
  std::vector<std::vector<WriteRecord>> writes;
  const Tensor loss = batch_loss(batch, external, {true, &dropout_rng_}, &writes);
  if (!std::isfinite(loss.item())) {
    tape.clear();
    throw NumericError("train_step: non-finite loss");
  }
  backward(loss);
  const AdamReport adam = adam_step(optimizer_, store_.all());

  TrainStepReport report;
  report.loss = loss.item();
  report.grad_norm = adam.grad_norm;
  report.external_reads = external.read_count() - reads_before;
  for (const auto& w : writes) report.abstraction_writes += w.size();

  commit_writes(writes);
  tape.clear();
  return report;
}

void AbstractionMemoryModel::commit_writes(std::span<const std::vector<WriteRecord>> writes) {
  NoGradGuard no_grad;
  Tensor keys = committed_.keys().detach();
  Tensor values = committed_.values().detach();
  for (const auto& query_writes : writes) {
    for (const auto& rec : query_writes) {
      keys = erase_add(keys, rec.w.detach(), rec.erase_key.detach(), rec.add_key.detach());
      values = erase_add(values, rec.w.detach(), rec.erase_value.detach(), rec.add_value.detach());
    }
  }
  Tensor dst_keys = committed_.keys();
  Tensor dst_values = committed_.values();
  std::copy(keys.data().begin(), keys.data().end(), dst_keys.mutable_data().begin());
  std::copy(values.data().begin(), values.data().end(), dst_values.mutable_data().begin());
}

Prediction AbstractionMemoryModel::infer(const Tensor& query_embedding) const {
  return classify(query_embedding, committed_);
}

Prediction AbstractionMemoryModel::infer(std::span<const double> query_embedding) const {
  return infer(Tensor::vector({query_embedding.begin(), query_embedding.end()}));
}

std::vector<Prediction> AbstractionMemoryModel::infer_all(std::span<const LabeledPoint> queries,
                                                          int workers) const {
  for (const auto& q : queries) {
    if (q.x.size() != config_.visual_dim) {
      throw DimensionError("infer_all: query " + std::to_string(q.record_id) + " has extent " +
                           std::to_string(q.x.size()));
    }
  }
  std::vector<Prediction> out(queries.size());
  const auto n = static_cast<std::ptrdiff_t>(queries.size());
#pragma omp parallel for num_threads(std::max(workers, 1)) schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] = infer(std::span<const double>(queries[static_cast<std::size_t>(i)].x));
  }
  return out;
}

double accuracy(std::span<const Prediction> predictions, std::span<const LabeledPoint> truth) {
  if (predictions.size() != truth.size()) throw std::invalid_argument("accuracy: size mismatch");
  if (truth.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predictions[i].label == truth[i].cls;
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

}  // namespace abmem
