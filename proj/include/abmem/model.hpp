#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "abmem/data.hpp"
#include "abmem/memory.hpp"
#include "abmem/nn.hpp"

namespace abmem {

enum class ClassifierKind { lstm, fc };
enum class HeadInit { glorot, zero };

std::string to_string(ClassifierKind kind);
std::string to_string(HeadInit init);
ClassifierKind parse_classifier(const std::string& text);
HeadInit parse_head_init(const std::string& text);

struct ModelConfig {
  std::size_t visual_dim = 2048;
  std::size_t label_dim = 1024;
  std::size_t abs_key_dim = 512;
  std::size_t abs_value_dim = 512;
  std::size_t external_slots = 1000;
  std::size_t abstraction_slots = 500;
  std::size_t steps = 5;  // T, read and write iterations
  std::size_t hidden = 1024;
  std::size_t n_way = 5;
  double dropout = 0.5;
  double learning_rate = 1e-4;
  double clip_norm = 10.0;
  double weight_decay = 1e-4;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  ClassifierKind classifier = ClassifierKind::lstm;
  HeadInit head_init = HeadInit::glorot;

  // Throws std::invalid_argument naming the first violated constraint.
  void validate() const;
};

struct Prediction {
  std::vector<double> probabilities;
  std::size_t label = 0;
};

struct TrainExample {
  std::vector<double> x;
  std::size_t label = 0;
};

// The erase/add arguments of one abstraction write.
struct WriteRecord {
  Tensor w;
  Tensor erase_key;
  Tensor erase_value;
  Tensor add_key;
  Tensor add_value;
};

struct QueryForward {
  Tensor logits;
  Tensor loss;
  std::vector<Readout> external_readouts;
  std::vector<WriteRecord> writes;
};

struct TrainStepReport {
  double loss = 0.0;
  double grad_norm = 0.0;
  std::size_t external_reads = 0;
  std::size_t abstraction_writes = 0;
};

// Dropout switch and randomness for one forward pass.
struct PassMode {
  bool training = false;
  Rng* rng = nullptr;
};

// Query embedding -> T reads of the external bank -> T writes into the
// abstraction bank -> T reads of the abstraction bank -> classifier.
//
// Training keeps the abstraction bank contents across batches; inside a
// batch every query reads the batch-start snapshot plus its own writes,
// and the batch's writes are committed in query order after the update.
class AbstractionMemoryModel {
 public:
  explicit AbstractionMemoryModel(const ModelConfig& config);
  AbstractionMemoryModel(const AbstractionMemoryModel&) = delete;
  AbstractionMemoryModel& operator=(const AbstractionMemoryModel&) = delete;

  const ModelConfig& config() const { return config_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }
  OptimizerState& optimizer() { return optimizer_; }

  // Committed abstraction memory; its slot tensors are trainable parameters.
  const AbstractionBank& abstraction() const { return committed_; }
  AbstractionBank& abstraction() { return committed_; }
  const Tensor& external_key_proj() const { return ext_key_proj_; }
  const Tensor& abstraction_key_proj() const { return abs_key_proj_; }

  Tensor embed_query(const Tensor& query_embedding) const;

  // T-step content-based read; the controller state starts from the
  // projected query and each step feeds back the projected key readout.
  std::vector<Readout> read_recurrence(const Tensor& projected_query, const KeyValueBank& bank,
                                       const Tensor& key_proj, std::size_t steps,
                                       PassMode mode = {}) const;

  // One write into `bank` per readout, in order.
  std::vector<WriteRecord> write_phase(AbstractionBank& bank, const Tensor& projected_query,
                                       std::span<const Readout> readouts,
                                       PassMode mode = {}) const;

  Tensor classify_logits(const Tensor& projected_query, const KeyValueBank& bank,
                         PassMode mode = {}) const;

  // Gradient-free classification against `bank`.
  Prediction classify(const Tensor& query_embedding, const AbstractionBank& bank) const;

  // Full per-query pass against a working copy of the committed bank.
  QueryForward forward_query(const Tensor& query_embedding, std::size_t label,
                             const ExternalBank& external, PassMode mode = {}) const;

  // Mean cross-entropy over the batch; no parameter update and no commit.
  Tensor batch_loss(std::span<const TrainExample> batch, const ExternalBank& external,
                    PassMode mode = {}, std::vector<std::vector<WriteRecord>>* writes = nullptr) const;

  TrainStepReport train_step(std::span<const TrainExample> batch, const ExternalBank& external);

  // Classification from the committed abstraction bank only.
  Prediction infer(const Tensor& query_embedding) const;
  Prediction infer(std::span<const double> query_embedding) const;

  // Parallel over queries (OpenMP); results are in query order.
  std::vector<Prediction> infer_all(std::span<const LabeledPoint> queries, int workers) const;

  // Replays recorded writes, detached, onto the committed bank in order.
  void commit_writes(std::span<const std::vector<WriteRecord>> writes);

 private:
  ModelConfig config_;
  ParameterStore store_;
  Rng dropout_rng_;

  AffineLayer query_proj_;
  LstmCell read_lstm_;
  Tensor ext_key_proj_;
  Tensor abs_key_proj_;
  AffineLayer embed_key_;
  AffineLayer embed_value_;
  LstmCell write_lstm_;
  AffineLayer erase_key_;
  AffineLayer erase_value_;
  AffineLayer add_key_;
  AffineLayer add_value_;
  LstmCell cls_lstm_;
  AffineLayer head_;
  AbstractionBank committed_;

  OptimizerState optimizer_;
};

double accuracy(std::span<const Prediction> predictions, std::span<const LabeledPoint> truth);

}  // namespace abmem
