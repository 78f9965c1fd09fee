#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "abmem/data.hpp"
#include "abmem/rng.hpp"

namespace abmem {

enum class Metric { l1, l2 };
Metric parse_metric(const std::string& text);
std::string to_string(Metric metric);

double distance(std::span<const double> a, std::span<const double> b, Metric metric);

// 1-NN. Ties go to the smallest class index, then the smallest record id.
std::size_t knn_classify(std::span<const LabeledPoint> support, std::span<const double> query,
                         Metric metric);

struct LinearScorer {
  std::vector<double> w;
  double b = 0.0;
  double score(std::span<const double> x) const;
};

inline constexpr int kSvmIterations = 2000;

// Hinge-loss linear classifier separating one positive exemplar from the
// negatives, minimising |w|^2 / (2 C n) + mean hinge over the n points with
// deterministic full-batch subgradient descent (step 1 / (lambda t)); the
// best iterate by objective is returned.
LinearScorer fit_exemplar_svm(std::span<const double> positive,
                              std::span<const std::vector<double>> negatives, double C,
                              int iterations = kSvmIterations);

// scores[q][c] = max over class c's exemplar classifiers.
std::vector<std::vector<double>> esvm_scores(std::span<const LabeledPoint> support,
                                             std::span<const LabeledPoint> queries, double C);

// Per-exemplar classifiers against the distinct other-class supports; the
// prediction is the class with the highest max-score, ties to the smallest.
std::vector<std::size_t> esvm_fit_predict(std::span<const LabeledPoint> support,
                                          std::span<const LabeledPoint> queries, double C);

inline constexpr std::size_t kKvMemNNSamples = 1000;

// Untrained single-hop key-value retrieval: sample n_sample slots, attend
// with the raw query over their keys, score the value readout against each
// class embedding, softmax and argmax (ties to the smallest class).
std::size_t kvmemnn_classify(const ExternalPool& pool,
                             std::span<const std::vector<double>> class_embeddings,
                             std::span<const double> query, std::size_t n_sample, Rng& rng);

struct BaselineReport {
  std::string method;
  std::vector<double> per_run;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single run
};

BaselineReport make_report(std::string method, std::vector<double> per_run);
nlohmann::json to_json(const BaselineReport& report);

}  // namespace abmem
