#include "abmem/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <tuple>

namespace abmem {

Metric parse_metric(const std::string& text) {
  if (text == "l1") return Metric::l1;
  if (text == "l2") return Metric::l2;
  throw std::invalid_argument("metric must be 'l1' or 'l2', got '" + text + "'");
}

std::string to_string(Metric metric) { return metric == Metric::l1 ? "l1" : "l2"; }

double distance(std::span<const double> a, std::span<const double> b, Metric metric) {
  if (a.size() != b.size()) throw std::invalid_argument("distance: extent mismatch");
  double s = 0.0;
  if (metric == Metric::l1) {
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return s;
  }
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

std::size_t knn_classify(std::span<const LabeledPoint> support, std::span<const double> query,
                         Metric metric) {
  if (support.empty()) throw std::invalid_argument("knn: empty support set");
  const LabeledPoint* best = nullptr;
  double best_d = std::numeric_limits<double>::infinity();
  for (const auto& p : support) {
    const double d = distance(p.x, query, metric);
    if (best == nullptr ||
        std::tie(d, p.cls, p.record_id) < std::tie(best_d, best->cls, best->record_id)) {
      best = &p;
      best_d = d;
    }
  }
  return best->cls;
}

double LinearScorer::score(std::span<const double> x) const {
  double s = b;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * x[i];
  return s;
}

LinearScorer fit_exemplar_svm(std::span<const double> positive,
                              std::span<const std::vector<double>> negatives, double C,
                              int iterations) {
  if (!(C > 0.0)) throw std::invalid_argument("esvm: C must be positive");
  const std::size_t dim = positive.size();
  const std::size_t n = negatives.size() + 1;
  const double lambda = 1.0 / (C * static_cast<double>(n));
  const double inv_n = 1.0 / static_cast<double>(n);

  auto point = [&](std::size_t i) -> std::span<const double> {
    return i == 0 ? positive : std::span<const double>(negatives[i - 1]);
  };
  auto objective = [&](const LinearScorer& s) {
    double reg = 0.0;
    for (double v : s.w) reg += v * v;
    double hinge = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double y = i == 0 ? 1.0 : -1.0;
      hinge += std::max(0.0, 1.0 - y * s.score(point(i)));
    }
    return 0.5 * lambda * reg + hinge * inv_n;
  };

  LinearScorer cur{std::vector<double>(dim, 0.0), 0.0};
  LinearScorer best = cur;
  double best_obj = objective(cur);
  std::vector<double> gw(dim);
  for (int t = 1; t <= iterations; ++t) {
    for (std::size_t j = 0; j < dim; ++j) gw[j] = lambda * cur.w[j];
    double gb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double y = i == 0 ? 1.0 : -1.0;
      const auto x = point(i);
      if (y * cur.score(x) < 1.0) {
        for (std::size_t j = 0; j < dim; ++j) gw[j] -= inv_n * y * x[j];
        gb -= inv_n * y;
      }
    }
    const double eta = 1.0 / (lambda * static_cast<double>(t));
    for (std::size_t j = 0; j < dim; ++j) cur.w[j] -= eta * gw[j];
    cur.b -= eta * gb;
    const double obj = objective(cur);
    if (obj < best_obj) {
      best_obj = obj;
      best = cur;
    }
  }
  return best;
}

std::vector<std::vector<double>> esvm_scores(std::span<const LabeledPoint> support,
                                             std::span<const LabeledPoint> queries, double C) {
  std::size_t n_way = 0;
  for (const auto& p : support) n_way = std::max(n_way, p.cls + 1);
  bool two_classes = false;
  for (const auto& p : support) two_classes |= p.cls != support.front().cls;
  if (support.empty() || !two_classes) {
    throw std::invalid_argument("esvm: support must span at least two classes");
  }

  std::vector<std::vector<double>> scores(
      queries.size(), std::vector<double>(n_way, -std::numeric_limits<double>::infinity()));
  for (const auto& exemplar : support) {
    // Distinct negatives: duplicated supports must not reweight the hinge.
    std::vector<std::vector<double>> negatives;
    for (const auto& other : support) {
      if (other.cls == exemplar.cls) continue;
      if (std::find(negatives.begin(), negatives.end(), other.x) == negatives.end()) {
        negatives.push_back(other.x);
      }
    }
    const LinearScorer svm = fit_exemplar_svm(exemplar.x, negatives, C);
    for (std::size_t q = 0; q < queries.size(); ++q) {
      auto& slot = scores[q][exemplar.cls];
      slot = std::max(slot, svm.score(queries[q].x));
    }
  }
  return scores;
}

std::vector<std::size_t> esvm_fit_predict(std::span<const LabeledPoint> support,
                                          std::span<const LabeledPoint> queries, double C) {
  const auto scores = esvm_scores(support, queries, C);
  std::vector<std::size_t> out;
  out.reserve(scores.size());
  for (const auto& row : scores) {
    out.push_back(static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()));
  }
  return out;
}

std::size_t kvmemnn_classify(const ExternalPool& pool,
                             std::span<const std::vector<double>> class_embeddings,
                             std::span<const double> query, std::size_t n_sample, Rng& rng) {
  if (pool.keys.empty()) throw std::invalid_argument("kvmemnn: empty pool");
  if (class_embeddings.empty()) throw std::invalid_argument("kvmemnn: no classes");
  const auto picks = sample_without_replacement(pool.keys.size(),
                                                std::min(n_sample, pool.keys.size()), rng);
  std::vector<double> logits;
  logits.reserve(picks.size());
  for (std::size_t i : picks) {
    double s = 0.0;
    for (std::size_t j = 0; j < query.size(); ++j) s += pool.keys[i][j] * query[j];
    logits.push_back(s);
  }
  const double peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double& v : logits) total += (v = std::exp(v - peak));

  std::vector<double> readout(pool.values.front().size(), 0.0);
  for (std::size_t k = 0; k < picks.size(); ++k) {
    const double a = logits[k] / total;
    const auto& value = pool.values[picks[k]];
    for (std::size_t j = 0; j < readout.size(); ++j) readout[j] += a * value[j];
  }
  // softmax is monotone, so the argmax of the raw scores is the prediction.
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < class_embeddings.size(); ++c) {
    double s = 0.0;
    for (std::size_t j = 0; j < readout.size(); ++j) s += readout[j] * class_embeddings[c][j];
    if (s > best_score) {
      best_score = s;
      best = c;
    }
  }
  return best;
}

BaselineReport make_report(std::string method, std::vector<double> per_run) {
  BaselineReport r;
  r.method = std::move(method);
  r.per_run = std::move(per_run);
  const double n = static_cast<double>(r.per_run.size());
  if (r.per_run.empty()) return r;
  for (double v : r.per_run) r.mean += v;
  r.mean /= n;
  if (r.per_run.size() > 1) {
    double ss = 0.0;
    for (double v : r.per_run) ss += (v - r.mean) * (v - r.mean);
    r.std = std::sqrt(ss / (n - 1.0));
  }
  return r;
}

nlohmann::json to_json(const BaselineReport& report) {
  return {{"method", report.method},
          {"runs", report.per_run.size()},
          {"mean", report.mean},
          {"std", report.std},
          {"per_run", report.per_run}};
}

}  // namespace abmem
