#include "abmem/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include <nlohmann/json.hpp>

#include "abmem/binary_io.hpp"

namespace abmem {
namespace {

double to_storage(double v) { return static_cast<double>(static_cast<float>(v)); }

std::vector<double> random_unit(std::size_t dim, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (double& x : v) {
      x = normal(rng);
      norm += x * x;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

double distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

std::vector<char> encode_bank(const EmbeddingSet& set) {
  io::ByteWriter w;
  w.bytes(kBankMagic);
  w.u32(static_cast<std::uint32_t>(set.records.size()));
  w.u32(set.visual_dim);
  w.u32(set.label_dim);
  w.u32(static_cast<std::uint32_t>(set.labels.size()));
  for (const auto& label : set.labels.entries) {
    if (label.embedding.size() != set.label_dim) {
      throw BankFormatError(BankFormatError::Kind::inconsistent,
                            "bank: label '" + label.name + "' has the wrong embedding extent");
    }
    w.u32(static_cast<std::uint32_t>(label.name.size()));
    w.bytes(label.name);
    for (double v : label.embedding) w.f32(static_cast<float>(v));
  }
  for (const auto& r : set.records) {
    if (r.visual.size() != set.visual_dim) {
      throw BankFormatError(BankFormatError::Kind::inconsistent,
                            "bank: record " + std::to_string(r.id) + " has the wrong visual extent");
    }
    if (r.label_id >= set.labels.size()) {
      throw BankFormatError(BankFormatError::Kind::inconsistent,
                            "bank: record " + std::to_string(r.id) + " refers to unknown label " +
                                std::to_string(r.label_id));
    }
    w.u32(r.id);
    w.u32(r.label_id);
    for (double v : r.visual) w.f32(static_cast<float>(v));
  }
  return w.buffer();
}

EmbeddingSet decode_bank(const std::vector<char>& bytes) {
  using Kind = BankFormatError::Kind;
  io::ByteReader r(bytes);
  EmbeddingSet set;
  try {
    if (bytes.size() < kBankMagic.size() || r.bytes(kBankMagic.size()) != kBankMagic) {
      throw BankFormatError(Kind::bad_magic, "bank: magic mismatch");
    }
    const std::uint32_t n_records = r.u32();
    set.visual_dim = r.u32();
    set.label_dim = r.u32();
    const std::uint32_t n_labels = r.u32();
    for (std::uint32_t i = 0; i < n_labels; ++i) {
      LabelEntry entry;
      entry.name = r.bytes(r.u32());
      entry.embedding.resize(set.label_dim);
      for (double& v : entry.embedding) v = r.f32();
      set.labels.entries.push_back(std::move(entry));
    }
    set.records.reserve(n_records);
    for (std::uint32_t i = 0; i < n_records; ++i) {
      EmbeddingRecord rec;
      rec.id = r.u32();
      rec.label_id = r.u32();
      if (rec.label_id >= n_labels) {
        throw BankFormatError(Kind::inconsistent, "bank: record " + std::to_string(rec.id) +
                                                      " refers to unknown label " +
                                                      std::to_string(rec.label_id));
      }
      rec.visual.resize(set.visual_dim);
      for (double& v : rec.visual) {
        v = r.f32();
        if (!std::isfinite(v)) {
          throw BankFormatError(Kind::inconsistent,
                                "bank: record " + std::to_string(rec.id) + " is not finite");
        }
      }
      set.records.push_back(std::move(rec));
    }
  } catch (const io::TruncatedError& e) {
    throw BankFormatError(Kind::truncated, std::string("bank: truncated payload (") + e.what() + ")");
  }
  if (!r.at_end()) {
    throw BankFormatError(Kind::inconsistent,
                          "bank: " + std::to_string(r.remaining()) + " trailing bytes after header counts");
  }
  return set;
}

void save_bank(const std::string& path, const EmbeddingSet& set) {
  io::write_file(path, encode_bank(set));
}

EmbeddingSet load_bank(const std::string& path) { return decode_bank(io::read_file(path)); }

std::vector<std::vector<double>> synthetic_centers(const SyntheticSpec& spec) {
  if (spec.visual_dim == 0) throw GenerationError("synthetic: visual_dim must be positive");
  Rng rng = make_rng(spec.seed, "synthetic.centers");
  std::vector<std::vector<double>> centers;
  int tries = 0;
  while (centers.size() < spec.n_classes) {
    if (++tries > kMaxCenterTries) {
      throw GenerationError("synthetic: could not place " + std::to_string(spec.n_classes) +
                            " centres at separation " + std::to_string(spec.min_center_sep));
    }
    auto candidate = random_unit(spec.visual_dim, rng);
    const bool ok = std::all_of(centers.begin(), centers.end(), [&](const auto& c) {
      return distance(c, candidate) >= spec.min_center_sep;
    });
    if (ok) centers.push_back(std::move(candidate));
  }
  return centers;
}

EmbeddingSet gen_synthetic(const SyntheticSpec& spec) {
  if (spec.label_dim == 0) throw GenerationError("synthetic: label_dim must be positive");
  if (!(spec.cluster_std >= 0.0)) throw GenerationError("synthetic: cluster_std must be >= 0");
  const auto centers = synthetic_centers(spec);

  EmbeddingSet set;
  set.visual_dim = spec.visual_dim;
  set.label_dim = spec.label_dim;

  Rng label_rng = make_rng(spec.seed, "synthetic.labels");
  for (std::uint32_t c = 0; c < spec.n_classes; ++c) {
    LabelEntry entry;
    char name[32];
    std::snprintf(name, sizeof name, "class_%03u", c);
    entry.name = name;
    for (int attempt = 0;; ++attempt) {
      if (attempt >= kMaxCenterTries) throw GenerationError("synthetic: label embeddings collide");
      entry.embedding = random_unit(spec.label_dim, label_rng);
      for (double& v : entry.embedding) v = to_storage(v);
      const bool distinct =
          std::none_of(set.labels.entries.begin(), set.labels.entries.end(),
                       [&](const LabelEntry& e) { return distance(e.embedding, entry.embedding) < 1e-6; });
      if (distinct) break;
    }
    set.labels.entries.push_back(std::move(entry));
  }

  Rng noise_rng = make_rng(spec.seed, "synthetic.noise");
  const double sigma = spec.cluster_std / std::sqrt(static_cast<double>(spec.visual_dim));
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uint32_t next_id = 0;
  for (std::uint32_t c = 0; c < spec.n_classes; ++c) {
    for (std::uint32_t k = 0; k < spec.per_class; ++k) {
      EmbeddingRecord rec;
      rec.id = next_id++;
      rec.label_id = c;
      rec.visual = centers[c];
      for (double& v : rec.visual) v = to_storage(v + sigma * noise(noise_rng));
      set.records.push_back(std::move(rec));
    }
  }
  return set;
}

std::vector<std::size_t> sample_without_replacement(std::size_t population, std::size_t count,
                                                    Rng& rng) {
  if (count > population) throw DataError("cannot draw more items than the population holds");
  std::vector<std::size_t> idx(population);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, population - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(count);
  return idx;
}

Episode sample_episode(const std::vector<EmbeddingRecord>& records, std::size_t n_way,
                       std::size_t k_shot, std::size_t n_query, Rng& rng,
                       const std::set<std::uint32_t>& allowed) {
  if (n_way == 0 || k_shot == 0) throw DataError("episode: n_way and k_shot must be positive");
  std::map<std::uint32_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto label = records[i].label_id;
    if (allowed.empty() || allowed.count(label)) by_class[label].push_back(i);
  }
  std::vector<std::uint32_t> eligible;
  for (const auto& [label, members] : by_class) {
    if (members.size() >= k_shot + n_query) eligible.push_back(label);
  }
  if (eligible.size() < n_way) {
    throw DataError("episode: need " + std::to_string(n_way) + " classes with at least " +
                    std::to_string(k_shot + n_query) + " records, found " +
                    std::to_string(eligible.size()));
  }

  Episode ep;
  ep.n_way = n_way;
  ep.k_shot = k_shot;
  for (std::size_t pick : sample_without_replacement(eligible.size(), n_way, rng)) {
    ep.remap[eligible[pick]] = ep.classes.size();
    ep.classes.push_back(eligible[pick]);
  }
  for (std::size_t cls = 0; cls < n_way; ++cls) {
    const auto& members = by_class[ep.classes[cls]];
    const auto order = sample_without_replacement(members.size(), k_shot + n_query, rng);
    for (std::size_t j = 0; j < order.size(); ++j) {
      const auto& rec = records[members[order[j]]];
      LabeledPoint p{rec.id, cls, rec.visual};
      (j < k_shot ? ep.support : ep.query).push_back(std::move(p));
    }
  }
  return ep;
}

std::string episode_manifest(const Episode& episode) {
  std::string out;
  nlohmann::json header = {{"kind", "episode"},
                           {"n_way", episode.n_way},
                           {"k_shot", episode.k_shot},
                           {"n_support", episode.support.size()},
                           {"n_query", episode.query.size()},
                           {"classes", episode.classes}};
  out += header.dump() + "\n";
  auto emit = [&](const char* role, const std::vector<LabeledPoint>& points) {
    for (const auto& p : points) {
      nlohmann::json line = {{"role", role},
                             {"record_id", p.record_id},
                             {"label_id", episode.classes[p.cls]},
                             {"class", p.cls}};
      out += line.dump() + "\n";
    }
  };
  emit("support", episode.support);
  emit("query", episode.query);
  return out;
}

ExternalPool external_pool(const std::vector<EmbeddingRecord>& records, const LabelTable& labels,
                           const std::set<std::uint32_t>& vocab, double label_flip_prob,
                           Rng* flip_rng) {
  if (vocab.empty()) throw DataError("external pool: vocabulary subset is empty");
  if (label_flip_prob > 0.0 && (flip_rng == nullptr || vocab.size() < 2)) {
    throw DataError("external pool: label flipping needs an rng and at least two labels");
  }
  const std::vector<std::uint32_t> vocab_list(vocab.begin(), vocab.end());
  std::bernoulli_distribution flip(label_flip_prob > 0.0 ? label_flip_prob : 0.0);
  ExternalPool pool;
  for (const auto& rec : records) {
    if (!vocab.count(rec.label_id)) continue;
    std::uint32_t label = rec.label_id;
    if (label_flip_prob > 0.0 && flip(*flip_rng)) {
      std::uniform_int_distribution<std::size_t> other(0, vocab_list.size() - 2);
      std::size_t k = other(*flip_rng);
      if (vocab_list[k] >= label) ++k;  // skip the true label
      label = vocab_list[k];
    }
    pool.keys.push_back(rec.visual);
    pool.values.push_back(labels.at(label).embedding);
    pool.labels.push_back(label);
  }
  if (pool.keys.empty()) throw DataError("external pool: vocabulary subset holds no records");
  return pool;
}

ExternalBank build_external(const ExternalPool& pool, std::size_t n_slots, Rng& rng) {
  if (pool.keys.empty()) throw DataError("external bank: empty pool");
  if (n_slots == 0) throw DataError("external bank: needs at least one slot");
  const std::size_t n = std::min(n_slots, pool.keys.size());
  const std::size_t dk = pool.keys.front().size(), dv = pool.values.front().size();
  std::vector<double> keys, values;
  keys.reserve(n * dk);
  values.reserve(n * dv);
  for (std::size_t i : sample_without_replacement(pool.keys.size(), n, rng)) {
    keys.insert(keys.end(), pool.keys[i].begin(), pool.keys[i].end());
    values.insert(values.end(), pool.values[i].begin(), pool.values[i].end());
  }
  return ExternalBank(Tensor::from({n, dk}, std::move(keys)), Tensor::from({n, dv}, std::move(values)));
}

ExternalBank build_external(const std::vector<EmbeddingRecord>& records, const LabelTable& labels,
                            const std::set<std::uint32_t>& vocab, std::size_t n_slots, Rng& rng,
                            double label_flip_prob) {
  Rng flip_rng = rng;
  const auto pool = external_pool(records, labels, vocab, label_flip_prob, &flip_rng);
  return build_external(pool, n_slots, rng);
}

}  // namespace abmem
