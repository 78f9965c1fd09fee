#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "abmem/memory.hpp"
#include "abmem/rng.hpp"

namespace abmem {

struct EmbeddingRecord {
  std::uint32_t id = 0;
  std::vector<double> visual;
  std::uint32_t label_id = 0;
};

struct LabelEntry {
  std::string name;
  std::vector<double> embedding;
};

// Label ids are dense from 0 and index `entries`.
struct LabelTable {
  std::vector<LabelEntry> entries;

  std::size_t size() const { return entries.size(); }
  std::size_t dim() const { return entries.empty() ? 0 : entries.front().embedding.size(); }
  const LabelEntry& at(std::uint32_t id) const { return entries.at(id); }
};

struct EmbeddingSet {
  std::vector<EmbeddingRecord> records;
  LabelTable labels;
  std::uint32_t visual_dim = 0;
  std::uint32_t label_dim = 0;
};

// Bank file:
//   "ABMEMBANK1", u32 record count, u32 visual dim, u32 label dim, u32 label count,
//   label count * (u32 name length, UTF-8 name, f32 * label dim),
//   record count * (u32 id, u32 label id, f32 * visual dim)
// Little-endian; reals are widened to double on load.
inline constexpr std::string_view kBankMagic = "ABMEMBANK1";

class BankFormatError : public std::runtime_error {
 public:
  enum class Kind { bad_magic, truncated, inconsistent };
  BankFormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

std::vector<char> encode_bank(const EmbeddingSet& set);
EmbeddingSet decode_bank(const std::vector<char>& bytes);
void save_bank(const std::string& path, const EmbeddingSet& set);
EmbeddingSet load_bank(const std::string& path);

struct SyntheticSpec {
  std::uint32_t n_classes = 20;
  std::uint32_t per_class = 100;
  std::uint32_t visual_dim = 64;
  std::uint32_t label_dim = 32;
  // Expected norm of the noise added to a class centre; each coordinate
  // gets N(0, (cluster_std / sqrt(visual_dim))^2).
  double cluster_std = 0.3;
  double min_center_sep = 1.0;
  std::uint64_t seed = 0;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kMaxCenterTries = 100000;

// Unit-norm class centres at pairwise distance >= min_center_sep (rejection
// sampled), records = centre + isotropic noise, random unit label embeddings.
// Values are rounded to float so the set survives a bank file round trip.
EmbeddingSet gen_synthetic(const SyntheticSpec& spec);

// Drawn centres depend only on the SyntheticSpec fields.
std::vector<std::vector<double>> synthetic_centers(const SyntheticSpec& spec);

struct LabeledPoint {
  std::uint32_t record_id = 0;
  std::size_t cls = 0;  // episode class index
  std::vector<double> x;
};

struct Episode {
  std::size_t n_way = 0;
  std::size_t k_shot = 0;
  std::vector<LabeledPoint> support;
  std::vector<LabeledPoint> query;
  std::vector<std::uint32_t> classes;               // episode index -> global label id
  std::map<std::uint32_t, std::size_t> remap;       // global label id -> episode index
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Samples n_way classes among `allowed` (all labels present when empty),
// then k_shot support and n_query query records per class, disjoint.
Episode sample_episode(const std::vector<EmbeddingRecord>& records, std::size_t n_way,
                       std::size_t k_shot, std::size_t n_query, Rng& rng,
                       const std::set<std::uint32_t>& allowed = {});

// Line-delimited JSON: one header line then one line per support/query record.
std::string episode_manifest(const Episode& episode);

struct ExternalPool {
  std::vector<std::vector<double>> keys;    // visual embeddings
  std::vector<std::vector<double>> values;  // label embeddings
  std::vector<std::uint32_t> labels;        // label id used for the value
};

// Every record whose label lies in `vocab`. With label_flip_prob > 0 each
// slot's label is replaced by a uniformly drawn other vocabulary label,
// emulating machine-labelled noise.
ExternalPool external_pool(const std::vector<EmbeddingRecord>& records, const LabelTable& labels,
                           const std::set<std::uint32_t>& vocab, double label_flip_prob = 0.0,
                           Rng* flip_rng = nullptr);

// min(N1, pool size) slots drawn uniformly without replacement.
ExternalBank build_external(const ExternalPool& pool, std::size_t n_slots, Rng& rng);

ExternalBank build_external(const std::vector<EmbeddingRecord>& records, const LabelTable& labels,
                            const std::set<std::uint32_t>& vocab, std::size_t n_slots, Rng& rng,
                            double label_flip_prob = 0.0);

// Indices 0..n-1 sampled without replacement, returned in draw order.
std::vector<std::size_t> sample_without_replacement(std::size_t population, std::size_t count,
                                                    Rng& rng);

}  // namespace abmem
