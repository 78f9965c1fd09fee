#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "abmem/nn.hpp"
#include "abmem/tensor.hpp"

// Checkpoint container:
//   "ABMEMCKPT1"
//   repeated until end of file:
//     u32 name length, name bytes, u32 rank, u32 extent * rank,
//     f64 * prod(extents)
// All integers and reals little-endian.

namespace abmem {

inline constexpr std::string_view kCheckpointMagic = "ABMEMCKPT1";

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

std::vector<char> encode_checkpoint(std::span<const NamedTensor> tensors);
std::vector<NamedTensor> decode_checkpoint(const std::vector<char>& bytes);

void save_checkpoint(const std::string& path, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> load_checkpoint(const std::string& path);

std::vector<NamedTensor> snapshot(const ParameterStore& store);

// Copies values into the store by name. Every stored parameter must be
// present with an identical shape; extra entries are a mismatch too.
void restore(ParameterStore& store, std::span<const NamedTensor> tensors);

}  // namespace abmem
