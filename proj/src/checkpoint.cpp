#include "abmem/checkpoint.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>

#include "abmem/binary_io.hpp"

namespace abmem {
namespace io {

std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path);
}

}  // namespace io

std::vector<char> encode_checkpoint(std::span<const NamedTensor> tensors) {
  io::ByteWriter w;
  w.bytes(kCheckpointMagic);
  for (const auto& t : tensors) {
    w.u32(static_cast<std::uint32_t>(t.name.size()));
    w.bytes(t.name);
    w.u32(static_cast<std::uint32_t>(t.value.rank()));
    for (auto extent : t.value.shape()) w.u32(static_cast<std::uint32_t>(extent));
    for (double v : t.value.data()) w.f64(v);
  }
  return w.buffer();
}

std::vector<NamedTensor> decode_checkpoint(const std::vector<char>& bytes) {
  io::ByteReader r(bytes);
  try {
    if (r.bytes(kCheckpointMagic.size()) != kCheckpointMagic) {
      throw CheckpointError("checkpoint: bad magic");
    }
    std::vector<NamedTensor> out;
    while (!r.at_end()) {
      NamedTensor t;
      t.name = r.bytes(r.u32());
      Shape shape(r.u32());
      for (auto& extent : shape) extent = r.u32();
      const std::size_t n = shape_numel(shape);
      if (r.remaining() / 8 < n) throw io::TruncatedError("payload of " + t.name);
      std::vector<double> data(n);
      for (double& v : data) v = r.f64();
      t.value = Tensor::from(std::move(shape), std::move(data));
      out.push_back(std::move(t));
    }
    return out;
  } catch (const io::TruncatedError& e) {
    throw CheckpointError(std::string("checkpoint: truncated (") + e.what() + ")");
  }
}

void save_checkpoint(const std::string& path, std::span<const NamedTensor> tensors) {
  io::write_file(path, encode_checkpoint(tensors));
}

std::vector<NamedTensor> load_checkpoint(const std::string& path) {
  return decode_checkpoint(io::read_file(path));
}

std::vector<NamedTensor> snapshot(const ParameterStore& store) {
  std::vector<NamedTensor> out;
  for (const auto& p : store.all()) out.push_back({p.name, p.value.detach()});
  return out;
}

void restore(ParameterStore& store, std::span<const NamedTensor> tensors) {
  if (tensors.size() != store.all().size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(tensors.size()) +
                          " tensors, model expects " + std::to_string(store.all().size()));
  }
  for (const auto& t : tensors) {
    auto* p = store.find(t.name);
    if (p == nullptr) throw CheckpointError("checkpoint tensor not in model: " + t.name);
    if (p->value.shape() != t.value.shape()) {
      throw CheckpointError("shape mismatch for " + t.name + ": checkpoint " +
                            shape_string(t.value.shape()) + ", model " +
                            shape_string(p->value.shape()));
    }
  }
  for (const auto& t : tensors) {
    auto dst = store.find(t.name)->value.mutable_data();
    std::copy(t.value.data().begin(), t.value.data().end(), dst.begin());
  }
}

}  // namespace abmem
