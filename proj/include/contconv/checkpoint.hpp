#pragma once

#include "contconv/models.hpp"
#include "contconv/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace contconv {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorRecord {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<float> data;
};

/// Layout (all integers little-endian):
///   "PCCN" | u32 version | u32 len, architecture text | u32 tensor count |
///   per tensor: u32 len, name | u32 rank | u64 dims[rank] | u64 offset |
///   u64 total floats | f32 data[total]
/// Offsets count floats from the start of the data block.
struct Checkpoint {
  std::string architecture;
  std::vector<TensorRecord> tensors;

  const TensorRecord* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source = "<memory>");
void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

/// Parameters first, then batch-norm running statistics.
template <typename Scalar>
Checkpoint to_checkpoint(Network<Scalar>& net) {
  Checkpoint ck;
  ck.architecture = serialize_spec(net.spec);
  ParamList<Scalar> all;
  collect_params(net, all, "");
  collect_buffers(net, all, "");
  for (std::size_t i = 0; i < all.size(); ++i) {
    const auto& m = *all.values[i];
    TensorRecord t;
    t.name = all.names[i];
    t.shape = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
    t.data.resize(static_cast<std::size_t>(m.size()));
    for (Index k = 0; k < m.size(); ++k) t.data[static_cast<std::size_t>(k)] = static_cast<float>(m.data()[k]);
    ck.tensors.push_back(std::move(t));
  }
  return ck;
}

/// Rebuilds the network from the stored architecture and fills every tensor.
/// Missing, extra or misshapen tensors raise CheckpointMismatch.
template <typename Scalar>
Network<Scalar> network_from_checkpoint(const Checkpoint& ck) {
  const NetworkSpec spec = parse_spec(ck.architecture);
  std::mt19937_64 rng(0);
  Network<Scalar> net = make_network<Scalar>(spec, rng);
  ParamList<Scalar> all;
  collect_params(net, all, "");
  collect_buffers(net, all, "");
  if (all.size() != ck.tensors.size())
    throw CheckpointMismatch("checkpoint holds " + std::to_string(ck.tensors.size()) +
                             " tensors, architecture needs " + std::to_string(all.size()));
  for (std::size_t i = 0; i < all.size(); ++i) {
    const TensorRecord* t = ck.find(all.names[i]);
    if (!t) throw CheckpointMismatch("checkpoint lacks tensor " + all.names[i]);
    auto& m = *all.values[i];
    if (t->shape.size() != 2 || t->shape[0] != static_cast<std::uint64_t>(m.rows()) ||
        t->shape[1] != static_cast<std::uint64_t>(m.cols()))
      throw CheckpointMismatch("tensor " + t->name + " has the wrong shape");
    for (Index k = 0; k < m.size(); ++k) m.data()[k] = static_cast<Scalar>(t->data[static_cast<std::size_t>(k)]);
  }
  for_each_batchnorm(net, [](auto& bn) { bn.tracked = true; });
  return net;
}

}  // namespace contconv
