#pragma once

// Binary checkpoint: magic "ALNC", u32 version, u64 architecture
// fingerprint, parameter tensors, optimizer slot tensors, u32 epoch, and the
// 32-byte RNG state. All integers and floats are little-endian.

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "binary.hpp"
#include "error.hpp"
#include "graph.hpp"
#include "io.hpp"
#include "optimizer.hpp"
#include "rng.hpp"

namespace allnet {

inline constexpr std::uint32_t checkpoint_version = 1;
/// Node id of the optimizer record that carries the Adam step count.
inline constexpr std::uint32_t step_record_id = 0xFFFFFFFFu;

struct TensorRecord {
  std::uint32_t node = 0;
  Tensor tensor;

  friend bool operator==(const TensorRecord&, const TensorRecord&) = default;
};

struct Checkpoint {
  std::uint32_t version = checkpoint_version;
  std::uint64_t fingerprint = 0;
  std::vector<TensorRecord> params;
  std::vector<TensorRecord> optimizer;
  std::uint32_t epoch = 0;
  Rng::State rng{};

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

/// Snapshot of the graph's parameters (node-id order, weights then bias)
/// and, when given, the optimizer's slots.
inline Checkpoint capture(const Graph& graph, const Optimizer* opt = nullptr, std::uint32_t epoch = 0,
                          const Rng::State& rng = {}) {
  Checkpoint c;
  c.fingerprint = graph.fingerprint();
  for (const auto& pv : graph.parameters()) {
    c.params.push_back({static_cast<std::uint32_t>(pv.node),
                        Tensor(pv.shape, std::vector<float>(pv.values.begin(), pv.values.end()))});
  }
  if (opt) {
    const auto& nodes = opt->slot_nodes();
    const auto& shapes = opt->slot_shapes();
    const auto& slots = opt->slots();
    for (std::size_t i = 0; i < slots.size(); ++i) {
      const std::size_t k = i % nodes.size();
      c.optimizer.push_back({static_cast<std::uint32_t>(nodes[k]), Tensor(shapes[k], slots[i])});
    }
    if (opt->kind() == OptimizerKind::adam) {
      c.optimizer.push_back({step_record_id, Tensor(Shape{1, 1, 1, 1}, {std::bit_cast<float>(opt->steps())})});
    }
  }
  c.epoch = epoch;
  c.rng = rng;
  return c;
}

namespace detail {

inline void put_records(std::vector<std::uint8_t>& out, const std::vector<TensorRecord>& records) {
  binary::put_u32(out, static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    const Shape& s = r.tensor.shape();
    binary::put_u32(out, r.node);
    for (std::size_t d : {s.n, s.c, s.h, s.w}) binary::put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : r.tensor.data()) binary::put_f32(out, v);
  }
}

inline std::vector<TensorRecord> get_records(binary::Reader& in, const char* section) {
  const std::uint32_t count = in.u32();
  std::vector<TensorRecord> records;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t node = in.u32();
    Shape s;
    s.n = in.u32();
    s.c = in.u32();
    s.h = in.u32();
    s.w = in.u32();
    if (!s.valid()) {
      throw DataError(std::string("checkpoint: ") + section + " tensor " + std::to_string(i) + " has a zero dimension");
    }
    if (in.remaining() / 4 < s.numel()) {
      throw DataError("checkpoint: truncated at byte " + std::to_string(in.position()) + " in " + section +
                      " tensor " + std::to_string(i));
    }
    std::vector<float> values(s.numel());
    for (float& v : values) v = in.f32();
    records.push_back({node, Tensor(s, std::move(values))});
  }
  return records;
}

} // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  std::vector<std::uint8_t> out;
  binary::put_bytes(out, "ALNC");
  binary::put_u32(out, c.version);
  binary::put_u64(out, c.fingerprint);
  detail::put_records(out, c.params);
  detail::put_records(out, c.optimizer);
  binary::put_u32(out, c.epoch);
  for (std::uint64_t w : c.rng) binary::put_u64(out, w);
  return out;
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& name = "checkpoint") {
  binary::Reader in(bytes, name);
  if (in.bytes(4) != "ALNC") throw DataError(name + ": not a checkpoint (bad magic)");
  Checkpoint c;
  c.version = in.u32();
  if (c.version != checkpoint_version) {
    throw DataError(name + ": unsupported checkpoint version " + std::to_string(c.version) + " (expected " +
                    std::to_string(checkpoint_version) + ")");
  }
  c.fingerprint = in.u64();
  c.params = detail::get_records(in, "parameter");
  c.optimizer = detail::get_records(in, "optimizer");
  c.epoch = in.u32();
  for (auto& w : c.rng) w = in.u64();
  if (in.remaining() != 0) {
    throw DataError(name + ": " + std::to_string(in.remaining()) + " trailing bytes after the RNG state");
  }
  return c;
}

inline void save_checkpoint(const std::filesystem::path& file, const Checkpoint& c) {
  io::write_file(file, encode_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& file) {
  const auto bytes = io::read_file(file);
  return decode_checkpoint(bytes, file.string());
}

/// Copies checkpointed parameters into `graph`. The fingerprint and every
/// tensor's node id and shape must match.
inline void restore(Graph& graph, const Checkpoint& c) {
  if (c.fingerprint != graph.fingerprint()) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "checkpoint fingerprint %016llx does not match graph %016llx",
                  static_cast<unsigned long long>(c.fingerprint),
                  static_cast<unsigned long long>(graph.fingerprint()));
    throw DataError(buf);
  }
  auto params = graph.parameters();
  if (params.size() != c.params.size()) {
    throw DataError("checkpoint holds " + std::to_string(c.params.size()) + " parameter tensors, graph has " +
                    std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const TensorRecord& r = c.params[i];
    if (static_cast<int>(r.node) != params[i].node || r.tensor.size() != params[i].values.size()) {
      throw DataError("checkpoint tensor " + std::to_string(i) + " (node " + std::to_string(r.node) +
                      ") does not fit node " + std::to_string(params[i].node));
    }
    std::copy(r.tensor.data().begin(), r.tensor.data().end(), params[i].values.begin());
  }
}

/// Copies checkpointed optimizer slots into `opt`, which must have been
/// built for the same graph and optimizer kind.
inline void restore(Optimizer& opt, const Checkpoint& c) {
  auto& slots = opt.slots();
  const bool adam = opt.kind() == OptimizerKind::adam;
  const std::size_t expected = slots.size() + (adam ? 1 : 0);
  if (c.optimizer.size() != expected) {
    throw DataError("checkpoint holds " + std::to_string(c.optimizer.size()) + " optimizer records, " +
                    to_string(opt.kind()) + " needs " + std::to_string(expected));
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto& t = c.optimizer[i].tensor;
    if (t.size() != slots[i].size()) throw DataError("optimizer record " + std::to_string(i) + " has the wrong size");
    std::copy(t.data().begin(), t.data().end(), slots[i].begin());
  }
  if (adam) {
    const TensorRecord& step = c.optimizer.back();
    if (step.node != step_record_id) throw DataError("checkpoint lacks the optimizer step record");
    opt.set_steps(std::bit_cast<std::uint32_t>(step.tensor[0]));
  }
}

} // namespace allnet
