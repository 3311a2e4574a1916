#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "binary.hpp"
#include "io.hpp"
#include "tensor.hpp"

namespace allnet {

// RTF1 fixture format: "RTF1", u32 rank (4), four u32 dims, float32 payload.
// Everything little-endian.

inline std::vector<std::uint8_t> encode_rtf(const Tensor& t) {
  std::vector<std::uint8_t> out;
  out.reserve(24 + 4 * t.size());
  binary::put_bytes(out, "RTF1");
  binary::put_u32(out, 4);
  const Shape& s = t.shape();
  for (std::size_t d : {s.n, s.c, s.h, s.w}) binary::put_u32(out, static_cast<std::uint32_t>(d));
  for (float v : t.data()) binary::put_f32(out, v);
  return out;
}

inline Tensor decode_rtf(std::span<const std::uint8_t> bytes) {
  binary::Reader r(bytes, "RTF1 tensor");
  if (r.bytes(4) != "RTF1") throw DataError("RTF1 tensor: bad magic");
  const std::uint32_t rank = r.u32();
  if (rank != 4) throw DataError("RTF1 tensor: rank must be 4, got " + std::to_string(rank));
  Shape s{r.u32(), r.u32(), r.u32(), r.u32()};
  if (!s.valid()) throw DataError("RTF1 tensor: zero dimension in " + s.str());
  if (r.remaining() != 4 * s.numel()) {
    throw DataError("RTF1 tensor: payload is " + std::to_string(r.remaining()) + " bytes, expected " +
                    std::to_string(4 * s.numel()));
  }
  std::vector<float> data(s.numel());
  for (auto& v : data) v = r.f32();
  return Tensor(s, std::move(data));
}

inline void save_rtf(const std::filesystem::path& path, const Tensor& t) { io::write_file(path, encode_rtf(t)); }

inline Tensor load_rtf(const std::filesystem::path& path) { return decode_rtf(io::read_file(path)); }

} // namespace allnet
