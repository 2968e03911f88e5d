#pragma once
// Checkpoint file: "STYN", u32 version, u32 count, then per entry
// u32 name length, UTF-8 name, u32 rank, u32 dims[rank], f32 values.
// All integers and floats little-endian.

#include "stylenet/skeleton_data.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace stylenet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
  friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

using Checkpoint = std::vector<NamedArray>;

inline std::string encode_checkpoint(const Checkpoint& ck) {
  std::string out = "STYN";
  io::put_u32(out, kCheckpointVersion);
  io::put_u32(out, static_cast<std::uint32_t>(ck.size()));
  for (const auto& e : ck) {
    std::uint64_t count = 1;
    for (auto d : e.dims) count *= d;
    if (count != e.values.size()) throw FormatError("checkpoint entry '" + e.name + "' dims do not match values");
    io::put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    io::put_u32(out, static_cast<std::uint32_t>(e.dims.size()));
    for (auto d : e.dims) io::put_u32(out, d);
    for (float f : e.values) io::put_f32(out, f);
  }
  return out;
}

inline Checkpoint decode_checkpoint(std::string bytes) {
  io::Reader r(std::move(bytes));
  if (r.bytes(4) != "STYN") throw FormatError("bad magic, not a STYN checkpoint");
  if (const auto v = r.u32(); v != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(v));
  const auto count = r.u32();
  Checkpoint ck;
  ck.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray e;
    e.name = r.bytes(r.u32());
    const auto rank = r.u32();
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      e.dims.push_back(r.u32());
      n *= e.dims.back();
    }
    if (n * 4 > r.remaining()) throw FormatError("truncated checkpoint entry '" + e.name + "'");
    e.values.resize(n);
    for (auto& f : e.values) f = r.f32();
    ck.push_back(std::move(e));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint entries");
  return ck;
}

inline void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  io::write_file(path, encode_checkpoint(ck));
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(io::read_file(path)); }

inline const NamedArray* find_entry(const Checkpoint& ck, const std::string& name) {
  for (const auto& e : ck)
    if (e.name == name) return &e;
  return nullptr;
}

inline const NamedArray& require_entry(const Checkpoint& ck, const std::string& name) {
  const auto* e = find_entry(ck, name);
  if (!e) throw FormatError("checkpoint is missing entry '" + name + "'");
  return *e;
}

}  // namespace stylenet
