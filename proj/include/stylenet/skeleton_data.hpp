#pragma once
// Joint sequences, bone derivation, frame sampling, occlusion noise and the
// on-disk sample/manifest formats.

#include "stylenet/hand_graph.hpp"
#include "stylenet/rng.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace stylenet {

enum class InputMode : std::uint8_t { xy_score = 0, xyz = 1 };

inline const char* to_string(InputMode m) { return m == InputMode::xy_score ? "2d" : "3d"; }

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// T x V x C array stored in (frame, joint, channel) order.
struct JointSample {
  std::size_t frames = 0;
  std::size_t joints = 0;
  std::size_t channels = 3;
  std::vector<float> data;
  std::uint32_t person_id = 0;
  std::uint32_t sentence_id = 0;
  std::uint32_t repetition_id = 0;
  InputMode mode = InputMode::xy_score;

  JointSample() = default;
  JointSample(std::size_t t, std::size_t v, std::size_t c = 3, InputMode m = InputMode::xy_score)
      : frames(t), joints(v), channels(c), data(t * v * c, 0.0f), mode(m) {}

  std::size_t index(std::size_t t, std::size_t v, std::size_t c) const { return (t * joints + v) * channels + c; }
  float& at(std::size_t t, std::size_t v, std::size_t c) { return data[index(t, v, c)]; }
  float at(std::size_t t, std::size_t v, std::size_t c) const { return data[index(t, v, c)]; }

  /// Checks the structural invariants; throws FormatError on violation.
  void validate() const {
    if (frames < 1) throw FormatError("sample has no frames");
    if (joints != 21 && joints != 42) throw FormatError("sample must have 21 or 42 joints");
    if (channels != 3) throw FormatError("sample must have 3 channels");
    if (data.size() != frames * joints * channels) throw FormatError("sample payload size mismatch");
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (!std::isfinite(data[i])) throw FormatError("sample contains non-finite values");
      if (mode == InputMode::xy_score && i % 3 == 2 && (data[i] < 0.0f || data[i] > 1.0f))
        throw FormatError("score channel outside [0, 1]");
    }
  }

  friend bool operator==(const JointSample&, const JointSample&) = default;
};

struct BoneSample {
  std::size_t frames = 0;
  std::size_t bones = 0;
  std::size_t channels = 3;
  std::vector<float> data;
  std::vector<Edge> edge_index;
  float at(std::size_t t, std::size_t b, std::size_t c) const { return data[(t * bones + b) * channels + c]; }
};

/// Bone vectors child minus parent; the score channel becomes the product of
/// the endpoint scores in 2D-score mode, z is differenced in 3D mode.
inline BoneSample derive_bones(const JointSample& j, const HandGraph& g) {
  if (j.joints != g.num_vertices) throw std::invalid_argument("derive_bones: joint count does not match graph");
  BoneSample b;
  b.frames = j.frames;
  b.bones = g.edges.size();
  b.channels = j.channels;
  b.edge_index = g.edges;
  b.data.resize(b.frames * b.bones * b.channels);
  const bool score = j.mode == InputMode::xy_score;
  for (std::size_t t = 0; t < j.frames; ++t) {
    for (std::size_t e = 0; e < b.bones; ++e) {
      const auto [p, c] = g.edges[e];
      float* out = &b.data[(t * b.bones + e) * b.channels];
      for (std::size_t ch = 0; ch < j.channels; ++ch) {
        if (score && ch == 2) out[ch] = j.at(t, c, ch) * j.at(t, p, ch);
        else out[ch] = j.at(t, c, ch) - j.at(t, p, ch);
      }
    }
  }
  return b;
}

/// Lays bones out on the joint grid so the bone stream shares the joint
/// graph: each bone sits at its child vertex, wrists carry a zero vector.
inline JointSample bones_on_vertices(const BoneSample& b, const JointSample& like) {
  JointSample out(b.frames, like.joints, b.channels, like.mode);
  out.person_id = like.person_id;
  out.sentence_id = like.sentence_id;
  out.repetition_id = like.repetition_id;
  for (std::size_t t = 0; t < b.frames; ++t)
    for (std::size_t e = 0; e < b.bones; ++e)
      for (std::size_t c = 0; c < b.channels; ++c) out.at(t, b.edge_index[e].child, c) = b.at(t, e, c);
  return out;
}

/// Segment-random sampling: [0, t_full) is cut into t_out equal (possibly
/// fractional) segments and one frame is drawn uniformly from each.
inline std::vector<std::size_t> sample_frames(std::size_t t_full, std::size_t t_out, Rng& rng) {
  if (t_full < 1) throw std::invalid_argument("sample_frames: empty sequence");
  std::vector<std::size_t> idx(t_out);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double seg = static_cast<double>(t_full) / static_cast<double>(t_out);
  for (std::size_t i = 0; i < t_out; ++i) {
    const double pos = (static_cast<double>(i) + u(rng)) * seg;
    idx[i] = std::min(static_cast<std::size_t>(pos), t_full - 1);
  }
  // Guards against rounding at segment boundaries.
  for (std::size_t i = 1; i < t_out; ++i) idx[i] = std::max(idx[i], idx[i - 1]);
  return idx;
}

inline JointSample select_frames(const JointSample& j, const std::vector<std::size_t>& frames) {
  JointSample out = j;
  out.frames = frames.size();
  out.data.resize(out.frames * j.joints * j.channels);
  const std::size_t row = j.joints * j.channels;
  for (std::size_t i = 0; i < frames.size(); ++i)
    std::copy_n(j.data.begin() + static_cast<std::ptrdiff_t>(frames[i] * row), row,
                out.data.begin() + static_cast<std::ptrdiff_t>(i * row));
  return out;
}

/// Thumb joints 3, index-finger joints 2, everything else 1; repeated per hand.
inline std::vector<double> default_occlusion_weights(std::size_t joints) {
  std::vector<double> w(joints, 1.0);
  for (std::size_t v = 0; v < joints; ++v) {
    const std::size_t local = v % kJointsPerHand;
    if (local >= 1 && local <= 4) w[v] = 3.0;
    else if (local >= 5 && local <= 8) w[v] = 2.0;
  }
  return w;
}

/// Successive weighted draws, each removing the chosen item.
inline std::vector<std::size_t> weighted_sample_without_replacement(std::vector<double> weights, std::size_t k,
                                                                    Rng& rng) {
  std::vector<std::size_t> chosen;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t draw = 0; draw < k; ++draw) {
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (!(total > 0.0)) break;
    double r = u(rng) * total;
    std::size_t pick = weights.size();
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (weights[i] <= 0.0) continue;
      pick = i;
      if (r < weights[i]) break;
      r -= weights[i];
    }
    chosen.push_back(pick);
    weights[pick] = 0.0;
  }
  return chosen;
}

inline std::vector<std::size_t> choose_occluded_joints(const std::vector<double>& weights, Rng& rng) {
  if (weights.empty()) throw std::invalid_argument("inject_noise: empty weights");
  bool positive = false;
  for (double w : weights) {
    if (w < 0.0 || !std::isfinite(w)) throw std::invalid_argument("inject_noise: weights must be nonnegative");
    positive = positive || w > 0.0;
  }
  if (!positive) throw std::invalid_argument("inject_noise: at least one weight must be positive");
  std::uniform_int_distribution<int> count(0, 2);
  const auto k = static_cast<std::size_t>(count(rng));
  return weighted_sample_without_replacement(weights, k, rng);
}

/// Zeroes every channel of the given joints in every frame.
inline JointSample zero_joints(JointSample j, const std::vector<std::size_t>& joints) {
  for (auto v : joints) {
    if (v >= j.joints) throw std::invalid_argument("zero_joints: joint out of range");
    for (std::size_t t = 0; t < j.frames; ++t)
      for (std::size_t c = 0; c < j.channels; ++c) j.at(t, v, c) = 0.0f;
  }
  return j;
}

/// Simulated detector failure: 0, 1 or 2 joints (uniform) picked by weight
/// and zeroed for the whole clip.
inline JointSample inject_noise(const JointSample& j, Rng& rng, const std::vector<double>& weights) {
  if (weights.size() != j.joints) throw std::invalid_argument("inject_noise: one weight per joint required");
  return zero_joints(j, choose_occluded_joints(weights, rng));
}

// ---------------------------------------------------------------------------
// Binary sample file: "SKEL", u32 version, u32 T, V, C, u8 mode, f32 payload.

inline constexpr std::uint32_t kSampleFormatVersion = 1;

namespace io {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  explicit Reader(std::string bytes) : buf_(std::move(bytes)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf_[pos_++]);
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw FormatError("truncated payload");
  }
  std::string buf_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace io

inline std::string encode_sample(const JointSample& j) {
  std::string out = "SKEL";
  io::put_u32(out, kSampleFormatVersion);
  io::put_u32(out, static_cast<std::uint32_t>(j.frames));
  io::put_u32(out, static_cast<std::uint32_t>(j.joints));
  io::put_u32(out, static_cast<std::uint32_t>(j.channels));
  out.push_back(static_cast<char>(j.mode));
  out.reserve(out.size() + 4 * j.data.size());
  for (float f : j.data) io::put_f32(out, f);
  return out;
}

inline JointSample decode_sample(std::string bytes) {
  io::Reader r(std::move(bytes));
  if (r.bytes(4) != "SKEL") throw FormatError("bad magic, not a SKEL sample file");
  if (const auto version = r.u32(); version != kSampleFormatVersion)
    throw FormatError("unsupported sample format version " + std::to_string(version));
  JointSample j;
  j.frames = r.u32();
  j.joints = r.u32();
  j.channels = r.u32();
  const auto mode = r.u8();
  if (mode > 1) throw FormatError("bad mode byte");
  j.mode = static_cast<InputMode>(mode);
  const std::uint64_t count = std::uint64_t{j.frames} * j.joints * j.channels;
  if (count * 4 > r.remaining()) throw FormatError("truncated payload: header claims more floats than present");
  if (count * 4 < r.remaining()) throw FormatError("payload size does not match header");
  j.data.resize(count);
  for (auto& f : j.data) f = r.f32();
  return j;
}

inline void write_sample(const std::filesystem::path& path, const JointSample& j) { io::write_file(path, encode_sample(j)); }

inline JointSample read_sample(const std::filesystem::path& path) { return decode_sample(io::read_file(path)); }

// ---------------------------------------------------------------------------
// Manifest: path<TAB>person<TAB>sentence<TAB>repetition per line.

struct ManifestRecord {
  std::filesystem::path path;
  std::uint32_t person_id = 0;
  std::uint32_t sentence_id = 0;
  std::uint32_t repetition_id = 0;
  InputMode mode = InputMode::xy_score;
  std::size_t frames = 0;
  std::size_t joints = 0;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
};

inline void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  std::string text;
  for (const auto& r : m.records) {
    text += r.path.generic_string() + '\t' + std::to_string(r.person_id) + '\t' + std::to_string(r.sentence_id) +
            '\t' + std::to_string(r.repetition_id) + '\n';
  }
  io::write_file(path, text);
}

/// Reads a manifest; relative sample paths resolve against the manifest's
/// directory. Header fields (mode, T, V) are filled in and checked when
/// `check_files` is set.
inline DatasetManifest read_manifest(const std::filesystem::path& path, bool check_files = true) {
  std::istringstream in(io::read_file(path));
  DatasetManifest m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (std::size_t tab; (tab = line.find('\t', start)) != std::string::npos; start = tab + 1)
      fields.push_back(line.substr(start, tab - start));
    fields.push_back(line.substr(start));
    if (fields.size() != 4) throw FormatError("manifest line " + std::to_string(lineno) + ": expected 4 fields");
    ManifestRecord r;
    r.path = fields[0];
    if (r.path.is_relative()) r.path = path.parent_path() / r.path;
    try {
      r.person_id = static_cast<std::uint32_t>(std::stoul(fields[1]));
      r.sentence_id = static_cast<std::uint32_t>(std::stoul(fields[2]));
      r.repetition_id = static_cast<std::uint32_t>(std::stoul(fields[3]));
    } catch (const std::exception&) {
      throw FormatError("manifest line " + std::to_string(lineno) + ": bad label");
    }
    if (check_files) {
      if (!std::filesystem::exists(r.path)) throw FormatError("manifest references missing file " + r.path.string());
      const auto j = read_sample(r.path);
      r.mode = j.mode;
      r.frames = j.frames;
      r.joints = j.joints;
    }
    m.records.push_back(std::move(r));
  }
  return m;
}

/// Loads every sample of a manifest and attaches its labels.
inline std::vector<JointSample> load_samples(const DatasetManifest& m) {
  std::vector<JointSample> out;
  out.reserve(m.records.size());
  for (const auto& r : m.records) {
    auto j = read_sample(r.path);
    if ((r.frames && j.frames != r.frames) || (r.joints && j.joints != r.joints))
      throw FormatError("sample header does not match manifest: " + r.path.string());
    j.person_id = r.person_id;
    j.sentence_id = r.sentence_id;
    j.repetition_id = r.repetition_id;
    j.validate();
    out.push_back(std::move(j));
  }
  return out;
}

}  // namespace stylenet
