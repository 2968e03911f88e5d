#pragma once
// Synthetic typing corpora. Person identity lives in motion style (posture,
// stroke timing, sympathetic joint motion, jitter, finger assignment);
// sentence identity lives in key order.

#include "stylenet/skeleton_data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace stylenet {

inline constexpr std::size_t kNumKeys = 26;
inline constexpr std::size_t kNumKeyColumns = 10;

struct StyleParams {
  std::array<int, kNumKeyColumns> finger_for_column{};  // 1..4 (index..little)
  std::vector<double> amplitude;                        // per joint, pixels
  double stroke_duration = 0.25;                        // seconds per keystroke
  double asymmetry = 0.5;                               // peak position within a stroke
  double sharpness = 1.0;                               // profile exponent
  double timing_jitter = 0.1;                           // relative per-stroke duration spread
  double hand_x = 0, hand_y = 0;                        // wrist rest position, pixels
  double hand_scale = 1.0;
  std::vector<double> posture_x, posture_y, posture_z;  // per joint offsets
  std::vector<double> jitter;                           // per joint std, pixels
  double degradation = 0.001;                           // score loss per pixel/second
  double press_depth = 12.0;                            // 3D key travel

  /// Parameters that carry the minimum-separation guarantee.
  std::vector<double> separation_vector() const {
    return {stroke_duration, asymmetry, sharpness, hand_scale, hand_x, hand_y, degradation, press_depth};
  }
};

/// Largest relative difference over the separation parameters.
inline double style_separation(const StyleParams& a, const StyleParams& b) {
  const auto va = a.separation_vector(), vb = b.separation_vector();
  double best = 0;
  for (std::size_t i = 0; i < va.size(); ++i) {
    const double den = std::max(std::abs(va[i]), std::abs(vb[i]));
    if (den > 0) best = std::max(best, std::abs(va[i] - vb[i]) / den);
  }
  return best;
}

/// L2 distance over every numeric style field.
inline double style_distance(const StyleParams& a, const StyleParams& b) {
  double s = 0;
  auto acc = [&](double x, double y) { s += (x - y) * (x - y); };
  for (std::size_t i = 0; i < kNumKeyColumns; ++i) acc(a.finger_for_column[i], b.finger_for_column[i]);
  const auto va = a.separation_vector(), vb = b.separation_vector();
  for (std::size_t i = 0; i < va.size(); ++i) acc(va[i], vb[i]);
  for (auto f : {&StyleParams::amplitude, &StyleParams::posture_x, &StyleParams::posture_y,
                        &StyleParams::posture_z, &StyleParams::jitter})
    for (std::size_t i = 0; i < (a.*f).size(); ++i) acc((a.*f)[i], (b.*f)[i]);
  return std::sqrt(s);
}

inline StyleParams make_person_style(std::uint64_t seed) {
  Rng rng = make_rng(seed, {0x571e});
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto range = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  StyleParams s;
  // Finger boundaries 4|6|8 over the ten columns, each shifted by -1, 0 or +1.
  std::array<int, 3> cut{4, 6, 8};
  std::uniform_int_distribution<int> shift(-1, 1);
  for (auto& c : cut) c += shift(rng);
  cut[1] = std::max(cut[1], cut[0] + 1);
  cut[2] = std::clamp(std::max(cut[2], cut[1] + 1), 1, 9);
  for (std::size_t col = 0; col < kNumKeyColumns; ++col) {
    const int c = static_cast<int>(col);
    s.finger_for_column[col] = c < cut[0] ? 1 : c < cut[1] ? 2 : c < cut[2] ? 3 : 4;
  }
  s.stroke_duration = range(0.15, 0.40);
  s.asymmetry = range(0.25, 0.75);
  s.sharpness = range(0.6, 1.8);
  s.timing_jitter = range(0.0, 0.15);
  s.hand_scale = range(0.85, 1.2);
  s.hand_x = range(-20.0, 20.0);
  s.hand_y = range(-15.0, 15.0);
  s.degradation = range(0.0005, 0.002);
  s.press_depth = range(8.0, 16.0);
  const std::size_t v = 2 * kJointsPerHand;
  std::normal_distribution<double> post(0.0, 4.0);
  for (std::size_t j = 0; j < v; ++j) {
    s.amplitude.push_back(range(1.0, 5.0));
    s.posture_x.push_back(post(rng));
    s.posture_y.push_back(post(rng));
    s.posture_z.push_back(post(rng) * 0.5);
    s.jitter.push_back(range(0.3, 1.0));
  }
  return s;
}

struct Sentence {
  std::vector<std::size_t> keys;
  std::uint32_t id = 0;
};

inline Sentence make_sentence(std::uint32_t id, std::uint64_t corpus_seed, std::size_t min_len = 10,
                              std::size_t max_len = 16) {
  Rng rng = make_rng(corpus_seed, {0x5e47e9ce, id});
  std::uniform_int_distribution<std::size_t> len(min_len, max_len);
  std::uniform_int_distribution<std::size_t> key(0, kNumKeys - 1);
  Sentence s;
  s.id = id;
  s.keys.resize(len(rng));
  for (auto& k : s.keys) k = key(rng);
  return s;
}

/// Key index -> (row, column) on a 10/9/7 staggered layout.
inline std::pair<std::size_t, std::size_t> key_row_column(std::size_t key) {
  if (key >= kNumKeys) throw std::out_of_range("key index outside the 26-key layout");
  if (key < 10) return {0, key};
  if (key < 19) return {1, key - 10};
  return {2, key - 19};
}

namespace synth {

struct Point {
  double x = 0, y = 0, z = 0;
};

// Right hand, palm down, seen from above; wrist at the origin, fingers up.
inline const std::array<Point, 5> kFingerBase{{{-32, -22, 20}, {-20, -58, 24}, {-2, -64, 24}, {16, -60, 23}, {31, -50, 21}}};
inline const std::array<Point, 5> kFingerDir{{{-0.55, -0.83, 0}, {-0.05, -1, 0}, {0, -1, 0}, {0.06, -1, 0}, {0.15, -0.99, 0}}};
inline const std::array<std::array<double, 3>, 5> kSegment{{{17, 14, 11}, {22, 15, 11}, {25, 17, 12}, {23, 16, 11}, {18, 13, 10}}};

inline Point canonical_joint(std::size_t local) {
  if (local == 0) return {0, 0, 30};
  const std::size_t f = (local - 1) / 4, k = (local - 1) % 4;
  Point p = kFingerBase[f];
  for (std::size_t i = 0; i < k; ++i) {
    p.x += kFingerDir[f].x * kSegment[f][i];
    p.y += kFingerDir[f].y * kSegment[f][i];
    p.z -= 4.0;
  }
  return p;
}

inline std::size_t hands_for(InputMode m) { return m == InputMode::xy_score ? 1 : 2; }

}  // namespace synth

/// Rest position of every joint (pixels; z in 3D mode).
inline std::vector<synth::Point> rest_pose(const StyleParams& s, InputMode mode) {
  const std::size_t hands = synth::hands_for(mode);
  std::vector<synth::Point> pose(hands * kJointsPerHand);
  for (std::size_t h = 0; h < hands; ++h) {
    // one hand: wrist at (150, 200); two hands: left mirrored at (95, 200), right at (205, 200)
    const double ox = hands == 1 ? 150.0 : (h == 0 ? 95.0 : 205.0);
    const double mirror = (hands == 2 && h == 0) ? -1.0 : 1.0;
    for (std::size_t l = 0; l < kJointsPerHand; ++l) {
      const std::size_t j = h * kJointsPerHand + l;
      const auto c = synth::canonical_joint(l);
      pose[j] = {ox + s.hand_x + mirror * c.x * s.hand_scale + s.posture_x[j],
                 200.0 + s.hand_y + c.y * s.hand_scale + s.posture_y[j], c.z + s.posture_z[j]};
    }
  }
  return pose;
}

inline synth::Point key_position(std::size_t key, InputMode mode) {
  const auto [row, col] = key_row_column(key);
  const double pitch = mode == InputMode::xy_score ? 12.0 : 20.0;
  const double x0 = mode == InputMode::xy_score ? 100.0 : 60.0;
  return {x0 + static_cast<double>(col) * pitch + static_cast<double>(row) * pitch / 3.0,
          112.0 + static_cast<double>(row) * 14.0, 0.0};
}

/// Joint index of the fingertip that strikes `key`.
inline std::size_t striking_tip(const StyleParams& s, std::size_t key, InputMode mode) {
  const auto col = key_row_column(key).second;
  int finger = s.finger_for_column[col];
  std::size_t hand = 0;
  if (mode == InputMode::xyz) {
    // Left hand covers columns 0-4 with fingers little..index, right hand 5-9.
    hand = col < 5 ? 0 : 1;
    if (hand == 0) finger = 5 - std::min<int>(static_cast<int>(col) + 1, 4);
    else finger = std::min<int>(s.finger_for_column[col], 4);
  }
  return hand * kJointsPerHand + static_cast<std::size_t>(finger) * 4;
}

/// Stroke displacement profile in [0, 1] over n frames; rises to exactly 1 at
/// the peak frame and returns to 0 at the last frame.
inline std::vector<double> stroke_profile(std::size_t n, double asymmetry, double sharpness) {
  n = std::max<std::size_t>(n, 3);
  const auto peak = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(asymmetry * static_cast<double>(n - 1))), 1, n - 2);
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) {
    double base;
    if (i <= peak) base = 0.5 * (1.0 - std::cos(std::numbers::pi * static_cast<double>(i) / static_cast<double>(peak)));
    else
      base = 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(i - peak) / static_cast<double>(n - 1 - peak)));
    s[i] = std::pow(std::max(base, 0.0), sharpness);
  }
  s[peak] = 1.0;
  return s;
}

/// Double-precision trajectory (frame, joint, channel) before score and
/// jitter are applied; exposed for noiseless kinematics checks.
struct Trajectory {
  std::size_t frames = 0, joints = 0;
  std::vector<synth::Point> pos;  // frames * joints
  const synth::Point& at(std::size_t t, std::size_t j) const { return pos[t * joints + j]; }
};

inline Trajectory synth_trajectory(const StyleParams& style, const Sentence& sentence, Rng& rng, double fps,
                                   InputMode mode) {
  if (sentence.keys.empty()) throw std::invalid_argument("synth_sequence: empty sentence");
  const auto rest = rest_pose(style, mode);
  const std::size_t v = rest.size();
  Trajectory tr;
  tr.joints = v;
  std::normal_distribution<double> nd(0.0, 1.0);
  for (std::size_t key : sentence.keys) {
    const double dur = style.stroke_duration * (1.0 + style.timing_jitter * nd(rng));
    const auto n = static_cast<std::size_t>(std::max(3L, std::lround(fps * std::max(dur, 0.05))));
    const auto prof = stroke_profile(n, style.asymmetry, style.sharpness);
    const std::size_t tip = striking_tip(style, key, mode);
    const std::size_t base = tip - 3;
    const auto target = key_position(key, mode);
    const synth::Point delta{target.x - rest[tip].x, target.y - rest[tip].y,
                             mode == InputMode::xyz ? -style.press_depth : 0.0};
    const double len = std::hypot(delta.x, delta.y);
    const synth::Point dir = len > 1e-12 ? synth::Point{delta.x / len, delta.y / len, 0.0} : synth::Point{};
    const std::size_t hand_lo = (tip / kJointsPerHand) * kJointsPerHand;
    for (double s : prof) {
      for (std::size_t j = 0; j < v; ++j) {
        synth::Point p = rest[j];
        if (j >= base && j <= tip) {
          const double frac = static_cast<double>(j - base + 1) / 4.0;
          p.x += frac * s * delta.x;
          p.y += frac * s * delta.y;
          p.z += frac * s * delta.z;
        } else if (j >= hand_lo && j < hand_lo + kJointsPerHand) {
          p.x += style.amplitude[j] * s * dir.x;
          p.y += style.amplitude[j] * s * dir.y;
          p.z += (mode == InputMode::xyz && len > 1e-12) ? -0.1 * style.amplitude[j] * s : 0.0;
        }
        tr.pos.push_back(p);
      }
      ++tr.frames;
    }
  }
  return tr;
}

/// Renders a labeled sample: jitter on every coordinate channel, and in 2D
/// mode a score of 1 - degradation * speed clamped to [0.05, 1].
inline JointSample synth_sequence(const StyleParams& style, const Sentence& sentence, Rng& rng, double fps,
                                  InputMode mode) {
  const auto tr = synth_trajectory(style, sentence, rng, fps, mode);
  JointSample j(tr.frames, tr.joints, 3, mode);
  j.sentence_id = sentence.id;
  std::normal_distribution<double> nd(0.0, 1.0);
  for (std::size_t t = 0; t < tr.frames; ++t) {
    for (std::size_t v = 0; v < tr.joints; ++v) {
      const auto& p = tr.at(t, v);
      const double sd = style.jitter[v];
      j.at(t, v, 0) = static_cast<float>(p.x + sd * nd(rng));
      j.at(t, v, 1) = static_cast<float>(p.y + sd * nd(rng));
      if (mode == InputMode::xyz) {
        j.at(t, v, 2) = static_cast<float>(p.z + sd * nd(rng));
      } else {
        const auto& a = tr.at(t > 0 ? t - 1 : t, v);
        const auto& b = tr.at(t + 1 < tr.frames ? t + 1 : t, v);
        const double span = static_cast<double>((t + 1 < tr.frames ? t + 1 : t) - (t > 0 ? t - 1 : t));
        const double speed = span > 0 ? std::hypot(b.x - a.x, b.y - a.y) * fps / span : 0.0;
        j.at(t, v, 2) = static_cast<float>(std::clamp(1.0 - style.degradation * speed, 0.05, 1.0));
      }
    }
  }
  return j;
}

struct CorpusConfig {
  std::size_t persons = 10;
  std::size_t sentences = 6;
  std::size_t repetitions = 3;
  std::uint64_t seed = 1;
  InputMode mode = InputMode::xy_score;
  double fps = 30.0;
  double min_separation = 0.15;
  std::size_t min_sentence_length = 10;
  std::size_t max_sentence_length = 16;
};

/// One style per person; a candidate style closer than `min_separation` to
/// an earlier person is redrawn from the next seed.
inline std::vector<StyleParams> make_corpus_styles(const CorpusConfig& cfg) {
  std::vector<StyleParams> styles;
  for (std::size_t p = 0; p < cfg.persons; ++p) {
    for (std::uint64_t attempt = 0;; ++attempt) {
      auto s = make_person_style(derive_seed(cfg.seed, {0xface, p, attempt}));
      bool ok = true;
      for (const auto& o : styles) ok = ok && style_separation(s, o) >= cfg.min_separation;
      if (ok || attempt >= 10000) {
        styles.push_back(std::move(s));
        break;
      }
    }
  }
  return styles;
}

/// persons x sentences x repetitions labeled samples, in that nesting order.
inline std::vector<JointSample> generate_samples(const CorpusConfig& cfg) {
  if (cfg.persons < 1 || cfg.sentences < 1 || cfg.repetitions < 1)
    throw std::invalid_argument("generate_corpus: counts must be >= 1");
  const auto styles = make_corpus_styles(cfg);
  std::vector<Sentence> sentences;
  for (std::size_t s = 0; s < cfg.sentences; ++s)
    sentences.push_back(make_sentence(static_cast<std::uint32_t>(s), cfg.seed, cfg.min_sentence_length,
                                      cfg.max_sentence_length));
  std::vector<JointSample> out;
  out.reserve(cfg.persons * cfg.sentences * cfg.repetitions);
  for (std::size_t p = 0; p < cfg.persons; ++p)
    for (std::size_t s = 0; s < cfg.sentences; ++s)
      for (std::size_t r = 0; r < cfg.repetitions; ++r) {
        Rng rng = make_rng(cfg.seed, {0x5a3e, p, s, r});
        auto j = synth_sequence(styles[p], sentences[s], rng, cfg.fps, cfg.mode);
        j.person_id = static_cast<std::uint32_t>(p);
        j.repetition_id = static_cast<std::uint32_t>(r);
        out.push_back(std::move(j));
      }
  return out;
}

/// Writes every sample plus `manifest.tsv` (relative paths) into `dir`.
inline DatasetManifest generate_corpus(const CorpusConfig& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  DatasetManifest m;
  for (const auto& j : generate_samples(cfg)) {
    char name[64];
    std::snprintf(name, sizeof name, "p%03u_s%03u_r%03u.skel", j.person_id, j.sentence_id, j.repetition_id);
    write_sample(dir / name, j);
    m.records.push_back({name, j.person_id, j.sentence_id, j.repetition_id, j.mode, j.frames, j.joints});
  }
  write_manifest(dir / "manifest.tsv", m);
  for (auto& r : m.records) r.path = dir / r.path;
  return m;
}

}  // namespace stylenet
