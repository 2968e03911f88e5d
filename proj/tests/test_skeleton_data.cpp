#include "stylenet/skeleton_data.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <map>
#include <random>

using namespace stylenet;

namespace {

JointSample random_sample(std::size_t t, std::size_t v, std::uint64_t seed, InputMode mode = InputMode::xy_score) {
  JointSample j(t, v, 3, mode);
  Rng rng(seed);
  std::uniform_real_distribution<float> xy(-200.0f, 200.0f), s(0.0f, 1.0f);
  for (std::size_t f = 0; f < t; ++f)
    for (std::size_t q = 0; q < v; ++q) {
      j.at(f, q, 0) = xy(rng);
      j.at(f, q, 1) = xy(rng);
      j.at(f, q, 2) = mode == InputMode::xy_score ? s(rng) : xy(rng);
    }
  return j;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("stylenet_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST(DeriveBones, SingleEdgeExample) {
  const auto g = make_graph(2, {{0, 1}});
  JointSample j;
  j.frames = 1;
  j.joints = 2;
  j.data = {1, 2, 0.9f, 4, 6, 0.5f};
  const auto b = derive_bones(j, g);
  ASSERT_EQ(b.bones, 1u);
  EXPECT_FLOAT_EQ(b.at(0, 0, 0), 3.0f);
  EXPECT_FLOAT_EQ(b.at(0, 0, 1), 4.0f);
  EXPECT_FLOAT_EQ(b.at(0, 0, 2), 0.45f);
}

TEST(DeriveBones, IdenticalJointsGiveZeroVectors) {
  const auto g = build_hand_graph(Hands::one);
  JointSample j(3, 21);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t v = 0; v < 21; ++v) {
      j.at(t, v, 0) = 5.0f;
      j.at(t, v, 1) = -7.0f;
      j.at(t, v, 2) = 0.8f;
    }
  const auto b = derive_bones(j, g);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t e = 0; e < b.bones; ++e) {
      EXPECT_EQ(b.at(t, e, 0), 0.0f);
      EXPECT_EQ(b.at(t, e, 1), 0.0f);
    }
}

TEST(DeriveBones, MatchesPerFingerLoop) {
  const auto g = build_hand_graph(Hands::one);
  const auto j = random_sample(4, 21, 9);
  const auto b = derive_bones(j, g);
  ASSERT_EQ(b.bones, 20u);
  // Oracle: walk each finger from the wrist outwards.
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> slot;
  for (std::size_t e = 0; e < b.bones; ++e) slot[{b.edge_index[e].parent, b.edge_index[e].child}] = e;
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t f = 0; f < 5; ++f) {
      std::size_t prev = 0;
      for (std::size_t k = 0; k < 4; ++k) {
        const std::size_t cur = 1 + 4 * f + k;
        ASSERT_TRUE(slot.count({prev, cur}));
        const auto e = slot[{prev, cur}];
        EXPECT_EQ(b.at(t, e, 0), j.at(t, cur, 0) - j.at(t, prev, 0));
        EXPECT_EQ(b.at(t, e, 1), j.at(t, cur, 1) - j.at(t, prev, 1));
        EXPECT_EQ(b.at(t, e, 2), j.at(t, cur, 2) * j.at(t, prev, 2));
        prev = cur;
      }
    }
}

TEST(DeriveBones, ThreeDimensionalModeDifferencesZ) {
  const auto g = build_hand_graph(Hands::two);
  const auto j = random_sample(2, 42, 4, InputMode::xyz);
  const auto b = derive_bones(j, g);
  EXPECT_EQ(b.bones, 40u);
  for (std::size_t e = 0; e < b.bones; ++e) {
    const auto [p, c] = b.edge_index[e];
    EXPECT_EQ(b.at(1, e, 2), j.at(1, c, 2) - j.at(1, p, 2));
  }
}

TEST(DeriveBones, ScoresStayInUnitInterval) {
  const auto g = build_hand_graph(Hands::one);
  const auto b = derive_bones(random_sample(8, 21, 2), g);
  for (std::size_t t = 0; t < 8; ++t)
    for (std::size_t e = 0; e < b.bones; ++e) {
      EXPECT_GE(b.at(t, e, 2), 0.0f);
      EXPECT_LE(b.at(t, e, 2), 1.0f);
    }
}

TEST(DeriveBones, CoordinateChannelsAreLinear) {
  const auto g = build_hand_graph(Hands::one);
  const auto j1 = random_sample(3, 21, 1), j2 = random_sample(3, 21, 2);
  const float a = 0.5f, c = -2.0f;
  JointSample mix = j1;
  for (std::size_t i = 0; i < mix.data.size(); ++i) mix.data[i] = a * j1.data[i] + c * j2.data[i];
  const auto b1 = derive_bones(j1, g), b2 = derive_bones(j2, g), bm = derive_bones(mix, g);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t e = 0; e < 20; ++e)
      for (std::size_t ch = 0; ch < 2; ++ch)
        EXPECT_NEAR(bm.at(t, e, ch), a * b1.at(t, e, ch) + c * b2.at(t, e, ch), 1e-3);
}

TEST(DeriveBones, RejectsDimensionMismatch) {
  EXPECT_THROW(derive_bones(random_sample(2, 42, 1), build_hand_graph(Hands::one)), std::invalid_argument);
}

TEST(BonesOnVertices, PlacesBonesAtChildJoint) {
  const auto g = build_hand_graph(Hands::one);
  const auto j = random_sample(2, 21, 5);
  const auto b = derive_bones(j, g);
  const auto grid = bones_on_vertices(b, j);
  EXPECT_EQ(grid.joints, 21u);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(grid.at(1, 0, c), 0.0f);
  for (std::size_t e = 0; e < b.bones; ++e)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(grid.at(1, b.edge_index[e].child, c), b.at(1, e, c));
}

TEST(SampleFrames, ExactLengthGivesIdentity) {
  Rng rng(1);
  const auto idx = sample_frames(32, 32, rng);
  for (std::size_t i = 0; i < 32; ++i) EXPECT_EQ(idx[i], i);
}

TEST(SampleFrames, DoubleLengthDrawsFromPairs) {
  std::vector<int> hits(64, 0);
  for (std::uint64_t s = 0; s < 200; ++s) {
    Rng rng(s);
    const auto idx = sample_frames(64, 32, rng);
    for (std::size_t i = 0; i < 32; ++i) {
      EXPECT_TRUE(idx[i] == 2 * i || idx[i] == 2 * i + 1);
      hits[idx[i]]++;
    }
  }
  for (int h : hits) EXPECT_GT(h, 0);
}

TEST(SampleFrames, SingleFrameRepeats) {
  Rng rng(4);
  EXPECT_EQ(sample_frames(1, 32, rng), std::vector<std::size_t>(32, 0));
}

TEST(SampleFrames, ShortSequencesStretchMonotonically) {
  for (std::size_t t_full : {2u, 5u, 17u, 31u, 33u, 100u, 257u}) {
    Rng rng(t_full);
    const auto idx = sample_frames(t_full, 32, rng);
    ASSERT_EQ(idx.size(), 32u);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      EXPECT_LT(idx[i], t_full);
      if (i) {
        EXPECT_GE(idx[i], idx[i - 1]);
      }
      // Each draw stays within its own segment.
      const double seg = static_cast<double>(t_full) / 32.0;
      EXPECT_GE(static_cast<double>(idx[i]) + 1.0, i * seg);
      EXPECT_LE(static_cast<double>(idx[i]), (i + 1) * seg);
    }
  }
}

TEST(SampleFrames, ReproducibleFromSeed) {
  Rng a(77), b(77);
  EXPECT_EQ(sample_frames(90, 32, a), sample_frames(90, 32, b));
}

TEST(InjectNoise, ZeroCountLeavesSampleUnchanged) {
  const auto j = random_sample(4, 21, 3);
  EXPECT_EQ(zero_joints(j, {}), j);
}

TEST(InjectNoise, ZeroedJointsAreWholeColumns) {
  const auto j = random_sample(6, 21, 3);
  const auto w = default_occlusion_weights(21);
  bool saw_two = false;
  for (std::uint64_t s = 0; s < 60; ++s) {
    Rng rng(s);
    const auto out = inject_noise(j, rng, w);
    std::size_t zero_cols = 0, untouched = 0;
    for (std::size_t v = 0; v < 21; ++v) {
      bool all_zero = true, same = true;
      for (std::size_t t = 0; t < 6; ++t)
        for (std::size_t c = 0; c < 3; ++c) {
          all_zero = all_zero && out.at(t, v, c) == 0.0f;
          same = same && out.at(t, v, c) == j.at(t, v, c);
        }
      zero_cols += all_zero;
      untouched += same;
    }
    EXPECT_LE(zero_cols, 2u);
    EXPECT_EQ(zero_cols + untouched, 21u);
    saw_two = saw_two || zero_cols == 2;
    for (std::size_t i = 2; i < out.data.size(); i += 3) EXPECT_LE(out.data[i], j.data[i]);
  }
  EXPECT_TRUE(saw_two);
}

TEST(InjectNoise, ExpectedZeroedCountIsOne) {
  const auto w = default_occlusion_weights(21);
  Rng rng(8);
  double total = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) total += static_cast<double>(choose_occluded_joints(w, rng).size());
  // Var of k uniform on {0,1,2} is 2/3.
  EXPECT_NEAR(total / n, 1.0, 4.0 * std::sqrt(2.0 / 3.0 / n));
}

TEST(InjectNoise, SingleDrawFrequencyFollowsWeights) {
  std::vector<double> w(21, 1.0);
  w[4] = 3.0;  // thumb tip
  Rng rng(21);
  std::vector<double> hits(21, 0.0);
  for (int i = 0; i < 100000; ++i) hits[weighted_sample_without_replacement(w, 1, rng)[0]]++;
  double others = 0;
  for (std::size_t v = 0; v < 21; ++v)
    if (v != 4) others += hits[v] / 20.0;
  EXPECT_NEAR(hits[4] / others, 3.0, 0.15);
}

TEST(InjectNoise, FrequencyMatchesExactEnumeration) {
  std::vector<double> w(21, 1.0);
  w[4] = 3.0;
  const double total = 23.0;
  // Exact inclusion probability with k uniform on {0,1,2}.
  auto p_included = [&](std::size_t v) {
    double p1 = w[v] / total, p2 = p1;
    for (std::size_t u = 0; u < 21; ++u)
      if (u != v) p2 += (w[u] / total) * (w[v] / (total - w[u]));
    return (p1 + p2) / 3.0;
  };
  Rng rng(99);
  std::vector<double> hits(21, 0.0);
  const int n = 100000;
  for (int i = 0; i < n; ++i)
    for (auto v : choose_occluded_joints(w, rng)) hits[v]++;
  for (std::size_t v : {0u, 4u, 10u}) {
    const double p = p_included(v);
    EXPECT_NEAR(hits[v] / n, p, 5.0 * std::sqrt(p * (1 - p) / n)) << "joint " << v;
  }
}

TEST(InjectNoise, RejectsBadWeights) {
  const auto j = random_sample(2, 21, 1);
  Rng rng(0);
  EXPECT_THROW(inject_noise(j, rng, std::vector<double>(21, 0.0)), std::invalid_argument);
  auto neg = std::vector<double>(21, 1.0);
  neg[3] = -1.0;
  EXPECT_THROW(inject_noise(j, rng, neg), std::invalid_argument);
  EXPECT_THROW(inject_noise(j, rng, std::vector<double>(20, 1.0)), std::invalid_argument);
}

TEST(DefaultOcclusionWeights, ThumbHeaviest) {
  const auto w = default_occlusion_weights(42);
  EXPECT_EQ(w[4], 3.0);
  EXPECT_EQ(w[8], 2.0);
  EXPECT_EQ(w[16], 1.0);
  EXPECT_EQ(w[21 + 4], 3.0);
  EXPECT_EQ(w[0], 1.0);
}

TEST(SampleFile, RoundTripIsBitExact) {
  const auto dir = temp_dir("roundtrip");
  for (auto mode : {InputMode::xy_score, InputMode::xyz}) {
    auto j = random_sample(13, mode == InputMode::xyz ? 42 : 21, 6, mode);
    j.data[5] = -0.0f;
    j.data[7] = 1e-40f;  // subnormal
    write_sample(dir / "a.skel", j);
    const auto back = read_sample(dir / "a.skel");
    EXPECT_EQ(back.frames, j.frames);
    EXPECT_EQ(back.joints, j.joints);
    EXPECT_EQ(back.mode, j.mode);
    ASSERT_EQ(back.data.size(), j.data.size());
    EXPECT_EQ(std::memcmp(back.data.data(), j.data.data(), j.data.size() * 4), 0);
  }
}

TEST(SampleFile, HeaderLayout) {
  JointSample j(2, 21, 3, InputMode::xyz);
  const auto bytes = encode_sample(j);
  ASSERT_EQ(bytes.size(), 4u + 16u + 1u + 2u * 21u * 3u * 4u);
  EXPECT_EQ(bytes.substr(0, 4), "SKEL");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 2u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 21u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[16]), 3u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[20]), 1u);
}

TEST(SampleFile, RejectsCorruption) {
  const auto good = encode_sample(random_sample(3, 21, 1));
  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_sample(bad_magic), FormatError);
  auto bad_version = good;
  bad_version[4] = 9;
  EXPECT_THROW(decode_sample(bad_version), FormatError);
  EXPECT_THROW(decode_sample(good.substr(0, good.size() - 3)), FormatError);
  EXPECT_THROW(decode_sample(good.substr(0, 10)), FormatError);
  EXPECT_THROW(decode_sample(good + "xxxx"), FormatError);
}

TEST(Manifest, RoundTripAndLabels) {
  const auto dir = temp_dir("manifest");
  DatasetManifest m;
  for (std::uint32_t p = 0; p < 2; ++p) {
    const auto name = "p" + std::to_string(p) + ".skel";
    write_sample(dir / name, random_sample(5, 21, p));
    m.records.push_back({name, p + 10, 3, p, InputMode::xy_score, 0, 0});
  }
  write_manifest(dir / "manifest.tsv", m);
  const auto back = read_manifest(dir / "manifest.tsv");
  ASSERT_EQ(back.records.size(), 2u);
  EXPECT_EQ(back.records[1].person_id, 11u);
  EXPECT_EQ(back.records[1].frames, 5u);
  EXPECT_EQ(back.records[1].joints, 21u);
  const auto samples = load_samples(back);
  EXPECT_EQ(samples[0].person_id, 10u);
  EXPECT_EQ(samples[1].repetition_id, 1u);
}

TEST(Manifest, MissingFileIsRejected) {
  const auto dir = temp_dir("manifest_missing");
  io::write_file(dir / "manifest.tsv", "nope.skel\t1\t2\t3\n");
  EXPECT_THROW(read_manifest(dir / "manifest.tsv"), FormatError);
  io::write_file(dir / "bad.tsv", "nope.skel\t1\t2\n");
  EXPECT_THROW(read_manifest(dir / "bad.tsv", false), FormatError);
}

TEST(JointSample, ValidateCatchesViolations) {
  auto j = random_sample(2, 21, 1);
  EXPECT_NO_THROW(j.validate());
  j.at(0, 3, 2) = 1.5f;
  EXPECT_THROW(j.validate(), FormatError);
  j = random_sample(2, 21, 1);
  j.at(1, 1, 0) = std::nanf("");
  EXPECT_THROW(j.validate(), FormatError);
  EXPECT_THROW(JointSample(2, 20).validate(), FormatError);
}
