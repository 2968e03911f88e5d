#include "stylenet/stylenet.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

using namespace stylenet;

namespace {

std::vector<SampleKey> grid(std::uint32_t persons, std::uint32_t sentences, std::uint32_t reps) {
  std::vector<SampleKey> k;
  for (std::uint32_t p = 0; p < persons; ++p)
    for (std::uint32_t s = 0; s < sentences; ++s)
      for (std::uint32_t r = 0; r < reps; ++r) k.push_back({p, s, r});
  return k;
}

std::set<std::uint32_t> sentences_of(const std::vector<SampleKey>& keys, const std::vector<std::size_t>& ids) {
  std::set<std::uint32_t> s;
  for (auto id : ids) s.insert(keys[id].sentence);
  return s;
}

// Placeholder samples: only the labels matter to a classifier that ignores
// the input.
Dataset label_only_dataset(std::uint32_t persons, std::uint32_t per_person) {
  std::vector<JointSample> s;
  for (std::uint32_t p = 0; p < persons; ++p)
    for (std::uint32_t r = 0; r < per_person; ++r) {
      JointSample j(40, 21);
      for (std::size_t i = 0; i < j.data.size(); ++i) j.data[i] = static_cast<float>(i % 7) * 0.1f;
      j.person_id = p;
      j.repetition_id = r;
      s.push_back(j);
    }
  return make_dataset(s);
}

const Dataset& small_corpus() {
  static const Dataset d = [] {
    CorpusConfig cc;
    cc.persons = 5;
    cc.sentences = 3;
    cc.repetitions = 2;
    cc.seed = 5;
    return make_dataset(generate_samples(cc));
  }();
  return d;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) : path(std::filesystem::temp_directory_path() / name) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST(SplitUnseen, SentenceCountsGiveExpectedSizes) {
  const auto keys = grid(60, 10, 3);
  const auto s = split_unseen(keys, {4, 2, 4}, 1);
  EXPECT_EQ(s.train.size(), 720u);
  EXPECT_EQ(s.val.size(), 360u);
  EXPECT_EQ(s.test.size(), 720u);
  EXPECT_EQ(s.protocol, Protocol::unseen_sentences);
}

TEST(SplitUnseen, SentencesNeverShareSets) {
  const auto keys = grid(6, 10, 3);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = split_unseen(keys, {4, 2, 4}, seed);
    const auto tr = sentences_of(keys, s.train), va = sentences_of(keys, s.val), te = sentences_of(keys, s.test);
    EXPECT_EQ(tr.size(), 4u);
    EXPECT_EQ(va.size(), 2u);
    EXPECT_EQ(te.size(), 4u);
    for (auto x : tr) EXPECT_FALSE(te.count(x) || va.count(x));
    for (auto x : va) EXPECT_FALSE(te.count(x));
    EXPECT_EQ(s.train.size() + s.val.size() + s.test.size(), keys.size());
  }
}

TEST(SplitUnseen, SameSeedSameSplit) {
  const auto keys = grid(10, 6, 3);
  EXPECT_EQ(split_unseen(keys, {2, 2, 2}, 7), split_unseen(keys, {2, 2, 2}, 7));
  bool any_differs = false;
  for (std::uint64_t seed = 1; seed < 10; ++seed)
    any_differs = any_differs || sentences_of(keys, split_unseen(keys, {2, 2, 2}, 0).test) !=
                                     sentences_of(keys, split_unseen(keys, {2, 2, 2}, seed).test);
  EXPECT_TRUE(any_differs);
}

TEST(SplitUnseen, RejectsBadCounts) {
  const auto keys = grid(3, 10, 3);
  EXPECT_THROW(split_unseen(keys, {10, 0, 0}, 0), std::invalid_argument);
  EXPECT_THROW(split_unseen(keys, {4, 2, 3}, 0), std::invalid_argument);
  EXPECT_THROW(split_unseen(keys, {4, 2, 5}, 0), std::invalid_argument);
}

TEST(SplitSeen, RepetitionCountsGiveExpectedSizes) {
  const auto keys = grid(80, 2, 10);
  const auto s = split_seen(keys, {5, 1, 4}, 3);
  EXPECT_EQ(s.train.size(), 800u);
  EXPECT_EQ(s.val.size(), 160u);
  EXPECT_EQ(s.test.size(), 640u);
}

TEST(SplitSeen, OneRepetitionEachWhenCountsAreOnes) {
  const auto keys = grid(4, 3, 3);
  const auto s = split_seen(keys, {1, 1, 1}, 9);
  for (const auto* set : {&s.train, &s.val, &s.test}) {
    std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
    for (auto id : *set) EXPECT_TRUE(seen.insert({keys[id].person, keys[id].sentence}).second);
    EXPECT_EQ(seen.size(), 12u);
  }
}

TEST(SplitSeen, DisjointForRandomSeeds) {
  const auto keys = grid(5, 2, 6);
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const auto s = split_seen(keys, {3, 1, 2}, seed);
    std::vector<int> owner(keys.size(), 0);
    for (const auto* set : {&s.train, &s.val, &s.test})
      for (auto id : *set) ++owner[id];
    for (int o : owner) EXPECT_EQ(o, 1);
  }
  EXPECT_EQ(split_seen(keys, {3, 1, 2}, 4), split_seen(keys, {3, 1, 2}, 4));
  EXPECT_THROW(split_seen(keys, {3, 1, 1}, 0), std::invalid_argument);
}

TEST(ValidateSplit, CatchesBrokenSplits) {
  const auto keys = grid(3, 3, 2);
  auto s = split_unseen(keys, {1, 1, 1}, 0);
  EXPECT_NO_THROW(validate_split(s, keys));

  auto overlap = s;
  overlap.test.push_back(overlap.train.front());
  EXPECT_THROW(validate_split(overlap, keys), std::logic_error);

  auto missing = s;
  missing.val.pop_back();
  EXPECT_THROW(validate_split(missing, keys), std::logic_error);

  // Moving one repetition to another set puts its sentence in two sets.
  auto leaked = s;
  leaked.test.push_back(leaked.train.back());
  leaked.train.pop_back();
  EXPECT_THROW(validate_split(leaked, keys), std::logic_error);

  auto seen = split_seen(keys, {1, 0, 1}, 0);
  seen.counts = {2, 0, 0};
  EXPECT_THROW(validate_split(seen, keys), std::logic_error);
}

TEST(Protocol, ParsesNames) {
  EXPECT_EQ(parse_protocol("unseen"), Protocol::unseen_sentences);
  EXPECT_EQ(parse_protocol("seen"), Protocol::seen_sentences);
  EXPECT_THROW(parse_protocol("both"), std::invalid_argument);
}

TEST(SplitFile, RoundTripsThroughDisk) {
  TempDir dir("stylenet_split_test");
  CorpusConfig cc;
  cc.persons = 3;
  cc.sentences = 3;
  cc.repetitions = 2;
  const auto manifest = generate_corpus(cc, dir.path / "corpus");
  const auto split = split_unseen(keys_of(manifest), {1, 1, 1}, 4);
  write_split(dir.path / "split.tsv", split, manifest);

  const auto f = read_split(dir.path / "split.tsv");
  EXPECT_EQ(f.split.protocol, split.protocol);
  EXPECT_EQ(f.split.counts, split.counts);
  EXPECT_EQ(f.split.seed, split.seed);
  ASSERT_EQ(f.manifest.records.size(), manifest.records.size());
  auto same_record = [&](std::size_t a, std::size_t b) {
    const auto &ra = f.manifest.records[a], &rb = manifest.records[b];
    return std::filesystem::equivalent(ra.path, rb.path) && ra.person_id == rb.person_id &&
           ra.sentence_id == rb.sentence_id && ra.repetition_id == rb.repetition_id;
  };
  const std::vector<std::size_t>* got[3] = {&f.split.train, &f.split.val, &f.split.test};
  const std::vector<std::size_t>* want[3] = {&split.train, &split.val, &split.test};
  for (int k = 0; k < 3; ++k) {
    ASSERT_EQ(got[k]->size(), want[k]->size());
    for (std::size_t i = 0; i < got[k]->size(); ++i) EXPECT_TRUE(same_record((*got[k])[i], (*want[k])[i]));
  }
  const auto samples = load_samples(f.manifest);
  EXPECT_EQ(samples.size(), 18u);
}

TEST(SplitFile, RejectsMalformedFiles) {
  TempDir dir("stylenet_split_bad");
  auto write = [&](const std::string& text) {
    io::write_file(dir.path / "s.tsv", text);
    return dir.path / "s.tsv";
  };
  EXPECT_THROW(read_split(write("train\ta\t0\t0\t0\n")), FormatError);
  EXPECT_THROW(read_split(write("protocol\tunseen\ncounts\t1,1\nseed\t0\n")), FormatError);
  EXPECT_THROW(read_split(write("protocol\tunseen\ncounts\t1,1,1\nseed\tx\n")), FormatError);
  EXPECT_THROW(read_split(write("protocol\tunseen\ncounts\t1,1,1\nseed\t0\nbogus\n")), FormatError);
  EXPECT_THROW(read_split(write("protocol\tunseen\ncounts\t1,1,1\nseed\t0\n"
                                "train\ta\t0\t0\t0\nval\tb\t0\t0\t1\ntest\tc\t0\t1\t0\n")),
               std::logic_error);
}

TEST(Summarize, MeanAndSampleStd) {
  const auto r = summarize({0.5, 0.7, 0.9});
  EXPECT_NEAR(r.mean, 0.7, 1e-15);
  EXPECT_NEAR(r.stddev, 0.2, 1e-15);
  EXPECT_EQ(summarize({0.3}).stddev, 0.0);
}

TEST(Evaluate, OracleClassifierIsPerfect) {
  const auto d = label_only_dataset(6, 3);
  std::vector<std::size_t> ids(d.samples.size());
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  EvalConfig cfg;
  cfg.frames = 8;
  const auto r = evaluate<float>([](const Batch<float>& b) { return b.labels; }, d, ids, cfg);
  EXPECT_EQ(r.per_trial.size(), 30u);
  EXPECT_EQ(r.mean, 1.0);
  EXPECT_EQ(r.stddev, 0.0);
}

TEST(Evaluate, UniformGuessingMatchesBinomialRate) {
  const auto d = label_only_dataset(60, 5);
  std::vector<std::size_t> ids(d.samples.size());
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  EvalConfig cfg;
  cfg.frames = 8;
  Rng rng(17);
  std::uniform_int_distribution<std::size_t> pick(0, 59);
  const auto r = evaluate<float>(
      [&](const Batch<float>& b) {
        std::vector<std::size_t> out(b.labels.size());
        for (auto& x : out) x = pick(rng);
        return out;
      },
      d, ids, cfg);
  const double p = 1.0 / 60.0, draws = 30.0 * static_cast<double>(ids.size());
  EXPECT_NEAR(r.mean, p, 3.0 * std::sqrt(p * (1 - p) / draws));
}

TEST(Evaluate, RejectsBadInputs) {
  const auto d = label_only_dataset(3, 2);
  auto oracle = [](const Batch<float>& b) { return b.labels; };
  EvalConfig cfg;
  cfg.frames = 8;
  EXPECT_THROW(evaluate<float>(oracle, d, {}, cfg), std::invalid_argument);
  cfg.trials = 0;
  EXPECT_THROW(evaluate<float>(oracle, d, {0}, cfg), std::invalid_argument);
  StyleNet<float> wrong(tiny_config(4), 0);
  EXPECT_THROW(evaluate_model(wrong, d, {0}, EvalConfig{}), std::invalid_argument);
}

TEST(Evaluate, SingleTrialIsReproducible) {
  const auto& d = small_corpus();
  StyleNet<float> model(tiny_config(d.num_classes()), 1);
  model.randomize(3, 0.3);
  std::vector<std::size_t> ids(d.samples.size());
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  EvalConfig cfg;
  cfg.trials = 1;
  cfg.seed = 8;
  for (bool noise : {false, true}) {
    cfg.noise = noise;
    EXPECT_EQ(evaluate_model(model, d, ids, cfg).per_trial, evaluate_model(model, d, ids, cfg).per_trial);
  }
}

TEST(Evaluate, NoiseDoesNotHelpATrainedModel) {
  const auto& d = small_corpus();
  std::vector<std::size_t> ids(d.samples.size());
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  StyleNet<float> model(tiny_config(d.num_classes()), 0);
  TrainConfig tc;
  tc.frames = 8;
  tc.batch_size = 16;
  tc.epochs = 40;
  tc.lr_drops = {};
  tc.stop_at_train_accuracy = 1.0;
  train(model, d, ids, ids, tc);

  EvalConfig cfg;
  cfg.trials = 10;
  cfg.seed = 2;
  const auto clean = evaluate_model(model, d, ids, cfg);
  cfg.noise = true;
  const auto noisy = evaluate_model(model, d, ids, cfg);
  const double se = std::sqrt((clean.stddev * clean.stddev + noisy.stddev * noisy.stddev) / 10.0);
  EXPECT_LE(noisy.mean, clean.mean + 2.0 * se);
}

TEST(Ablation, SingleVariantGivesOneRow) {
  const auto& d = small_corpus();
  AblationConfig cfg;
  cfg.counts = {1, 1, 1};
  cfg.variants = {Variant::full};
  cfg.seeds = {0};
  cfg.model = tiny_config(d.num_classes());
  cfg.train.epochs = 2;
  cfg.train.batch_size = 16;
  cfg.eval.trials = 2;
  const auto rows = run_ablation(d, cfg);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].variant, Variant::full);
  EXPECT_EQ(rows[0].clean.size(), 1u);
  EXPECT_TRUE(rows[0].noisy.empty());
  EXPECT_EQ(rows[0].parameters, StyleNet<float>(cfg.model, 0).parameter_count());

  std::ostringstream os;
  write_ablation_csv(os, rows, false);
  const auto text = os.str();
  EXPECT_EQ(text.substr(0, text.find('\n')), "variant,parameters,seeds,clean_mean,clean_std");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
}

TEST(Ablation, BaselineHasFewerParametersAndRowsFollowVariants) {
  const auto& d = small_corpus();
  AblationConfig cfg;
  cfg.counts = {1, 1, 1};
  cfg.variants = {Variant::baseline, Variant::downsample, Variant::downsample_tnl, Variant::downsample_snl,
                  Variant::full};
  cfg.seeds = {0, 1};
  cfg.model = tiny_config(d.num_classes());
  cfg.train.epochs = 1;
  cfg.train.batch_size = 16;
  cfg.eval.trials = 1;
  cfg.with_noise = true;
  const auto rows = run_ablation(d, cfg);
  ASSERT_EQ(rows.size(), 5u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].variant, cfg.variants[i]);
    EXPECT_EQ(rows[i].clean.size(), 2u);
    EXPECT_EQ(rows[i].noisy.size(), 2u);
  }
  EXPECT_LT(rows[0].parameters, rows[4].parameters);
  EXPECT_LT(rows[0].parameters, rows[1].parameters);
  EXPECT_LT(rows[1].parameters, rows[2].parameters);
  EXPECT_LT(rows[1].parameters, rows[3].parameters);

  std::ostringstream os;
  write_ablation_csv(os, rows, true);
  const auto text = os.str();
  EXPECT_EQ(text.substr(0, text.find('\n')), "variant,parameters,seeds,clean_mean,clean_std,noisy_mean,noisy_std,drop");
  EXPECT_NE(text.find("\n+downsample+SNL,"), std::string::npos);
}
