#include "stylenet/stylenet.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

using namespace stylenet;

namespace {

// Small corpus shared by the training tests: 5 persons x 2 sentences x 5 reps.
const Dataset& overfit_corpus() {
  static const Dataset d = [] {
    CorpusConfig cc;
    cc.persons = 5;
    cc.sentences = 2;
    cc.repetitions = 5;
    cc.seed = 3;
    return make_dataset(generate_samples(cc));
  }();
  return d;
}

std::vector<std::size_t> all_ids(const Dataset& d) {
  std::vector<std::size_t> ids(d.samples.size());
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  return ids;
}

TrainConfig short_config(std::size_t epochs) {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.frames = 8;
  tc.batch_size = 16;
  tc.lr_drops = {};
  tc.seed = 11;
  return tc;
}

// Sets each parameter's gradient to `g` by backpropagating sum(p * g).
template <class Real>
void set_grads(ParameterSet<Real>& ps, const std::vector<std::vector<Real>>& g) {
  ps.zero_grad();
  auto& es = ps.entries();
  for (std::size_t i = 0; i < es.size(); ++i) {
    auto c = Tensor<Real>::from_values(es[i].tensor.shape(), g[i]);
    ad::backward(ad::sum(ad::mul(es[i].tensor, c)));
  }
}

ParameterSet<double> small_params(std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  ParameterSet<double> ps;
  for (std::string name : {"w", "b"}) {
    std::vector<double> v(6);
    for (auto& x : v) x = u(rng);
    ps.add(name, Tensor<double>::from_values({2, 3}, v));
  }
  return ps;
}

std::vector<std::vector<double>> random_grads(std::uint64_t seed, double min_abs) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(min_abs, 2.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<std::vector<double>> g(2, std::vector<double>(6));
  for (auto& row : g)
    for (auto& x : row) x = sign(rng) ? u(rng) : -u(rng);
  return g;
}

}  // namespace

TEST(LearningRate, DropsTenfoldAtEachMilestone) {
  const TrainConfig cfg;
  EXPECT_DOUBLE_EQ(lr_at(0, cfg), 1e-3);
  EXPECT_DOUBLE_EQ(lr_at(39, cfg), 1e-3);
  EXPECT_DOUBLE_EQ(lr_at(40, cfg), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at(69, cfg), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at(70, cfg), 1e-5);
  EXPECT_DOUBLE_EQ(lr_at(89, cfg), 1e-5);
  EXPECT_DOUBLE_EQ(lr_at(90, cfg), 1e-6);
  EXPECT_DOUBLE_EQ(lr_at(99, cfg), 1e-6);
}

TEST(TrainConfigParse, ReadsKeysAndComments) {
  const auto cfg = parse_train_config(
      "# schedule\n"
      "epochs = 12\n"
      "lr=0.01   # base\n"
      "  lr_drops = 4, 8\n"
      "\n"
      "batch_size = 7\r\n"
      "stop_at_train_accuracy = 1\n");
  EXPECT_EQ(cfg.epochs, 12u);
  EXPECT_DOUBLE_EQ(cfg.lr, 0.01);
  EXPECT_EQ(cfg.lr_drops, (std::vector<std::size_t>{4, 8}));
  EXPECT_EQ(cfg.batch_size, 7u);
  EXPECT_DOUBLE_EQ(cfg.stop_at_train_accuracy, 1.0);
  EXPECT_DOUBLE_EQ(cfg.weight_decay, 1e-5);
  EXPECT_DOUBLE_EQ(cfg.dropout, 0.3);
}

TEST(TrainConfigParse, RejectsMalformedInput) {
  EXPECT_THROW(parse_train_config("epochs 3\n"), FormatError);
  EXPECT_THROW(parse_train_config("momentum = 0.9\n"), FormatError);
  EXPECT_THROW(parse_train_config("lr = fast\n"), FormatError);
  EXPECT_THROW(parse_train_config("lr = -1\n"), std::invalid_argument);
  EXPECT_THROW(parse_train_config("lr_drops = 70, 40\n"), std::invalid_argument);
  EXPECT_THROW(parse_train_config("beta1 = 1\n"), std::invalid_argument);
  EXPECT_THROW(parse_train_config("batch_size = 0\n"), std::invalid_argument);
  EXPECT_THROW(parse_train_config("dropout = 1\n"), std::invalid_argument);
}

TEST(Adam, FirstStepMovesEachCoordinateByLearningRate) {
  TrainConfig cfg;
  cfg.weight_decay = 0;
  auto ps = small_params(1);
  const auto g = random_grads(2, 0.1);
  std::vector<std::vector<double>> before;
  for (const auto& e : ps.entries()) before.push_back(e.tensor.values());
  set_grads(ps, g);
  Adam<double> adam(cfg);
  adam.step(ps, 1e-3);
  EXPECT_EQ(adam.steps(), 1u);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 6; ++j) {
      const double expect = -1e-3 * (g[i][j] > 0 ? 1.0 : -1.0);
      EXPECT_NEAR(ps.entries()[i].tensor.values()[j] - before[i][j], expect, 1e-9);
    }
}

TEST(Adam, ZeroGradientWithoutDecayLeavesParametersUnchanged) {
  TrainConfig cfg;
  cfg.weight_decay = 0;
  auto ps = small_params(3);
  const auto before = ps.entries()[0].tensor.values();
  set_grads(ps, std::vector<std::vector<double>>(2, std::vector<double>(6, 0.0)));
  Adam<double> adam(cfg);
  for (int k = 0; k < 3; ++k) adam.step(ps, 1e-3);
  EXPECT_EQ(ps.entries()[0].tensor.values(), before);
}

TEST(Adam, MissingGradientCountsAsZero) {
  TrainConfig cfg;
  cfg.weight_decay = 0;
  auto ps = small_params(3);
  const auto before = ps.entries()[1].tensor.values();
  ps.zero_grad();
  Adam<double> adam(cfg);
  adam.step(ps, 1e-3);
  EXPECT_EQ(ps.entries()[1].tensor.values(), before);
}

TEST(Adam, IdenticalEnginesStayBitIdentical) {
  const TrainConfig cfg;
  auto a = small_params(4), b = small_params(4);
  Adam<double> ea(cfg), eb(cfg);
  for (std::uint64_t k = 0; k < 5; ++k) {
    const auto g = random_grads(10 + k, 0.0);
    set_grads(a, g);
    set_grads(b, g);
    ea.step(a, 1e-3);
    eb.step(b, 1e-3);
  }
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(a.entries()[i].tensor.values(), b.entries()[i].tensor.values());
}

TEST(Adam, DecayExemptParametersSkipWeightDecay) {
  TrainConfig cfg;
  cfg.weight_decay = 0.1;
  ParameterSet<double> ps;
  ps.add("decayed", Tensor<double>::from_values({2}, {0.5, -0.5}));
  ps.add("exempt", Tensor<double>::from_values({2}, {0.5, -0.5}), true, true);
  ps.add("frozen", Tensor<double>::from_values({2}, {0.5, -0.5}), false);
  ps.zero_grad();
  Adam<double> adam(cfg);
  adam.step(ps, 1e-3);
  // With zero loss gradient the decay term alone drives a first step of -lr * sign(p).
  EXPECT_NEAR(ps.at("decayed").values()[0], 0.5 - 1e-3, 1e-9);
  EXPECT_NEAR(ps.at("decayed").values()[1], -0.5 + 1e-3, 1e-9);
  EXPECT_EQ(ps.at("exempt").values(), (std::vector<double>{0.5, -0.5}));
  EXPECT_EQ(ps.at("frozen").values(), (std::vector<double>{0.5, -0.5}));
}

TEST(Adam, StateRoundTripContinuesIdentically) {
  const TrainConfig cfg;
  auto to_float = [](const ParameterSet<double>& src) {
    ParameterSet<float> ps;
    for (const auto& e : src.entries()) {
      std::vector<float> v(e.tensor.values().begin(), e.tensor.values().end());
      ps.add(e.name, Tensor<float>::from_values(e.tensor.shape(), v));
    }
    return ps;
  };
  auto a = to_float(small_params(5)), b = to_float(small_params(5));
  auto grads = [](std::uint64_t seed) {
    std::vector<std::vector<float>> out;
    for (const auto& row : random_grads(seed, 0.0)) out.emplace_back(row.begin(), row.end());
    return out;
  };
  Adam<float> ea(cfg);
  for (std::uint64_t k = 0; k < 3; ++k) {
    set_grads(a, grads(k));
    ea.step(a, 1e-3);
  }
  for (std::size_t i = 0; i < 2; ++i) b.entries()[i].tensor.values() = a.entries()[i].tensor.values();
  Adam<float> eb(cfg);
  eb.load_state(decode_checkpoint(encode_checkpoint(ea.state())));
  EXPECT_EQ(eb.steps(), 3u);
  set_grads(a, grads(9));
  set_grads(b, grads(9));
  ea.step(a, 1e-3);
  eb.step(b, 1e-3);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(a.entries()[i].tensor.values(), b.entries()[i].tensor.values());
}

TEST(Adam, RejectsStateShapeMismatch) {
  const TrainConfig cfg;
  auto ps = small_params(6);
  Adam<double> adam(cfg);
  adam.step(ps, 1e-3);
  ParameterSet<double> other;
  other.add("w", Tensor<double>::zeros({4}));
  EXPECT_THROW(adam.step(other, 1e-3), std::invalid_argument);
}

TEST(Dataset, LabelsFollowSortedPersonIds) {
  std::vector<JointSample> s;
  for (std::uint32_t p : {7u, 3u, 9u, 3u}) {
    JointSample j(4, 21);
    j.person_id = p;
    s.push_back(j);
  }
  const auto d = make_dataset(s);
  EXPECT_EQ(d.class_person_ids, (std::vector<std::uint32_t>{3, 7, 9}));
  EXPECT_EQ(d.labels, (std::vector<std::size_t>{1, 0, 2, 0}));
  EXPECT_EQ(d.num_classes(), 3u);
  EXPECT_EQ(d.joints(), 21u);

  const auto wide = make_dataset(s, {1, 3, 7, 9});
  EXPECT_EQ(wide.labels, (std::vector<std::size_t>{2, 1, 3, 1}));
  EXPECT_THROW(make_dataset(s, {3, 7}), std::invalid_argument);
  EXPECT_THROW(make_dataset({}), std::invalid_argument);
  s.push_back(JointSample(4, 42));
  EXPECT_THROW(make_dataset(s), std::invalid_argument);
}

TEST(Batch, ShapesLabelsAndBones) {
  const auto& d = overfit_corpus();
  const std::vector<std::size_t> ids{0, 17, 33};
  const auto b = make_batch<float>(d, ids, 8, 1, 2);
  EXPECT_EQ(b.joints.shape(), (ad::Shape{3, 3, 8, 21}));
  EXPECT_EQ(b.bones.shape(), (ad::Shape{3, 3, 8, 21}));
  EXPECT_EQ(b.ids, ids);
  for (std::size_t i = 0; i < ids.size(); ++i) EXPECT_EQ(b.labels[i], d.labels[ids[i]]);

  // Rebuild the second sample from the same generator stream.
  const auto& src = d.samples[17];
  Rng rng = make_rng(1, {2, 17});
  const auto j = select_frames(src, sample_frames(src.frames, 8, rng));
  const auto bones = bones_on_vertices(derive_bones(j, d.graph), j);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t t = 0; t < 8; ++t)
      for (std::size_t v = 0; v < 21; ++v) {
        const std::size_t at = ((1 * 3 + c) * 8 + t) * 21 + v;
        ASSERT_EQ(b.joints.values()[at], j.at(t, v, c));
        ASSERT_EQ(b.bones.values()[at], bones.at(t, v, c));
      }

  const auto again = make_batch<float>(d, ids, 8, 1, 2);
  EXPECT_EQ(again.joints.values(), b.joints.values());
  const auto other = make_batch<float>(d, ids, 8, 1, 3);
  EXPECT_NE(other.joints.values(), b.joints.values());
}

TEST(Batch, NoiseZeroesWholeJoints) {
  const auto& d = overfit_corpus();
  const auto w = default_occlusion_weights(21);
  const auto b = make_batch<float>(d, {4}, 8, 1, 2, &w);
  std::size_t zeroed = 0;
  for (std::size_t v = 0; v < 21; ++v) {
    bool all_zero = true;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t t = 0; t < 8; ++t) all_zero = all_zero && b.joints.values()[(c * 8 + t) * 21 + v] == 0.0f;
    zeroed += all_zero;
  }
  EXPECT_GE(zeroed, 1u);
  EXPECT_LE(zeroed, 3u);
}

TEST(Training, FusionWeightsReceiveGradientOnFirstBatch) {
  const auto& d = overfit_corpus();
  StyleNet<float> model(tiny_config(d.num_classes()), 0);
  const auto batch = make_batch<float>(d, {0, 1, 2, 3, 4, 5, 6, 7}, 8, 0, 0);
  Rng rng(0);
  model.parameters().zero_grad();
  const auto out = model.forward(batch.joints, batch.bones, true, rng);
  ad::backward(cross_entropy(out.fused, batch.labels));
  ASSERT_TRUE(model.alpha().has_grad());
  ASSERT_TRUE(model.beta().has_grad());
  EXPECT_NE(model.alpha().grad()[0], 0.0f);
  EXPECT_NE(model.beta().grad()[0], 0.0f);
}

TEST(Training, SameSeedGivesIdenticalHistories) {
  const auto& d = overfit_corpus();
  const auto ids = all_ids(d);
  auto run = [&] {
    StyleNet<float> model(tiny_config(d.num_classes()), 2);
    return train(model, d, ids, ids, short_config(4));
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.size(), 4u);
  EXPECT_EQ(a, b);
  for (const auto& r : a) {
    EXPECT_TRUE(std::isfinite(r.alpha));
    EXPECT_TRUE(std::isfinite(r.beta));
  }
}

TEST(Training, ResumeFromCheckpointReproducesTrace) {
  const auto& d = overfit_corpus();
  const auto ids = all_ids(d);
  const std::vector<std::size_t> train_ids(ids.begin(), ids.begin() + 40), val_ids(ids.begin() + 40, ids.end());
  const auto cfg = short_config(6);

  StyleNet<float> straight(tiny_config(d.num_classes()), 3);
  Trainer<float> ts(straight, d, train_ids, val_ids, cfg);
  ts.run();

  StyleNet<float> first(tiny_config(d.num_classes()), 3);
  Trainer<float> t1(first, d, train_ids, val_ids, cfg);
  for (int e = 0; e < 3; ++e) t1.run_epoch();
  const auto bytes = encode_checkpoint(t1.state());

  StyleNet<float> resumed(tiny_config(d.num_classes()), 99);
  Trainer<float> t2(resumed, d, train_ids, val_ids, cfg);
  t2.load_state(decode_checkpoint(bytes));
  EXPECT_EQ(t2.epoch(), 3u);
  t2.run();

  ASSERT_EQ(t2.history().size(), ts.history().size());
  for (std::size_t e = 3; e < ts.history().size(); ++e) EXPECT_EQ(t2.history()[e], ts.history()[e]) << "epoch " << e;
  EXPECT_EQ(t2.best_val_acc(), ts.best_val_acc());
  for (std::size_t i = 0; i < straight.parameters().entries().size(); ++i)
    EXPECT_EQ(resumed.parameters().entries()[i].tensor.values(), straight.parameters().entries()[i].tensor.values());
}

TEST(Training, BestValidationSnapshotIsRestored) {
  const auto& d = overfit_corpus();
  const auto ids = all_ids(d);
  StyleNet<float> model(tiny_config(d.num_classes()), 4);
  Trainer<float> t(model, d, ids, ids, short_config(5));
  const auto& h = t.run();
  double best = -1;
  std::size_t best_epoch = 0;
  for (const auto& r : h)
    if (r.val_acc > best) best = r.val_acc, best_epoch = r.epoch;
  EXPECT_EQ(t.best_val_acc(), best);
  EXPECT_EQ(t.accuracy(ids, derive_seed(stream_id::validate, {best_epoch})), best);
}

TEST(Training, RejectsEmptySplitsAndMismatchedModels) {
  const auto& d = overfit_corpus();
  const auto ids = all_ids(d);
  StyleNet<float> model(tiny_config(d.num_classes()), 0);
  EXPECT_THROW(Trainer<float>(model, d, {}, ids, short_config(1)), std::invalid_argument);
  EXPECT_THROW(Trainer<float>(model, d, ids, {}, short_config(1)), std::invalid_argument);
  StyleNet<float> wrong_classes(tiny_config(d.num_classes() + 1), 0);
  EXPECT_THROW(Trainer<float>(wrong_classes, d, ids, ids, short_config(1)), std::invalid_argument);
  auto cfg = short_config(1);
  cfg.frames = 16;
  EXPECT_THROW(Trainer<float>(model, d, ids, ids, cfg), std::invalid_argument);
}

TEST(Training, NonFiniteLossAborts) {
  const auto& d = overfit_corpus();
  const auto ids = all_ids(d);
  StyleNet<float> model(tiny_config(d.num_classes()), 0);
  model.joints_stream().fc_w.values()[0] = std::numeric_limits<float>::quiet_NaN();
  Trainer<float> t(model, d, ids, ids, short_config(1));
  try {
    t.run_epoch();
    FAIL() << "expected divergence to abort";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite loss"), std::string::npos);
  }
}

TEST(Training, HistoryCsvHasOneRowPerEpoch) {
  std::vector<EpochRecord> h{{0, 1e-3, 1.5, 0.2, 0.25, 1.0, 1.0}, {1, 1e-3, 1.25, 0.4, 0.5, 1.1, 0.9}};
  std::ostringstream os;
  write_history_csv(os, h);
  EXPECT_EQ(os.str(),
            "epoch,lr,train_loss,train_acc,val_acc,alpha,beta\n"
            "0,0.001,1.5,0.2,0.25,1,1\n"
            "1,0.001,1.25,0.4,0.5,1.1,0.9\n");
}

// Runs until the whole training set is classified correctly.
TEST(Training, TinyNetworkOverfitsSmallCorpus) {
  const auto& d = overfit_corpus();
  const auto ids = all_ids(d);
  StyleNet<float> model(tiny_config(d.num_classes()), 0);
  auto cfg = short_config(300);
  cfg.stop_at_train_accuracy = 1.0;
  Trainer<float> t(model, d, ids, ids, cfg);
  const auto& h = t.run();
  ASSERT_FALSE(h.empty());
  EXPECT_EQ(h.back().train_acc, 1.0);
  EXPECT_LT(h.size(), 300u);

  // Ten-epoch moving average of the loss never rises on the way there.
  for (std::size_t e = 10; e < h.size(); ++e) {
    double prev = 0, cur = 0;
    for (std::size_t k = 0; k < 10; ++k) {
      prev += h[e - 10 + k].train_loss;
      cur += h[e - 9 + k].train_loss;
    }
    EXPECT_LE(cur, prev) << "window ending at epoch " << e;
  }
}
