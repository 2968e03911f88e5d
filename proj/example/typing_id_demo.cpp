// End-to-end walk through the library: synthesize typists, hold out whole
// sentences, train the two-stream network and identify people on sentences
// it never saw, with and without occluded joints.

#include "stylenet/stylenet.hpp"

#include <cstdio>

using namespace stylenet;

int main() {
  CorpusConfig corpus;
  corpus.persons = 6;
  corpus.sentences = 4;
  corpus.repetitions = 3;
  corpus.seed = 21;
  const auto data = make_dataset(generate_samples(corpus));
  std::printf("corpus: %zu clips from %zu typists\n", data.samples.size(), data.num_classes());

  const auto split = split_unseen(keys_of(data.samples), {2, 1, 1}, 0);
  std::printf("split by sentence: %zu train / %zu val / %zu test clips\n", split.train.size(), split.val.size(),
              split.test.size());

  TrainConfig tc;
  tc.epochs = 30;
  tc.lr_drops = {20};
  tc.batch_size = 16;
  auto mc = small_config(data.num_classes(), Hands::one, tc.frames);
  mc.dropout = tc.dropout;
  StyleNet<float> model(mc, tc.seed);
  std::printf("model: %zu trainable parameters\n", model.parameter_count());

  train(model, data, split.train, split.val, tc, [](const EpochRecord& r) {
    if (r.epoch % 5 == 4)
      std::printf("  epoch %2zu  loss %.4f  train %.3f  val %.3f  alpha %.3f  beta %.3f\n", r.epoch + 1, r.train_loss,
                  r.train_acc, r.val_acc, r.alpha, r.beta);
  });

  EvalConfig ec;
  ec.trials = 10;
  const auto clean = evaluate_model(model, data, split.test, ec);
  ec.noise = true;
  const auto noisy = evaluate_model(model, data, split.test, ec);
  std::printf("unseen-sentence accuracy: %.3f +- %.3f clean, %.3f +- %.3f with occluded joints\n", clean.mean,
              clean.stddev, noisy.mean, noisy.stddev);
  return 0;
}
