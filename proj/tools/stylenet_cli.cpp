// Command-line front end: corpus generation, splitting, training, evaluation,
// gradient checks and ablation sweeps. Reports go to stdout as CSV; progress
// and errors go to stderr.

#include "stylenet/stylenet.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

using namespace stylenet;

namespace {

constexpr const char* kClassIdsEntry = "data.class_person_ids";

std::array<std::size_t, 3> parse_triple(const std::string& s) {
  const auto v = detail::parse_size_list(s);
  if (v.size() != 3) throw std::invalid_argument("expected three comma-separated counts, got '" + s + "'");
  return {v[0], v[1], v[2]};
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!detail::trim(item).empty()) out.push_back(detail::trim(item));
  return out;
}

ModelConfig model_preset(const std::string& size, std::size_t classes, Hands hands, std::size_t frames) {
  if (size == "tiny") return tiny_config(classes, hands, frames);
  if (size == "small") return small_config(classes, hands, frames);
  if (size == "full") {
    auto c = full_config(classes, hands);
    c.frames = frames;
    return c;
  }
  throw std::invalid_argument("unknown model size '" + size + "' (expected tiny, small or full)");
}

InputMode parse_mode(const std::string& s) {
  if (s == "2d") return InputMode::xy_score;
  if (s == "3d") return InputMode::xyz;
  throw std::invalid_argument("unknown mode '" + s + "' (expected 2d or 3d)");
}

std::vector<std::uint32_t> persons_of(const DatasetManifest& m) {
  std::vector<std::uint32_t> ids;
  for (const auto& r : m.records) ids.push_back(r.person_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

void print_gradcheck_row(const std::string& name, const ad::GradCheckResult& r, double limit) {
  std::printf("%s,%zu,%zu,%.3e,%.3e,%.3e,%g,%s\n", name.c_str(), r.checked, r.skipped, r.max_rel_error,
              r.max_abs_error, r.norm_rel_error, limit, r.max_rel_error < limit ? "pass" : "fail");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"StyleNet: person identification from hand-joint typing motion"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "Write a synthetic typing corpus and its manifest");
  CorpusConfig corpus;
  std::string gen_mode = "2d", gen_out;
  gen->add_option("--persons", corpus.persons, "Number of persons")->check(CLI::PositiveNumber);
  gen->add_option("--sentences", corpus.sentences, "Sentences per person")->check(CLI::PositiveNumber);
  gen->add_option("--reps", corpus.repetitions, "Repetitions per sentence")->check(CLI::PositiveNumber);
  gen->add_option("--seed", corpus.seed, "Corpus seed");
  gen->add_option("--mode", gen_mode, "2d (x, y, score; one hand) or 3d (x, y, z; two hands)")
      ->check(CLI::IsMember({"2d", "3d"}));
  gen->add_option("--out", gen_out, "Output directory")->required();

  // split
  auto* spl = app.add_subcommand("split", "Split a corpus by sentence or by repetition");
  std::string spl_protocol = "unseen", spl_spec, spl_manifest, spl_out;
  std::uint64_t spl_seed = 0;
  spl->add_option("--protocol", spl_protocol, "unseen (sentence-disjoint) or seen (repetition-disjoint)")
      ->check(CLI::IsMember({"unseen", "seen"}));
  spl->add_option("--spec", spl_spec, "Train,val,test sentence (unseen) or repetition (seen) counts")->required();
  spl->add_option("--seed", spl_seed, "Split seed");
  spl->add_option("--manifest", spl_manifest, "Corpus manifest")->required();
  spl->add_option("--out", spl_out, "Split file to write")->required();

  // train
  auto* trn = app.add_subcommand("train", "Train a model on the train/val sets of a split");
  std::string trn_config, trn_manifest, trn_split, trn_out, trn_size = "small", trn_variant = "full";
  std::size_t trn_epochs = 0;
  std::uint64_t trn_seed = 0;
  trn->add_option("--config", trn_config, "Training config (key = value lines)");
  trn->add_option("--manifest", trn_manifest, "Corpus manifest; its persons define the classes");
  trn->add_option("--split", trn_split, "Split file")->required();
  trn->add_option("--out", trn_out, "Checkpoint to write")->required();
  trn->add_option("--model", trn_size, "Model size: tiny, small or full")->check(CLI::IsMember({"tiny", "small", "full"}));
  trn->add_option("--variant", trn_variant, "baseline, +downsample, +downsample+TNL, +downsample+SNL or full");
  auto* trn_epochs_opt = trn->add_option("--epochs", trn_epochs, "Override the configured epoch count");
  auto* trn_seed_opt = trn->add_option("--seed", trn_seed, "Override the configured seed");

  // eval
  auto* evl = app.add_subcommand("eval", "Evaluate a checkpoint on the test set of a split");
  std::string evl_ckpt, evl_split;
  EvalConfig eval_cfg;
  evl->add_option("--ckpt", evl_ckpt, "Checkpoint")->required();
  evl->add_option("--split", evl_split, "Split file")->required();
  evl->add_option("--trials", eval_cfg.trials, "Independent frame draws")->check(CLI::PositiveNumber);
  evl->add_flag("--noise", eval_cfg.noise, "Zero out 1 to 3 joints per clip");
  evl->add_option("--seed", eval_cfg.seed, "Evaluation seed");

  // gradcheck
  auto* grd = app.add_subcommand("gradcheck", "Compare reverse-mode gradients with central differences");
  bool grd_full = false;
  std::size_t grd_stride = 13;
  grd->add_flag("--full", grd_full, "Check every network coordinate");
  grd->add_option("--stride", grd_stride, "Check every n-th network coordinate")->check(CLI::PositiveNumber);

  // ablate
  auto* abl = app.add_subcommand("ablate", "Train and evaluate model variants over several seeds");
  std::string abl_variants = "baseline,full", abl_seeds = "0", abl_manifest, abl_protocol = "unseen", abl_spec = "2,2,2",
              abl_size = "small", abl_mode = "2d", abl_config;
  CorpusConfig abl_corpus;
  std::size_t abl_trials = 10, abl_epochs = 0;
  bool abl_noise = false;
  abl->add_option("--variants", abl_variants, "Comma-separated variants");
  abl->add_option("--seeds", abl_seeds, "Comma-separated seeds");
  abl->add_option("--manifest", abl_manifest, "Existing corpus manifest (otherwise a corpus is generated)");
  abl->add_option("--persons", abl_corpus.persons, "Generated corpus: persons");
  abl->add_option("--sentences", abl_corpus.sentences, "Generated corpus: sentences");
  abl->add_option("--reps", abl_corpus.repetitions, "Generated corpus: repetitions");
  abl->add_option("--corpus-seed", abl_corpus.seed, "Generated corpus: seed");
  abl->add_option("--mode", abl_mode, "Generated corpus: 2d or 3d")->check(CLI::IsMember({"2d", "3d"}));
  abl->add_option("--protocol", abl_protocol, "unseen or seen")->check(CLI::IsMember({"unseen", "seen"}));
  abl->add_option("--spec", abl_spec, "Split counts");
  abl->add_option("--model", abl_size, "Model size: tiny, small or full")->check(CLI::IsMember({"tiny", "small", "full"}));
  abl->add_option("--config", abl_config, "Training config");
  abl->add_option("--epochs", abl_epochs, "Override the configured epoch count");
  abl->add_option("--trials", abl_trials, "Evaluation trials per model")->check(CLI::PositiveNumber);
  abl->add_flag("--noise", abl_noise, "Also evaluate with joint occlusion noise");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      corpus.mode = parse_mode(gen_mode);
      const auto m = generate_corpus(corpus, gen_out);
      std::cout << "samples,persons,sentences,repetitions,mode,manifest\n"
                << m.records.size() << ',' << corpus.persons << ',' << corpus.sentences << ',' << corpus.repetitions
                << ',' << gen_mode << ',' << (std::filesystem::path(gen_out) / "manifest.tsv").generic_string() << '\n';
    } else if (*spl) {
      const auto m = read_manifest(spl_manifest);
      const auto keys = keys_of(m);
      const auto counts = parse_triple(spl_spec);
      const auto s = parse_protocol(spl_protocol) == Protocol::unseen_sentences ? split_unseen(keys, counts, spl_seed)
                                                                                : split_seen(keys, counts, spl_seed);
      write_split(spl_out, s, m);
      std::cout << "set,samples\ntrain," << s.train.size() << "\nval," << s.val.size() << "\ntest," << s.test.size()
                << '\n';
    } else if (*trn) {
      auto tc = trn_config.empty() ? TrainConfig{} : load_train_config(trn_config);
      if (*trn_epochs_opt) tc.epochs = trn_epochs;
      if (*trn_seed_opt) tc.seed = trn_seed;
      tc.validate();
      const auto f = read_split(trn_split);
      const auto classes = trn_manifest.empty() ? persons_of(f.manifest) : persons_of(read_manifest(trn_manifest, false));
      const auto data = make_dataset(load_samples(f.manifest), classes);
      auto mc = with_variant(model_preset(trn_size, data.num_classes(),
                                          data.joints() == kJointsPerHand ? Hands::one : Hands::two, tc.frames),
                             parse_variant(trn_variant));
      mc.dropout = tc.dropout;
      StyleNet<float> model(mc, tc.seed);
      std::cerr << "training " << to_string(parse_variant(trn_variant)) << " (" << model.parameter_count()
                << " parameters) on " << f.split.train.size() << " clips\n";
      std::cout << kHistoryHeader << '\n';
      train(model, data, f.split.train, f.split.val, tc, [](const EpochRecord& r) {
        write_history_row(std::cout, r);
        std::cout.flush();
      });
      auto ck = model.state();
      ck.push_back({kClassIdsEntry,
                    {static_cast<std::uint32_t>(classes.size())},
                    std::vector<float>(classes.begin(), classes.end())});
      write_checkpoint(trn_out, ck);
    } else if (*evl) {
      const auto ck = read_checkpoint(evl_ckpt);
      StyleNet<float> model(config_from_checkpoint(ck), 0);
      model.load_state(ck);
      std::vector<std::uint32_t> classes;
      for (float v : require_entry(ck, kClassIdsEntry).values) classes.push_back(static_cast<std::uint32_t>(v));
      const auto f = read_split(evl_split);
      const auto data = make_dataset(load_samples(f.manifest), classes);
      const auto r = evaluate_model(model, data, f.split.test, eval_cfg);
      std::cout << "trial,accuracy\n";
      for (std::size_t t = 0; t < r.per_trial.size(); ++t) std::cout << t << ',' << r.per_trial[t] << '\n';
      std::cout << "mean," << r.mean << "\nstd," << r.stddev << '\n';
    } else if (*grd) {
      const std::size_t stride = grd_full ? 1 : grd_stride;
      bool ok = true;
      std::cout << "check,coordinates,skipped,max_rel_error,max_abs_error,norm_rel_error,limit,result\n";
      for (const auto& p : primitive_grad_checks()) {
        print_gradcheck_row(p.name, p.result, 1e-6);
        ok = ok && p.result.max_rel_error < 1e-6;
      }
      for (auto hands : {Hands::one, Hands::two}) {
        const auto r = network_grad_check(tiny_config(3, hands), 0, stride);
        print_gradcheck_row(hands == Hands::one ? "network_21_joints" : "network_42_joints", r, 1e-4);
        ok = ok && r.max_rel_error < 1e-4;
      }
      return ok ? 0 : 1;
    } else if (*abl) {
      std::vector<JointSample> samples;
      if (abl_manifest.empty()) {
        abl_corpus.mode = parse_mode(abl_mode);
        samples = generate_samples(abl_corpus);
      } else {
        samples = load_samples(read_manifest(abl_manifest));
      }
      const auto data = make_dataset(std::move(samples));
      AblationConfig cfg;
      cfg.protocol = parse_protocol(abl_protocol);
      cfg.counts = parse_triple(abl_spec);
      cfg.variants.clear();
      for (const auto& v : split_list(abl_variants)) cfg.variants.push_back(parse_variant(v));
      cfg.seeds.clear();
      for (const auto& s : split_list(abl_seeds)) cfg.seeds.push_back(std::stoull(s));
      if (cfg.variants.empty() || cfg.seeds.empty()) throw std::invalid_argument("ablate: need variants and seeds");
      cfg.train = abl_config.empty() ? TrainConfig{} : load_train_config(abl_config);
      if (abl_epochs) cfg.train.epochs = abl_epochs;
      cfg.train.validate();
      cfg.model = model_preset(abl_size, data.num_classes(), data.joints() == kJointsPerHand ? Hands::one : Hands::two,
                               cfg.train.frames);
      cfg.model.dropout = cfg.train.dropout;
      cfg.eval.trials = abl_trials;
      cfg.with_noise = abl_noise;
      const auto rows = run_ablation(data, cfg, [](const std::string& line) { std::cerr << line << '\n'; });
      write_ablation_csv(std::cout, rows, abl_noise);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
