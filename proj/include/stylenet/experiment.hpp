#pragma once
// Experiment protocols: sentence-disjoint and repetition-disjoint splits,
// repeated-trial evaluation (optionally with occlusion noise), and ablation
// sweeps over model variants and seeds.

#include "stylenet/model.hpp"
#include "stylenet/skeleton_data.hpp"
#include "stylenet/trainer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace stylenet {

enum class Protocol { unseen_sentences, seen_sentences };

inline const char* to_string(Protocol p) { return p == Protocol::unseen_sentences ? "unseen" : "seen"; }

inline Protocol parse_protocol(const std::string& s) {
  if (s == "unseen") return Protocol::unseen_sentences;
  if (s == "seen") return Protocol::seen_sentences;
  throw std::invalid_argument("unknown protocol '" + s + "' (expected unseen or seen)");
}

struct SampleKey {
  std::uint32_t person = 0, sentence = 0, repetition = 0;
};

inline std::vector<SampleKey> keys_of(const DatasetManifest& m) {
  std::vector<SampleKey> k;
  for (const auto& r : m.records) k.push_back({r.person_id, r.sentence_id, r.repetition_id});
  return k;
}

inline std::vector<SampleKey> keys_of(const std::vector<JointSample>& samples) {
  std::vector<SampleKey> k;
  for (const auto& s : samples) k.push_back({s.person_id, s.sentence_id, s.repetition_id});
  return k;
}

/// Sample ids index the corpus the split was built from.
struct ExperimentSplit {
  Protocol protocol = Protocol::unseen_sentences;
  std::array<std::size_t, 3> counts{};
  std::uint64_t seed = 0;
  std::vector<std::size_t> train, val, test;
  friend bool operator==(const ExperimentSplit&, const ExperimentSplit&) = default;
};

/// Throws std::logic_error when disjointness, coverage or the protocol's
/// placement rules are broken.
inline void validate_split(const ExperimentSplit& s, const std::vector<SampleKey>& keys) {
  std::vector<int> owner(keys.size(), -1);
  const std::vector<std::size_t>* sets[3] = {&s.train, &s.val, &s.test};
  for (int i = 0; i < 3; ++i)
    for (auto id : *sets[i]) {
      if (id >= keys.size()) throw std::logic_error("split: sample id out of range");
      if (owner[id] != -1) throw std::logic_error("split: sets are not disjoint");
      owner[id] = i;
    }
  if (std::count(owner.begin(), owner.end(), -1) != 0) throw std::logic_error("split: sets do not cover the corpus");

  if (s.protocol == Protocol::unseen_sentences) {
    std::map<std::uint32_t, int> sentence_set;
    std::array<std::set<std::uint32_t>, 3> persons;
    std::set<std::uint32_t> all_persons;
    for (std::size_t id = 0; id < keys.size(); ++id) {
      auto [it, fresh] = sentence_set.emplace(keys[id].sentence, owner[id]);
      if (!fresh && it->second != owner[id]) throw std::logic_error("split: a sentence appears in two sets");
      persons[owner[id]].insert(keys[id].person);
      all_persons.insert(keys[id].person);
    }
    for (const auto& p : persons)
      if (p != all_persons) throw std::logic_error("split: a person is missing from one of the sets");
  } else {
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::array<std::size_t, 3>> per;
    for (std::size_t id = 0; id < keys.size(); ++id) per[{keys[id].person, keys[id].sentence}][owner[id]]++;
    for (const auto& [key, c] : per)
      if (c != s.counts) throw std::logic_error("split: repetition counts differ from the specification");
  }
}

/// Sentences are permuted by seed and dealt a/b/c to train/val/test; all
/// repetitions of a sentence travel together.
inline ExperimentSplit split_unseen(const std::vector<SampleKey>& keys, std::array<std::size_t, 3> counts,
                                    std::uint64_t seed) {
  std::vector<std::uint32_t> sentences;
  for (const auto& k : keys) sentences.push_back(k.sentence);
  std::sort(sentences.begin(), sentences.end());
  sentences.erase(std::unique(sentences.begin(), sentences.end()), sentences.end());
  if (counts[0] + counts[1] + counts[2] != sentences.size())
    throw std::invalid_argument("split_unseen: counts sum to " + std::to_string(counts[0] + counts[1] + counts[2]) +
                                " but the corpus has " + std::to_string(sentences.size()) + " sentences");
  if (counts[0] < 1 || counts[1] < 1 || counts[2] < 1)
    throw std::invalid_argument("split_unseen: every set needs at least one sentence");
  Rng rng = make_rng(seed, {0x5e11});
  std::shuffle(sentences.begin(), sentences.end(), rng);
  std::map<std::uint32_t, int> where;
  for (std::size_t i = 0; i < sentences.size(); ++i) where[sentences[i]] = i < counts[0] ? 0 : i < counts[0] + counts[1] ? 1 : 2;

  ExperimentSplit s{Protocol::unseen_sentences, counts, seed, {}, {}, {}};
  std::vector<std::size_t>* sets[3] = {&s.train, &s.val, &s.test};
  for (std::size_t id = 0; id < keys.size(); ++id) sets[where[keys[id].sentence]]->push_back(id);
  validate_split(s, keys);
  return s;
}

/// Per (person, sentence), repetitions are shuffled by seed and dealt
/// tr/va/te.
inline ExperimentSplit split_seen(const std::vector<SampleKey>& keys, std::array<std::size_t, 3> reps,
                                  std::uint64_t seed) {
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::vector<std::size_t>> groups;
  for (std::size_t id = 0; id < keys.size(); ++id) groups[{keys[id].person, keys[id].sentence}].push_back(id);
  const std::size_t total = reps[0] + reps[1] + reps[2];
  ExperimentSplit s{Protocol::seen_sentences, reps, seed, {}, {}, {}};
  for (auto& [key, ids] : groups) {
    if (ids.size() != total)
      throw std::invalid_argument("split_seen: counts sum to " + std::to_string(total) + " but person " +
                                  std::to_string(key.first) + " sentence " + std::to_string(key.second) + " has " +
                                  std::to_string(ids.size()) + " repetitions");
    std::sort(ids.begin(), ids.end(), [&](auto a, auto b) { return keys[a].repetition < keys[b].repetition; });
    Rng rng = make_rng(seed, {0x5ee0, key.first, key.second});
    std::shuffle(ids.begin(), ids.end(), rng);
    for (std::size_t i = 0; i < ids.size(); ++i) (i < reps[0] ? s.train : i < reps[0] + reps[1] ? s.val : s.test).push_back(ids[i]);
  }
  for (auto* v : {&s.train, &s.val, &s.test}) std::sort(v->begin(), v->end());
  validate_split(s, keys);
  return s;
}

// ---------------------------------------------------------------------------
// Split files: a header, then one self-contained record per sample
//   set <TAB> path <TAB> person <TAB> sentence <TAB> repetition

struct SplitFile {
  ExperimentSplit split;
  DatasetManifest manifest;  // ids in `split` index these records
};

inline void write_split(const std::filesystem::path& path, const ExperimentSplit& s, const DatasetManifest& m) {
  validate_split(s, keys_of(m));
  std::ostringstream os;
  os << "# stylenet split\n"
     << "protocol\t" << to_string(s.protocol) << '\n'
     << "counts\t" << s.counts[0] << ',' << s.counts[1] << ',' << s.counts[2] << '\n'
     << "seed\t" << s.seed << '\n';
  const char* names[3] = {"train", "val", "test"};
  const std::vector<std::size_t>* sets[3] = {&s.train, &s.val, &s.test};
  for (int i = 0; i < 3; ++i)
    for (auto id : *sets[i]) {
      const auto& r = m.records.at(id);
      os << names[i] << '\t' << std::filesystem::absolute(r.path).generic_string() << '\t' << r.person_id << '\t'
         << r.sentence_id << '\t' << r.repetition_id << '\n';
    }
  io::write_file(path, os.str());
}

inline SplitFile read_split(const std::filesystem::path& path) {
  std::istringstream in(io::read_file(path));
  SplitFile f;
  std::string line;
  std::size_t lineno = 0;
  bool have_protocol = false, have_counts = false, have_seed = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string x; std::getline(ss, x, '\t');) fields.push_back(x);
    const auto where = "split line " + std::to_string(lineno);
    try {
      if (fields[0] == "protocol" && fields.size() == 2) {
        f.split.protocol = parse_protocol(fields[1]);
        have_protocol = true;
      } else if (fields[0] == "counts" && fields.size() == 2) {
        const auto c = detail::parse_size_list(fields[1]);
        if (c.size() != 3) throw FormatError(where + ": counts needs three values");
        f.split.counts = {c[0], c[1], c[2]};
        have_counts = true;
      } else if (fields[0] == "seed" && fields.size() == 2) {
        f.split.seed = std::stoull(fields[1]);
        have_seed = true;
      } else if ((fields[0] == "train" || fields[0] == "val" || fields[0] == "test") && fields.size() == 5) {
        ManifestRecord r;
        r.path = fields[1];
        if (r.path.is_relative()) r.path = path.parent_path() / r.path;
        r.person_id = static_cast<std::uint32_t>(std::stoul(fields[2]));
        r.sentence_id = static_cast<std::uint32_t>(std::stoul(fields[3]));
        r.repetition_id = static_cast<std::uint32_t>(std::stoul(fields[4]));
        const std::size_t id = f.manifest.records.size();
        f.manifest.records.push_back(r);
        (fields[0] == "train" ? f.split.train : fields[0] == "val" ? f.split.val : f.split.test).push_back(id);
      } else {
        throw FormatError(where + ": unrecognized record");
      }
    } catch (const std::invalid_argument&) {
      throw FormatError(where + ": malformed value");
    } catch (const std::out_of_range&) {
      throw FormatError(where + ": value out of range");
    }
  }
  if (!have_protocol || !have_counts || !have_seed) throw FormatError("split file is missing its header");
  validate_split(f.split, keys_of(f.manifest));
  return f;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalConfig {
  std::size_t trials = 30;
  bool noise = false;
  std::vector<double> noise_weights;  // empty: default thumb/index weighting
  std::uint64_t seed = 0;
  std::size_t frames = 32;
  std::size_t batch_size = 32;
};

struct EvalReport {
  double mean = 0, stddev = 0;
  std::vector<double> per_trial;
};

inline EvalReport summarize(std::vector<double> per_trial) {
  EvalReport r;
  r.per_trial = std::move(per_trial);
  const double n = static_cast<double>(r.per_trial.size());
  for (double a : r.per_trial) r.mean += a;
  r.mean /= n;
  double ss = 0;
  for (double a : r.per_trial) ss += (a - r.mean) * (a - r.mean);
  r.stddev = r.per_trial.size() > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
  return r;
}

/// `classify(const Batch<Real>&) -> std::vector<std::size_t>` predictions.
/// Each trial draws fresh frames (and noise) from streams keyed by
/// (seed, trial, sample id).
template <class Real, class Classifier>
EvalReport evaluate(Classifier&& classify, const Dataset& data, const std::vector<std::size_t>& test_ids,
                    const EvalConfig& cfg) {
  if (test_ids.empty()) throw std::invalid_argument("evaluate: empty test set");
  if (cfg.trials < 1) throw std::invalid_argument("evaluate: trials must be positive");
  const auto weights = cfg.noise_weights.empty() ? default_occlusion_weights(data.joints()) : cfg.noise_weights;
  std::vector<double> acc;
  for (std::size_t trial = 0; trial < cfg.trials; ++trial) {
    std::size_t correct = 0;
    const std::uint64_t stream = derive_seed(0xe7a1, {trial, cfg.noise ? 1u : 0u});
    for (std::size_t start = 0; start < test_ids.size(); start += cfg.batch_size) {
      const std::vector<std::size_t> ids(test_ids.begin() + static_cast<std::ptrdiff_t>(start),
                                         test_ids.begin() + static_cast<std::ptrdiff_t>(std::min(test_ids.size(), start + cfg.batch_size)));
      const auto batch = make_batch<Real>(data, ids, cfg.frames, cfg.seed, stream, cfg.noise ? &weights : nullptr);
      const auto pred = classify(batch);
      if (pred.size() != ids.size()) throw std::logic_error("evaluate: classifier returned the wrong number of labels");
      for (std::size_t i = 0; i < ids.size(); ++i) correct += pred[i] == batch.labels[i];
    }
    acc.push_back(static_cast<double>(correct) / static_cast<double>(test_ids.size()));
  }
  return summarize(std::move(acc));
}

template <class Real>
EvalReport evaluate_model(StyleNet<Real>& model, const Dataset& data, const std::vector<std::size_t>& test_ids,
                          EvalConfig cfg) {
  if (model.config().num_classes != data.num_classes())
    throw std::invalid_argument("evaluate: model has " + std::to_string(model.config().num_classes) +
                                " classes but the data has " + std::to_string(data.num_classes()));
  cfg.frames = model.config().frames;
  auto classify = [&](const Batch<Real>& b) {
    ad::NoGradGuard ng;
    Rng unused(0);
    return argmax_rows(model.forward(b.joints, b.bones, false, unused).fused);
  };
  return evaluate<Real>(classify, data, test_ids, cfg);
}

// ---------------------------------------------------------------------------
// Ablation

struct AblationRow {
  Variant variant = Variant::full;
  std::size_t parameters = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<double> clean, noisy;  // per seed, mean over trials
  double mean(const std::vector<double>& v) const {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  }
  double stddev(const std::vector<double>& v) const {
    if (v.size() < 2) return 0.0;
    const double m = mean(v);
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
  }
};

struct AblationConfig {
  Protocol protocol = Protocol::unseen_sentences;
  std::array<std::size_t, 3> counts{2, 2, 2};
  std::vector<Variant> variants{Variant::baseline, Variant::full};
  std::vector<std::uint64_t> seeds{0};
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
  bool with_noise = false;
};

/// Every variant trains on the same split for a given seed; the seed also
/// drives model initialization and training order.
template <class Real = float>
std::vector<AblationRow> run_ablation(const Dataset& data, const AblationConfig& cfg,
                                      const std::function<void(const std::string&)>& log = {}) {
  const auto keys = keys_of(data.samples);
  std::vector<AblationRow> rows;
  for (auto v : cfg.variants) {
    AblationRow r;
    r.variant = v;
    r.seeds = cfg.seeds;
    rows.push_back(r);
  }
  for (auto seed : cfg.seeds) {
    const auto split = cfg.protocol == Protocol::unseen_sentences ? split_unseen(keys, cfg.counts, seed)
                                                                  : split_seen(keys, cfg.counts, seed);
    for (auto& row : rows) {
      auto mc = with_variant(cfg.model, row.variant);
      mc.num_classes = data.num_classes();
      StyleNet<Real> model(mc, seed);
      row.parameters = model.parameter_count();
      auto tc = cfg.train;
      tc.seed = seed;
      tc.frames = mc.frames;
      train(model, data, split.train, split.val, tc);
      auto ec = cfg.eval;
      ec.seed = seed;
      ec.noise = false;
      row.clean.push_back(evaluate_model(model, data, split.test, ec).mean);
      if (cfg.with_noise) {
        ec.noise = true;
        row.noisy.push_back(evaluate_model(model, data, split.test, ec).mean);
      }
      if (log)
        log(std::string(to_string(row.variant)) + " seed " + std::to_string(seed) + ": clean " +
            std::to_string(row.clean.back()) + (cfg.with_noise ? ", noisy " + std::to_string(row.noisy.back()) : ""));
    }
  }
  return rows;
}

inline void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows, bool with_noise) {
  os << "variant,parameters,seeds,clean_mean,clean_std";
  if (with_noise) os << ",noisy_mean,noisy_std,drop";
  os << '\n';
  for (const auto& r : rows) {
    os << to_string(r.variant) << ',' << r.parameters << ',' << r.seeds.size() << ',' << r.mean(r.clean) << ','
       << r.stddev(r.clean);
    if (with_noise) os << ',' << r.mean(r.noisy) << ',' << r.stddev(r.noisy) << ',' << r.mean(r.clean) - r.mean(r.noisy);
    os << '\n';
  }
}

}  // namespace stylenet
