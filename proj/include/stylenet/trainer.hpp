#pragma once
// Cross-entropy objective, Adam with L2 weight decay, step learning-rate
// schedule, and a resumable, seed-deterministic training loop over both
// streams and the fusion weights.

#include "stylenet/autodiff.hpp"
#include "stylenet/checkpoint.hpp"
#include "stylenet/model.hpp"
#include "stylenet/skeleton_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace stylenet {

struct TrainConfig {
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
  std::size_t epochs = 100;
  std::vector<std::size_t> lr_drops{40, 70, 90};
  double lr_factor = 0.1;
  double dropout = 0.3;
  std::uint64_t seed = 0;
  std::size_t frames = 32;
  /// Stop once an epoch reaches this training accuracy (0 disables).
  double stop_at_train_accuracy = 0.0;

  void validate() const {
    if (batch_size < 1 || epochs < 1 || frames < 1) throw std::invalid_argument("TrainConfig: counts must be positive");
    if (!(lr > 0 && eps > 0 && lr_factor > 0 && weight_decay >= 0))
      throw std::invalid_argument("TrainConfig: lr, eps, lr_factor must be positive and weight_decay >= 0");
    if (!(beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1))
      throw std::invalid_argument("TrainConfig: beta1 and beta2 must lie in (0, 1)");
    if (!std::is_sorted(lr_drops.begin(), lr_drops.end())) throw std::invalid_argument("TrainConfig: lr_drops must be sorted");
    if (!(dropout >= 0 && dropout < 1)) throw std::invalid_argument("TrainConfig: dropout must lie in [0, 1)");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::vector<std::size_t> parse_size_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(std::stoul(item));
  }
  return out;
}

}  // namespace detail

/// Flat `key = value` text; '#' starts a comment. Unknown keys are rejected.
inline TrainConfig parse_train_config(const std::string& text, TrainConfig cfg = {}) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("config line " + std::to_string(lineno) + ": expected key = value");
    const auto key = detail::trim(line.substr(0, eq));
    const auto val = detail::trim(line.substr(eq + 1));
    try {
      if (key == "batch_size") cfg.batch_size = std::stoul(val);
      else if (key == "lr") cfg.lr = std::stod(val);
      else if (key == "beta1") cfg.beta1 = std::stod(val);
      else if (key == "beta2") cfg.beta2 = std::stod(val);
      else if (key == "eps") cfg.eps = std::stod(val);
      else if (key == "weight_decay") cfg.weight_decay = std::stod(val);
      else if (key == "epochs") cfg.epochs = std::stoul(val);
      else if (key == "lr_drops") cfg.lr_drops = detail::parse_size_list(val);
      else if (key == "lr_factor") cfg.lr_factor = std::stod(val);
      else if (key == "dropout") cfg.dropout = std::stod(val);
      else if (key == "seed") cfg.seed = std::stoull(val);
      else if (key == "frames") cfg.frames = std::stoul(val);
      else if (key == "stop_at_train_accuracy") cfg.stop_at_train_accuracy = std::stod(val);
      else throw FormatError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    } catch (const std::logic_error&) {
      throw FormatError("config line " + std::to_string(lineno) + ": bad value for '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

inline TrainConfig load_train_config(const std::filesystem::path& path) {
  return parse_train_config(io::read_file(path));
}

/// Base rate multiplied by lr_factor once per drop epoch already reached.
inline double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  double lr = cfg.lr;
  for (auto d : cfg.lr_drops)
    if (epoch >= d) lr *= cfg.lr_factor;
  return lr;
}

template <class Real>
Tensor<Real> cross_entropy(const Tensor<Real>& logits, const std::vector<std::size_t>& labels) {
  return ad::softmax_cross_entropy(logits, labels);
}

/// Bias-corrected Adam; L2 decay is folded into the gradient before the
/// moment update, except for parameters flagged decay-exempt.
template <class Real>
class Adam {
 public:
  explicit Adam(const TrainConfig& cfg) : cfg_(cfg) {}

  void step(ParameterSet<Real>& params, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& e : params.entries()) {
      if (!e.trainable) continue;
      auto& p = e.tensor.values();
      auto& [m, v] = moments_[e.name];
      if (m.empty()) {
        m.assign(p.size(), Real(0));
        v.assign(p.size(), Real(0));
      }
      if (m.size() != p.size()) throw std::invalid_argument("adam_step: state shape mismatch for " + e.name);
      const bool has = e.tensor.has_grad();
      const double wd = e.decay_exempt ? 0.0 : cfg_.weight_decay;
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double g = (has ? static_cast<double>(e.tensor.grad()[i]) : 0.0) + wd * static_cast<double>(p[i]);
        m[i] = static_cast<Real>(cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g);
        v[i] = static_cast<Real>(cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g);
        const double mh = m[i] / bc1, vh = v[i] / bc2;
        p[i] = static_cast<Real>(p[i] - lr * mh / (std::sqrt(vh) + cfg_.eps));
      }
    }
  }

  std::size_t steps() const { return t_; }

  Checkpoint state() const {
    Checkpoint ck{{"optim.step", {1}, {static_cast<float>(t_)}}};
    for (const auto& [name, mv] : moments_) {
      const auto n = static_cast<std::uint32_t>(mv.first.size());
      ck.push_back({"optim.m." + name, {n}, {mv.first.begin(), mv.first.end()}});
      ck.push_back({"optim.v." + name, {n}, {mv.second.begin(), mv.second.end()}});
    }
    return ck;
  }

  void load_state(const Checkpoint& ck) {
    t_ = static_cast<std::size_t>(require_entry(ck, "optim.step").values.at(0));
    moments_.clear();
    for (const auto& e : ck) {
      if (e.name.rfind("optim.m.", 0) != 0) continue;
      const std::string name = e.name.substr(8);
      const auto& v = require_entry(ck, "optim.v." + name);
      moments_[name] = {{e.values.begin(), e.values.end()}, {v.values.begin(), v.values.end()}};
    }
  }

 private:
  TrainConfig cfg_;
  std::size_t t_ = 0;
  std::map<std::string, std::pair<std::vector<Real>, std::vector<Real>>> moments_;
};

// ---------------------------------------------------------------------------
// Data

/// In-memory samples with contiguous class labels (sorted person ids).
struct Dataset {
  std::vector<JointSample> samples;
  std::vector<std::size_t> labels;
  std::vector<std::uint32_t> class_person_ids;
  HandGraph graph;

  std::size_t num_classes() const { return class_person_ids.size(); }
  std::size_t joints() const { return graph.num_vertices; }
};

inline Dataset make_dataset(std::vector<JointSample> samples, std::vector<std::uint32_t> class_person_ids = {}) {
  if (samples.empty()) throw std::invalid_argument("make_dataset: no samples");
  Dataset d;
  const std::size_t v = samples.front().joints;
  for (const auto& s : samples)
    if (s.joints != v) throw std::invalid_argument("make_dataset: samples disagree on joint count");
  d.graph = build_hand_graph(v == kJointsPerHand ? Hands::one : Hands::two);
  if (class_person_ids.empty()) {
    for (const auto& s : samples) class_person_ids.push_back(s.person_id);
    std::sort(class_person_ids.begin(), class_person_ids.end());
    class_person_ids.erase(std::unique(class_person_ids.begin(), class_person_ids.end()), class_person_ids.end());
  }
  d.class_person_ids = std::move(class_person_ids);
  for (const auto& s : samples) {
    const auto it = std::lower_bound(d.class_person_ids.begin(), d.class_person_ids.end(), s.person_id);
    if (it == d.class_person_ids.end() || *it != s.person_id)
      throw std::invalid_argument("make_dataset: person " + std::to_string(s.person_id) + " has no class");
    d.labels.push_back(static_cast<std::size_t>(it - d.class_person_ids.begin()));
  }
  d.samples = std::move(samples);
  return d;
}

template <class Real>
struct Batch {
  Tensor<Real> joints, bones;  // N x 3 x T x V
  std::vector<std::size_t> labels;
  std::vector<std::size_t> ids;
};

/// Draws `frames` frames per sample (and optional occlusion noise) from
/// generator streams keyed by (seed, stream, id), then derives bones.
template <class Real>
Batch<Real> make_batch(const Dataset& data, const std::vector<std::size_t>& ids, std::size_t frames,
                       std::uint64_t seed, std::uint64_t stream, const std::vector<double>* noise_weights = nullptr) {
  const std::size_t n = ids.size(), v = data.joints(), c = 3;
  std::vector<Real> jv(n * c * frames * v), bv(n * c * frames * v);
  Batch<Real> b;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& src = data.samples.at(ids[i]);
    Rng rng = make_rng(seed, {stream, ids[i]});
    auto j = select_frames(src, sample_frames(src.frames, frames, rng));
    if (noise_weights) j = inject_noise(j, rng, *noise_weights);
    const auto bones = bones_on_vertices(derive_bones(j, data.graph), j);
    for (std::size_t t = 0; t < frames; ++t)
      for (std::size_t vv = 0; vv < v; ++vv)
        for (std::size_t ch = 0; ch < c; ++ch) {
          const std::size_t dst = ((i * c + ch) * frames + t) * v + vv;
          jv[dst] = static_cast<Real>(j.at(t, vv, ch));
          bv[dst] = static_cast<Real>(bones.at(t, vv, ch));
        }
    b.labels.push_back(data.labels.at(ids[i]));
    b.ids.push_back(ids[i]);
  }
  b.joints = Tensor<Real>::from_values({n, c, frames, v}, std::move(jv));
  b.bones = Tensor<Real>::from_values({n, c, frames, v}, std::move(bv));
  return b;
}

template <class Real>
std::vector<std::size_t> argmax_rows(const Tensor<Real>& logits) {
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Real* row = logits.data() + i * c;
    out[i] = static_cast<std::size_t>(std::max_element(row, row + c) - row);
  }
  return out;
}

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0, train_loss = 0, train_acc = 0, val_acc = 0, alpha = 0, beta = 0;
  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

inline constexpr const char* kHistoryHeader = "epoch,lr,train_loss,train_acc,val_acc,alpha,beta";

inline void write_history_row(std::ostream& os, const EpochRecord& r) {
  os << r.epoch << ',' << r.lr << ',' << r.train_loss << ',' << r.train_acc << ',' << r.val_acc << ',' << r.alpha << ','
     << r.beta << '\n';
}

inline void write_history_csv(std::ostream& os, const std::vector<EpochRecord>& h) {
  os << kHistoryHeader << '\n';
  for (const auto& r : h) write_history_row(os, r);
}

namespace stream_id {
inline constexpr std::uint64_t shuffle = 0x5f1e, train = 0x7a11, dropout = 0xd0, validate = 0x7a1;
}

template <class Real>
class Trainer {
 public:
  Trainer(StyleNet<Real>& model, const Dataset& data, std::vector<std::size_t> train_ids,
          std::vector<std::size_t> val_ids, TrainConfig cfg)
      : model_(model), data_(data), train_(std::move(train_ids)), val_(std::move(val_ids)), cfg_(std::move(cfg)),
        adam_(cfg_) {
    cfg_.validate();
    if (train_.empty() || val_.empty()) throw std::invalid_argument("train: empty train or validation split");
    if (model_.config().num_classes != data_.num_classes())
      throw std::invalid_argument("train: model has " + std::to_string(model_.config().num_classes) +
                                  " classes but the data has " + std::to_string(data_.num_classes()));
    if (model_.config().frames != cfg_.frames) throw std::invalid_argument("train: model frames differ from config");
  }

  std::size_t epoch() const { return epoch_; }
  const std::vector<EpochRecord>& history() const { return history_; }
  double best_val_acc() const { return best_val_; }
  bool finished() const { return epoch_ >= cfg_.epochs || stopped_; }

  EpochRecord run_epoch() {
    const double lr = lr_at(epoch_, cfg_);
    std::vector<std::size_t> order = train_;
    Rng shuffle = make_rng(cfg_.seed, {stream_id::shuffle, epoch_});
    std::shuffle(order.begin(), order.end(), shuffle);
    double loss_sum = 0;
    std::size_t correct = 0;
    for (std::size_t start = 0, bi = 0; start < order.size(); start += cfg_.batch_size, ++bi) {
      const std::vector<std::size_t> ids(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg_.batch_size)));
      const auto batch = make_batch<Real>(data_, ids, cfg_.frames, cfg_.seed, derive_seed(stream_id::train, {epoch_}));
      Rng drop = make_rng(cfg_.seed, {stream_id::dropout, epoch_, bi});
      model_.parameters().zero_grad();
      const auto out = model_.forward(batch.joints, batch.bones, true, drop);
      const auto loss = cross_entropy(out.fused, batch.labels);
      const double lv = static_cast<double>(loss.item());
      if (!std::isfinite(lv))
        throw std::runtime_error("training diverged: non-finite loss at epoch " + std::to_string(epoch_) + ", batch " +
                                 std::to_string(bi));
      ad::backward(loss);
      adam_.step(model_.parameters(), lr);
      loss_sum += lv * static_cast<double>(ids.size());
      const auto pred = argmax_rows(out.fused);
      for (std::size_t i = 0; i < ids.size(); ++i) correct += pred[i] == batch.labels[i];
    }
    EpochRecord r;
    r.epoch = epoch_;
    r.lr = lr;
    r.train_loss = loss_sum / static_cast<double>(order.size());
    r.train_acc = static_cast<double>(correct) / static_cast<double>(order.size());
    r.val_acc = accuracy(val_, derive_seed(stream_id::validate, {epoch_}));
    r.alpha = static_cast<double>(model_.alpha().item());
    r.beta = static_cast<double>(model_.beta().item());
    if (r.val_acc > best_val_ || best_.empty()) {
      best_val_ = r.val_acc;
      best_ = model_.state();
    }
    history_.push_back(r);
    ++epoch_;
    if (cfg_.stop_at_train_accuracy > 0 && r.train_acc >= cfg_.stop_at_train_accuracy) stopped_ = true;
    return r;
  }

  /// Runs until the configured epoch count (or early stop) and restores the
  /// best-validation parameters.
  const std::vector<EpochRecord>& run(const std::function<void(const EpochRecord&)>& on_epoch = {}) {
    while (!finished()) {
      const auto r = run_epoch();
      if (on_epoch) on_epoch(r);
    }
    restore_best();
    return history_;
  }

  void restore_best() {
    if (!best_.empty()) model_.load_state(best_);
  }

  /// Eval-mode accuracy with frames drawn from stream `stream`.
  double accuracy(const std::vector<std::size_t>& ids, std::uint64_t stream) {
    ad::NoGradGuard ng;
    std::size_t correct = 0;
    Rng unused(0);
    for (std::size_t start = 0; start < ids.size(); start += cfg_.batch_size) {
      const std::vector<std::size_t> chunk(ids.begin() + static_cast<std::ptrdiff_t>(start),
                                           ids.begin() + static_cast<std::ptrdiff_t>(std::min(ids.size(), start + cfg_.batch_size)));
      const auto batch = make_batch<Real>(data_, chunk, cfg_.frames, cfg_.seed, stream);
      const auto pred = argmax_rows(model_.forward(batch.joints, batch.bones, false, unused).fused);
      for (std::size_t i = 0; i < chunk.size(); ++i) correct += pred[i] == batch.labels[i];
    }
    return static_cast<double>(correct) / static_cast<double>(ids.size());
  }

  /// Model, optimizer moments, progress and the best-validation snapshot.
  Checkpoint state() const {
    Checkpoint ck = model_.state();
    for (auto& e : adam_.state()) ck.push_back(std::move(e));
    ck.push_back({"train.epoch", {1}, {static_cast<float>(epoch_)}});
    ck.push_back({"train.stopped", {1}, {stopped_ ? 1.0f : 0.0f}});
    // Stored as a count so the restored value compares exactly like the original.
    const double best_correct = best_val_ < 0 ? -1.0 : std::round(best_val_ * static_cast<double>(val_.size()));
    ck.push_back({"train.best_val_correct", {1}, {static_cast<float>(best_correct)}});
    for (const auto& r : history_)
      ck.push_back({"train.history." + std::to_string(r.epoch),
                    {6},
                    {static_cast<float>(r.lr), static_cast<float>(r.train_loss), static_cast<float>(r.train_acc),
                     static_cast<float>(r.val_acc), static_cast<float>(r.alpha), static_cast<float>(r.beta)}});
    for (const auto& e : best_) {
      if (e.name.rfind("arch.", 0) == 0) continue;
      auto copy = e;
      copy.name = "best." + e.name;
      ck.push_back(std::move(copy));
    }
    return ck;
  }

  void load_state(const Checkpoint& ck) {
    model_.load_state(ck);
    adam_.load_state(ck);
    epoch_ = static_cast<std::size_t>(require_entry(ck, "train.epoch").values.at(0));
    stopped_ = require_entry(ck, "train.stopped").values.at(0) != 0.0f;
    const double best_correct = require_entry(ck, "train.best_val_correct").values.at(0);
    best_val_ = best_correct < 0 ? -1.0 : best_correct / static_cast<double>(val_.size());
    history_.clear();
    for (std::size_t e = 0; e < epoch_; ++e) {
      const auto& h = require_entry(ck, "train.history." + std::to_string(e)).values;
      history_.push_back({e, h[0], h[1], h[2], h[3], h[4], h[5]});
    }
    best_.clear();
    for (const auto& e : ck)
      if (e.name.rfind("best.", 0) == 0) best_.push_back({e.name.substr(5), e.dims, e.values});
    if (!best_.empty())
      for (const auto& e : model_.state())
        if (e.name.rfind("arch.", 0) == 0) best_.push_back(e);
  }

 private:
  StyleNet<Real>& model_;
  const Dataset& data_;
  std::vector<std::size_t> train_, val_;
  TrainConfig cfg_;
  Adam<Real> adam_;
  std::size_t epoch_ = 0;
  bool stopped_ = false;
  double best_val_ = -1.0;
  Checkpoint best_;
  std::vector<EpochRecord> history_;
};

/// Trains both streams and the fusion weights jointly; the model ends up
/// holding the best-validation parameters.
template <class Real>
std::vector<EpochRecord> train(StyleNet<Real>& model, const Dataset& data, const std::vector<std::size_t>& train_ids,
                               const std::vector<std::size_t>& val_ids, const TrainConfig& cfg,
                               const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  Trainer<Real> t(model, data, train_ids, val_ids, cfg);
  return t.run(on_epoch);
}

}  // namespace stylenet
