#pragma once
// Two-stream adaptive non-local spatio-temporal graph convolutional network.
//
// Each stream: input batch norm over (channel, joint) pairs, a stack of
// layers (spatial graph unit -> 9x1 temporal unit, with a layer residual),
// a head (shared per-channel downsampler or global average pooling),
// dropout and a linear classifier. The joint and bone streams are fused by
// two trainable scalars.

#include "stylenet/autodiff.hpp"
#include "stylenet/checkpoint.hpp"
#include "stylenet/hand_graph.hpp"
#include "stylenet/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace stylenet {

struct ModelConfig {
  std::size_t in_channels = 3;
  Hands hands = Hands::one;
  std::size_t frames = 32;
  std::size_t num_classes = 2;
  std::vector<std::size_t> channels{64, 64, 64, 64, 128, 128, 128, 256, 256, 256};
  std::vector<std::size_t> strides{1, 1, 1, 1, 2, 1, 1, 2, 1, 1};
  std::size_t spatial_nonlocal_layer = 8;    // 1-based; 0 disables
  std::size_t temporal_nonlocal_layer = 10;  // 1-based; 0 disables
  bool downsampler = true;                   // false: global average pooling
  std::size_t downsample_hidden = 64;
  bool learned_graph = true;     // B_k
  bool similarity_graph = true;  // C_k
  double dropout = 0.3;
  double sigma = 0.001;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;

  std::size_t vertices() const { return hands == Hands::one ? kJointsPerHand : 2 * kJointsPerHand; }
  std::size_t layers() const { return channels.size(); }

  std::size_t frames_after(std::size_t layer_count) const {
    std::size_t t = frames;
    for (std::size_t l = 0; l < layer_count; ++l) t = (t - 1) / strides[l] + 1;
    return t;
  }
  std::size_t final_frames() const { return frames_after(layers()); }

  void validate() const {
    if (channels.empty() || channels.size() != strides.size())
      throw std::invalid_argument("ModelConfig: channels and strides must be nonempty and equally long");
    if (spatial_nonlocal_layer > layers() || temporal_nonlocal_layer > layers())
      throw std::invalid_argument("ModelConfig: non-local layer index out of range");
    if (frames < 1 || num_classes < 1 || in_channels < 1) throw std::invalid_argument("ModelConfig: bad dimensions");
    for (auto s : strides)
      if (s < 1) throw std::invalid_argument("ModelConfig: stride must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("ModelConfig: dropout must lie in [0, 1)");
  }
};

/// Ten layers, 64x4 / 128x3 / 256x3 channels, stride 2 at layers 5 and 8,
/// spatial non-local at layer 8, temporal non-local at layer 10.
inline ModelConfig full_config(std::size_t num_classes, Hands hands = Hands::one) {
  ModelConfig c;
  c.num_classes = num_classes;
  c.hands = hands;
  return c;
}

/// Two layers (4 and 8 channels) for gradient checks: spatial non-local in
/// layer 1, temporal non-local in layer 2.
inline ModelConfig tiny_config(std::size_t num_classes, Hands hands = Hands::one, std::size_t frames = 8) {
  ModelConfig c;
  c.num_classes = num_classes;
  c.hands = hands;
  c.frames = frames;
  c.channels = {4, 8};
  c.strides = {1, 1};
  c.spatial_nonlocal_layer = 1;
  c.temporal_nonlocal_layer = 2;
  c.downsample_hidden = 8;
  return c;
}

/// Four-layer desk-scale model used for training runs on synthetic corpora:
/// channels 8,8,16,16 with stride 2 at layer 3, spatial non-local at layer 3,
/// temporal non-local at layer 4.
inline ModelConfig small_config(std::size_t num_classes, Hands hands = Hands::one, std::size_t frames = 32) {
  ModelConfig c;
  c.num_classes = num_classes;
  c.hands = hands;
  c.frames = frames;
  c.channels = {8, 8, 16, 16};
  c.strides = {1, 1, 2, 1};
  c.spatial_nonlocal_layer = 3;
  c.temporal_nonlocal_layer = 4;
  c.downsample_hidden = 16;
  return c;
}

enum class Variant { baseline, downsample, downsample_tnl, downsample_snl, full };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::downsample: return "+downsample";
    case Variant::downsample_tnl: return "+downsample+TNL";
    case Variant::downsample_snl: return "+downsample+SNL";
    case Variant::full: return "full";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (auto v : {Variant::baseline, Variant::downsample, Variant::downsample_tnl, Variant::downsample_snl, Variant::full})
    if (s == to_string(v)) return v;
  if (s == "downsample") return Variant::downsample;
  if (s == "downsample+TNL" || s == "tnl") return Variant::downsample_tnl;
  if (s == "downsample+SNL" || s == "snl") return Variant::downsample_snl;
  throw std::invalid_argument("unknown variant '" + s + "'");
}

/// Ablation variants toggle the layer's spatial non-local block, the temporal
/// non-local block and the downsampler on top of a full configuration.
inline ModelConfig with_variant(ModelConfig full, Variant v, std::size_t snl_layer = 0, std::size_t tnl_layer = 0) {
  if (snl_layer == 0) snl_layer = full.spatial_nonlocal_layer;
  if (tnl_layer == 0) tnl_layer = full.temporal_nonlocal_layer;
  full.downsampler = v != Variant::baseline;
  full.spatial_nonlocal_layer = (v == Variant::downsample_snl || v == Variant::full) ? snl_layer : 0;
  full.temporal_nonlocal_layer = (v == Variant::downsample_tnl || v == Variant::full) ? tnl_layer : 0;
  return full;
}

// ---------------------------------------------------------------------------
// Parameters

template <class Real>
using Tensor = ad::Tensor<Real>;

template <class Real>
struct ParamEntry {
  std::string name;
  Tensor<Real> tensor;
  bool trainable = true;
  bool decay_exempt = false;
};

template <class Real>
class ParameterSet {
 public:
  Tensor<Real> add(std::string name, Tensor<Real> t, bool trainable = true, bool decay_exempt = false) {
    for (const auto& e : entries_)
      if (e.name == name) throw std::logic_error("duplicate parameter name " + name);
    t.set_requires_grad(trainable);
    entries_.push_back({std::move(name), t, trainable, decay_exempt});
    return t;
  }
  const std::vector<ParamEntry<Real>>& entries() const { return entries_; }
  std::vector<ParamEntry<Real>>& entries() { return entries_; }

  ParamEntry<Real>* find(const std::string& name) {
    for (auto& e : entries_)
      if (e.name == name) return &e;
    return nullptr;
  }
  Tensor<Real> at(const std::string& name) {
    auto* e = find(name);
    if (!e) throw std::out_of_range("no parameter named " + name);
    return e->tensor;
  }

  void zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }
  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_)
      if (e.trainable) n += e.tensor.numel();
    return n;
  }

 private:
  std::vector<ParamEntry<Real>> entries_;
};

template <class Real>
struct BatchNormParams {
  Tensor<Real> gamma, beta, running_mean, running_var;
};

template <class Real>
struct SpatialNonlocalParams {
  Tensor<Real> theta, phi, g;  // d x V
  Tensor<Real> what;           // V x d
};

template <class Real>
struct SpatialUnitParams {
  std::array<Tensor<Real>, kNumSubsets> w;       // Cout x Cin x 1 x 1
  std::array<Tensor<Real>, kNumSubsets> b;       // V x V, zero-initialized
  std::array<Tensor<Real>, kNumSubsets> w1, w2;  // Ce x Cin x 1 x 1
  std::vector<SpatialNonlocalParams<Real>> nonlocal;  // empty or one per subset
  BatchNormParams<Real> bn;
  Tensor<Real> residual_w;  // defined when Cin != Cout
  BatchNormParams<Real> residual_bn;
};

template <class Real>
struct TemporalNonlocalParams {
  Tensor<Real> theta, phi, g;  // C/2 x C x 1 x 1
  Tensor<Real> w, w_bias;      // C x C/2 x 1 x 1, C
};

template <class Real>
struct TemporalUnitParams {
  Tensor<Real> conv;  // C x C x 9 x 1
  BatchNormParams<Real> bn;
  std::optional<TemporalNonlocalParams<Real>> nonlocal;
  std::size_t stride = 1;
};

template <class Real>
struct LayerParams {
  std::size_t in_channels = 0, out_channels = 0, stride = 1;
  SpatialUnitParams<Real> spatial;
  TemporalUnitParams<Real> temporal;
  Tensor<Real> residual_w;  // defined unless Cin == Cout and stride 1
  BatchNormParams<Real> residual_bn;
  bool spatial_nonlocal() const { return !spatial.nonlocal.empty(); }
};

template <class Real>
struct DownsamplerParams {
  Tensor<Real> fc1;  // h x (T*V)
  BatchNormParams<Real> bn;
  Tensor<Real> fc2, fc2_bias;  // 1 x h, 1
};

template <class Real>
struct StreamParams {
  BatchNormParams<Real> input_bn;  // over in_channels * V
  std::vector<LayerParams<Real>> layers;
  std::optional<DownsamplerParams<Real>> downsampler;
  Tensor<Real> fc_w, fc_b;
};

inline std::size_t similarity_width(std::size_t cout) { return std::max<std::size_t>(4, cout / 4); }
inline std::size_t spatial_embedding_width(std::size_t v) { return (v + 1) / 2; }
inline constexpr std::size_t kTemporalKernel = 9;

// ---------------------------------------------------------------------------
// Building blocks

/// Vertex similarity graph: softmax over the last axis of
/// (W1 f)^T (W2 f), each embedding flattened to (Ce*T) x V.
template <class Real>
Tensor<Real> compute_C(const Tensor<Real>& f_in, const Tensor<Real>& w1, const Tensor<Real>& w2) {
  ad::require(f_in.rank() == 4, "compute_C: expected N x C x T x V");
  const std::size_t n = f_in.dim(0), t = f_in.dim(2), v = f_in.dim(3);
  const auto a = ad::conv2d(f_in, w1);
  const auto b = ad::conv2d(f_in, w2);
  ad::require(a.dim(1) == b.dim(1), "compute_C: embedding widths differ");
  const std::size_t ce = a.dim(1);
  const auto fa = ad::reshape(a, {n, ce * t, v});
  const auto fb = ad::reshape(b, {n, ce * t, v});
  return ad::softmax(ad::matmul(ad::transpose(fa), fb), 2);
}

/// A_hat = A_tilde + B + C; B and C may be undefined (disabled).
template <class Real>
Tensor<Real> compute_Ahat(const Tensor<Real>& a_tilde, const Tensor<Real>& b, const Tensor<Real>& c) {
  Tensor<Real> out = a_tilde;
  if (b.defined()) {
    ad::require(b.shape() == a_tilde.shape(), "compute_Ahat: B shape differs from A_tilde");
    out = ad::add(out, b);
  }
  if (c.defined()) {
    ad::require(c.rank() == 3 && c.dim(1) == a_tilde.dim(0) && c.dim(2) == a_tilde.dim(1),
                "compute_Ahat: C must be N x V x V");
    out = ad::add(c, out);
  }
  return out;
}

/// Non-local refinement of the graph. The V columns of A_hat are treated as
/// features of length V and embedded to width d:
///   E = (Theta A)^T (Phi A) / d,  Y = E (G A)^T,  D = What Y^T + A.
template <class Real>
Tensor<Real> spatial_nonlocal_D(const Tensor<Real>& a_hat, const SpatialNonlocalParams<Real>& p) {
  ad::require(a_hat.rank() >= 2, "spatial_nonlocal_D: A_hat must be (N x) V x V");
  const std::size_t v = a_hat.dim(a_hat.rank() - 1);
  ad::require(a_hat.dim(a_hat.rank() - 2) == v, "spatial_nonlocal_D: A_hat must be square");
  ad::require(p.theta.rank() == 2 && p.theta.dim(1) == v && p.phi.shape() == p.theta.shape() &&
                  p.g.shape() == p.theta.shape(),
              "spatial_nonlocal_D: embeddings must be d x V");
  const std::size_t d = p.theta.dim(0);
  ad::require(p.what.rank() == 2 && p.what.dim(0) == v && p.what.dim(1) == d,
              "spatial_nonlocal_D: re-projection must be V x d");
  const auto ta = ad::matmul(p.theta, a_hat);
  const auto pa = ad::matmul(p.phi, a_hat);
  const auto ga = ad::matmul(p.g, a_hat);
  const auto e = ad::scale(ad::matmul(ad::transpose(ta), pa), Real(1) / static_cast<Real>(d));
  const auto y = ad::matmul(e, ad::transpose(ga));
  return ad::add(ad::matmul(p.what, ad::transpose(y)), a_hat);
}

template <class Real>
Tensor<Real> apply_bn(const Tensor<Real>& x, BatchNormParams<Real>& bn, bool training, const ModelConfig& cfg) {
  return ad::batchnorm(x, bn.gamma, bn.beta, bn.running_mean, bn.running_var, training, cfg.bn_momentum, cfg.bn_eps);
}

/// Graph matrix M_k used by a spatial unit for subset k: A_hat, or its
/// non-local refinement D when the unit is the non-local variant.
template <class Real>
Tensor<Real> subset_graph(const Tensor<Real>& f_in, const SpatialUnitParams<Real>& p, const Tensor<Real>& a_tilde,
                          std::size_t k) {
  Tensor<Real> c;
  if (p.w1[k].defined()) c = compute_C(f_in, p.w1[k], p.w2[k]);
  const auto a_hat = compute_Ahat(a_tilde, p.b[k], c);
  return p.nonlocal.empty() ? a_hat : spatial_nonlocal_D(a_hat, p.nonlocal[k]);
}

/// F = sum_k conv1x1_k(f_in) M_k, then BN, residual, ReLU.
template <class Real>
Tensor<Real> spatial_unit_forward(const Tensor<Real>& f_in, SpatialUnitParams<Real>& p,
                                  const std::array<Tensor<Real>, kNumSubsets>& a_tilde, bool training,
                                  const ModelConfig& cfg) {
  ad::require(f_in.rank() == 4 && f_in.dim(3) == a_tilde[0].dim(0),
              [&] { return "spatial_unit_forward: input " + ad::to_string(f_in.shape()) + " does not match graph"; });
  const std::size_t n = f_in.dim(0), t = f_in.dim(2), v = f_in.dim(3);
  Tensor<Real> acc;
  for (std::size_t k = 0; k < kNumSubsets; ++k) {
    const auto m = subset_graph(f_in, p, a_tilde[k], k);
    const auto f = ad::conv2d(f_in, p.w[k]);
    const std::size_t cout = f.dim(1);
    const auto y = ad::matmul(ad::reshape(f, {n, cout * t, v}), m);
    acc = acc.defined() ? ad::add(acc, y) : y;
  }
  const std::size_t cout = p.w[0].dim(0);
  auto out = apply_bn(ad::reshape(acc, {n, cout, t, v}), p.bn, training, cfg);
  const auto res = p.residual_w.defined() ? apply_bn(ad::conv2d(f_in, p.residual_w), p.residual_bn, training, cfg) : f_in;
  return ad::relu(ad::add(out, res));
}

/// Dot-product attention over all T*V positions:
/// out = W(E G^T) + X with E = (Theta X)^T (Phi X) / P.
template <class Real>
Tensor<Real> temporal_nonlocal(const Tensor<Real>& x, const TemporalNonlocalParams<Real>& p) {
  ad::require(x.rank() == 4, "temporal_nonlocal: expected N x C x T x V");
  const std::size_t n = x.dim(0), t = x.dim(2), v = x.dim(3), pos = t * v;
  const auto th = ad::conv2d(x, p.theta);
  const std::size_t c2 = th.dim(1);
  const auto th_f = ad::reshape(th, {n, c2, pos});
  const auto ph_f = ad::reshape(ad::conv2d(x, p.phi), {n, c2, pos});
  const auto g_f = ad::reshape(ad::conv2d(x, p.g), {n, c2, pos});
  const auto e = ad::scale(ad::matmul(ad::transpose(th_f), ph_f), Real(1) / static_cast<Real>(pos));
  const auto y = ad::matmul(e, ad::transpose(g_f));  // N x P x C/2
  const auto y_map = ad::reshape(ad::transpose(y), {n, c2, t, v});
  return ad::add(ad::conv2d(y_map, p.w, p.w_bias), x);
}

/// X = BN(conv9x1(F_s)), followed by the temporal non-local block when
/// present. The layer adds its residual and applies ReLU.
template <class Real>
Tensor<Real> temporal_unit_forward(const Tensor<Real>& f_s, TemporalUnitParams<Real>& p, bool training,
                                   const ModelConfig& cfg) {
  auto x = apply_bn(ad::conv2d(f_s, p.conv, {}, p.stride, kTemporalKernel / 2), p.bn, training, cfg);
  if (p.nonlocal) x = temporal_nonlocal(x, *p.nonlocal);
  return x;
}

template <class Real>
Tensor<Real> layer_forward(const Tensor<Real>& x, LayerParams<Real>& layer,
                           const std::array<Tensor<Real>, kNumSubsets>& a_tilde, bool training, const ModelConfig& cfg) {
  const auto s = spatial_unit_forward(x, layer.spatial, a_tilde, training, cfg);
  const auto t = temporal_unit_forward(s, layer.temporal, training, cfg);
  const auto res = layer.residual_w.defined()
                       ? apply_bn(ad::conv2d(x, layer.residual_w, {}, layer.stride, 0), layer.residual_bn, training, cfg)
                       : x;
  return ad::relu(ad::add(t, res));
}

/// Per channel: flatten T x V -> FC -> BN -> FC -> scalar, with one parameter
/// set shared by every channel.
template <class Real>
Tensor<Real> downsample_forward(const Tensor<Real>& x, DownsamplerParams<Real>& p, bool training,
                                const ModelConfig& cfg) {
  ad::require(x.rank() == 4, "downsample_forward: expected N x C x T x V");
  const std::size_t n = x.dim(0), c = x.dim(1), tv = x.dim(2) * x.dim(3);
  ad::require(p.fc1.dim(1) == tv, [&] {
    return "downsample_forward: T*V = " + std::to_string(tv) + " but FC1 expects " + std::to_string(p.fc1.dim(1));
  });
  auto h = ad::fully_connected(ad::reshape(x, {n * c, tv}), p.fc1);
  h = apply_bn(h, p.bn, training, cfg);
  return ad::reshape(ad::fully_connected(h, p.fc2, p.fc2_bias), {n, c});
}

/// prediction = alpha * joints + beta * bones.
template <class Real>
Tensor<Real> two_stream_predict(const Tensor<Real>& joints, const Tensor<Real>& bones, const Tensor<Real>& alpha,
                                const Tensor<Real>& beta) {
  ad::require(joints.shape() == bones.shape(), "two_stream_predict: stream outputs differ in shape");
  return ad::add(ad::scalar_mul(alpha, joints), ad::scalar_mul(beta, bones));
}

// ---------------------------------------------------------------------------

template <class Real>
class StyleNet {
 public:
  struct Output {
    Tensor<Real> joints, bones, fused;
  };

  StyleNet(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(derive_seed(seed, {0x5714e7}));
    const auto graph = build_hand_graph(cfg_.hands);
    const auto subsets = normalized_subsets(graph, cfg_.sigma);
    const std::size_t v = cfg_.vertices();
    for (std::size_t k = 0; k < kNumSubsets; ++k) {
      std::vector<Real> vals(v * v);
      for (std::size_t i = 0; i < v; ++i)
        for (std::size_t j = 0; j < v; ++j)
          vals[i * v + j] = static_cast<Real>(subsets[k](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
      a_tilde_[k] = params_.add("graph.A" + std::to_string(k), Tensor<Real>::from_values({v, v}, std::move(vals)), false);
    }
    build_stream(joints_, "joints", rng);
    build_stream(bones_, "bones", rng);
    alpha_ = params_.add("fusion.alpha", Tensor<Real>::scalar(Real(1)), true, true);
    beta_ = params_.add("fusion.beta", Tensor<Real>::scalar(Real(1)), true, true);
  }

  const ModelConfig& config() const { return cfg_; }
  ParameterSet<Real>& parameters() { return params_; }
  const ParameterSet<Real>& parameters() const { return params_; }
  StreamParams<Real>& joints_stream() { return joints_; }
  StreamParams<Real>& bones_stream() { return bones_; }
  Tensor<Real>& alpha() { return alpha_; }
  Tensor<Real>& beta() { return beta_; }
  const std::array<Tensor<Real>, kNumSubsets>& a_tilde() const { return a_tilde_; }

  /// x: N x C x T x V -> logits N x num_classes.
  Tensor<Real> stream_forward(StreamParams<Real>& s, const Tensor<Real>& x, bool training, Rng& rng) {
    const std::size_t v = cfg_.vertices();
    ad::require(x.rank() == 4 && x.dim(1) == cfg_.in_channels && x.dim(2) == cfg_.frames && x.dim(3) == v,
                [&] { return "stream_forward: input " + ad::to_string(x.shape()) + " does not match configuration"; });
    const std::size_t n = x.dim(0), c = x.dim(1), t = x.dim(2);
    auto h = ad::permute(x, {0, 1, 3, 2});
    h = apply_bn(ad::reshape(h, {n, c * v, t}), s.input_bn, training, cfg_);
    h = ad::permute(ad::reshape(h, {n, c, v, t}), {0, 1, 3, 2});
    for (auto& layer : s.layers) h = layer_forward(h, layer, a_tilde_, training, cfg_);
    h = s.downsampler ? downsample_forward(h, *s.downsampler, training, cfg_) : ad::mean_trailing(h, 2);
    h = ad::dropout(h, cfg_.dropout, training, rng);
    return ad::fully_connected(h, s.fc_w, s.fc_b);
  }

  Output forward(const Tensor<Real>& joints_x, const Tensor<Real>& bones_x, bool training, Rng& rng) {
    Output o;
    o.joints = stream_forward(joints_, joints_x, training, rng);
    o.bones = stream_forward(bones_, bones_x, training, rng);
    o.fused = two_stream_predict(o.joints, o.bones, alpha_, beta_);
    return o;
  }

  std::size_t parameter_count() const { return params_.trainable_count(); }

  /// Parameters, batch-norm statistics and graph buffers, plus the
  /// architecture under "arch.*".
  Checkpoint state() const {
    Checkpoint ck = arch_entries();
    for (const auto& e : params_.entries()) {
      NamedArray a;
      a.name = e.name;
      for (auto d : e.tensor.shape()) a.dims.push_back(static_cast<std::uint32_t>(d));
      a.values.assign(e.tensor.values().begin(), e.tensor.values().end());
      ck.push_back(std::move(a));
    }
    return ck;
  }

  /// Loads every parameter and buffer; shapes and architecture must match.
  void load_state(const Checkpoint& ck) {
    for (const auto& expect : arch_entries()) {
      const auto& got = require_entry(ck, expect.name);
      if (got.values != expect.values) throw FormatError("checkpoint architecture differs at " + expect.name);
    }
    for (auto& e : params_.entries()) {
      const auto& a = require_entry(ck, e.name);
      std::vector<std::uint32_t> dims;
      for (auto d : e.tensor.shape()) dims.push_back(static_cast<std::uint32_t>(d));
      if (a.dims != dims) throw FormatError("checkpoint shape mismatch for " + e.name);
      auto& vals = e.tensor.values();
      for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = static_cast<Real>(a.values[i]);
    }
  }

  /// Re-draws every trainable tensor from N(0, scale^2); used by gradient
  /// checks so no block sits at an exactly-zero initialization.
  void randomize(std::uint64_t seed, double scale = 0.5) {
    Rng rng(seed);
    std::normal_distribution<double> nd(0.0, scale);
    for (auto& e : params_.entries()) {
      if (!e.trainable) continue;
      for (auto& v : e.tensor.values()) v = static_cast<Real>(nd(rng));
    }
  }

 private:
  Checkpoint arch_entries() const {
    auto scalar = [](std::string name, double v) { return NamedArray{std::move(name), {1}, {static_cast<float>(v)}}; };
    auto list = [](std::string name, const std::vector<std::size_t>& v) {
      NamedArray a{std::move(name), {static_cast<std::uint32_t>(v.size())}, {}};
      for (auto x : v) a.values.push_back(static_cast<float>(x));
      return a;
    };
    return {scalar("arch.in_channels", static_cast<double>(cfg_.in_channels)),
            scalar("arch.hands", cfg_.hands == Hands::one ? 1 : 2),
            scalar("arch.frames", static_cast<double>(cfg_.frames)),
            scalar("arch.num_classes", static_cast<double>(cfg_.num_classes)),
            list("arch.channels", cfg_.channels),
            list("arch.strides", cfg_.strides),
            scalar("arch.spatial_nonlocal_layer", static_cast<double>(cfg_.spatial_nonlocal_layer)),
            scalar("arch.temporal_nonlocal_layer", static_cast<double>(cfg_.temporal_nonlocal_layer)),
            scalar("arch.downsampler", cfg_.downsampler),
            scalar("arch.downsample_hidden", static_cast<double>(cfg_.downsample_hidden)),
            scalar("arch.learned_graph", cfg_.learned_graph),
            scalar("arch.similarity_graph", cfg_.similarity_graph),
            scalar("arch.dropout", cfg_.dropout),
            scalar("arch.sigma", cfg_.sigma)};
  }

  Tensor<Real> normal(ad::Shape shape, double stddev, Rng& rng) {
    std::normal_distribution<double> nd(0.0, stddev);
    std::vector<Real> vals(ad::numel(shape));
    for (auto& x : vals) x = static_cast<Real>(nd(rng));
    return Tensor<Real>::from_values(std::move(shape), std::move(vals));
  }

  BatchNormParams<Real> make_bn(const std::string& name, std::size_t ch) {
    BatchNormParams<Real> bn;
    bn.gamma = params_.add(name + ".gamma", Tensor<Real>::full({ch}, Real(1)), true, true);
    bn.beta = params_.add(name + ".beta", Tensor<Real>::zeros({ch}), true, true);
    bn.running_mean = params_.add(name + ".running_mean", Tensor<Real>::zeros({ch}), false);
    bn.running_var = params_.add(name + ".running_var", Tensor<Real>::full({ch}, Real(1)), false);
    return bn;
  }

  void build_stream(StreamParams<Real>& s, const std::string& prefix, Rng& rng) {
    const std::size_t v = cfg_.vertices();
    s.input_bn = make_bn(prefix + ".input_bn", cfg_.in_channels * v);
    std::size_t cin = cfg_.in_channels;
    for (std::size_t l = 0; l < cfg_.layers(); ++l) {
      const std::string ln = prefix + ".layer" + std::to_string(l + 1);
      LayerParams<Real> layer;
      layer.in_channels = cin;
      layer.out_channels = cfg_.channels[l];
      layer.stride = cfg_.strides[l];
      const std::size_t cout = layer.out_channels;
      auto& sp = layer.spatial;
      const std::size_t ce = similarity_width(cout);
      for (std::size_t k = 0; k < kNumSubsets; ++k) {
        const std::string kn = ln + ".spatial.k" + std::to_string(k);
        sp.w[k] = params_.add(kn + ".W", normal({cout, cin, 1, 1}, std::sqrt(2.0 / (3.0 * cin)), rng));
        if (cfg_.learned_graph) sp.b[k] = params_.add(kn + ".B", Tensor<Real>::zeros({v, v}));
        if (cfg_.similarity_graph) {
          sp.w1[k] = params_.add(kn + ".W1", normal({ce, cin, 1, 1}, std::sqrt(1.0 / cin), rng));
          sp.w2[k] = params_.add(kn + ".W2", normal({ce, cin, 1, 1}, std::sqrt(1.0 / cin), rng));
        }
      }
      if (cfg_.spatial_nonlocal_layer == l + 1) {
        const std::size_t d = spatial_embedding_width(v);
        for (std::size_t k = 0; k < kNumSubsets; ++k) {
          const std::string kn = ln + ".spatial.k" + std::to_string(k);
          SpatialNonlocalParams<Real> nl;
          nl.theta = params_.add(kn + ".theta", normal({d, v}, std::sqrt(1.0 / v), rng));
          nl.phi = params_.add(kn + ".phi", normal({d, v}, std::sqrt(1.0 / v), rng));
          nl.g = params_.add(kn + ".g", normal({d, v}, std::sqrt(1.0 / v), rng));
          nl.what = params_.add(kn + ".what", Tensor<Real>::zeros({v, d}));
          sp.nonlocal.push_back(nl);
        }
      }
      sp.bn = make_bn(ln + ".spatial.bn", cout);
      if (cin != cout) {
        sp.residual_w = params_.add(ln + ".spatial.residual.W", normal({cout, cin, 1, 1}, std::sqrt(2.0 / cin), rng));
        sp.residual_bn = make_bn(ln + ".spatial.residual.bn", cout);
      }
      auto& tp = layer.temporal;
      tp.stride = layer.stride;
      tp.conv = params_.add(ln + ".temporal.conv",
                            normal({cout, cout, kTemporalKernel, 1}, std::sqrt(2.0 / (cout * kTemporalKernel)), rng));
      tp.bn = make_bn(ln + ".temporal.bn", cout);
      if (cfg_.temporal_nonlocal_layer == l + 1) {
        const std::size_t c2 = std::max<std::size_t>(1, cout / 2);
        TemporalNonlocalParams<Real> nl;
        nl.theta = params_.add(ln + ".temporal.theta", normal({c2, cout, 1, 1}, std::sqrt(1.0 / cout), rng));
        nl.phi = params_.add(ln + ".temporal.phi", normal({c2, cout, 1, 1}, std::sqrt(1.0 / cout), rng));
        nl.g = params_.add(ln + ".temporal.g", normal({c2, cout, 1, 1}, std::sqrt(1.0 / cout), rng));
        nl.w = params_.add(ln + ".temporal.W", Tensor<Real>::zeros({cout, c2, 1, 1}));
        nl.w_bias = params_.add(ln + ".temporal.W_bias", Tensor<Real>::zeros({cout}));
        tp.nonlocal = nl;
      }
      if (cin != cout || layer.stride != 1) {
        layer.residual_w = params_.add(ln + ".residual.W", normal({cout, cin, 1, 1}, std::sqrt(2.0 / cin), rng));
        layer.residual_bn = make_bn(ln + ".residual.bn", cout);
      }
      s.layers.push_back(std::move(layer));
      cin = cout;
    }
    if (cfg_.downsampler) {
      const std::size_t tv = cfg_.final_frames() * v, h = cfg_.downsample_hidden;
      DownsamplerParams<Real> d;
      d.fc1 = params_.add(prefix + ".down.fc1", normal({h, tv}, std::sqrt(1.0 / tv), rng));
      d.bn = make_bn(prefix + ".down.bn", h);
      d.fc2 = params_.add(prefix + ".down.fc2", normal({1, h}, std::sqrt(1.0 / h), rng));
      d.fc2_bias = params_.add(prefix + ".down.fc2_bias", Tensor<Real>::zeros({1}));
      s.downsampler = d;
    }
    s.fc_w = params_.add(prefix + ".fc.W", normal({cfg_.num_classes, cin}, std::sqrt(1.0 / cin), rng));
    s.fc_b = params_.add(prefix + ".fc.b", Tensor<Real>::zeros({cfg_.num_classes}));
  }

  ModelConfig cfg_;
  ParameterSet<Real> params_;
  std::array<Tensor<Real>, kNumSubsets> a_tilde_;
  StreamParams<Real> joints_, bones_;
  Tensor<Real> alpha_, beta_;
};

/// Reconstructs the architecture stored under "arch.*" in a checkpoint.
inline ModelConfig config_from_checkpoint(const Checkpoint& ck) {
  auto scalar = [&](const std::string& n) { return static_cast<double>(require_entry(ck, n).values.at(0)); };
  auto list = [&](const std::string& n) {
    std::vector<std::size_t> out;
    for (float f : require_entry(ck, n).values) out.push_back(static_cast<std::size_t>(f));
    return out;
  };
  ModelConfig c;
  c.in_channels = static_cast<std::size_t>(scalar("arch.in_channels"));
  c.hands = scalar("arch.hands") == 1 ? Hands::one : Hands::two;
  c.frames = static_cast<std::size_t>(scalar("arch.frames"));
  c.num_classes = static_cast<std::size_t>(scalar("arch.num_classes"));
  c.channels = list("arch.channels");
  c.strides = list("arch.strides");
  c.spatial_nonlocal_layer = static_cast<std::size_t>(scalar("arch.spatial_nonlocal_layer"));
  c.temporal_nonlocal_layer = static_cast<std::size_t>(scalar("arch.temporal_nonlocal_layer"));
  c.downsampler = scalar("arch.downsampler") != 0;
  c.downsample_hidden = static_cast<std::size_t>(scalar("arch.downsample_hidden"));
  c.learned_graph = scalar("arch.learned_graph") != 0;
  c.similarity_graph = scalar("arch.similarity_graph") != 0;
  c.dropout = static_cast<float>(scalar("arch.dropout"));
  c.sigma = static_cast<float>(scalar("arch.sigma"));
  return c;
}

}  // namespace stylenet
