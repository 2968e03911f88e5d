#pragma once
// Ready-made gradient checks: every differentiable primitive on small random
// operands, and the whole two-stream network end to end.

#include "stylenet/autodiff.hpp"
#include "stylenet/model.hpp"

#include <functional>
#include <random>
#include <string>
#include <vector>

namespace stylenet {

struct NamedGradCheck {
  std::string name;
  ad::GradCheckResult result;
};

namespace detail {

inline ad::Tensor<double> uniform_tensor(ad::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = u(rng);
  return ad::Tensor<double>::from_values(std::move(shape), std::move(v));
}

}  // namespace detail

/// Each primitive's output is reduced with fixed random weights so every
/// output element contributes a distinct gradient.
inline std::vector<NamedGradCheck> primitive_grad_checks(std::uint64_t seed = 0, double eps = 1e-5) {
  using T = ad::Tensor<double>;
  Rng rng(seed);
  auto rnd = [&](ad::Shape s, double lo = -1.0, double hi = 1.0) { return detail::uniform_tensor(std::move(s), rng, lo, hi); };
  std::vector<NamedGradCheck> out;
  auto check = [&](std::string name, std::vector<T> inputs, std::function<T()> op) {
    const T probe = detail::uniform_tensor(op().shape(), rng);
    auto loss = [&] { return ad::sum(ad::mul(op(), probe)); };
    out.push_back({std::move(name), ad::grad_check(loss, std::move(inputs), eps)});
  };

  const T a = rnd({3, 4}), b = rnd({3, 4}), row = rnd({4}), s = rnd({1});
  check("add", {a, b}, [=] { return ad::add(a, b); });
  check("add_broadcast", {a, row}, [=] { return ad::add(a, row); });
  check("sub", {a, b}, [=] { return ad::sub(a, b); });
  check("mul", {a, b}, [=] { return ad::mul(a, b); });
  check("scale", {a}, [=] { return ad::scale(a, 1.7); });
  check("scalar_mul", {s, a}, [=] { return ad::scalar_mul(s, a); });
  check("relu", {a}, [=] { return ad::relu(a); });
  check("dropout", {a}, [=] {
    Rng r(seed + 1);
    return ad::dropout(a, 0.3, true, r);
  });
  check("sum", {a}, [=] { return ad::sum(a); });
  check("mean", {a}, [=] { return ad::mean(a); });

  const T x3 = rnd({2, 3, 4});
  check("reshape", {x3}, [=] { return ad::reshape(x3, {6, 4}); });
  check("permute", {x3}, [=] { return ad::permute(x3, {2, 0, 1}); });
  check("transpose", {x3}, [=] { return ad::transpose(x3); });
  check("mean_trailing", {x3}, [=] { return ad::mean_trailing(x3, 1); });
  check("softmax", {x3}, [=] { return ad::softmax(x3, 1); });

  const T ma = rnd({2, 3, 4}), mb = rnd({2, 4, 5}), mshared = rnd({4, 5});
  check("matmul_batched", {ma, mb}, [=] { return ad::matmul(ma, mb); });
  check("matmul_shared", {ma, mshared}, [=] { return ad::matmul(ma, mshared); });

  const T fx = rnd({5, 6}), fw = rnd({3, 6}), fb = rnd({3});
  check("fully_connected", {fx, fw, fb}, [=] { return ad::fully_connected(fx, fw, fb); });

  const T cx = rnd({2, 3, 7, 5}), cw = rnd({4, 3, 3, 1}), cb = rnd({4}), pw = rnd({4, 3, 1, 1});
  check("conv2d", {cx, cw, cb}, [=] { return ad::conv2d(cx, cw, cb, 2, 1); });
  check("conv2d_pointwise", {cx, pw, cb}, [=] { return ad::conv2d(cx, pw, cb); });

  const T bx = rnd({4, 3, 5}), gamma = rnd({3}, 0.5, 1.5), beta = rnd({3});
  T rm = T::zeros({3}), rv = T::full({3}, 1.0);
  check("batchnorm", {bx, gamma, beta}, [=]() mutable { return ad::batchnorm(bx, gamma, beta, rm, rv, true); });

  const T logits = rnd({4, 5}, -3.0, 3.0);
  out.push_back({"softmax_cross_entropy",
                 ad::grad_check([&] { return ad::softmax_cross_entropy(logits, {0, 4, 2, 2}); }, {logits}, eps)});
  return out;
}

/// Cross-entropy of the fused prediction for two random clips, checked
/// against central differences over every `stride`-th trainable coordinate.
/// The streams only meet at the fusion, so probes of one stream's weights
/// reuse the other stream's logits instead of recomputing them.
inline ad::GradCheckResult network_grad_check(ModelConfig cfg, std::uint64_t seed = 0, std::size_t stride = 1,
                                              double eps = 1e-5) {
  using T = ad::Tensor<double>;
  StyleNet<double> model(cfg, seed);
  model.randomize(derive_seed(seed, {1}), 0.5);
  Rng rng = make_rng(seed, {2});
  const std::size_t v = cfg.vertices();
  const auto joints = detail::uniform_tensor({2, cfg.in_channels, cfg.frames, v}, rng);
  const auto bones = detail::uniform_tensor({2, cfg.in_channels, cfg.frames, v}, rng);
  const std::vector<std::size_t> labels{0, cfg.num_classes - 1};

  std::vector<T> joint_params, bone_params, fusion_params;
  for (auto& e : model.parameters().entries()) {
    if (!e.trainable) continue;
    if (e.name.starts_with("joints.")) joint_params.push_back(e.tensor);
    else if (e.name.starts_with("bones.")) bone_params.push_back(e.tensor);
    else fusion_params.push_back(e.tensor);
  }

  // Dropout draws continue from one stream into the next; keep the generator
  // state between them so each stream sees the same masks as a full forward.
  const Rng drop_start = make_rng(seed, {3});
  Rng drop_mid = drop_start;
  T joint_logits, bone_logits;
  {
    ad::NoGradGuard ng;
    joint_logits = model.stream_forward(model.joints_stream(), joints, true, drop_mid);
    Rng d = drop_mid;
    bone_logits = model.stream_forward(model.bones_stream(), bones, true, d);
  }
  auto loss = [&](const T& j, const T& b) {
    return ad::softmax_cross_entropy(two_stream_predict(j, b, model.alpha(), model.beta()), labels);
  };

  auto res = ad::grad_check(
      [&] {
        Rng d = drop_start;
        return loss(model.stream_forward(model.joints_stream(), joints, true, d), bone_logits);
      },
      joint_params, eps, stride);
  res.merge(ad::grad_check(
      [&] {
        Rng d = drop_mid;
        return loss(joint_logits, model.stream_forward(model.bones_stream(), bones, true, d));
      },
      bone_params, eps, stride));
  res.merge(ad::grad_check([&] { return loss(joint_logits, bone_logits); }, fusion_params, eps, stride));
  return res;
}

}  // namespace stylenet
