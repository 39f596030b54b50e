#pragma once

#include <bdry/boundary_search.hpp>
#include <bdry/config.hpp>
#include <bdry/errors.hpp>
#include <bdry/network.hpp>
#include <bdry/rng.hpp>
#include <bdry/tensor.hpp>

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace bdry {

/// Per-feature attribution scores plus how they were produced.
struct AttributionMap {
  Tensor values;
  std::string method;
  std::size_t target_class = 0;
  std::optional<Tensor> baseline;
  KeyValues meta;
};

struct IGConfig {
  /// Number of trapezoid nodes between baseline and input, endpoints included.
  std::size_t steps = 20;
};

namespace detail {

inline std::size_t target_or_predicted(const Network& net, const Tensor& x, std::optional<std::size_t> c) {
  const std::size_t target = c.value_or(predict(net, x));
  if (target >= net.num_classes()) throw InputError("target class out of range");
  return target;
}

}  // namespace detail

/// Gradient of the class score at x.
inline AttributionMap saliency_map(const Network& net, const Tensor& x,
                                   std::optional<std::size_t> c = std::nullopt) {
  AttributionMap m;
  m.target_class = detail::target_or_predicted(net, x, c);
  m.values = input_gradient(net, x, m.target_class);
  m.method = "sm";
  return m;
}

inline AttributionMap grad_times_input(const Network& net, const Tensor& x,
                                       std::optional<std::size_t> c = std::nullopt) {
  AttributionMap m = saliency_map(net, x, c);
  m.values = hadamard(m.values, x);
  m.method = "gti";
  return m;
}

/// Integrated gradients along the straight path from x_b to x, with the
/// path integral approximated by the trapezoid rule over cfg.steps nodes.
inline AttributionMap integrated_gradients(const Network& net, const Tensor& x, const Tensor& x_b,
                                           std::optional<std::size_t> c = std::nullopt,
                                           IGConfig cfg = {}) {
  x.check_same(x_b);
  if (cfg.steps < 2) throw PreconditionError("trapezoid integration needs at least 2 steps");
  AttributionMap m;
  m.target_class = detail::target_or_predicted(net, x, c);
  const double h = 1.0 / static_cast<double>(cfg.steps - 1);
  Tensor avg = zeros_like(x);
  for (std::size_t k = 0; k < cfg.steps; ++k) {
    const double alpha = static_cast<double>(k) * h;
    const double weight = (k == 0 || k + 1 == cfg.steps) ? 0.5 * h : h;
    const Tensor g = input_gradient(net, lerp(x_b, x, alpha), m.target_class);
    for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += weight * g[i];
  }
  m.values = hadamard(x - x_b, avg);
  m.method = "ig";
  m.baseline = x_b;
  m.meta.set("steps", std::to_string(cfg.steps));
  return m;
}

/// Mean input gradient over n Gaussian perturbations of x. Perturbation k
/// uses normals [k*d, (k+1)*d) of the seeded sampler.
inline AttributionMap smooth_gradient(const Network& net, const Tensor& x, std::optional<std::size_t> c,
                                      double sigma, std::size_t n, std::uint64_t seed) {
  if (sigma < 0.0) throw PreconditionError("sigma must be >= 0");
  if (n == 0) throw PreconditionError("sample count must be >= 1");
  AttributionMap m;
  m.target_class = detail::target_or_predicted(net, x, c);
  if (sigma == 0.0) {
    m.values = input_gradient(net, x, m.target_class);
  } else {
    GaussianSampler sampler(seed);
    Tensor sum = zeros_like(x);
    for (std::size_t k = 0; k < n; ++k) sum += input_gradient(net, add_gaussian_noise(x, sigma, sampler), m.target_class);
    m.values = sum * (1.0 / static_cast<double>(n));
  }
  m.method = "sg";
  m.meta.set("sigma", format_double(sigma));
  m.meta.set("samples", std::to_string(n));
  m.meta.set("seed", std::to_string(seed));
  return m;
}

namespace detail {

inline void record_boundary(AttributionMap& m, const BoundaryResult& b) {
  m.meta.set("boundary_distance", format_double(b.distance));
  m.meta.set("boundary_method", b.method);
}

}  // namespace detail

/// Gradient of the predicted class score at the closest adversarial example.
inline AttributionMap boundary_saliency_map(const Network& net, const Tensor& x, const BoundaryResult& boundary) {
  if (!boundary.success) throw NoBoundaryError("boundary search did not succeed");
  AttributionMap m;
  m.target_class = predict(net, x);
  m.values = input_gradient(net, boundary.adversarial, m.target_class);
  m.method = "bsm";
  m.baseline = boundary.adversarial;
  detail::record_boundary(m, boundary);
  return m;
}

/// Integrated gradients whose baseline is the closest adversarial example.
inline AttributionMap boundary_integrated_gradients(const Network& net, const Tensor& x,
                                                    const BoundaryResult& boundary, IGConfig cfg = {}) {
  if (!boundary.success) throw NoBoundaryError("boundary search did not succeed");
  AttributionMap m = integrated_gradients(net, x, boundary.adversarial, predict(net, x), cfg);
  m.method = "big";
  detail::record_boundary(m, boundary);
  return m;
}

struct AgiConfig {
  /// l-infinity radius of the adversarial walk around x.
  double eps = 0.5;
  /// Number of alternative classes walked towards (highest scores first).
  std::size_t topk = 10;
  std::size_t max_iters = 15;
  /// Per-iteration sign step; unset means 2 * eps / max_iters.
  std::optional<double> step_size;
  std::uint64_t seed = 0;
  double clip_lo = -std::numeric_limits<double>::infinity();
  double clip_hi = std::numeric_limits<double>::infinity();
};

/// Adversarial gradient integration. For each of the topk highest-scoring
/// other classes t, walks x_{k+1} = proj(x_k + step * sign(grad f_t - grad f_c))
/// until t is predicted or max_iters is spent, accumulating
/// -grad f_c(x_k) * (x_{k+1} - x_k) along the walk. Targets are chosen
/// deterministically; the seed is only recorded.
inline AttributionMap agi(const Network& net, const Tensor& x, const AgiConfig& cfg,
                          std::optional<std::size_t> c = std::nullopt) {
  if (cfg.topk >= net.num_classes()) throw PreconditionError("topk must be below the class count");
  AttributionMap m;
  m.target_class = detail::target_or_predicted(net, x, c);
  m.method = "agi";
  m.values = zeros_like(x);
  const double step = cfg.step_size ? *cfg.step_size : 2.0 * cfg.eps / std::max<std::size_t>(cfg.max_iters, 1);

  const Tensor scores = forward(net, x);
  std::vector<std::size_t> targets;
  for (std::size_t j = 0; j < net.num_classes(); ++j) {
    if (j != m.target_class) targets.push_back(j);
  }
  std::stable_sort(targets.begin(), targets.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  targets.resize(cfg.topk);

  std::vector<double> cot(net.num_classes(), 0.0);
  for (std::size_t t : targets) {
    Tensor cur = x;
    bool reached = false;
    for (std::size_t k = 0; k < cfg.max_iters; ++k) {
      ForwardTrace trace = forward_trace(net, cur);
      if (argmax(trace.scores()) == t) {
        reached = true;
        break;
      }
      std::fill(cot.begin(), cot.end(), 0.0);
      cot[m.target_class] = 1.0;
      const std::vector<double> grad_c = backward(net, trace, cot);
      cot[m.target_class] = -1.0;
      cot[t] = 1.0;
      const std::vector<double> dir = backward(net, trace, cot);
      Tensor next = cur;
      for (std::size_t i = 0; i < next.size(); ++i) {
        const double s = dir[i] > 0.0 ? 1.0 : (dir[i] < 0.0 ? -1.0 : 0.0);
        next[i] = std::clamp(cur[i] + step * s, x[i] - cfg.eps, x[i] + cfg.eps);
        next[i] = std::clamp(next[i], cfg.clip_lo, cfg.clip_hi);
      }
      for (std::size_t i = 0; i < next.size(); ++i) m.values[i] -= grad_c[i] * (next[i] - cur[i]);
      cur = std::move(next);
    }
    if (!reached) reached = predict(net, cur) == t;
    m.meta.set("target_" + std::to_string(t), reached ? "reached" : "not_reached");
  }
  m.meta.set("eps", format_double(cfg.eps));
  m.meta.set("topk", std::to_string(cfg.topk));
  m.meta.set("max_iters", std::to_string(cfg.max_iters));
  m.meta.set("step_size", format_double(step));
  m.meta.set("seed", std::to_string(cfg.seed));
  return m;
}

}  // namespace bdry
