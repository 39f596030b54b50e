#pragma once

#include <bdry/network.hpp>
#include <bdry/rng.hpp>
#include <bdry/tensor.hpp>

#include <cmath>
#include <vector>

namespace fixtures {

using namespace bdry;

/// Two classes with f1 = w.x + b and f0 = -(w.x + b): the decision boundary
/// is the hyperplane w.x + b = 0 and grad f1 = w everywhere.
inline Network linear_binary(const std::vector<float>& w, float b) {
  const auto d = static_cast<std::uint32_t>(w.size());
  std::vector<float> weights;
  for (float v : w) weights.push_back(-v);
  weights.insert(weights.end(), w.begin(), w.end());
  return Network({make_dense(d, 2, weights, {-b, b})});
}

/// Hand-checkable 2-2-2 ReLU net.
///   h = relu([[1, -1], [0.5, 2]] x + [0, -1])
///   f = [[1, 0.5], [-1, 1]] h + [0.25, 0]
inline Network net_222() {
  return Network({make_dense(2, 2, {1.0f, -1.0f, 0.5f, 2.0f}, {0.0f, -1.0f}), Relu{},
                  make_dense(2, 2, {1.0f, 0.5f, -1.0f, 1.0f}, {0.25f, 0.0f})});
}

/// Manual evaluation of net_222 used as the forward oracle.
inline std::vector<double> net_222_oracle(double x0, double x1) {
  const double h0 = std::max(0.0, 1.0 * x0 - 1.0 * x1);
  const double h1 = std::max(0.0, 0.5 * x0 + 2.0 * x1 - 1.0);
  return {1.0 * h0 + 0.5 * h1 + 0.25, -1.0 * h0 + 1.0 * h1};
}

/// 2-h-2 ReLU net with He-uniform weights and uniform biases, so the
/// activation facets cross the [-2, 2]^2 box.
inline Network random_2h2(std::uint32_t hidden, std::uint64_t seed) {
  CounterRng rng(seed);
  Dense l1 = random_dense(2, hidden, rng);
  for (float& b : l1.bias) b = static_cast<float>(rng.uniform(-1.0, 1.0));
  Dense l2 = random_dense(hidden, 2, rng);
  for (float& b : l2.bias) b = static_cast<float>(rng.uniform(-0.5, 0.5));
  return Network({l1, Relu{}, l2});
}

/// The 2-8-2 fixture used by the boundary and geometry suites.
inline Network net_282() { return random_2h2(8, 1); }

/// min(x, y) = (x + 10) - relu(x - y) - 10 for x > -10, as a one-output
/// net whose first unit never switches off on the unit square.
inline Network min_net() {
  return Network({make_dense(2, 2, {1.0f, 0.0f, 1.0f, -1.0f}, {10.0f, 0.0f}), Relu{},
                  make_dense(2, 1, {1.0f, -1.0f}, {-10.0f})});
}

/// f0 = relu(x + y - 1), f1 = 0.5: symmetric in (x, y).
inline Network symmetric_relu() {
  return Network({make_dense(2, 1, {1.0f, 1.0f}, {-1.0f}), Relu{}, make_dense(1, 2, {1.0f, 0.0f}, {0.0f, 0.5f})});
}

/// Random net symmetric under swapping its two inputs: hidden units come in
/// mirrored pairs (a, b) / (b, a) with shared bias and output weights.
inline Network mirrored_pair_net(std::uint32_t pairs, std::uint64_t seed) {
  CounterRng rng(seed);
  Dense l1{2, 2 * pairs, std::vector<float>(4 * pairs), std::vector<float>(2 * pairs)};
  Dense l2{2 * pairs, 2, std::vector<float>(4 * pairs), {0.0f, 0.0f}};
  for (std::uint32_t k = 0; k < pairs; ++k) {
    const auto a = static_cast<float>(rng.uniform(-1.5, 1.5));
    const auto b = static_cast<float>(rng.uniform(-1.5, 1.5));
    const auto bias = static_cast<float>(rng.uniform(-1.0, 1.0));
    l1.w(2 * k, 0) = a;
    l1.w(2 * k, 1) = b;
    l1.w(2 * k + 1, 0) = b;
    l1.w(2 * k + 1, 1) = a;
    l1.bias[2 * k] = bias;
    l1.bias[2 * k + 1] = bias;
    for (std::uint32_t c = 0; c < 2; ++c) {
      const auto v = static_cast<float>(rng.uniform(-1.0, 1.0));
      l2.w(c, 2 * k) = v;
      l2.w(c, 2 * k + 1) = v;
    }
  }
  l2.bias[1] = static_cast<float>(rng.uniform(-0.5, 0.5));
  return Network({l1, Relu{}, l2});
}

inline Tensor random_point(CounterRng& rng, std::size_t d, double lo, double hi) {
  Tensor x(Shape{d});
  for (double& v : x.values()) v = rng.uniform(lo, hi);
  return x;
}

/// Central finite-difference gradient of f_c.
inline Tensor finite_difference_gradient(const Network& net, const Tensor& x, std::size_t c, double h = 1e-3) {
  Tensor g = zeros_like(x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor a = x;
    Tensor b = x;
    a[i] += h;
    b[i] -= h;
    g[i] = (forward(net, a)[c] - forward(net, b)[c]) / (2.0 * h);
  }
  return g;
}

/// Smallest ReLU pre-activation magnitude over the network at x; finite
/// differences are only trusted when this exceeds the step.
inline double min_preactivation(const Network& net, const Tensor& x) {
  const ForwardTrace t = forward_trace(net, x);
  double m = INFINITY;
  for (std::size_t k = 0; k < net.layers().size(); ++k) {
    if (!std::holds_alternative<Relu>(net.layers()[k])) continue;
    for (double v : t.values[k]) m = std::min(m, std::abs(v));
  }
  return m;
}

}  // namespace fixtures
