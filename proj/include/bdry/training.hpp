#pragma once

#include <bdry/boundary_search.hpp>
#include <bdry/datasets.hpp>
#include <bdry/errors.hpp>
#include <bdry/network.hpp>
#include <bdry/rng.hpp>

#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace bdry {

struct TrainConfig {
  /// One of linear, onelayer, mlp16, conv8.
  std::string arch = "mlp16";
  std::size_t epochs = 200;
  double lr = 0.05;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  /// When set, every batch is replaced by its PGD-10 counterpart at this radius.
  std::optional<double> robust_eps;
  Norm norm = Norm::l2;
  std::uint64_t seed = 0;
};

/// Seeded initial network for an architecture and data shape.
///  - linear:   d -> k
///  - onelayer: d -> 32 -> relu -> k
///  - mlp16:    d -> 16 -> relu -> 16 -> relu -> k
///  - conv8:    conv 3x3 (8 channels, pad 1) -> relu -> flatten -> k
inline Network init_network(const std::string& arch, const Shape& input_shape, std::size_t num_classes,
                            std::uint64_t seed) {
  CounterRng rng(seed);
  const auto d = static_cast<std::uint32_t>(shape_size(input_shape));
  const auto k = static_cast<std::uint32_t>(num_classes);
  std::vector<Layer> layers;
  if (arch == "conv8") {
    if (input_shape.size() != 3) throw PreconditionError("conv8 needs [C,H,W] inputs");
    const auto c = static_cast<std::uint32_t>(input_shape[0]);
    layers.emplace_back(random_conv(c, 8, 3, 1, 1, rng));
    layers.emplace_back(Relu{});
    layers.emplace_back(Flatten{});
    layers.emplace_back(random_dense(static_cast<std::uint32_t>(8 * input_shape[1] * input_shape[2]), k, rng));
    return Network(std::move(layers), input_shape);
  }
  if (input_shape.size() > 1) layers.emplace_back(Flatten{});
  if (arch == "linear") {
    layers.emplace_back(random_dense(d, k, rng));
  } else if (arch == "onelayer") {
    layers.emplace_back(random_dense(d, 32, rng));
    layers.emplace_back(Relu{});
    layers.emplace_back(random_dense(32, k, rng));
  } else if (arch == "mlp16") {
    layers.emplace_back(random_dense(d, 16, rng));
    layers.emplace_back(Relu{});
    layers.emplace_back(random_dense(16, 16, rng));
    layers.emplace_back(Relu{});
    layers.emplace_back(random_dense(16, k, rng));
  } else {
    throw PreconditionError("unknown architecture \"" + arch + "\"");
  }
  return Network(std::move(layers), input_shape);
}

/// Full PGD maximisation of the cross-entropy for `steps` iterations with
/// step 2 * eps / steps; no early stop, used for adversarial training.
inline Tensor pgd_maximize(const Network& net, const Tensor& x, std::size_t label, double eps, std::size_t steps,
                           Norm norm, double lo, double hi) {
  Tensor cur = x;
  const double alpha = 2.0 * eps / static_cast<double>(std::max<std::size_t>(steps, 1));
  for (std::size_t s = 0; s < steps; ++s) {
    auto lg = detail::loss_and_grad(net, cur, label, cross_entropy_loss);
    if (!detail::ascent_direction(lg.grad, norm)) break;
    for (std::size_t i = 0; i < cur.size(); ++i) cur[i] += alpha * lg.grad[i];
    detail::project(cur, x, eps, norm, lo, hi);
  }
  return cur;
}

inline double accuracy(const Network& net, const ToyDataset& ds) {
  if (ds.size() == 0) return 0.0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) ok += predict(net, ds.inputs[i]) == ds.labels[i];
  return static_cast<double>(ok) / static_cast<double>(ds.size());
}

/// Minibatch SGD with momentum on the mean cross-entropy. Parameters are
/// kept in double during training and stored as float after every step.
inline Network train_toy(const ToyDataset& ds, const TrainConfig& cfg) {
  if (ds.size() == 0) throw PreconditionError("cannot train on an empty dataset");
  if (cfg.batch_size == 0) throw PreconditionError("batch size must be >= 1");
  Network net = init_network(cfg.arch, ds.input_shape, ds.num_classes, cfg.seed);
  if (cfg.epochs == 0) return net;

  std::vector<Layer> layers = net.layers();
  std::vector<std::vector<double>> w;
  std::vector<std::vector<double>> b;
  for (const Layer& layer : layers) {
    if (const auto* d = std::get_if<Dense>(&layer)) {
      w.emplace_back(d->weights.begin(), d->weights.end());
      b.emplace_back(d->bias.begin(), d->bias.end());
    } else if (const auto* c = std::get_if<Conv2d>(&layer)) {
      w.emplace_back(c->weights.begin(), c->weights.end());
      b.emplace_back(c->bias.begin(), c->bias.end());
    } else {
      w.emplace_back();
      b.emplace_back();
    }
  }
  std::vector<std::vector<double>> vw(w.size());
  std::vector<std::vector<double>> vb(b.size());
  for (std::size_t k = 0; k < w.size(); ++k) {
    vw[k].assign(w[k].size(), 0.0);
    vb[k].assign(b[k].size(), 0.0);
  }

  auto store = [&] {
    for (std::size_t k = 0; k < layers.size(); ++k) {
      auto copy = [&](std::vector<float>& dw, std::vector<float>& db) {
        for (std::size_t i = 0; i < dw.size(); ++i) dw[i] = static_cast<float>(w[k][i]);
        for (std::size_t i = 0; i < db.size(); ++i) db[i] = static_cast<float>(b[k][i]);
      };
      if (auto* d = std::get_if<Dense>(&layers[k])) copy(d->weights, d->bias);
      else if (auto* c = std::get_if<Conv2d>(&layers[k])) copy(c->weights, c->bias);
    }
    net = Network(layers, ds.input_shape);
  };

  CounterRng shuffle_rng(cfg.seed ^ 0xa0761d6478bd642fULL);
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      ParameterGradients grads(net);
      double loss = 0.0;
      for (std::size_t j = start; j < end; ++j) {
        const std::size_t idx = order[j];
        Tensor x = ds.inputs[idx];
        if (cfg.robust_eps) {
          x = pgd_maximize(net, x, ds.labels[idx], *cfg.robust_eps, 10, cfg.norm, ds.domain_lo, ds.domain_hi);
        }
        ForwardTrace trace = forward_trace(net, x);
        LossValue l = cross_entropy_loss(trace.scores(), ds.labels[idx]);
        loss += l.value;
        backward(net, trace, l.grad, &grads);
      }
      if (!std::isfinite(loss)) throw TrainingError("training loss diverged at epoch " + std::to_string(epoch));
      const double scale = 1.0 / static_cast<double>(end - start);
      for (std::size_t k = 0; k < w.size(); ++k) {
        for (std::size_t i = 0; i < w[k].size(); ++i) {
          vw[k][i] = cfg.momentum * vw[k][i] + scale * grads.weights[k][i];
          w[k][i] -= cfg.lr * vw[k][i];
        }
        for (std::size_t i = 0; i < b[k].size(); ++i) {
          vb[k][i] = cfg.momentum * vb[k][i] + scale * grads.bias[k][i];
          b[k][i] -= cfg.lr * vb[k][i];
        }
      }
      store();
    }
  }
  return net;
}

}  // namespace bdry
