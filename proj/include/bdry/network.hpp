#pragma once

#include <bdry/errors.hpp>
#include <bdry/rng.hpp>
#include <bdry/tensor.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace bdry {

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

/// Fully connected layer, weights stored out x in row-major.
struct Dense {
  std::uint32_t in = 0;
  std::uint32_t out = 0;
  std::vector<float> weights;
  std::vector<float> bias;

  float& w(std::size_t o, std::size_t i) { return weights[o * in + i]; }
  float w(std::size_t o, std::size_t i) const { return weights[o * in + i]; }

  friend bool operator==(const Dense&, const Dense&) = default;
};

struct Relu {
  friend bool operator==(const Relu&, const Relu&) = default;
};

/// softplus_beta(u) = log(1 + exp(beta * u)) / beta.
struct Softplus {
  float beta = 1.0f;
  friend bool operator==(const Softplus&, const Softplus&) = default;
};

/// 2-D convolution over CHW inputs with zero padding and unit dilation.
/// Kernels stored out_ch x in_ch x kh x kw.
struct Conv2d {
  std::uint32_t in_ch = 0;
  std::uint32_t out_ch = 0;
  std::uint32_t kh = 0;
  std::uint32_t kw = 0;
  std::uint32_t stride = 1;
  std::uint32_t pad = 0;
  std::vector<float> weights;
  std::vector<float> bias;

  friend bool operator==(const Conv2d&, const Conv2d&) = default;
};

struct Flatten {
  friend bool operator==(const Flatten&, const Flatten&) = default;
};

using Layer = std::variant<Dense, Relu, Softplus, Conv2d, Flatten>;

inline const char* layer_name(const Layer& layer) {
  static constexpr const char* kNames[] = {"dense", "relu", "softplus", "conv2d", "flatten"};
  return kNames[layer.index()];
}

/// Output shape of one layer for a given input shape; throws InputError when
/// the shapes do not compose.
inline Shape layer_output_shape(const Layer& layer, const Shape& in) {
  return std::visit(
      [&](const auto& l) -> Shape {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, Dense>) {
          if (in.size() != 1 || in[0] != l.in) {
            throw InputError("dense layer expects [" + std::to_string(l.in) + "], got " +
                             shape_string(in));
          }
          return Shape{l.out};
        } else if constexpr (std::is_same_v<L, Conv2d>) {
          if (in.size() != 3 || in[0] != l.in_ch) {
            throw InputError("conv2d layer expects [" + std::to_string(l.in_ch) + ",H,W], got " +
                             shape_string(in));
          }
          const std::size_t h = in[1] + 2 * l.pad;
          const std::size_t w = in[2] + 2 * l.pad;
          if (h < l.kh || w < l.kw) throw InputError("conv2d kernel larger than padded input");
          return Shape{l.out_ch, (h - l.kh) / l.stride + 1, (w - l.kw) / l.stride + 1};
        } else if constexpr (std::is_same_v<L, Flatten>) {
          return Shape{shape_size(in)};
        } else {
          return in;
        }
      },
      layer);
}

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

/// Feed-forward stack of layers. Immutable once built; every evaluation
/// function below is a pure function of (network, input).
class Network {
 public:
  Network() = default;

  /// Validates parameter sizes and the layer chain. `input_shape` may be
  /// omitted when the first layer is dense (it is then `[in]`).
  explicit Network(std::vector<Layer> layers, std::optional<Shape> input_shape = std::nullopt)
      : layers_(std::move(layers)) {
    if (layers_.empty()) throw InputError("network has no layers");
    for (const Layer& layer : layers_) validate_layer(layer);
    if (!input_shape) {
      if (const auto* d = std::get_if<Dense>(&layers_.front())) input_shape = Shape{d->in};
    }
    input_shape_ = std::move(input_shape);
    if (input_shape_) {
      Shape s = *input_shape_;
      for (const Layer& layer : layers_) s = layer_output_shape(layer, s);
      if (s.size() != 1) throw InputError("network output must be a vector, got " + shape_string(s));
      num_classes_ = s[0];
    } else {
      num_classes_ = classes_from_layers();
    }
    if (num_classes_ == 0) throw InputError("network must produce at least one score");
  }

  const std::vector<Layer>& layers() const noexcept { return layers_; }
  const std::optional<Shape>& input_shape() const noexcept { return input_shape_; }
  std::size_t num_classes() const noexcept { return num_classes_; }

  /// Total number of ReLU units for a given input shape.
  std::size_t relu_units(const Shape& in) const {
    std::size_t n = 0;
    Shape s = in;
    for (const Layer& layer : layers_) {
      if (std::holds_alternative<Relu>(layer)) n += shape_size(s);
      s = layer_output_shape(layer, s);
    }
    return n;
  }

  /// Shape check for an input; throws InputError on mismatch.
  void check_input(const Shape& in) const {
    if (input_shape_ && *input_shape_ != in) {
      throw InputError("input shape " + shape_string(in) + " does not match network input " +
                       shape_string(*input_shape_));
    }
    Shape s = in;
    for (const Layer& layer : layers_) s = layer_output_shape(layer, s);
    if (s.size() != 1 || s[0] != num_classes_) {
      throw InputError("network output shape " + shape_string(s) + " is not [" +
                       std::to_string(num_classes_) + "]");
    }
  }

  friend bool operator==(const Network& a, const Network& b) { return a.layers_ == b.layers_; }

 private:
  static void validate_layer(const Layer& layer) {
    std::visit(
        [](const auto& l) {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, Dense>) {
            if (l.in == 0 || l.out == 0) throw InputError("dense layer with zero size");
            if (l.weights.size() != std::size_t{l.in} * l.out || l.bias.size() != l.out) {
              throw InputError("dense parameter count does not match declared " +
                               std::to_string(l.out) + "x" + std::to_string(l.in));
            }
          } else if constexpr (std::is_same_v<L, Conv2d>) {
            if (l.in_ch == 0 || l.out_ch == 0 || l.kh == 0 || l.kw == 0 || l.stride == 0) {
              throw InputError("conv2d layer with zero size or stride");
            }
            if (l.weights.size() != std::size_t{l.out_ch} * l.in_ch * l.kh * l.kw ||
                l.bias.size() != l.out_ch) {
              throw InputError("conv2d parameter count does not match channel declarations");
            }
          } else if constexpr (std::is_same_v<L, Softplus>) {
            if (!(l.beta > 0.0f)) throw InputError("softplus beta must be positive");
          }
        },
        layer);
  }

  std::size_t classes_from_layers() const {
    // Without an input shape, dense/conv chains are checked pairwise and the
    // class count is read from the last dense layer.
    std::optional<std::size_t> width;
    std::optional<std::size_t> channels;
    std::size_t classes = 0;
    for (const Layer& layer : layers_) {
      if (const auto* d = std::get_if<Dense>(&layer)) {
        if (width && *width != d->in) throw InputError("consecutive dense layers do not compose");
        width = d->out;
        channels.reset();
        classes = d->out;
      } else if (const auto* c = std::get_if<Conv2d>(&layer)) {
        if (channels && *channels != c->in_ch) throw InputError("conv channel counts do not compose");
        if (width) throw InputError("conv2d after a vector-valued layer");
        channels = c->out_ch;
        classes = 0;
      } else if (std::holds_alternative<Flatten>(layer)) {
        width.reset();
        channels.reset();
      }
    }
    if (classes == 0) throw InputError("network must end in a dense layer when input shape is unknown");
    return classes;
  }

  std::vector<Layer> layers_;
  std::optional<Shape> input_shape_;
  std::size_t num_classes_ = 0;
};

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Every intermediate value of one forward pass: `values[k]` is the input of
/// layer k, `values.back()` the scores.
struct ForwardTrace {
  std::vector<std::vector<double>> values;
  std::vector<Shape> shapes;

  const std::vector<double>& scores() const { return values.back(); }
};

namespace detail {

inline double softplus(double u, double beta) {
  const double z = beta * u;
  if (z > 30.0) return u;
  return std::log1p(std::exp(z)) / beta;
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline void dense_forward(const Dense& l, const std::vector<double>& in, std::vector<double>& out) {
  out.assign(l.out, 0.0);
  for (std::size_t o = 0; o < l.out; ++o) {
    double acc = l.bias[o];
    const float* row = l.weights.data() + o * l.in;
    for (std::size_t i = 0; i < l.in; ++i) acc += static_cast<double>(row[i]) * in[i];
    out[o] = acc;
  }
}

inline void conv_forward(const Conv2d& l, const Shape& in_shape, const Shape& out_shape,
                         const std::vector<double>& in, std::vector<double>& out) {
  const std::size_t ih = in_shape[1], iw = in_shape[2];
  const std::size_t oh = out_shape[1], ow = out_shape[2];
  out.assign(shape_size(out_shape), 0.0);
  for (std::size_t oc = 0; oc < l.out_ch; ++oc) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        double acc = l.bias[oc];
        for (std::size_t ic = 0; ic < l.in_ch; ++ic) {
          for (std::size_t ky = 0; ky < l.kh; ++ky) {
            const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y * l.stride + ky) - l.pad;
            if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(ih)) continue;
            for (std::size_t kx = 0; kx < l.kw; ++kx) {
              const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x * l.stride + kx) - l.pad;
              if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(iw)) continue;
              const float wv = l.weights[((oc * l.in_ch + ic) * l.kh + ky) * l.kw + kx];
              acc += static_cast<double>(wv) * in[(ic * ih + sy) * iw + sx];
            }
          }
        }
        out[(oc * oh + y) * ow + x] = acc;
      }
    }
  }
}

}  // namespace detail

/// Forward pass keeping every intermediate value.
inline ForwardTrace forward_trace(const Network& net, const Tensor& x) {
  net.check_input(x.shape());
  ForwardTrace trace;
  trace.values.reserve(net.layers().size() + 1);
  trace.shapes.reserve(net.layers().size() + 1);
  trace.values.emplace_back(x.raw());
  trace.shapes.push_back(x.shape());
  for (const Layer& layer : net.layers()) {
    const std::vector<double>& in = trace.values.back();
    const Shape& in_shape = trace.shapes.back();
    Shape out_shape = layer_output_shape(layer, in_shape);
    std::vector<double> out;
    std::visit(
        [&](const auto& l) {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, Dense>) {
            detail::dense_forward(l, in, out);
          } else if constexpr (std::is_same_v<L, Conv2d>) {
            detail::conv_forward(l, in_shape, out_shape, in, out);
          } else if constexpr (std::is_same_v<L, Relu>) {
            out.resize(in.size());
            for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
          } else if constexpr (std::is_same_v<L, Softplus>) {
            out.resize(in.size());
            for (std::size_t i = 0; i < in.size(); ++i) out[i] = detail::softplus(in[i], l.beta);
          } else {
            out = in;
          }
        },
        layer);
    trace.values.push_back(std::move(out));
    trace.shapes.push_back(std::move(out_shape));
  }
  return trace;
}

/// Pre-softmax class scores.
inline Tensor forward(const Network& net, const Tensor& x) {
  ForwardTrace trace = forward_trace(net, x);
  return Tensor::vector(std::move(trace.values.back()));
}

/// Index of the largest score; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> scores) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

inline std::size_t predict(const Network& net, const Tensor& x) {
  return argmax(forward_trace(net, x).scores());
}

/// Parameter gradients, laid out like the network's layers. Entries for
/// parameter-free layers stay empty.
struct ParameterGradients {
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> bias;

  explicit ParameterGradients(const Network& net) {
    for (const Layer& layer : net.layers()) {
      if (const auto* d = std::get_if<Dense>(&layer)) {
        weights.emplace_back(d->weights.size(), 0.0);
        bias.emplace_back(d->bias.size(), 0.0);
      } else if (const auto* c = std::get_if<Conv2d>(&layer)) {
        weights.emplace_back(c->weights.size(), 0.0);
        bias.emplace_back(c->bias.size(), 0.0);
      } else {
        weights.emplace_back();
        bias.emplace_back();
      }
    }
  }
};

/// Reverse-mode vector-Jacobian product: returns cotangent^T d(scores)/dx.
/// When `params` is given, parameter gradients are accumulated into it.
/// ReLU derivative at exactly 0 is taken as 0.
inline std::vector<double> backward(const Network& net, const ForwardTrace& trace,
                                    std::span<const double> cotangent,
                                    ParameterGradients* params = nullptr) {
  const auto& layers = net.layers();
  std::vector<double> grad(cotangent.begin(), cotangent.end());
  std::vector<double> next;
  for (std::size_t k = layers.size(); k-- > 0;) {
    const std::vector<double>& in = trace.values[k];
    const Shape& in_shape = trace.shapes[k];
    const Shape& out_shape = trace.shapes[k + 1];
    std::visit(
        [&](const auto& l) {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, Dense>) {
            next.assign(l.in, 0.0);
            for (std::size_t o = 0; o < l.out; ++o) {
              const double g = grad[o];
              if (g == 0.0) continue;
              const float* row = l.weights.data() + o * l.in;
              for (std::size_t i = 0; i < l.in; ++i) next[i] += static_cast<double>(row[i]) * g;
            }
            if (params) {
              auto& gw = params->weights[k];
              auto& gb = params->bias[k];
              for (std::size_t o = 0; o < l.out; ++o) {
                gb[o] += grad[o];
                for (std::size_t i = 0; i < l.in; ++i) gw[o * l.in + i] += grad[o] * in[i];
              }
            }
          } else if constexpr (std::is_same_v<L, Conv2d>) {
            const std::size_t ih = in_shape[1], iw = in_shape[2];
            const std::size_t oh = out_shape[1], ow = out_shape[2];
            next.assign(in.size(), 0.0);
            for (std::size_t oc = 0; oc < l.out_ch; ++oc) {
              for (std::size_t y = 0; y < oh; ++y) {
                for (std::size_t x = 0; x < ow; ++x) {
                  const double g = grad[(oc * oh + y) * ow + x];
                  if (params) params->bias[k][oc] += g;
                  if (g == 0.0) continue;
                  for (std::size_t ic = 0; ic < l.in_ch; ++ic) {
                    for (std::size_t ky = 0; ky < l.kh; ++ky) {
                      const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y * l.stride + ky) - l.pad;
                      if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(ih)) continue;
                      for (std::size_t kx = 0; kx < l.kw; ++kx) {
                        const std::ptrdiff_t sx =
                            static_cast<std::ptrdiff_t>(x * l.stride + kx) - l.pad;
                        if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(iw)) continue;
                        const std::size_t widx = ((oc * l.in_ch + ic) * l.kh + ky) * l.kw + kx;
                        const std::size_t iidx = (ic * ih + sy) * iw + sx;
                        next[iidx] += static_cast<double>(l.weights[widx]) * g;
                        if (params) params->weights[k][widx] += g * in[iidx];
                      }
                    }
                  }
                }
              }
            }
          } else if constexpr (std::is_same_v<L, Relu>) {
            next.resize(in.size());
            for (std::size_t i = 0; i < in.size(); ++i) next[i] = in[i] > 0.0 ? grad[i] : 0.0;
          } else if constexpr (std::is_same_v<L, Softplus>) {
            next.resize(in.size());
            for (std::size_t i = 0; i < in.size(); ++i) {
              next[i] = grad[i] * detail::sigmoid(static_cast<double>(l.beta) * in[i]);
            }
          } else {
            next = grad;
          }
        },
        layers[k]);
    grad.swap(next);
  }
  return grad;
}

/// Gradient of cotangent . f(x) with respect to x.
inline Tensor score_vjp(const Network& net, const Tensor& x, std::span<const double> cotangent) {
  ForwardTrace trace = forward_trace(net, x);
  if (cotangent.size() != net.num_classes()) throw InputError("cotangent length != num_classes");
  return Tensor(x.shape(), backward(net, trace, cotangent));
}

/// Exact gradient of the class-c score with respect to the input.
inline Tensor input_gradient(const Network& net, const Tensor& x, std::size_t c) {
  if (c >= net.num_classes()) throw InputError("class index out of range");
  std::vector<double> cot(net.num_classes(), 0.0);
  cot[c] = 1.0;
  return score_vjp(net, x, cot);
}

// ---------------------------------------------------------------------------
// Piecewise-linear structure
// ---------------------------------------------------------------------------

/// ON/OFF status of every ReLU unit, in layer order then row-major.
struct ActivationPattern {
  std::vector<bool> bits;

  std::size_t size() const noexcept { return bits.size(); }
  friend bool operator==(const ActivationPattern&, const ActivationPattern&) = default;
  friend auto operator<=>(const ActivationPattern& a, const ActivationPattern& b) {
    return a.bits <=> b.bits;
  }
};

inline std::size_t hamming_distance(const ActivationPattern& a, const ActivationPattern& b) {
  if (a.size() != b.size()) throw InputError("activation patterns of different length");
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += a.bits[i] != b.bits[i];
  return n;
}

/// A unit is ON when its pre-activation is >= 0.
inline ActivationPattern activation_pattern(const Network& net, const Tensor& x) {
  ForwardTrace trace = forward_trace(net, x);
  ActivationPattern pattern;
  for (std::size_t k = 0; k < net.layers().size(); ++k) {
    if (!std::holds_alternative<Relu>(net.layers()[k])) continue;
    for (double u : trace.values[k]) pattern.bits.push_back(u >= 0.0);
  }
  return pattern;
}

/// Affine map f_i(x) = weights[i] . x + biases[i] valid on one activation region.
struct LinearRegion {
  ActivationPattern pattern;
  std::vector<Tensor> weights;
  std::vector<double> biases;

  double evaluate(std::size_t cls, const Tensor& x) const { return dot(weights[cls], x) + biases[cls]; }
};

/// Local affine model of the network around x. Rejects points with a ReLU
/// pre-activation exactly 0, where the region is ambiguous.
inline LinearRegion local_linear_model(const Network& net, const Tensor& x) {
  ForwardTrace trace = forward_trace(net, x);
  LinearRegion region;
  for (std::size_t k = 0; k < net.layers().size(); ++k) {
    if (!std::holds_alternative<Relu>(net.layers()[k])) continue;
    for (double u : trace.values[k]) {
      if (u == 0.0) throw BoundaryPointError("point lies on an activation facet");
      region.pattern.bits.push_back(u >= 0.0);
    }
  }
  const std::size_t k = net.num_classes();
  std::vector<double> cot(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    std::fill(cot.begin(), cot.end(), 0.0);
    cot[c] = 1.0;
    Tensor w(x.shape(), backward(net, trace, cot));
    region.biases.push_back(trace.scores()[c] - dot(w, x));
    region.weights.push_back(std::move(w));
  }
  return region;
}

// ---------------------------------------------------------------------------
// Randomized smoothing
// ---------------------------------------------------------------------------

/// Adds sigma * N(0, I) noise drawn from `sampler`, consumed in row-major
/// feature order.
inline Tensor add_gaussian_noise(const Tensor& x, double sigma, GaussianSampler& sampler) {
  Tensor out = x;
  for (double& v : out.values()) v += sigma * sampler.next();
  return out;
}

/// Majority vote of predict over n Gaussian perturbations; ties go to the
/// lowest class index.
inline std::size_t smoothed_predict(const Network& net, const Tensor& x, double sigma,
                                    std::size_t n, std::uint64_t seed) {
  if (sigma < 0.0) throw PreconditionError("sigma must be >= 0");
  if (n == 0) throw PreconditionError("sample count must be >= 1");
  if (sigma == 0.0) return predict(net, x);
  std::vector<std::size_t> votes(net.num_classes(), 0);
  GaussianSampler sampler(seed);
  for (std::size_t i = 0; i < n; ++i) ++votes[predict(net, add_gaussian_noise(x, sigma, sampler))];
  return static_cast<std::size_t>(std::max_element(votes.begin(), votes.end()) - votes.begin());
}

// ---------------------------------------------------------------------------
// Construction helpers
// ---------------------------------------------------------------------------

inline Dense make_dense(std::uint32_t in, std::uint32_t out, std::vector<float> weights,
                        std::vector<float> bias) {
  return Dense{in, out, std::move(weights), std::move(bias)};
}

/// He-uniform initialised dense layer, deterministic in (rng state).
inline Dense random_dense(std::uint32_t in, std::uint32_t out, CounterRng& rng, double scale = 1.0) {
  Dense d{in, out, std::vector<float>(std::size_t{in} * out), std::vector<float>(out, 0.0f)};
  const double bound = scale * std::sqrt(6.0 / in);
  for (float& w : d.weights) w = static_cast<float>(rng.uniform(-bound, bound));
  return d;
}

inline Conv2d random_conv(std::uint32_t in_ch, std::uint32_t out_ch, std::uint32_t k,
                          std::uint32_t stride, std::uint32_t pad, CounterRng& rng) {
  Conv2d c{in_ch, out_ch, k, k, stride, pad, std::vector<float>(std::size_t{out_ch} * in_ch * k * k),
           std::vector<float>(out_ch, 0.0f)};
  const double bound = std::sqrt(6.0 / (in_ch * k * k));
  for (float& w : c.weights) w = static_cast<float>(rng.uniform(-bound, bound));
  return c;
}

}  // namespace bdry
