#include "fixtures.hpp"

#include <bdry/io.hpp>
#include <bdry/network.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace bdry;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("bdry_nn_core_" + name);
}

Network random_conv_net(std::uint64_t seed, bool softplus) {
  CounterRng rng(seed);
  std::vector<Layer> layers;
  layers.emplace_back(random_conv(1, 3, 3, 1, 1, rng));
  layers.emplace_back(softplus ? Layer{Softplus{2.0f}} : Layer{Relu{}});
  layers.emplace_back(random_conv(3, 2, 2, 2, 0, rng));
  layers.emplace_back(Relu{});
  layers.emplace_back(Flatten{});
  layers.emplace_back(random_dense(2 * 2 * 2, 3, rng));
  return Network(std::move(layers), Shape{1, 4, 4});
}

}  // namespace

TEST(Tensor, RejectsSizeMismatch) { EXPECT_THROW(Tensor(Shape{2, 2}, {1.0, 2.0, 3.0}), InputError); }

TEST(Tensor, CosineOfZeroVectorIsZero) {
  EXPECT_EQ(cosine_similarity(Tensor::vector({0.0, 0.0}), Tensor::vector({1.0, 2.0})), 0.0);
}

TEST(Rng, CounterStreamsAreReplayable) {
  CounterRng a(42);
  CounterRng b(42);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  CounterRng c(43);
  EXPECT_NE(CounterRng(42).next_u64(), c.next_u64());
}

TEST(Rng, GaussianMomentsAreStandard) {
  GaussianSampler g(7);
  double sum = 0.0;
  double sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double v = g.next();
    sum += v;
    sq += v * v;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(sq / n, 1.0, 0.01);
}

TEST(Forward, DenseHandArithmetic) {
  const Network net({make_dense(2, 1, {2.0f, -1.0f}, {0.0f})});
  EXPECT_DOUBLE_EQ(forward(net, Tensor::vector({1.0, 1.0}))[0], 1.0);
}

TEST(Forward, ReluClampsNegative) {
  const Network net({make_dense(1, 1, {3.0f}, {0.0f}), Relu{}});
  EXPECT_DOUBLE_EQ(forward(net, Tensor::vector({-1.0}))[0], 0.0);
}

TEST(Forward, Net222MatchesManualArithmetic) {
  const Network net = fixtures::net_222();
  CounterRng rng(3);
  for (int k = 0; k < 20; ++k) {
    const double a = rng.uniform(-2.0, 2.0);
    const double b = rng.uniform(-2.0, 2.0);
    const Tensor s = forward(net, Tensor::vector({a, b}));
    const auto o = fixtures::net_222_oracle(a, b);
    EXPECT_NEAR(s[0], o[0], 1e-12);
    EXPECT_NEAR(s[1], o[1], 1e-12);
  }
}

TEST(Forward, ShapeMismatchIsInputError) {
  EXPECT_THROW(forward(fixtures::net_222(), Tensor::vector({1.0, 2.0, 3.0})), InputError);
}

TEST(Network, RejectsNonComposingLayers) {
  EXPECT_THROW(Network({make_dense(2, 3, std::vector<float>(6), std::vector<float>(3)),
                        make_dense(2, 1, std::vector<float>(2), std::vector<float>(1))}),
               InputError);
  EXPECT_THROW(Network({make_dense(2, 3, std::vector<float>(5), std::vector<float>(3))}), InputError);
  EXPECT_THROW(Network({make_dense(2, 1, {1.0f, 1.0f}, {0.0f}), Softplus{0.0f}}), InputError);
}

TEST(Predict, ArgmaxAndTieBreak) {
  const std::vector<double> a{0.2, 0.9};
  const std::vector<double> b{0.5, 0.5};
  EXPECT_EQ(argmax(a), 1u);
  EXPECT_EQ(argmax(b), 0u);
}

TEST(Predict, Net222MatchesOracle) {
  const auto o = fixtures::net_222_oracle(1.0, 0.0);
  const std::size_t expected = o[1] > o[0] ? 1 : 0;
  EXPECT_EQ(predict(fixtures::net_222(), Tensor::vector({1.0, 0.0})), expected);
}

TEST(Gradient, LinearIsConstant) {
  const Network net({make_dense(2, 1, {2.0f, -1.0f}, {0.3f})});
  CounterRng rng(1);
  for (int k = 0; k < 5; ++k) {
    const Tensor g = input_gradient(net, fixtures::random_point(rng, 2, -5, 5), 0);
    EXPECT_EQ(g[0], 2.0);
    EXPECT_EQ(g[1], -1.0);
  }
}

TEST(Gradient, InactiveReluGivesZero) {
  const Network net({make_dense(1, 1, {3.0f}, {0.0f}), Relu{}});
  EXPECT_EQ(input_gradient(net, Tensor::vector({-1.0}), 0)[0], 0.0);
  // Subgradient convention at exactly zero.
  EXPECT_EQ(input_gradient(net, Tensor::vector({0.0}), 0)[0], 0.0);
}

TEST(Gradient, Random282MatchesFiniteDifferences) {
  const Network net = fixtures::random_2h2(8, 11);
  CounterRng rng(5);
  int checked = 0;
  while (checked < 20) {
    const Tensor x = fixtures::random_point(rng, 2, -2, 2);
    if (fixtures::min_preactivation(net, x) < 1e-2) continue;
    for (std::size_t c = 0; c < 2; ++c) {
      const Tensor g = input_gradient(net, x, c);
      const Tensor fd = fixtures::finite_difference_gradient(net, x, c);
      for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(g[i], fd[i], 1e-4);
    }
    ++checked;
  }
}

TEST(Gradient, ConvAndSoftplusMatchFiniteDifferences) {
  for (bool sp : {false, true}) {
    const Network net = random_conv_net(21, sp);
    CounterRng rng(9);
    int checked = 0;
    while (checked < 10) {
      const Tensor x(Shape{1, 4, 4}, fixtures::random_point(rng, 16, -1, 1).raw());
      if (fixtures::min_preactivation(net, x) < 1e-2) continue;
      for (std::size_t c = 0; c < 3; ++c) {
        const Tensor g = input_gradient(net, x, c);
        const Tensor fd = fixtures::finite_difference_gradient(net, x, c);
        for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], fd[i], 1e-4);
      }
      ++checked;
    }
  }
}

TEST(Gradient, ParameterGradientsMatchFiniteDifferences) {
  Network net = fixtures::random_2h2(4, 3);
  const Tensor x = Tensor::vector({0.3, -0.7});
  ForwardTrace t = forward_trace(net, x);
  ParameterGradients pg(net);
  const std::vector<double> cot{1.0, 0.0};
  backward(net, t, cot, &pg);
  std::vector<Layer> layers = net.layers();
  auto& d = std::get<Dense>(layers[0]);
  for (std::size_t i = 0; i < d.weights.size(); ++i) {
    const float orig = d.weights[i];
    const float h = 1e-2f;
    d.weights[i] = orig + h;
    const double up = forward(Network(layers), x)[0];
    d.weights[i] = orig - h;
    const double down = forward(Network(layers), x)[0];
    d.weights[i] = orig;
    const double fd = (up - down) / (static_cast<double>(orig + h) - static_cast<double>(orig - h));
    EXPECT_NEAR(pg.weights[0][i], fd, 1e-4);
  }
}

TEST(ActivationPattern, SingleUnit) {
  const Network net({make_dense(1, 1, {3.0f}, {0.0f}), Relu{}});
  EXPECT_EQ(activation_pattern(net, Tensor::vector({1.0})).bits, std::vector<bool>{true});
  EXPECT_EQ(activation_pattern(net, Tensor::vector({-1.0})).bits, std::vector<bool>{false});
}

TEST(ActivationPattern, CrossingOneFacetFlipsOneBit) {
  const Network net = fixtures::random_2h2(4, 2);
  const auto& l1 = std::get<Dense>(net.layers()[0]);
  // Walk across unit 0's hyperplane along its normal from a point on it.
  const double a = l1.w(0, 0);
  const double b = l1.w(0, 1);
  const double n2 = a * a + b * b;
  const double s = -static_cast<double>(l1.bias[0]) / n2;
  const Tensor on = Tensor::vector({s * a, s * b});
  const double eps = 1e-4 / std::sqrt(n2);
  const Tensor p = Tensor::vector({on[0] + eps * a, on[1] + eps * b});
  const Tensor q = Tensor::vector({on[0] - eps * a, on[1] - eps * b});
  const ActivationPattern pp = activation_pattern(net, p);
  const ActivationPattern pq = activation_pattern(net, q);
  EXPECT_EQ(hamming_distance(pp, pq), 1u);
  EXPECT_TRUE(pp.bits[0]);
  EXPECT_FALSE(pq.bits[0]);
  // Oracle: signs of the pre-activations computed by hand.
  for (std::size_t u = 0; u < 4; ++u) {
    const double pre = l1.w(u, 0) * p[0] + l1.w(u, 1) * p[1] + l1.bias[u];
    EXPECT_EQ(pp.bits[u], pre >= 0.0);
  }
}

TEST(LocalLinearModel, LinearNetIsExact) {
  const Network net({make_dense(2, 1, {2.0f, -1.0f}, {0.5f})});
  const LinearRegion r = local_linear_model(net, Tensor::vector({0.3, 0.4}));
  EXPECT_EQ(r.weights[0][0], 2.0);
  EXPECT_EQ(r.weights[0][1], -1.0);
  EXPECT_NEAR(r.biases[0], 0.5, 1e-15);
}

TEST(LocalLinearModel, ReproducesForwardInsideRegion) {
  const Network net = fixtures::net_282();
  CounterRng rng(17);
  const Tensor x = fixtures::random_point(rng, 2, -1, 1);
  const LinearRegion r = local_linear_model(net, x);
  int checked = 0;
  while (checked < 10) {
    Tensor p = x;
    p[0] += rng.uniform(-0.05, 0.05);
    p[1] += rng.uniform(-0.05, 0.05);
    if (activation_pattern(net, p) != r.pattern) continue;
    const Tensor s = forward(net, p);
    for (std::size_t c = 0; c < 2; ++c) EXPECT_LE(std::abs(s[c] - r.evaluate(c, p)), 1e-5);
    ++checked;
  }
}

TEST(LocalLinearModel, ZeroPreactivationIsBoundaryPointError) {
  const Network net({make_dense(1, 1, {3.0f}, {0.0f}), Relu{}, make_dense(1, 2, {1.0f, -1.0f}, {0.0f, 0.0f})});
  EXPECT_THROW(local_linear_model(net, Tensor::vector({0.0})), BoundaryPointError);
}

TEST(PiecewiseConstancy, SamePatternSameGradient) {
  const Network net = fixtures::net_282();
  CounterRng rng(4);
  const Tensor x = fixtures::random_point(rng, 2, -1, 1);
  const ActivationPattern pat = activation_pattern(net, x);
  for (int k = 0; k < 20; ++k) {
    Tensor p = x;
    p[0] += rng.uniform(-0.02, 0.02);
    p[1] += rng.uniform(-0.02, 0.02);
    if (activation_pattern(net, p) != pat) continue;
    for (std::size_t c = 0; c < 2; ++c) {
      const Tensor a = input_gradient(net, x, c);
      const Tensor b = input_gradient(net, p, c);
      for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(a[i], b[i], 1e-6);
    }
  }
}

TEST(SmoothedPredict, ZeroSigmaIsPredict) {
  const Network net = fixtures::net_282();
  CounterRng rng(8);
  for (int k = 0; k < 20; ++k) {
    const Tensor x = fixtures::random_point(rng, 2, -2, 2);
    EXPECT_EQ(smoothed_predict(net, x, 0.0, 17, 3), predict(net, x));
  }
}

TEST(SmoothedPredict, FarFromBoundaryAgreesWithMonteCarlo) {
  const Network net = fixtures::linear_binary({1.0f, 0.0f}, -0.5f);
  const Tensor x = Tensor::vector({3.0, 0.0});  // margin 2.5 = 10 sigma
  const std::size_t s = smoothed_predict(net, x, 0.25, 100, 5);
  EXPECT_EQ(s, predict(net, x));
  // Independent Monte-Carlo vote with a different stream.
  std::vector<std::size_t> votes(2, 0);
  GaussianSampler g(999);
  for (int i = 0; i < 100000; ++i) ++votes[predict(net, add_gaussian_noise(x, 0.25, g))];
  EXPECT_EQ(votes[1] > votes[0] ? 1u : 0u, s);
}

TEST(SmoothedPredict, SingleSampleUsesFirstDraw) {
  const Network net = fixtures::net_282();
  const Tensor x = Tensor::vector({0.1, -0.3});
  GaussianSampler g(12);
  const Tensor noisy = add_gaussian_noise(x, 0.8, g);
  EXPECT_EQ(smoothed_predict(net, x, 0.8, 1, 12), predict(net, noisy));
}

TEST(SmoothedPredict, RejectsBadArguments) {
  EXPECT_THROW(smoothed_predict(fixtures::net_282(), Tensor::vector({0.0, 0.0}), -1.0, 10, 0), PreconditionError);
  EXPECT_THROW(smoothed_predict(fixtures::net_282(), Tensor::vector({0.0, 0.0}), 1.0, 0, 0), PreconditionError);
}

TEST(ModelFile, RoundTripIsBitExact) {
  CounterRng rng(2);
  const Network net({random_dense(3, 5, rng), Relu{}, random_dense(5, 2, rng), Softplus{1.5f}});
  const auto path = temp_path("roundtrip.bdn");
  save_model(net, path);
  const Network back = load_model(path);
  EXPECT_TRUE(back == net);
  EXPECT_EQ(encode_model(back), encode_model(net));
}

TEST(ModelFile, ConvRoundTrip) {
  const Network net = random_conv_net(4, true);
  const Network back = decode_model(encode_model(net), Shape{1, 4, 4});
  EXPECT_TRUE(back == net);
}

TEST(ModelFile, BadMagic) {
  std::vector<char> bytes = encode_model(fixtures::net_222());
  bytes[0] = 'X';
  try {
    decode_model(bytes);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
}

TEST(ModelFile, TruncatedDensePayload) {
  // dense 2x3 declared, only 5 weight floats present.
  std::vector<char> bytes(kModelMagic.begin(), kModelMagic.end());
  auto u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  };
  u32(1);
  bytes.push_back(0);
  u32(2);
  u32(3);
  for (int i = 0; i < 5; ++i) u32(0x3f800000u);
  try {
    decode_model(bytes);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
    EXPECT_EQ(e.offset(), 21u);
  }
}

TEST(ModelFile, NonFiniteWeightReportsOffset) {
  std::vector<char> bytes = encode_model(Network({make_dense(1, 1, {1.0f}, {0.0f})}));
  // Weight starts after magic(8) + count(4) + kind(1) + in(4) + out(4).
  const std::uint32_t nan_bits = 0x7fc00000u;
  for (int i = 0; i < 4; ++i) bytes[21 + i] = static_cast<char>((nan_bits >> (8 * i)) & 0xFF);
  try {
    decode_model(bytes);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 21u);
  }
}

TEST(ModelFile, UnknownKindAndTrailingBytes) {
  std::vector<char> bytes = encode_model(fixtures::net_222());
  std::vector<char> trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(decode_model(trailing), FormatError);
  bytes[12] = 9;
  EXPECT_THROW(decode_model(bytes), FormatError);
}

TEST(TensorFile, RoundTripAndHeader) {
  const Tensor t(Shape{2, 3}, {1.0, -2.0, 0.5, 0.25, 3.0, -0.125});
  const auto path = temp_path("t.bdt");
  save_tensor(t, path);
  EXPECT_EQ(load_tensor(path), t);
  const std::vector<char> bytes = encode_tensor(t);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "BDRYTEN1");
  EXPECT_EQ(bytes[8], 0);
  EXPECT_EQ(bytes[9], 2);
  EXPECT_EQ(bytes.size(), 8u + 2u + 8u + 24u);
}

TEST(TensorFile, RejectsNonFinite) {
  std::vector<char> bytes = encode_tensor(Tensor::vector({1.0}));
  bytes[bytes.size() - 1] = static_cast<char>(0x7f);
  bytes[bytes.size() - 2] = static_cast<char>(0x80);
  EXPECT_THROW(decode_tensor(bytes), FormatError);
}
