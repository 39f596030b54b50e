#include "fixtures.hpp"

#include <bdry/attribution.hpp>
#include <bdry/experiments.hpp>
#include <bdry/geometry.hpp>

#include <gtest/gtest.h>

using namespace bdry;

namespace {

AttackConfig unclipped(AttackConfig c) {
  c.clip_lo = -INFINITY;
  c.clip_hi = INFINITY;
  return c;
}

BoundaryResult fake_boundary(const Tensor& adv) {
  BoundaryResult r;
  r.success = true;
  r.adversarial = adv;
  r.method = "given";
  return r;
}

// f0 = 3 relu(x0 - 0.2) + (x0 + x1 + 10) - 10, f1 = 0. Facet at x0 = 0.2.
Network facet_net() {
  return Network({make_dense(2, 2, {1.0f, 0.0f, 1.0f, 1.0f}, {-0.2f, 10.0f}), Relu{},
                  make_dense(2, 2, {3.0f, 1.0f, 0.0f, 0.0f}, {-10.0f, 0.0f})});
}

}  // namespace

TEST(Saliency, LinearNet) {
  const Network net({make_dense(2, 1, {2.0f, -1.0f}, {0.0f})});
  const AttributionMap m = saliency_map(net, Tensor::vector({0.7, -3.0}));
  EXPECT_EQ(m.values, Tensor::vector({2.0, -1.0}));
  EXPECT_EQ(m.method, "sm");
}

TEST(Saliency, DeadPathGivesZero) {
  const Network net = fixtures::net_222();
  // Both hidden units off: x0 < x1 and 0.5 x0 + 2 x1 < 1.
  const AttributionMap m = saliency_map(net, Tensor::vector({-1.0, 0.0}), 0);
  EXPECT_EQ(m.values, Tensor::vector({0.0, 0.0}));
}

TEST(Saliency, MatchesFiniteDifferences) {
  const Network net = fixtures::net_282();
  CounterRng rng(31);
  for (int k = 0; k < 20; ++k) {
    const Tensor x = fixtures::random_point(rng, 2, -2, 2);
    if (fixtures::min_preactivation(net, x) < 1e-2) continue;
    const AttributionMap m = saliency_map(net, x);
    const Tensor fd = fixtures::finite_difference_gradient(net, x, m.target_class);
    for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(m.values[i], fd[i], 1e-4);
  }
}

TEST(Saliency, TargetOutOfRange) {
  EXPECT_THROW(saliency_map(fixtures::net_222(), Tensor::vector({0.0, 0.0}), 2), InputError);
}

TEST(GradTimesInput, ZeroInputAndLinear) {
  const Network net({make_dense(2, 1, {2.0f, -1.0f}, {0.0f})});
  EXPECT_EQ(grad_times_input(net, Tensor::vector({0.0, 0.0})).values, Tensor::vector({0.0, 0.0}));
  EXPECT_EQ(grad_times_input(net, Tensor::vector({1.0, 1.0})).values, Tensor::vector({2.0, -1.0}));
}

TEST(GradTimesInput, EqualsZeroBaselineIgInsideOneRegion) {
  const Network net = fixtures::net_282();
  CounterRng rng(6);
  std::size_t checked = 0;
  for (int k = 0; k < 200 && checked < 10; ++k) {
    const Tensor x = fixtures::random_point(rng, 2, -2, 2);
    const Tensor zero = zeros_like(x);
    // Whole path [0, x] in x's region iff the pattern is constant along it.
    const ActivationPattern p = activation_pattern(net, x);
    bool same = true;
    for (int t = 0; t <= 50 && same; ++t) same = activation_pattern(net, lerp(zero, x, t / 50.0)) == p;
    if (!same) continue;
    ++checked;
    const Tensor gti = grad_times_input(net, x).values;
    const Tensor ig = integrated_gradients(net, x, zero, std::nullopt, {200}).values;
    for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(gti[i], ig[i], 1e-3);
  }
  EXPECT_GT(checked, 0u);
}

TEST(IntegratedGradients, LinearIsExactForAnySteps) {
  const Network net = fixtures::linear_binary({1.5f, -0.5f}, 0.3f);
  const Tensor x = Tensor::vector({0.4, 0.9});
  const Tensor b = Tensor::vector({-1.0, 2.0});
  for (std::size_t steps : {2u, 3u, 20u}) {
    const AttributionMap m = integrated_gradients(net, x, b, 1, {steps});
    EXPECT_NEAR(m.values[0], 1.5 * 1.4, 1e-12);
    EXPECT_NEAR(m.values[1], -0.5 * -1.1, 1e-12);
    EXPECT_EQ(m.meta.get("steps", ""), std::to_string(steps));
  }
}

TEST(IntegratedGradients, BaselineEqualsInput) {
  const Tensor x = Tensor::vector({0.4, 0.9});
  EXPECT_EQ(integrated_gradients(fixtures::net_282(), x, x).values, Tensor::vector({0.0, 0.0}));
}

TEST(IntegratedGradients, MinFunction) {
  const AttributionMap m =
      integrated_gradients(fixtures::min_net(), Tensor::vector({1.0, 2.0}), Tensor::vector({0.0, 0.0}), 0, {200});
  EXPECT_NEAR(m.values[0], 1.0, 1e-12);
  EXPECT_NEAR(m.values[1], 0.0, 1e-12);
}

TEST(IntegratedGradients, RejectsBadSteps) {
  const Tensor x = Tensor::vector({0.4, 0.9});
  EXPECT_THROW(integrated_gradients(fixtures::net_282(), x, x, std::nullopt, {1}), PreconditionError);
  EXPECT_THROW(integrated_gradients(fixtures::net_282(), x, Tensor::vector({1.0}), std::nullopt, {}), InputError);
}

TEST(IntegratedGradients, CompletenessOnFixture) {
  const Network net = fixtures::net_282();
  CounterRng rng(12);
  for (int k = 0; k < 20; ++k) {
    const Tensor x = fixtures::random_point(rng, 2, -2, 2);
    const Tensor b = fixtures::random_point(rng, 2, -2, 2);
    const AttributionMap m = integrated_gradients(net, x, b, std::nullopt, {200});
    double sum = 0.0;
    for (double v : m.values.values()) sum += v;
    EXPECT_NEAR(sum, forward(net, x)[m.target_class] - forward(net, b)[m.target_class], 1e-2);
  }
}

TEST(SmoothGradient, LinearIsWeights) {
  const Network net = fixtures::linear_binary({1.5f, -0.5f}, 0.3f);
  const AttributionMap m = smooth_gradient(net, Tensor::vector({0.1, 0.2}), 1, 0.7, 25, 3);
  EXPECT_NEAR(m.values[0], 1.5, 1e-12);
  EXPECT_NEAR(m.values[1], -0.5, 1e-12);
}

TEST(SmoothGradient, ZeroSigmaIsSaliency) {
  const Network net = fixtures::net_282();
  const Tensor x = Tensor::vector({0.3, -0.4});
  EXPECT_EQ(smooth_gradient(net, x, 0, 0.0, 5, 1).values, saliency_map(net, x, 0).values);
}

TEST(SmoothGradient, MatchesSoftplusNetAtUnitScale) {
  // One hidden ReLU layer with unit-norm rows; at sigma = 1 the matched
  // softplus net has beta = log(2) sqrt(2 pi).
  CounterRng rng(4);
  Dense l1 = random_dense(3, 6, rng);
  for (std::size_t o = 0; o < 6; ++o) {
    double n = 0.0;
    for (std::size_t i = 0; i < 3; ++i) n += l1.w(o, i) * l1.w(o, i);
    for (std::size_t i = 0; i < 3; ++i) l1.w(o, i) = static_cast<float>(l1.w(o, i) / std::sqrt(n));
    l1.bias[o] = static_cast<float>(rng.uniform(-0.5, 0.5));
  }
  const Dense l2 = random_dense(6, 2, rng);
  const Network net({l1, Relu{}, l2});
  const double beta = std::log(2.0) * std::sqrt(2.0 * M_PI);
  EXPECT_NEAR(softplus_beta_for_sigma(1.0), beta, 1e-12);
  for (int k = 0; k < 5; ++k) {
    const Tensor x = fixtures::random_point(rng, 3, -1, 1);
    const Tensor sg = smooth_gradient(net, x, 0, 1.0, 10000, 100 + k).values;
    // Closed-form softplus gradient: sum_j v_j sigmoid(beta u_j) w_j.
    Tensor sp(Shape{3});
    for (std::size_t o = 0; o < 6; ++o) {
      double u = l1.bias[o];
      for (std::size_t i = 0; i < 3; ++i) u += l1.w(o, i) * x[i];
      const double s = 1.0 / (1.0 + std::exp(-beta * u));
      for (std::size_t i = 0; i < 3; ++i) sp[i] += l2.w(0, o) * s * l1.w(o, i);
    }
    EXPECT_GE(cosine_similarity(sg, sp), 0.99);
  }
}

TEST(SmoothGradient, MonteCarloConverges) {
  const Network net = fixtures::net_282();
  const Tensor x = Tensor::vector({0.3, -0.4});
  double prev = INFINITY;
  for (std::size_t n : {50u, 500u, 5000u}) {
    const double d = l2_distance(smooth_gradient(net, x, 0, 0.5, n, 9).values,
                                 smooth_gradient(net, x, 0, 0.5, 2 * n, 9).values);
    EXPECT_LT(d, prev);
    prev = d;
  }
}

TEST(SmoothGradient, RejectsBadArguments) {
  const Tensor x = Tensor::vector({0.3, -0.4});
  EXPECT_THROW(smooth_gradient(fixtures::net_282(), x, 0, -0.1, 5, 1), PreconditionError);
  EXPECT_THROW(smooth_gradient(fixtures::net_282(), x, 0, 0.1, 0, 1), PreconditionError);
}

TEST(BoundarySaliency, LinearEqualsSaliency) {
  const Network net = fixtures::linear_binary({1.0f, 2.0f}, -0.5f);
  const Tensor x = Tensor::vector({1.0, 1.0});
  const BoundaryResult r = boundary_search_ensemble(net, x, {unclipped(presets::pgd({0.5, 1.0, 2.0}))});
  ASSERT_TRUE(r.success);
  const AttributionMap bsm = boundary_saliency_map(net, x, r);
  EXPECT_EQ(bsm.values, saliency_map(net, x).values);
  EXPECT_EQ(bsm.meta.get("boundary_distance", ""), format_double(r.distance));
}

TEST(BoundarySaliency, DiffersFromSaliencyAndMatchesOracle) {
  const Network net = fixtures::net_282();
  const Domain box = Domain::cube(2, -2.0, 2.0);
  CounterRng rng(40);
  std::size_t differing = 0;
  for (int k = 0; k < 40; ++k) {
    const Tensor x = fixtures::random_point(rng, 2, -1.8, 1.8);
    const BoundaryResult r = boundary_search_ensemble(net, x, presets::toy(4.0, -2.0, 2.0, 8));
    if (!r.success) continue;
    const BoundarySegmentOracle o = closest_boundary_oracle(net, x, box, 128);
    if (std::abs(r.distance - o.distance) > 1e-4) continue;
    if (activation_pattern(net, r.adversarial) != activation_pattern(net, o.normal_point)) continue;
    const Tensor bsm = boundary_saliency_map(net, x, r).values;
    const Tensor sm = saliency_map(net, x).values;
    for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(bsm[i], o.normal[i], 1e-4);
    differing += l2_distance(bsm, sm) > 1e-3;
  }
  EXPECT_GT(differing, 0u);
}

TEST(BoundarySaliency, FailedBoundaryThrows) {
  BoundaryResult r;
  EXPECT_THROW(boundary_saliency_map(fixtures::net_282(), Tensor::vector({0.0, 0.0}), r), NoBoundaryError);
  EXPECT_THROW(boundary_integrated_gradients(fixtures::net_282(), Tensor::vector({0.0, 0.0}), r), NoBoundaryError);
}

TEST(BoundaryIg, LinearCompleteness) {
  const Network net = fixtures::linear_binary({1.0f, 2.0f}, -0.5f);
  const Tensor x = Tensor::vector({1.0, 1.0});
  const BoundaryResult r = boundary_search_ensemble(net, x, {unclipped(presets::pgd({0.5, 1.0, 2.0}))});
  const AttributionMap big = boundary_integrated_gradients(net, x, r);
  const std::size_t c = predict(net, x);
  EXPECT_NEAR(big.values[0], 1.0 * (x[0] - r.adversarial[0]), 1e-12);
  EXPECT_NEAR(big.values[1], 2.0 * (x[1] - r.adversarial[1]), 1e-12);
  EXPECT_NEAR(big.values[0] + big.values[1], forward(net, x)[c] - forward(net, r.adversarial)[c], 1e-12);
}

TEST(BoundaryIg, CompletenessOnFixture) {
  const Network net = fixtures::net_282();
  CounterRng rng(41);
  for (int k = 0; k < 20; ++k) {
    const Tensor x = fixtures::random_point(rng, 2, -2, 2);
    const BoundaryResult r = boundary_search_ensemble(net, x, presets::toy(4.0, -2.0, 2.0));
    if (!r.success) continue;
    const AttributionMap big = boundary_integrated_gradients(net, x, r, {200});
    const std::size_t c = predict(net, x);
    EXPECT_NEAR(big.values[0] + big.values[1], forward(net, x)[c] - forward(net, r.adversarial)[c], 1e-2);
  }
}

TEST(BoundaryIg, TwoRegionPathWeighting) {
  const Network net = facet_net();
  const Tensor x = Tensor::vector({1.0, 0.5});
  const Tensor adv = Tensor::vector({-1.0, 0.0});
  ASSERT_EQ(predict(net, x), 0u);
  // Facet at t = 0.6: gradient (1, 1) before, (4, 1) after.
  const double rho1 = 0.6;
  const double rho2 = 0.4;
  const double g0 = rho1 * 1.0 + rho2 * 4.0;
  const double g1 = 1.0;
  const AttributionMap big = boundary_integrated_gradients(net, x, fake_boundary(adv), {400});
  EXPECT_NEAR(big.values[0], 2.0 * g0, 5e-3);
  EXPECT_NEAR(big.values[1], 0.5 * g1, 5e-3);
}

TEST(BoundaryIg, ZeroAdversarialDegeneratesToIg) {
  const Network net = fixtures::net_282();
  const Tensor x = Tensor::vector({0.7, -1.1});
  const Tensor zero = zeros_like(x);
  const AttributionMap big = boundary_integrated_gradients(net, x, fake_boundary(zero));
  const AttributionMap ig = integrated_gradients(net, x, zero, predict(net, x));
  EXPECT_EQ(big.values, ig.values);
}

TEST(Agi, ZeroItersGivesZero) {
  AgiConfig cfg;
  cfg.topk = 1;
  cfg.max_iters = 0;
  EXPECT_EQ(agi(fixtures::net_282(), Tensor::vector({0.2, 0.1}), cfg).values, Tensor::vector({0.0, 0.0}));
}

TEST(Agi, LinearClosedForm) {
  // For the two-class linear net the walk direction is -sign(w_c) on every
  // coordinate, so each step adds step * |w_c| and the map is parallel to |w_c|.
  const Network net = fixtures::linear_binary({1.0f, -2.0f}, 0.1f);
  const Tensor x = Tensor::vector({0.5, -0.5});
  AgiConfig cfg;
  cfg.topk = 1;
  cfg.eps = 10.0;
  cfg.max_iters = 15;
  cfg.step_size = 0.1;
  const AttributionMap m = agi(net, x, cfg);
  const std::size_t c = predict(net, x);
  const double sign = c == 1 ? 1.0 : -1.0;
  const double wc0 = sign * 1.0;
  const double wc1 = sign * -2.0;
  const double step = *cfg.step_size;
  // Steps until the margin 2|w.x + b| is closed, each step lowering it by 2 * step * |w|_1.
  const double margin = 2.0 * std::abs(1.0 * x[0] - 2.0 * x[1] + 0.1);
  const double k = std::ceil(margin / (2.0 * step * 3.0));
  EXPECT_NEAR(m.values[0], k * step * std::abs(wc0), 1e-12);
  EXPECT_NEAR(m.values[1], k * step * std::abs(wc1), 1e-12);
  EXPECT_EQ(m.meta.get("target_" + std::to_string(1 - c), ""), "reached");
  // Both maps are w_c times a displacement from x towards the boundary; the
  // displacements agree in sign even though the sign walk and the l2
  // projection differ in direction.
  const BoundaryResult r = boundary_search_ensemble(net, x, {unclipped(presets::pgd({0.5, 1.0, 2.0}))});
  const Tensor big = boundary_integrated_gradients(net, x, r).values;
  EXPECT_GT(m.values[0] / wc0 * (big[0] / wc0), 0.0);
  EXPECT_GT(m.values[1] / wc1 * (big[1] / wc1), 0.0);
}

TEST(Agi, TopkMustBeBelowClassCount) {
  AgiConfig cfg;
  cfg.topk = 2;
  EXPECT_THROW(agi(fixtures::net_282(), Tensor::vector({0.2, 0.1}), cfg), PreconditionError);
}

TEST(Symmetry, BigSymmetricAgiRecorded) {
  const Network net = fixtures::symmetric_relu();
  const Tensor x = Tensor::vector({1.0, 1.0});
  const BoundaryResult r = boundary_search_ensemble(net, x, presets::toy(2.0, -1.0, 3.0));
  ASSERT_TRUE(r.success);
  const Tensor big = boundary_integrated_gradients(net, x, r).values;
  EXPECT_LE(std::abs(big[0] - big[1]), 1e-6);
  AgiConfig cfg;
  cfg.topk = 1;
  const Tensor a = agi(net, x, cfg).values;
  RecordProperty("agi_asymmetry", format_double(std::abs(a[0] - a[1])));
}
