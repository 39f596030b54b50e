#pragma once

#include <bdry/boundary_search.hpp>
#include <bdry/errors.hpp>
#include <bdry/network.hpp>
#include <bdry/rng.hpp>
#include <bdry/tensor.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <utility>
#include <vector>

namespace bdry {

/// Axis-aligned input box for brute-force geometry on low-dimensional nets.
struct Domain {
  std::vector<double> lo;
  std::vector<double> hi;

  std::size_t dims() const noexcept { return lo.size(); }

  static Domain cube(std::size_t d, double lo, double hi) {
    return {std::vector<double>(d, lo), std::vector<double>(d, hi)};
  }

  /// Length of the diagonal of one grid cell.
  double cell_diagonal(std::size_t resolution) const {
    double s = 0.0;
    for (std::size_t i = 0; i < dims(); ++i) {
      const double h = (hi[i] - lo[i]) / static_cast<double>(resolution - 1);
      s += h * h;
    }
    return std::sqrt(s);
  }
};

namespace detail {

inline void check_grid(const Network& net, const Domain& domain, std::size_t resolution) {
  if (domain.dims() == 0 || domain.hi.size() != domain.dims()) throw InputError("domain bounds are inconsistent");
  if (domain.dims() > 3) throw ScaleError("grid geometry supports at most 3 input dimensions");
  if (resolution < 16) throw PreconditionError("grid resolution must be at least 16 per axis");
  for (std::size_t i = 0; i < domain.dims(); ++i) {
    if (!(domain.lo[i] < domain.hi[i])) throw InputError("domain must have lo < hi on every axis");
  }
  net.check_input(Shape{domain.dims()});
}

/// Calls fn(point) for every grid point, last axis fastest.
template <class Fn>
void for_each_grid_point(const Domain& domain, std::size_t resolution, Fn&& fn) {
  const std::size_t d = domain.dims();
  std::vector<std::size_t> idx(d, 0);
  Tensor p(Shape{d});
  while (true) {
    for (std::size_t i = 0; i < d; ++i) {
      const double t = static_cast<double>(idx[i]) / static_cast<double>(resolution - 1);
      p[i] = domain.lo[i] + t * (domain.hi[i] - domain.lo[i]);
    }
    fn(p);
    std::size_t k = d;
    while (k > 0) {
      --k;
      if (++idx[k] < resolution) break;
      idx[k] = 0;
      if (k == 0) return;
    }
  }
}

}  // namespace detail

struct RegionWitness {
  ActivationPattern pattern;
  Tensor point;
};

/// Distinct activation patterns met on a resolution^d grid over the box, each
/// with the first grid point that produced it (grid order).
inline std::vector<RegionWitness> enumerate_regions(const Network& net, const Domain& domain,
                                                    std::size_t resolution) {
  detail::check_grid(net, domain, resolution);
  std::map<ActivationPattern, std::size_t> seen;
  std::vector<RegionWitness> out;
  detail::for_each_grid_point(domain, resolution, [&](const Tensor& p) {
    ActivationPattern pat = activation_pattern(net, p);
    if (seen.emplace(pat, out.size()).second) out.push_back({std::move(pat), p});
  });
  return out;
}

/// Closest decision-boundary point found by grid search and bisection.
struct BoundarySegmentOracle {
  /// On the far side of the boundary (label differs from F(x)).
  Tensor point;
  double distance = 0.0;
  /// Gradient of f_c, c = F(x), on x's side of the boundary.
  Tensor normal;
  /// The near-side point where `normal` and `pair_normal` were evaluated.
  Tensor normal_point;
  /// Gradient of f_i - f_j with i = F(x) and j the label across the boundary.
  Tensor pair_normal;
  std::pair<std::size_t, std::size_t> class_pair;
};

/// Scans the grid for label flips, then bisects from x towards every flipped
/// grid point within one cell diagonal of the nearest (at most 64 of them)
/// and keeps the closest crossing.
inline BoundarySegmentOracle closest_boundary_oracle(const Network& net, const Tensor& x, const Domain& domain,
                                                     std::size_t resolution) {
  detail::check_grid(net, domain, resolution);
  net.check_input(x.shape());
  const std::size_t c = predict(net, x);
  std::vector<std::pair<double, Tensor>> flipped;
  detail::for_each_grid_point(domain, resolution, [&](const Tensor& p) {
    if (predict(net, p) != c) flipped.emplace_back(l2_distance(p, x), p);
  });
  if (flipped.empty()) throw NoBoundaryError("no label change inside the domain");
  std::stable_sort(flipped.begin(), flipped.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });

  constexpr std::size_t kMaxCandidates = 64;
  const double cutoff = flipped.front().first + domain.cell_diagonal(resolution);
  std::optional<BoundaryBracket> best;
  double best_dist = 0.0;
  for (std::size_t k = 0; k < flipped.size() && k < kMaxCandidates && flipped[k].first <= cutoff; ++k) {
    BoundaryBracket b = bracket_boundary(net, x, flipped[k].second, c, 1e-10);
    const double dist = l2_distance(b.outside, x);
    if (!best || dist < best_dist) {
      best = std::move(b);
      best_dist = dist;
    }
  }

  // Zoom: re-grid a box of one coarse cell diagonal around the best crossing
  // and bisect towards the nearest flipped point of the finer grid.
  constexpr std::size_t kZoomResolution = 33;
  double half = domain.cell_diagonal(resolution);
  for (int round = 0; round < 3; ++round) {
    Domain local;
    for (std::size_t i = 0; i < domain.dims(); ++i) {
      local.lo.push_back(std::max(domain.lo[i], best->outside[i] - half));
      local.hi.push_back(std::min(domain.hi[i], best->outside[i] + half));
    }
    std::optional<std::pair<double, Tensor>> nearest;
    detail::for_each_grid_point(local, kZoomResolution, [&](const Tensor& p) {
      const double dist = l2_distance(p, x);
      if ((!nearest || dist < nearest->first) && predict(net, p) != c) nearest.emplace(dist, p);
    });
    if (nearest && nearest->first < best_dist + half) {
      BoundaryBracket b = bracket_boundary(net, x, nearest->second, c, 1e-10);
      const double dist = l2_distance(b.outside, x);
      if (dist < best_dist) {
        best = std::move(b);
        best_dist = dist;
      }
    }
    half = local.cell_diagonal(kZoomResolution);
  }

  BoundarySegmentOracle o;
  o.point = best->outside;
  o.distance = best_dist;
  o.normal_point = best->inside;
  o.normal = input_gradient(net, o.normal_point, c);
  const std::size_t j = predict(net, o.point);
  std::vector<double> cot(net.num_classes(), 0.0);
  cot[c] = 1.0;
  cot[j] = -1.0;
  o.pair_normal = score_vjp(net, o.normal_point, cot);
  o.class_pair = {c, j};
  return o;
}

struct BoundaryBoundCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = true;
  /// True when no boundary lies within delta, so there is nothing to check.
  bool vacuous = false;
  double boundary_distance = 0.0;
};

/// Compares ||n - grad f_c(x)|| with lambda_hat * ||x - x'|| using the grid
/// oracle's boundary point and normal.
inline BoundaryBoundCheck check_boundary_bound(const Network& net, const Tensor& x, double delta, double lambda_hat,
                                              const Domain& domain, std::size_t resolution) {
  const BoundarySegmentOracle o = closest_boundary_oracle(net, x, domain, resolution);
  BoundaryBoundCheck r;
  r.boundary_distance = o.distance;
  if (o.distance > delta) {
    r.vacuous = true;
    return r;
  }
  r.lhs = l2_distance(o.normal, input_gradient(net, x, o.class_pair.first));
  r.rhs = lambda_hat * o.distance;
  r.holds = r.lhs <= r.rhs * (1.0 + 1e-6);
  return r;
}

using AttributionFn = std::function<Tensor(const Tensor&)>;

/// Empirical local Lipschitz constant of g around x: the largest
/// ||g(p) - g(x)|| / ||p - x|| over n_pairs points drawn uniformly from the
/// l2 ball of radius delta, plus any `extra` points that lie in that ball.
inline double estimate_attribution_lipschitz(const AttributionFn& g, const Tensor& x, double delta,
                                             std::size_t n_pairs, std::uint64_t seed,
                                             const std::vector<Tensor>& extra = {}) {
  if (!(delta > 0.0)) throw PreconditionError("delta must be positive");
  if (n_pairs == 0) throw PreconditionError("need at least one sample pair");
  const Tensor gx = g(x);
  double best = 0.0;
  auto consider = [&](const Tensor& p) {
    const double dist = l2_distance(p, x);
    if (dist == 0.0 || dist > delta) return;
    best = std::max(best, l2_distance(g(p), gx) / dist);
  };
  GaussianSampler normal(seed);
  CounterRng radius_rng(seed ^ 0x5bd1e995ULL);
  const double dim = static_cast<double>(x.size());
  for (std::size_t k = 0; k < n_pairs; ++k) {
    Tensor dir = zeros_like(x);
    for (double& v : dir.values()) v = normal.next();
    const double n = l2_norm(dir);
    if (n == 0.0) continue;
    const double r = delta * std::pow(radius_rng.uniform(), 1.0 / dim);
    consider(x + dir * (r / n));
  }
  for (const Tensor& p : extra) consider(p);
  return best;
}

}  // namespace bdry
