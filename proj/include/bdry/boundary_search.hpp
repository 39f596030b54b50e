#pragma once

#include <bdry/config.hpp>
#include <bdry/errors.hpp>
#include <bdry/network.hpp>
#include <bdry/rng.hpp>
#include <bdry/tensor.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace bdry {

enum class AttackMethod { pgd, cw, autopgd };
enum class Norm { l2, linf };
enum class AttackLoss { ce, dlr };

inline const char* to_string(AttackMethod m) {
  switch (m) {
    case AttackMethod::pgd: return "pgd";
    case AttackMethod::cw: return "cw";
    case AttackMethod::autopgd: return "autopgd";
  }
  return "?";
}
inline const char* to_string(Norm n) { return n == Norm::l2 ? "l2" : "linf"; }
inline const char* to_string(AttackLoss l) { return l == AttackLoss::ce ? "ce" : "dlr"; }

struct AttackConfig {
  AttackMethod method = AttackMethod::pgd;
  Norm norm = Norm::l2;
  /// Radii, strictly increasing. PGD and AutoPGD sweep them smallest first;
  /// CW accepts only results within the largest one.
  std::vector<double> epsilons{1.0};
  std::size_t max_steps = 100;
  /// Unset means "adaptive": 2 * eps / max_steps.
  std::optional<double> step_size;
  /// AutoPGD loss. Unset runs both ce and dlr and keeps the closer success.
  std::optional<AttackLoss> loss;
  std::uint64_t seed = 0;
  /// PGD only: start from a uniform point in the ball instead of x.
  bool random_start = false;
  /// Iterates are clipped into [clip_lo, clip_hi]; infinities disable it.
  double clip_lo = 0.0;
  double clip_hi = 1.0;
  /// CW trade-off constant and the number of outer rescaling rounds.
  double cw_const = 1.0;
  std::size_t cw_search_steps = 1;

  void validate() const {
    if (epsilons.empty()) throw PreconditionError("attack needs at least one epsilon");
    for (std::size_t i = 0; i < epsilons.size(); ++i) {
      if (!(epsilons[i] > 0.0)) throw PreconditionError("epsilons must be positive");
      if (i > 0 && !(epsilons[i] > epsilons[i - 1])) {
        throw PreconditionError("epsilons must be strictly increasing");
      }
    }
    if (step_size && !(*step_size > 0.0)) throw PreconditionError("step size must be positive");
    if (!(clip_lo < clip_hi)) throw PreconditionError("clip range must be non-empty");
    if (!(cw_const > 0.0)) throw PreconditionError("cw constant must be positive");
    if (cw_search_steps == 0) throw PreconditionError("cw needs at least one search step");
  }

  double step_for(double eps) const { return step_size ? *step_size : 2.0 * eps / std::max<std::size_t>(max_steps, 1); }

  std::string tag() const {
    std::string t = to_string(method);
    if (method != AttackMethod::cw) t += std::string("-") + to_string(norm);
    return t;
  }
};

/// Attack configuration from `key = value` text. Keys: method, norm,
/// epsilons, max_steps, step_size (number or "adaptive"), loss (ce, dlr,
/// both), seed, random_start, clip ("lo,hi" or "none"), cw_const,
/// cw_search_steps.
inline AttackConfig parse_attack_config(const KeyValues& kv) {
  kv.require_known({"method", "norm", "epsilons", "max_steps", "step_size", "loss", "seed",
                    "random_start", "clip", "cw_const", "cw_search_steps"});
  AttackConfig cfg;
  if (const auto* v = kv.find("method")) {
    if (*v == "pgd") cfg.method = AttackMethod::pgd;
    else if (*v == "cw") cfg.method = AttackMethod::cw;
    else if (*v == "autopgd" || *v == "apgd") cfg.method = AttackMethod::autopgd;
    else throw FormatError("unknown attack method \"" + *v + "\"", 0);
  }
  if (const auto* v = kv.find("norm")) {
    if (*v == "l2") cfg.norm = Norm::l2;
    else if (*v == "linf") cfg.norm = Norm::linf;
    else throw FormatError("unknown norm \"" + *v + "\"", 0);
  }
  if (const auto* v = kv.find("epsilons")) cfg.epsilons = parse_double_list(*v, "epsilons");
  if (const auto* v = kv.find("max_steps")) cfg.max_steps = parse_u64(*v, "max_steps");
  if (const auto* v = kv.find("step_size")) {
    if (*v == "adaptive") cfg.step_size.reset();
    else cfg.step_size = parse_double(*v, "step_size");
  }
  if (const auto* v = kv.find("loss")) {
    if (*v == "ce") cfg.loss = AttackLoss::ce;
    else if (*v == "dlr") cfg.loss = AttackLoss::dlr;
    else if (*v == "both") cfg.loss.reset();
    else throw FormatError("unknown loss \"" + *v + "\"", 0);
  }
  if (const auto* v = kv.find("seed")) cfg.seed = parse_u64(*v, "seed");
  if (const auto* v = kv.find("random_start")) cfg.random_start = (*v == "true" || *v == "1");
  if (const auto* v = kv.find("clip")) {
    if (*v == "none") {
      cfg.clip_lo = -std::numeric_limits<double>::infinity();
      cfg.clip_hi = std::numeric_limits<double>::infinity();
    } else {
      const auto range = parse_double_list(*v, "clip");
      if (range.size() != 2) throw FormatError("clip expects lo,hi", 0);
      cfg.clip_lo = range[0];
      cfg.clip_hi = range[1];
    }
  }
  if (const auto* v = kv.find("cw_const")) cfg.cw_const = parse_double(*v, "cw_const");
  if (const auto* v = kv.find("cw_search_steps")) cfg.cw_search_steps = parse_u64(*v, "cw_search_steps");
  try {
    cfg.validate();
  } catch (const PreconditionError& e) {
    throw FormatError(e.what(), 0);
  }
  return cfg;
}

inline std::string attack_config_text(const AttackConfig& cfg) {
  KeyValues kv;
  kv.set("method", to_string(cfg.method));
  kv.set("norm", to_string(cfg.norm));
  std::string eps;
  for (std::size_t i = 0; i < cfg.epsilons.size(); ++i) eps += (i ? "," : "") + format_double(cfg.epsilons[i]);
  kv.set("epsilons", eps);
  kv.set("max_steps", std::to_string(cfg.max_steps));
  kv.set("step_size", cfg.step_size ? format_double(*cfg.step_size) : "adaptive");
  kv.set("loss", cfg.loss ? to_string(*cfg.loss) : "both");
  kv.set("seed", std::to_string(cfg.seed));
  kv.set("random_start", cfg.random_start ? "true" : "false");
  kv.set("clip", std::isfinite(cfg.clip_lo) || std::isfinite(cfg.clip_hi)
                     ? format_double(cfg.clip_lo) + "," + format_double(cfg.clip_hi)
                     : "none");
  kv.set("cw_const", format_double(cfg.cw_const));
  kv.set("cw_search_steps", std::to_string(cfg.cw_search_steps));
  return kv.to_text();
}

/// Closest adversarial example found for one input.
struct BoundaryResult {
  Tensor adversarial;
  double distance = 0.0;
  bool success = false;
  std::string method;
  std::optional<Tensor> normal;
  bool refined = false;
  std::size_t original_class = 0;
  std::size_t adversarial_class = 0;
};

// ---------------------------------------------------------------------------
// Losses on the score vector. Each returns (value, d value / d scores).
// ---------------------------------------------------------------------------

struct LossValue {
  double value = 0.0;
  std::vector<double> grad;
};

/// Cross-entropy of the softmax against `label`.
inline LossValue cross_entropy_loss(std::span<const double> scores, std::size_t label) {
  const double m = *std::max_element(scores.begin(), scores.end());
  double z = 0.0;
  for (double s : scores) z += std::exp(s - m);
  LossValue out;
  out.value = m + std::log(z) - scores[label];
  out.grad.resize(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out.grad[i] = std::exp(scores[i] - m) / z;
  out.grad[label] -= 1.0;
  return out;
}

/// Difference-of-logits-ratio loss. With two classes the ratio degenerates to
/// a sign, so the unnormalised margin -(f_y - f_other) is used instead.
inline LossValue dlr_loss(std::span<const double> scores, std::size_t label) {
  const std::size_t k = scores.size();
  std::vector<std::size_t> order(k);
  for (std::size_t i = 0; i < k; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::size_t other = order[0] == label ? order[1] : order[0];
  LossValue out;
  out.grad.assign(k, 0.0);
  const double margin = scores[label] - scores[other];
  if (k < 3) {
    out.value = -margin;
    out.grad[label] = -1.0;
    out.grad[other] = 1.0;
    return out;
  }
  const double denom = scores[order[0]] - scores[order[2]] + 1e-12;
  out.value = -margin / denom;
  out.grad[label] -= 1.0 / denom;
  out.grad[other] += 1.0 / denom;
  out.grad[order[0]] += margin / (denom * denom);
  out.grad[order[2]] -= margin / (denom * denom);
  return out;
}

/// f_label - max_{j != label} f_j and its score gradient.
inline LossValue margin_loss(std::span<const double> scores, std::size_t label) {
  std::size_t other = label == 0 ? 1 : 0;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (j != label && scores[j] > scores[other]) other = j;
  }
  LossValue out;
  out.value = scores[label] - scores[other];
  out.grad.assign(scores.size(), 0.0);
  out.grad[label] = 1.0;
  out.grad[other] = -1.0;
  return out;
}

namespace detail {

struct LossAndGrad {
  double value = 0.0;
  Tensor grad;
  std::size_t predicted = 0;
};

template <class LossFn>
LossAndGrad loss_and_grad(const Network& net, const Tensor& x, std::size_t label, LossFn&& loss) {
  ForwardTrace trace = forward_trace(net, x);
  LossValue l = loss(std::span<const double>(trace.scores()), label);
  LossAndGrad out;
  out.value = l.value;
  out.predicted = argmax(trace.scores());
  out.grad = Tensor(x.shape(), backward(net, trace, l.grad));
  return out;
}

/// Unit ascent direction: sign for linf, normalised gradient for l2.
inline bool ascent_direction(Tensor& g, Norm norm) {
  if (norm == Norm::linf) {
    bool any = false;
    for (double& v : g.values()) {
      v = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
      any = any || v != 0.0;
    }
    return any;
  }
  const double n = l2_norm(g);
  if (n == 0.0 || !std::isfinite(n)) return false;
  g *= 1.0 / n;
  return true;
}

/// Projects `x` onto B(center, eps) in the given norm, then clips to the box.
inline void project(Tensor& x, const Tensor& center, double eps, Norm norm, double lo, double hi) {
  if (norm == Norm::linf) {
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::clamp(x[i], center[i] - eps, center[i] + eps);
  } else {
    const double d = l2_distance(x, center);
    if (d > eps) {
      const double s = eps / d;
      for (std::size_t i = 0; i < x.size(); ++i) x[i] = center[i] + (x[i] - center[i]) * s;
    }
  }
  clip(x, lo, hi);
}

inline BoundaryResult make_result(const Network& net, const Tensor& x, Tensor adv, std::size_t label,
                                  std::string method) {
  BoundaryResult r;
  r.original_class = label;
  r.adversarial_class = predict(net, adv);
  r.success = r.adversarial_class != label;
  r.distance = l2_distance(adv, x);
  r.adversarial = std::move(adv);
  r.method = std::move(method);
  return r;
}

inline std::size_t resolve_label(const Network& net, const Tensor& x, std::optional<std::size_t> label) {
  if (net.num_classes() < 2) throw InputError("boundary search needs at least two classes");
  const std::size_t c = label.value_or(predict(net, x));
  if (c >= net.num_classes()) throw InputError("label out of range");
  return c;
}

inline std::optional<BoundaryResult> already_adversarial(const Network& net, const Tensor& x,
                                                         std::size_t label, const std::string& tag) {
  if (predict(net, x) == label) return std::nullopt;
  return make_result(net, x, x, label, tag);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Attacks
// ---------------------------------------------------------------------------

/// Untargeted PGD on the cross-entropy loss. Sweeps cfg.epsilons smallest
/// first, each from a fresh start, and stops at the first adversarial iterate.
inline BoundaryResult pgd_attack(const Network& net, const Tensor& x, const AttackConfig& cfg,
                                 std::optional<std::size_t> label = std::nullopt) {
  cfg.validate();
  const std::size_t c = detail::resolve_label(net, x, label);
  const std::string tag = cfg.tag();
  if (auto r = detail::already_adversarial(net, x, c, tag)) return *r;

  Tensor last = x;
  CounterRng rng(cfg.seed);
  for (double eps : cfg.epsilons) {
    const double alpha = cfg.step_for(eps);
    Tensor cur = x;
    if (cfg.random_start) {
      for (double& v : cur.values()) v += rng.uniform(-eps, eps);
      detail::project(cur, x, eps, cfg.norm, cfg.clip_lo, cfg.clip_hi);
    }
    for (std::size_t step = 0; step < cfg.max_steps; ++step) {
      auto lg = detail::loss_and_grad(net, cur, c, cross_entropy_loss);
      if (lg.predicted != c) break;
      if (!detail::ascent_direction(lg.grad, cfg.norm)) break;
      for (std::size_t i = 0; i < cur.size(); ++i) cur[i] += alpha * lg.grad[i];
      detail::project(cur, x, eps, cfg.norm, cfg.clip_lo, cfg.clip_hi);
    }
    if (predict(net, cur) != c) return detail::make_result(net, x, std::move(cur), c, tag);
    last = std::move(cur);
  }
  return detail::make_result(net, x, std::move(last), c, tag);
}

/// Carlini-Wagner L2 with kappa = 0: Adam descent on
/// ||delta||^2 + c_cw * max(f_c - max_{j!=c} f_j, 0). Returns the closest
/// successful iterate seen. With cw_search_steps > 1 the constant is
/// rescaled between rounds (x10 after a failed round, bisected after a
/// successful one).
inline BoundaryResult cw_attack(const Network& net, const Tensor& x, const AttackConfig& cfg,
                                std::optional<std::size_t> label = std::nullopt) {
  cfg.validate();
  const std::size_t c = detail::resolve_label(net, x, label);
  const std::string tag = cfg.tag();
  if (auto r = detail::already_adversarial(net, x, c, tag)) return *r;

  const double max_dist = cfg.epsilons.back();
  const double lr = cfg.step_for(max_dist);
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kAdamEps = 1e-8;

  std::optional<Tensor> best;
  double best_dist = std::numeric_limits<double>::infinity();
  Tensor last = x;
  double lower = 0.0;
  double upper = std::numeric_limits<double>::infinity();
  double cw_const = cfg.cw_const;

  for (std::size_t round = 0; round < cfg.cw_search_steps; ++round) {
    Tensor delta = zeros_like(x);
    Tensor m1 = zeros_like(x);
    Tensor m2 = zeros_like(x);
    bool round_success = false;
    for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
      Tensor cur = x + delta;
      clip(cur, cfg.clip_lo, cfg.clip_hi);
      ForwardTrace trace = forward_trace(net, cur);
      const std::size_t pred = argmax(trace.scores());
      const double dist = l2_distance(cur, x);
      if (pred != c) {
        round_success = true;
        if (dist < best_dist && dist <= max_dist) {
          best_dist = dist;
          best = cur;
        }
      }
      LossValue margin = margin_loss(std::span<const double>(trace.scores()), c);
      Tensor grad = delta * 2.0;
      if (margin.value > 0.0) {
        for (double& g : margin.grad) g *= cw_const;
        const std::vector<double> gx = backward(net, trace, margin.grad);
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += gx[i];
      }
      const double b1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
      const double b2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
      for (std::size_t i = 0; i < delta.size(); ++i) {
        m1[i] = kBeta1 * m1[i] + (1.0 - kBeta1) * grad[i];
        m2[i] = kBeta2 * m2[i] + (1.0 - kBeta2) * grad[i] * grad[i];
        delta[i] -= lr * (m1[i] / b1) / (std::sqrt(m2[i] / b2) + kAdamEps);
      }
      last = std::move(cur);
    }
    if (round_success) {
      upper = std::min(upper, cw_const);
      cw_const = 0.5 * (lower + upper);
    } else {
      lower = std::max(lower, cw_const);
      cw_const = std::isfinite(upper) ? 0.5 * (lower + upper) : cw_const * 10.0;
    }
  }
  if (best) return detail::make_result(net, x, std::move(*best), c, tag);
  BoundaryResult r = detail::make_result(net, x, std::move(last), c, tag);
  r.success = false;
  return r;
}

namespace detail {

/// Checkpoints of the AutoPGD step-size schedule as iteration indices.
inline std::vector<std::size_t> apgd_checkpoints(std::size_t n_iter) {
  std::vector<double> p{0.0, 0.22};
  while (p.back() < 1.0) {
    const double next = p.back() + std::max(p.back() - p[p.size() - 2] - 0.03, 0.06);
    p.push_back(next);
  }
  std::vector<std::size_t> w;
  for (double v : p) {
    const auto it = static_cast<std::size_t>(std::ceil(v * static_cast<double>(n_iter)));
    if (it <= n_iter && (w.empty() || it > w.back())) w.push_back(it);
  }
  return w;
}

template <class LossFn>
std::optional<Tensor> apgd_single(const Network& net, const Tensor& x, std::size_t c, double eps,
                                  const AttackConfig& cfg, LossFn&& loss, Tensor& last) {
  constexpr double kMomentum = 0.75;
  constexpr double kRho = 0.75;
  const std::size_t n_iter = cfg.max_steps;
  if (n_iter == 0) return std::nullopt;

  const std::vector<std::size_t> checkpoints = apgd_checkpoints(n_iter);
  std::size_t next_cp = 1;
  double eta = cfg.step_size ? *cfg.step_size : 2.0 * eps;

  Tensor prev = x;
  Tensor cur = x;
  auto lg = loss_and_grad(net, cur, c, loss);
  Tensor best = cur;
  double best_loss = lg.value;
  double prev_loss = lg.value;

  std::size_t increases = 0;
  double eta_at_last_cp = eta;
  double best_at_last_cp = best_loss;
  bool reduced_at_last_cp = false;

  for (std::size_t k = 0; k < n_iter; ++k) {
    Tensor dir = lg.grad;
    if (!ascent_direction(dir, cfg.norm)) break;
    Tensor z = cur;
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += eta * dir[i];
    project(z, x, eps, cfg.norm, cfg.clip_lo, cfg.clip_hi);
    Tensor next = z;
    if (k > 0) {
      for (std::size_t i = 0; i < next.size(); ++i) {
        next[i] = cur[i] + kMomentum * (z[i] - cur[i]) + (1.0 - kMomentum) * (cur[i] - prev[i]);
      }
      project(next, x, eps, cfg.norm, cfg.clip_lo, cfg.clip_hi);
    }
    prev = std::move(cur);
    cur = std::move(next);
    lg = loss_and_grad(net, cur, c, loss);
    if (lg.predicted != c) {
      last = cur;
      return cur;
    }
    if (lg.value > prev_loss) ++increases;
    prev_loss = lg.value;
    if (lg.value > best_loss) {
      best_loss = lg.value;
      best = cur;
    }
    const std::size_t iter = k + 1;
    if (next_cp < checkpoints.size() && iter == checkpoints[next_cp]) {
      const double span = static_cast<double>(checkpoints[next_cp] - checkpoints[next_cp - 1]);
      const bool few_increases = static_cast<double>(increases) < kRho * span;
      const bool stalled = !reduced_at_last_cp && eta_at_last_cp == eta && best_at_last_cp == best_loss;
      reduced_at_last_cp = few_increases || stalled;
      if (reduced_at_last_cp) {
        eta *= 0.5;
        prev = cur;
        cur = best;
        lg = loss_and_grad(net, cur, c, loss);
      }
      increases = 0;
      eta_at_last_cp = eta;
      best_at_last_cp = best_loss;
      ++next_cp;
    }
  }
  last = std::move(cur);
  return std::nullopt;
}

}  // namespace detail

/// AutoPGD with momentum 0.75 and checkpointed step halving (rho = 0.75), no
/// restarts. Runs the ce and dlr losses (or the one configured) over the
/// epsilon sweep and keeps the closer success.
inline BoundaryResult autopgd_attack(const Network& net, const Tensor& x, const AttackConfig& cfg,
                                     std::optional<std::size_t> label = std::nullopt) {
  cfg.validate();
  const std::size_t c = detail::resolve_label(net, x, label);
  if (auto r = detail::already_adversarial(net, x, c, cfg.tag())) return *r;

  std::vector<AttackLoss> losses;
  if (cfg.loss) losses.push_back(*cfg.loss);
  else losses = {AttackLoss::ce, AttackLoss::dlr};

  std::optional<BoundaryResult> best;
  std::optional<BoundaryResult> first_failure;
  for (AttackLoss loss : losses) {
    const std::string tag = cfg.tag() + "-" + to_string(loss);
    Tensor last = x;
    std::optional<Tensor> found;
    for (double eps : cfg.epsilons) {
      found = loss == AttackLoss::ce ? detail::apgd_single(net, x, c, eps, cfg, cross_entropy_loss, last)
                                     : detail::apgd_single(net, x, c, eps, cfg, dlr_loss, last);
      if (found) break;
    }
    if (found) {
      BoundaryResult r = detail::make_result(net, x, std::move(*found), c, tag);
      if (!best || r.distance < best->distance) best = std::move(r);
    } else if (!first_failure) {
      first_failure = detail::make_result(net, x, std::move(last), c, tag);
    }
  }
  return best ? *best : *first_failure;
}

inline BoundaryResult run_attack(const Network& net, const Tensor& x, const AttackConfig& cfg,
                                 std::optional<std::size_t> label = std::nullopt) {
  switch (cfg.method) {
    case AttackMethod::pgd: return pgd_attack(net, x, cfg, label);
    case AttackMethod::cw: return cw_attack(net, x, cfg, label);
    case AttackMethod::autopgd: return autopgd_attack(net, x, cfg, label);
  }
  throw PreconditionError("unknown attack method");
}

// ---------------------------------------------------------------------------
// Refinement, normals, ensemble
// ---------------------------------------------------------------------------

/// Two points straddling the decision boundary on the segment [x, x_adv]:
/// `inside` keeps the original label, `outside` does not.
struct BoundaryBracket {
  Tensor inside;
  Tensor outside;
  double t_inside = 0.0;
  double t_outside = 1.0;
};

/// Locates the first label change along [x, x_adv]: a coarse scan finds the
/// first flipped sample, then bisection shrinks the bracket to `tolerance`
/// of the segment length.
inline BoundaryBracket bracket_boundary(const Network& net, const Tensor& x, const Tensor& x_adv,
                                        std::optional<std::size_t> label = std::nullopt,
                                        double tolerance = 1e-5) {
  const std::size_t c = label.value_or(predict(net, x));
  if (predict(net, x_adv) == c) throw SameLabelError("refinement endpoints share the label");
  if (predict(net, x) != c) throw SameLabelError("start point does not carry the reference label");
  constexpr std::size_t kScan = 64;
  double lo = 0.0;
  double hi = 1.0;
  for (std::size_t i = 1; i < kScan; ++i) {
    const double t = static_cast<double>(i) / kScan;
    if (predict(net, lerp(x, x_adv, t)) != c) {
      hi = t;
      break;
    }
    lo = t;
  }
  while (hi - lo > tolerance) {
    const double mid = 0.5 * (lo + hi);
    if (predict(net, lerp(x, x_adv, mid)) != c) hi = mid;
    else lo = mid;
  }
  BoundaryBracket b;
  b.t_inside = lo;
  b.t_outside = hi;
  b.inside = lo == 0.0 ? x : lerp(x, x_adv, lo);
  b.outside = hi == 1.0 ? x_adv : lerp(x, x_adv, hi);
  return b;
}

/// Moves an adversarial point onto the decision boundary along the segment
/// from x. The result is still adversarial and never farther from x than
/// x_adv; the bracketing interval is 1e-5 of the segment length.
inline Tensor refine_to_boundary(const Network& net, const Tensor& x, const Tensor& x_adv,
                                 std::optional<std::size_t> label = std::nullopt) {
  return bracket_boundary(net, x, x_adv, label).outside;
}

/// Gradient of the original class score at the adversarial point.
inline Tensor boundary_normal(const Network& net, const BoundaryResult& result) {
  if (!result.success) throw NoBoundaryError("boundary search did not succeed");
  return input_gradient(net, result.adversarial, result.original_class);
}

/// Refines a successful result in place and attaches its normal.
inline void finalize_boundary(const Network& net, const Tensor& x, BoundaryResult& r) {
  if (!r.success) return;
  if (r.distance > 0.0) {
    r.adversarial = refine_to_boundary(net, x, r.adversarial, r.original_class);
    r.distance = l2_distance(r.adversarial, x);
    r.adversarial_class = predict(net, r.adversarial);
    r.refined = true;
  }
  r.normal = boundary_normal(net, r);
}

/// Runs every configured attack, refines the successes, and returns the one
/// closest to x in l2. When nothing succeeds the first attack's last iterate
/// is returned with success = false.
inline BoundaryResult boundary_search_ensemble(const Network& net, const Tensor& x,
                                               const std::vector<AttackConfig>& configs,
                                               std::optional<std::size_t> label = std::nullopt) {
  if (configs.empty()) throw PreconditionError("boundary search needs at least one attack");
  std::optional<BoundaryResult> best;
  std::optional<BoundaryResult> first;
  for (const AttackConfig& cfg : configs) {
    BoundaryResult r = run_attack(net, x, cfg, label);
    if (!first) first = r;
    if (!r.success) continue;
    finalize_boundary(net, x, r);
    if (!best || r.distance < best->distance) best = std::move(r);
  }
  return best ? *best : *first;
}

// ---------------------------------------------------------------------------
// Presets mirroring the published hyper-parameter tables
// ---------------------------------------------------------------------------

namespace presets {

inline AttackConfig pgd(std::vector<double> eps, std::optional<double> step = std::nullopt,
                        Norm norm = Norm::l2) {
  AttackConfig c;
  c.method = AttackMethod::pgd;
  c.norm = norm;
  c.epsilons = std::move(eps);
  c.max_steps = 100;
  c.step_size = step;
  return c;
}

inline AttackConfig cw(double eps, double step) {
  AttackConfig c;
  c.method = AttackMethod::cw;
  c.epsilons = {eps};
  c.max_steps = 100;
  c.step_size = step;
  return c;
}

inline AttackConfig autopgd(double eps, double step) {
  AttackConfig c;
  c.method = AttackMethod::autopgd;
  c.epsilons = {eps};
  c.max_steps = 100;
  c.step_size = step;
  return c;
}

/// ImageNet, standard model.
inline std::vector<AttackConfig> imagenet_standard() {
  return {pgd({36.0 / 255, 64.0 / 255, 0.3, 0.5, 0.7, 0.9, 1.1}), cw(1.0, 1e-2), autopgd(1.1, 2.3e-2)};
}
/// ImageNet, robust model.
inline std::vector<AttackConfig> imagenet_robust() {
  return {pgd({1.0, 2.0, 3.0, 4.0, 5.0, 6.0}), cw(6.0, 5e-2), autopgd(6.0, 1.2e-1)};
}
/// CIFAR-10, standard model.
inline std::vector<AttackConfig> cifar_standard() {
  return {pgd({0.2, 0.4, 0.6, 0.8, 1.0}, 5e-3), cw(1.0, 1e-3), autopgd(1.0, 6e-3)};
}
/// CIFAR-10, robust model.
inline std::vector<AttackConfig> cifar_robust() {
  return {pgd({0.25, 0.5, 1.0, 1.5, 2.0}, 5e-3), cw(2.0, 1e-3), autopgd(2.0, 1.6e-2)};
}

/// Pipeline for desk-scale models whose inputs live in [lo, hi]^d: a PGD
/// sweep up to `max_eps`, CW and AutoPGD at `max_eps`, then `restarts`
/// randomly started copies of the PGD sweep (seeds 1..restarts).
inline std::vector<AttackConfig> toy(double max_eps, double lo, double hi, std::size_t restarts = 0) {
  std::vector<double> sweep;
  for (double f : {0.05, 0.1, 0.2, 0.35, 0.5, 0.75, 1.0}) sweep.push_back(f * max_eps);
  std::vector<AttackConfig> out{pgd(sweep), cw(max_eps, max_eps / 100.0), autopgd(max_eps, 2.0 * max_eps)};
  out[1].cw_search_steps = 4;
  for (std::size_t r = 1; r <= restarts; ++r) {
    AttackConfig c = pgd(sweep);
    c.random_start = true;
    c.seed = r;
    out.push_back(c);
  }
  for (AttackConfig& c : out) {
    c.clip_lo = lo;
    c.clip_hi = hi;
  }
  return out;
}

}  // namespace presets

}  // namespace bdry
