#pragma once

#include <bdry/attribution.hpp>
#include <bdry/boundary_search.hpp>
#include <bdry/config.hpp>
#include <bdry/datasets.hpp>
#include <bdry/errors.hpp>
#include <bdry/metrics.hpp>
#include <bdry/network.hpp>
#include <bdry/parallel.hpp>
#include <bdry/rng.hpp>
#include <bdry/training.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace bdry {

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// One record of an experiment. NaN values are undefined cells; a non-empty
/// flag marks a row excluded from the summary.
struct ReportRow {
  std::string id;
  std::string method;
  std::vector<std::pair<std::string, double>> values;
  std::string flag;

  double get(std::string_view key) const {
    for (const auto& [k, v] : values) {
      if (k == key) return v;
    }
    throw InputError("report row has no column \"" + std::string(key) + "\"");
  }
  void set(std::string key, double v) {
    for (auto& [k, old] : values) {
      if (k == key) {
        old = v;
        return;
      }
    }
    values.emplace_back(std::move(key), v);
  }
};

/// Rows per group (net, method or sigma) that were evaluated or skipped.
/// evaluated + skipped always equals the dataset size.
struct GroupCount {
  std::string group;
  std::size_t evaluated = 0;
  std::size_t skipped = 0;
};

struct ExperimentReport {
  std::string name;
  std::vector<ReportRow> rows;
  std::vector<ReportRow> summary;
  KeyValues config_echo;
  std::vector<GroupCount> counts;
  /// Attribution maps kept for rendering: (file stem, values).
  std::vector<std::pair<std::string, Tensor>> maps;

  const ReportRow& summary_row(std::string_view id, std::string_view method) const {
    for (const ReportRow& r : summary) {
      if (r.id == id && r.method == method) return r;
    }
    throw InputError("no summary row " + std::string(id) + "/" + std::string(method));
  }
  const GroupCount& count(std::string_view group) const {
    for (const GroupCount& g : counts) {
      if (g.group == group) return g;
    }
    throw InputError("no group \"" + std::string(group) + "\"");
  }
};

inline std::string format_cell(double v) { return std::isnan(v) ? "na" : format_double(v); }

/// `id,method,<columns...>,flag` where columns are the union of row keys in
/// order of first appearance.
inline std::string report_csv(const std::vector<ReportRow>& rows) {
  std::vector<std::string> cols;
  for (const ReportRow& r : rows) {
    for (const auto& [k, v] : r.values) {
      if (std::find(cols.begin(), cols.end(), k) == cols.end()) cols.push_back(k);
    }
  }
  std::string out = "id,method";
  for (const std::string& c : cols) out += "," + c;
  out += ",flag\n";
  for (const ReportRow& r : rows) {
    out += r.id + "," + r.method;
    for (const std::string& c : cols) {
      double v = std::numeric_limits<double>::quiet_NaN();
      for (const auto& [k, val] : r.values) {
        if (k == c) v = val;
      }
      out += "," + format_cell(v);
    }
    out += "," + r.flag + "\n";
  }
  return out;
}

namespace detail {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Mean per column over unflagged rows of one method, skipping NaN cells.
inline ReportRow mean_row(const std::vector<ReportRow>& rows, const std::string& method,
                          const std::vector<std::string>& cols) {
  ReportRow out{"mean", method, {}, ""};
  for (const std::string& c : cols) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const ReportRow& r : rows) {
      if (r.method != method || !r.flag.empty()) continue;
      const double v = r.get(c);
      if (std::isnan(v)) continue;
      sum += v;
      ++n;
    }
    out.values.emplace_back(c, n ? sum / static_cast<double>(n) : kNaN);
  }
  return out;
}

inline GroupCount count_group(const std::vector<ReportRow>& rows, const std::string& method) {
  GroupCount g{method, 0, 0};
  for (const ReportRow& r : rows) {
    if (r.method != method) continue;
    ++(r.flag.empty() ? g.evaluated : g.skipped);
  }
  return g;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Shared configuration
// ---------------------------------------------------------------------------

struct ExperimentConfig {
  /// Boundary-search pipeline. Empty means the toy preset scaled to max_eps
  /// and clipped to the dataset domain.
  std::vector<AttackConfig> attacks;
  double max_eps = 3.0;
  /// Randomly started PGD copies added to the preset.
  std::size_t restarts = 8;
  IGConfig ig;
  double sg_sigma = 0.5;
  std::size_t sg_samples = 50;
  /// topk is capped at num_classes - 1 and clipping follows the dataset.
  AgiConfig agi;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  /// Instances (by position) whose maps are kept in the report for rendering.
  std::size_t keep_maps = 0;
};

inline std::vector<AttackConfig> attacks_for(const ExperimentConfig& cfg, const ToyDataset& ds) {
  if (!cfg.attacks.empty()) return cfg.attacks;
  return presets::toy(cfg.max_eps, ds.domain_lo, ds.domain_hi, cfg.restarts);
}

inline AgiConfig agi_for(const ExperimentConfig& cfg, const ToyDataset& ds, std::size_t num_classes) {
  AgiConfig a = cfg.agi;
  a.topk = std::min(a.topk, num_classes - 1);
  a.clip_lo = ds.domain_lo;
  a.clip_hi = ds.domain_hi;
  return a;
}

inline constexpr const char* kAttributionMethods[] = {"sm", "gti", "ig", "sg", "bsm", "big", "agi"};

inline bool needs_boundary(std::string_view method) { return method == "bsm" || method == "big"; }

/// Computes one named attribution for instance `index`. IG uses the zero
/// baseline; SG is seeded with seed ^ index.
inline AttributionMap compute_attribution(std::string_view method, const Network& net, const Tensor& x,
                                          const std::optional<BoundaryResult>& boundary,
                                          const ExperimentConfig& cfg, const ToyDataset& ds, std::size_t index) {
  const std::size_t c = predict(net, x);
  if (method == "sm") return saliency_map(net, x, c);
  if (method == "gti") return grad_times_input(net, x, c);
  if (method == "ig") return integrated_gradients(net, x, zeros_like(x), c, cfg.ig);
  if (method == "sg") return smooth_gradient(net, x, c, cfg.sg_sigma, cfg.sg_samples, cfg.seed ^ index);
  if (method == "agi") return agi(net, x, agi_for(cfg, ds, net.num_classes()), c);
  if (needs_boundary(method)) {
    if (!boundary) throw NoBoundaryError("no boundary result supplied");
    return method == "bsm" ? boundary_saliency_map(net, x, *boundary)
                           : boundary_integrated_gradients(net, x, *boundary, cfg.ig);
  }
  throw PreconditionError("unknown attribution method \"" + std::string(method) + "\"");
}

// ---------------------------------------------------------------------------
// Alignment: distance between each attribution and its boundary variant
// ---------------------------------------------------------------------------

using LabeledNet = std::pair<std::string, Network>;

/// Per instance and net: ||SM - BSM||, ||IG - AGI||, ||IG - BIG|| with the
/// zero IG baseline. Misclassified instances and failed searches are flagged.
inline ExperimentReport run_alignment(const std::vector<LabeledNet>& nets, const ToyDataset& ds,
                                      const ExperimentConfig& cfg) {
  ExperimentReport rep;
  rep.name = "alignment";
  const std::size_t n = ds.size();
  std::vector<std::vector<ReportRow>> slots(n * nets.size());
  std::vector<std::vector<std::pair<std::string, Tensor>>> map_slots(slots.size());
  parallel_for(slots.size(), cfg.threads, [&](std::size_t job) {
    const std::size_t k = job / n;
    const std::size_t i = job % n;
    const auto& [label, net] = nets[k];
    const Tensor& x = ds.inputs[i];
    ReportRow row{std::to_string(i), label, {}, ""};
    auto nan_row = [&](std::string flag) {
      row.values = {{"sm_bsm", detail::kNaN}, {"ig_agi", detail::kNaN}, {"ig_big", detail::kNaN},
                    {"boundary_distance", detail::kNaN}};
      row.flag = std::move(flag);
      slots[job].push_back(row);
    };
    if (predict(net, x) != ds.labels[i]) return nan_row("misclassified");
    const BoundaryResult b = boundary_search_ensemble(net, x, attacks_for(cfg, ds));
    if (!b.success) return nan_row("no_boundary");
    const AttributionMap sm = compute_attribution("sm", net, x, b, cfg, ds, i);
    const AttributionMap bsm = compute_attribution("bsm", net, x, b, cfg, ds, i);
    const AttributionMap ig = compute_attribution("ig", net, x, b, cfg, ds, i);
    const AttributionMap big = compute_attribution("big", net, x, b, cfg, ds, i);
    const AttributionMap ag = compute_attribution("agi", net, x, b, cfg, ds, i);
    row.values = {{"sm_bsm", attribution_l2_distance(sm, bsm)},
                  {"ig_agi", attribution_l2_distance(ig, ag)},
                  {"ig_big", attribution_l2_distance(ig, big)},
                  {"boundary_distance", b.distance}};
    slots[job].push_back(row);
    if (i < cfg.keep_maps) {
      for (const AttributionMap* m : {&sm, &bsm, &ig, &big, &ag}) {
        map_slots[job].emplace_back(label + "_" + std::to_string(i) + "_" + m->method, m->values);
      }
    }
  });
  for (std::size_t j = 0; j < slots.size(); ++j) {
    for (ReportRow& r : slots[j]) rep.rows.push_back(std::move(r));
    for (auto& m : map_slots[j]) rep.maps.push_back(std::move(m));
  }
  for (const auto& [label, net] : nets) {
    rep.summary.push_back(detail::mean_row(rep.rows, label, {"sm_bsm", "ig_agi", "ig_big", "boundary_distance"}));
    rep.counts.push_back(detail::count_group(rep.rows, label));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Localization: bounding-box metrics per attribution method
// ---------------------------------------------------------------------------

inline ExperimentReport run_localization(const Network& net, const ToyDataset& ds,
                                         const std::vector<std::string>& methods, const ExperimentConfig& cfg) {
  if (!ds.has_boxes()) throw PreconditionError("localization needs a dataset with bounding boxes");
  ExperimentReport rep;
  rep.name = "localization";
  std::vector<std::vector<ReportRow>> slots(ds.size());
  std::vector<std::vector<std::pair<std::string, Tensor>>> map_slots(ds.size());
  const bool any_boundary = std::any_of(methods.begin(), methods.end(), [](const std::string& m) { return needs_boundary(m); });
  parallel_for(ds.size(), cfg.threads, [&](std::size_t i) {
    const Tensor& x = ds.inputs[i];
    const std::string id = std::to_string(i);
    auto flagged = [&](const std::string& method, const std::string& flag) {
      slots[i].push_back({id, method,
                          {{"loc", detail::kNaN}, {"eg", detail::kNaN}, {"pp", detail::kNaN}, {"con", detail::kNaN}},
                          flag});
    };
    if (predict(net, x) != ds.labels[i]) {
      for (const std::string& m : methods) flagged(m, "misclassified");
      return;
    }
    std::optional<BoundaryResult> b;
    if (any_boundary) {
      BoundaryResult r = boundary_search_ensemble(net, x, attacks_for(cfg, ds));
      if (r.success) b = std::move(r);
    }
    for (const std::string& m : methods) {
      if (needs_boundary(m) && !b) {
        flagged(m, "no_boundary");
        continue;
      }
      const AttributionMap a = compute_attribution(m, net, x, b, cfg, ds, i);
      const MetricRow s = score_attribution(id, m, PixelAttribution::from_tensor(a.values), ds.boxes[i]);
      ReportRow row{id, m,
                    {{"loc", s.loc.value_or(detail::kNaN)}, {"eg", s.eg.value_or(detail::kNaN)},
                     {"pp", s.pp.value_or(detail::kNaN)}, {"con", s.con.value_or(detail::kNaN)}},
                    ""};
      if (!s.eg || !s.pp || !s.con) row.flag = "undefined_metric";
      slots[i].push_back(std::move(row));
      if (i < cfg.keep_maps) map_slots[i].emplace_back(id + "_" + m, a.values);
    }
  });
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (ReportRow& r : slots[i]) rep.rows.push_back(std::move(r));
    for (auto& m : map_slots[i]) rep.maps.push_back(std::move(m));
  }
  for (const std::string& m : methods) {
    rep.summary.push_back(detail::mean_row(rep.rows, m, {"loc", "eg", "pp", "con"}));
    rep.counts.push_back(detail::count_group(rep.rows, m));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Correlation between alignment and localization
// ---------------------------------------------------------------------------

/// Alignment of one attribution pair on one instance, with the localization
/// scores of the pair's first map.
struct AlignmentSample {
  std::string pair;
  double alignment = 0.0;
  double loc = 0.0;
  double eg = 0.0;
  double pp = 0.0;
  double con = 0.0;
};

inline constexpr const char* kAlignmentPairs[] = {"sm-bsm", "ig-agi", "ig-big"};
inline constexpr const char* kMetricColumns[] = {"loc", "eg", "pp", "con"};

/// Pearson coefficient per (pair, metric) between the alignment values and
/// the localization scores. Zero-variance columns are left NaN and named in
/// the row flag.
inline std::vector<ReportRow> correlate_alignment(const std::vector<AlignmentSample>& samples) {
  std::vector<ReportRow> out;
  for (const char* pair : kAlignmentPairs) {
    ReportRow row{"pearson", pair, {}, ""};
    for (const char* col : kMetricColumns) {
      std::vector<double> xs;
      std::vector<double> ys;
      for (const AlignmentSample& s : samples) {
        if (s.pair != pair) continue;
        const double y = std::string_view(col) == "loc" ? s.loc
                         : std::string_view(col) == "eg" ? s.eg
                         : std::string_view(col) == "pp" ? s.pp
                                                         : s.con;
        if (std::isnan(y) || std::isnan(s.alignment)) continue;
        xs.push_back(s.alignment);
        ys.push_back(y);
      }
      double r = detail::kNaN;
      if (xs.size() < 3) {
        row.flag += std::string(row.flag.empty() ? "" : ";") + "too_few:" + col;
      } else {
        try {
          r = pearson_correlation(xs, ys);
        } catch (const UndefinedMetricError&) {
          row.flag += std::string(row.flag.empty() ? "" : ";") + "zero_variance:" + col;
        }
      }
      row.values.emplace_back(col, r);
    }
    out.push_back(std::move(row));
  }
  return out;
}

/// Alignment is -||X - Y||; localization scores are those of X.
inline ExperimentReport run_correlation(const Network& net, const ToyDataset& ds, const ExperimentConfig& cfg) {
  if (!ds.has_boxes()) throw PreconditionError("correlation needs a dataset with bounding boxes");
  ExperimentReport rep;
  rep.name = "correlation";
  std::vector<std::vector<ReportRow>> slots(ds.size());
  parallel_for(ds.size(), cfg.threads, [&](std::size_t i) {
    const Tensor& x = ds.inputs[i];
    const std::string id = std::to_string(i);
    auto flagged = [&](const std::string& flag) {
      for (const char* pair : kAlignmentPairs) {
        slots[i].push_back({id, pair,
                            {{"alignment", detail::kNaN}, {"loc", detail::kNaN}, {"eg", detail::kNaN},
                             {"pp", detail::kNaN}, {"con", detail::kNaN}},
                            flag});
      }
    };
    if (predict(net, x) != ds.labels[i]) return flagged("misclassified");
    const BoundaryResult b = boundary_search_ensemble(net, x, attacks_for(cfg, ds));
    if (!b.success) return flagged("no_boundary");
    const AttributionMap sm = compute_attribution("sm", net, x, b, cfg, ds, i);
    const AttributionMap bsm = compute_attribution("bsm", net, x, b, cfg, ds, i);
    const AttributionMap ig = compute_attribution("ig", net, x, b, cfg, ds, i);
    const AttributionMap big = compute_attribution("big", net, x, b, cfg, ds, i);
    const AttributionMap ag = compute_attribution("agi", net, x, b, cfg, ds, i);
    const std::pair<const AttributionMap*, const AttributionMap*> pairs[] = {{&sm, &bsm}, {&ig, &ag}, {&ig, &big}};
    for (std::size_t p = 0; p < 3; ++p) {
      const MetricRow s = score_attribution(id, kAlignmentPairs[p], PixelAttribution::from_tensor(pairs[p].first->values),
                                            ds.boxes[i]);
      slots[i].push_back({id, kAlignmentPairs[p],
                          {{"alignment", -attribution_l2_distance(*pairs[p].first, *pairs[p].second)},
                           {"loc", s.loc.value_or(detail::kNaN)},
                           {"eg", s.eg.value_or(detail::kNaN)},
                           {"pp", s.pp.value_or(detail::kNaN)},
                           {"con", s.con.value_or(detail::kNaN)}},
                          ""});
    }
  });
  std::vector<AlignmentSample> samples;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (ReportRow& r : slots[i]) {
      if (r.flag.empty()) {
        samples.push_back({r.method, r.get("alignment"), r.get("loc"), r.get("eg"), r.get("pp"), r.get("con")});
      }
      rep.rows.push_back(std::move(r));
    }
  }
  for (const char* pair : kAlignmentPairs) rep.counts.push_back(detail::count_group(rep.rows, pair));
  if (rep.counts.front().evaluated < 3) throw PreconditionError("correlation needs at least 3 evaluable instances");
  rep.summary = correlate_alignment(samples);
  return rep;
}

// ---------------------------------------------------------------------------
// Randomized smoothing
// ---------------------------------------------------------------------------

struct SmoothingConfig {
  std::size_t n_noise = 50;
  double eps = 3.0;
  std::size_t iterations = 40;
  /// The attack stops once fewer than this fraction of noisy copies keep the label.
  double stop_fraction = 0.1;
  std::uint64_t seed = 0;
  double clip_lo = -std::numeric_limits<double>::infinity();
  double clip_hi = std::numeric_limits<double>::infinity();
  std::size_t threads = 1;
};

/// True for dense -> relu -> dense networks.
inline bool is_one_layer(const Network& net) {
  const auto& l = net.layers();
  return l.size() == 3 && std::holds_alternative<Dense>(l[0]) && std::holds_alternative<Relu>(l[1]) &&
         std::holds_alternative<Dense>(l[2]);
}

/// Standard normal noise directions for one instance: n_noise vectors of
/// x's shape from the sampler seeded with seed ^ index. The same directions
/// are scaled by every sigma.
inline std::vector<Tensor> noise_directions(const Tensor& x, std::size_t n_noise, std::uint64_t seed,
                                            std::size_t index) {
  GaussianSampler sampler(seed ^ index);
  std::vector<Tensor> out;
  for (std::size_t j = 0; j < n_noise; ++j) out.push_back(add_gaussian_noise(zeros_like(x), 1.0, sampler));
  return out;
}

/// Mean gradient of f_c over the noisy copies x + sigma * e_j.
inline Tensor smoothed_gradient(const Network& net, const Tensor& x, std::size_t c, double sigma,
                                const std::vector<Tensor>& noise) {
  if (sigma == 0.0) return input_gradient(net, x, c);
  Tensor sum = zeros_like(x);
  for (const Tensor& e : noise) sum += input_gradient(net, x + e * sigma, c);
  return sum * (1.0 / static_cast<double>(noise.size()));
}

struct SmoothingInstance {
  Tensor adversarial;
  bool success = false;
  double difference = 0.0;
};

/// PGD against the noisy ensemble: each l2 step follows the summed
/// cross-entropy gradient of all noisy copies, stopping when fewer than
/// stop_fraction of them keep the original label. Reports ||SG(x) - SG(x')||.
inline SmoothingInstance smoothing_instance(const Network& net, const Tensor& x, double sigma,
                                            const std::vector<Tensor>& noise, const SmoothingConfig& cfg) {
  const std::size_t c = predict(net, x);
  const std::size_t copies = sigma == 0.0 ? 1 : noise.size();
  auto copy = [&](const Tensor& p, std::size_t j) { return sigma == 0.0 ? p : p + noise[j] * sigma; };
  auto keeps_label = [&](const Tensor& p) {
    std::size_t keep = 0;
    for (std::size_t j = 0; j < copies; ++j) keep += predict(net, copy(p, j)) == c;
    return static_cast<double>(keep) >= cfg.stop_fraction * static_cast<double>(copies);
  };
  const double alpha = 2.0 * cfg.eps / static_cast<double>(std::max<std::size_t>(cfg.iterations, 1));
  SmoothingInstance out;
  Tensor cur = x;
  bool done = !keeps_label(cur);
  for (std::size_t k = 0; k < cfg.iterations && !done; ++k) {
    Tensor g = zeros_like(x);
    for (std::size_t j = 0; j < copies; ++j) g += detail::loss_and_grad(net, copy(cur, j), c, cross_entropy_loss).grad;
    if (!detail::ascent_direction(g, Norm::l2)) break;
    for (std::size_t i = 0; i < cur.size(); ++i) cur[i] += alpha * g[i];
    detail::project(cur, x, cfg.eps, Norm::l2, cfg.clip_lo, cfg.clip_hi);
    done = !keeps_label(cur);
  }
  out.success = done;
  out.difference = l2_distance(smoothed_gradient(net, x, c, sigma, noise), smoothed_gradient(net, cur, c, sigma, noise));
  out.adversarial = std::move(cur);
  return out;
}

/// Differences below this are logged as log(1e-12).
inline constexpr double kLogFloor = 1e-12;

/// For every sigma and instance: log ||SG(x) - SG(x')|| with x' from the
/// noisy-ensemble attack. The summary has the mean per sigma and the
/// Spearman correlation between sigma and that mean.
inline ExperimentReport run_smoothing(const Network& net, const ToyDataset& ds, const std::vector<double>& sigmas,
                                      const SmoothingConfig& cfg) {
  if (!is_one_layer(net)) throw PreconditionError("smoothing study needs a one-layer relu network");
  if (std::find(sigmas.begin(), sigmas.end(), 0.0) == sigmas.end()) throw PreconditionError("sigmas must include 0");
  for (double s : sigmas) {
    if (s < 0.0) throw PreconditionError("sigmas must be >= 0");
  }
  if (cfg.n_noise == 0) throw PreconditionError("need at least one noise sample");
  ExperimentReport rep;
  rep.name = "smoothing";
  const std::size_t n = ds.size();
  std::vector<ReportRow> slots(n * sigmas.size());
  parallel_for(slots.size(), cfg.threads, [&](std::size_t job) {
    const std::size_t k = job / n;
    const std::size_t i = job % n;
    const Tensor& x = ds.inputs[i];
    ReportRow row{std::to_string(i), "sigma=" + format_double(sigmas[k]), {}, ""};
    row.values = {{"sigma", sigmas[k]}, {"log_diff", detail::kNaN}, {"diff", detail::kNaN}, {"distance", detail::kNaN}};
    if (predict(net, x) != ds.labels[i]) {
      row.flag = "misclassified";
    } else {
      const std::vector<Tensor> noise = noise_directions(x, cfg.n_noise, cfg.seed, i);
      const SmoothingInstance s = smoothing_instance(net, x, sigmas[k], noise, cfg);
      row.set("diff", s.difference);
      row.set("log_diff", std::log(std::max(s.difference, kLogFloor)));
      row.set("distance", l2_distance(s.adversarial, x));
      if (!s.success) row.flag = "no_boundary";
    }
    slots[job] = std::move(row);
  });
  rep.rows = std::move(slots);
  std::vector<double> means;
  for (double s : sigmas) {
    const std::string m = "sigma=" + format_double(s);
    rep.summary.push_back(detail::mean_row(rep.rows, m, {"sigma", "log_diff", "diff", "distance"}));
    rep.counts.push_back(detail::count_group(rep.rows, m));
    means.push_back(rep.summary.back().get("log_diff"));
  }
  ReportRow trend{"spearman", "sigma_vs_log_diff", {{"rho", detail::kNaN}}, ""};
  try {
    if (sigmas.size() >= 2) trend.set("rho", spearman_correlation(sigmas, means));
  } catch (const UndefinedMetricError&) {
    trend.flag = "zero_variance";
  }
  rep.summary.push_back(std::move(trend));
  return rep;
}

// ---------------------------------------------------------------------------
// Lambda bound for smoothed one-layer networks
// ---------------------------------------------------------------------------

/// Standard normal quantile: Acklam's rational approximation followed by one
/// Halley step against erfc, giving close to full double precision.
inline double inverse_normal_cdf(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError("probability outside [0, 1]");
  if (p == 0.0) return -std::numeric_limits<double>::infinity();
  if (p == 1.0) return std::numeric_limits<double>::infinity();
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x = 0.0;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

/// Attribution robustness constant of a smoothed one-layer ReLU network:
/// (1/sigma) * sqrt(2 pi) * W_frob^2 / (2 c w_norm) * log 2 * (Q(p_a) - Q(p_b))
/// with Q the standard normal quantile.
inline double compute_lambda_bound(double w_frob, double w_norm, double c, double sigma, double p_a, double p_b) {
  if (!(p_a > 0.5 && p_a <= 1.0)) throw DomainError("p_a must lie in (0.5, 1]");
  if (!(p_b >= 0.0 && p_b < p_a)) throw DomainError("p_b must lie in [0, p_a)");
  if (!(c > 0.0)) throw DomainError("c must be positive");
  if (!(sigma > 0.0)) throw DomainError("sigma must be positive");
  if (!(w_norm > 0.0)) throw DomainError("w_norm must be positive");
  const double scale = std::sqrt(2.0 * std::numbers::pi) * w_frob * w_frob / (2.0 * c * w_norm);
  return (1.0 / sigma) * scale * std::numbers::ln2 * (inverse_normal_cdf(p_a) - inverse_normal_cdf(p_b));
}

/// Softplus beta matched to Gaussian smoothing at sigma.
inline double softplus_beta_for_sigma(double sigma) {
  if (!(sigma > 0.0)) throw DomainError("sigma must be positive");
  return std::numbers::ln2 * std::sqrt(2.0 * std::numbers::pi) / (sigma * sigma);
}

// ---------------------------------------------------------------------------
// Baseline sensitivity on two-patch images
// ---------------------------------------------------------------------------

namespace detail {

inline double box_sum(const PixelAttribution& a, const BoundingBox& b) {
  double s = 0.0;
  for (std::size_t y = b.y_min; y < b.y_max; ++y) {
    for (std::size_t x = b.x_min; x < b.x_max; ++x) s += a.at(x, y);
  }
  return s;
}

inline Tensor mask_box(const Tensor& img, const BoundingBox& b, std::size_t width, double value) {
  Tensor out = img;
  fill_patch(out, width, b, value);
  return out;
}

}  // namespace detail

/// Per instance: IG with a black (all 0) and a white (all 1) baseline, and
/// BIG. Reports each map's energy game on the class-determining patch, which
/// of the two planted patches it ranks higher (by summed attribution), and
/// whether masking that patch with the background flips the prediction.
/// An undefined energy game (no positive attribution) counts as 0 in the
/// `big_beats_ig_white` comparison.
inline ExperimentReport run_baseline_sensitivity(const Network& net, const ToyDataset& ds,
                                                 const ExperimentConfig& cfg) {
  if (ds.distractor_boxes.size() != ds.size() || ds.boxes.size() != ds.size()) {
    throw PreconditionError("baseline sensitivity needs a two-patch dataset");
  }
  ExperimentReport rep;
  rep.name = "baseline-sensitivity";
  static constexpr const char* kMethods[] = {"ig_black", "ig_white", "big"};
  std::vector<std::vector<ReportRow>> slots(ds.size());
  std::vector<std::vector<std::pair<std::string, Tensor>>> map_slots(ds.size());
  parallel_for(ds.size(), cfg.threads, [&](std::size_t i) {
    const Tensor& x = ds.inputs[i];
    const std::string id = std::to_string(i);
    const std::size_t width = ds.input_shape.back();
    auto flagged = [&](const std::string& flag) {
      for (const char* m : kMethods) {
        slots[i].push_back({id, m, {{"eg", detail::kNaN}, {"top_is_relevant", detail::kNaN}, {"flip", detail::kNaN}}, flag});
      }
    };
    const std::size_t c = predict(net, x);
    if (c != ds.labels[i]) return flagged("misclassified");
    const BoundaryResult b = boundary_search_ensemble(net, x, attacks_for(cfg, ds));
    if (!b.success) return flagged("no_boundary");
    const AttributionMap maps[] = {
        integrated_gradients(net, x, Tensor::filled(x.shape(), 0.0), c, cfg.ig),
        integrated_gradients(net, x, Tensor::filled(x.shape(), 1.0), c, cfg.ig),
        boundary_integrated_gradients(net, x, b, cfg.ig),
    };
    for (std::size_t k = 0; k < 3; ++k) {
      const PixelAttribution pa = PixelAttribution::from_tensor(maps[k].values);
      double eg = detail::kNaN;
      try {
        eg = energy_game(pa, ds.boxes[i]);
      } catch (const UndefinedMetricError&) {
      }
      const bool relevant_top = detail::box_sum(pa, ds.boxes[i]) >= detail::box_sum(pa, ds.distractor_boxes[i]);
      const BoundingBox& top = relevant_top ? ds.boxes[i] : ds.distractor_boxes[i];
      const bool flip = predict(net, detail::mask_box(x, top, width, ds.background)) != c;
      slots[i].push_back({id, kMethods[k], {{"eg", eg}, {"top_is_relevant", relevant_top ? 1.0 : 0.0}, {"flip", flip ? 1.0 : 0.0}}, ""});
      if (i < cfg.keep_maps) map_slots[i].emplace_back(id + "_" + kMethods[k], maps[k].values);
    }
  });
  std::size_t wins = 0;
  std::size_t compared = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (slots[i].size() == 3 && slots[i][0].flag.empty()) {
      auto eg0 = [](double v) { return std::isnan(v) ? 0.0 : v; };
      wins += eg0(slots[i][2].get("eg")) > eg0(slots[i][1].get("eg"));
      ++compared;
    }
    for (ReportRow& r : slots[i]) rep.rows.push_back(std::move(r));
    for (auto& m : map_slots[i]) rep.maps.push_back(std::move(m));
  }
  for (const char* m : kMethods) {
    ReportRow mean = detail::mean_row(rep.rows, m, {"eg", "top_is_relevant", "flip"});
    rep.summary.push_back(std::move(mean));
    rep.counts.push_back(detail::count_group(rep.rows, m));
  }
  rep.summary.push_back({"comparison", "big_beats_ig_white",
                         {{"fraction", compared ? static_cast<double>(wins) / static_cast<double>(compared) : detail::kNaN},
                          {"instances", static_cast<double>(compared)}},
                         ""});
  return rep;
}

}  // namespace bdry
