#pragma once

#include <bdry/attribution.hpp>
#include <bdry/config.hpp>
#include <bdry/errors.hpp>
#include <bdry/tensor.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace bdry {

/// Pixel rectangle; min corners inclusive, max corners exclusive. x indexes
/// columns, y indexes rows.
struct BoundingBox {
  std::size_t x_min = 0;
  std::size_t y_min = 0;
  std::size_t x_max = 0;
  std::size_t y_max = 0;

  std::size_t area() const { return (x_max - x_min) * (y_max - y_min); }
  bool contains(std::size_t x, std::size_t y) const {
    return x >= x_min && x < x_max && y >= y_min && y < y_max;
  }
  void check_within(std::size_t width, std::size_t height) const {
    if (x_min >= x_max || y_min >= y_max) throw PreconditionError("bounding box is empty");
    if (x_max > width || y_max > height) throw PreconditionError("bounding box exceeds the image");
  }
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

/// Attribution reduced to one value per pixel, row-major over (height, width).
class PixelAttribution {
 public:
  PixelAttribution(std::size_t height, std::size_t width, std::vector<double> values)
      : height_(height), width_(width), values_(std::move(values)) {
    if (values_.size() != height * width) throw InputError("pixel attribution size does not match height x width");
    for (double v : values_) {
      if (!std::isfinite(v)) throw InputError("pixel attribution has a non-finite value");
    }
  }

  /// Accepts [H, W] or [C, H, W]; channels are summed.
  static PixelAttribution from_tensor(const Tensor& t) {
    const Shape& s = t.shape();
    if (s.size() == 2) return PixelAttribution(s[0], s[1], t.raw());
    if (s.size() != 3) throw InputError("pixel metrics need a [H,W] or [C,H,W] map, got " + shape_string(s));
    const std::size_t plane = s[1] * s[2];
    std::vector<double> out(plane, 0.0);
    for (std::size_t c = 0; c < s[0]; ++c) {
      for (std::size_t i = 0; i < plane; ++i) out[i] += t[c * plane + i];
    }
    return PixelAttribution(s[1], s[2], std::move(out));
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  double at(std::size_t x, std::size_t y) const { return values_[y * width_ + x]; }
  const std::vector<double>& values() const noexcept { return values_; }

 private:
  std::size_t height_;
  std::size_t width_;
  std::vector<double> values_;
};

// All metrics visit pixels in row-major order so results are reproducible
// bit for bit by any implementation using the same order.

/// |Z n U| / (|U| + |Z n (X \ U)|) with Z the strictly positive pixels.
inline double localization(const PixelAttribution& a, const BoundingBox& box) {
  box.check_within(a.width(), a.height());
  std::size_t inside = 0;
  std::size_t outside = 0;
  for (std::size_t y = 0; y < a.height(); ++y) {
    for (std::size_t x = 0; x < a.width(); ++x) {
      if (a.at(x, y) > 0.0) ++(box.contains(x, y) ? inside : outside);
    }
  }
  return static_cast<double>(inside) / static_cast<double>(box.area() + outside);
}

/// Share of the total positive mass that falls inside the box.
inline double energy_game(const PixelAttribution& a, const BoundingBox& box) {
  box.check_within(a.width(), a.height());
  double inside = 0.0;
  double total = 0.0;
  for (std::size_t y = 0; y < a.height(); ++y) {
    for (std::size_t x = 0; x < a.width(); ++x) {
      const double g = a.at(x, y);
      if (g > 0.0) {
        total += g;
        if (box.contains(x, y)) inside += g;
      }
    }
  }
  if (!(total > 0.0)) throw UndefinedMetricError("energy game needs a positive attribution");
  return inside / total;
}

/// Positive mass in the box over the absolute mass in the box.
inline double positive_percentage(const PixelAttribution& a, const BoundingBox& box) {
  box.check_within(a.width(), a.height());
  double pos = 0.0;
  double neg = 0.0;
  for (std::size_t y = box.y_min; y < box.y_max; ++y) {
    for (std::size_t x = box.x_min; x < box.x_max; ++x) {
      const double g = a.at(x, y);
      if (g > 0.0) pos += g;
      else if (g < 0.0) neg += g;
    }
  }
  const double denom = pos - neg;
  if (!(denom > 0.0)) throw UndefinedMetricError("positive percentage needs a nonzero attribution in the box");
  return pos / denom;
}

/// Normalised in-box attributions weighted by inverse distance to their
/// centre of mass. Distances are floored at one pixel.
inline double concentration(const PixelAttribution& a, const BoundingBox& box) {
  box.check_within(a.width(), a.height());
  double norm = 0.0;
  for (std::size_t y = box.y_min; y < box.y_max; ++y) {
    for (std::size_t x = box.x_min; x < box.x_max; ++x) norm += std::abs(a.at(x, y));
  }
  if (!(norm > 0.0)) throw UndefinedMetricError("concentration needs a nonzero attribution in the box");
  double mass = 0.0;
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t y = box.y_min; y < box.y_max; ++y) {
    for (std::size_t x = box.x_min; x < box.x_max; ++x) {
      const double g = a.at(x, y) / norm;
      mass += g;
      mx += g * static_cast<double>(x);
      my += g * static_cast<double>(y);
    }
  }
  if (mass == 0.0) throw UndefinedMetricError("concentration centre of mass is undefined");
  const double cx = mx / mass;
  const double cy = my / mass;
  double con = 0.0;
  for (std::size_t y = box.y_min; y < box.y_max; ++y) {
    for (std::size_t x = box.x_min; x < box.x_max; ++x) {
      const double g = a.at(x, y) / norm;
      const double dist = std::hypot(static_cast<double>(x) - cx, static_cast<double>(y) - cy);
      con += g / std::max(dist, 1.0);
    }
  }
  return con;
}

inline double attribution_l2_distance(const AttributionMap& a, const AttributionMap& b) {
  return l2_distance(a.values, b.values);
}

/// Two-pass Pearson coefficient, clamped to [-1, 1].
inline double pearson_correlation(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw InputError("correlation inputs differ in length");
  if (xs.size() < 2) throw PreconditionError("correlation needs at least 2 points");
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedMetricError("correlation with zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Ranks starting at 1; tied values share their average rank.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double spearman_correlation(const std::vector<double>& xs, const std::vector<double>& ys) {
  return pearson_correlation(average_ranks(xs), average_ranks(ys));
}

// ---------------------------------------------------------------------------
// CSV interchange
// ---------------------------------------------------------------------------

struct BoxRecord {
  std::string id;
  BoundingBox box;
};

inline std::vector<BoxRecord> parse_boxes_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t offset = 0;
  if (!std::getline(in, line) || KeyValues::trim(line) != "id,x_min,y_min,x_max,y_max") {
    throw FormatError("bounding-box CSV must start with id,x_min,y_min,x_max,y_max", 0);
  }
  offset += line.size() + 1;
  std::vector<BoxRecord> out;
  while (std::getline(in, line)) {
    const std::size_t at = offset;
    offset += line.size() + 1;
    if (KeyValues::trim(line).empty()) continue;
    const std::vector<std::string> cells = split_list(line);
    if (cells.size() != 5) throw FormatError("bounding-box row needs 5 fields", at);
    BoxRecord r;
    r.id = cells[0];
    try {
      r.box = {parse_u64(cells[1], "x_min"), parse_u64(cells[2], "y_min"), parse_u64(cells[3], "x_max"),
               parse_u64(cells[4], "y_max")};
    } catch (const FormatError& e) {
      throw FormatError(e.what(), at);
    }
    if (r.box.x_min >= r.box.x_max || r.box.y_min >= r.box.y_max) throw FormatError("empty bounding box", at);
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<BoxRecord> load_boxes_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_boxes_csv(ss.str());
}

inline std::string boxes_csv(const std::vector<BoxRecord>& boxes) {
  std::string out = "id,x_min,y_min,x_max,y_max\n";
  for (const BoxRecord& r : boxes) {
    out += r.id + "," + std::to_string(r.box.x_min) + "," + std::to_string(r.box.y_min) + "," +
           std::to_string(r.box.x_max) + "," + std::to_string(r.box.y_max) + "\n";
  }
  return out;
}

/// One row of the metric report. An unset metric was undefined for that map.
struct MetricRow {
  std::string id;
  std::string method;
  std::optional<double> loc;
  std::optional<double> eg;
  std::optional<double> pp;
  std::optional<double> con;
};

inline MetricRow score_attribution(std::string id, std::string method, const PixelAttribution& a,
                                   const BoundingBox& box) {
  MetricRow r{std::move(id), std::move(method), localization(a, box), {}, {}, {}};
  try {
    r.eg = energy_game(a, box);
  } catch (const UndefinedMetricError&) {
  }
  try {
    r.pp = positive_percentage(a, box);
  } catch (const UndefinedMetricError&) {
  }
  try {
    r.con = concentration(a, box);
  } catch (const UndefinedMetricError&) {
  }
  return r;
}

inline std::string format_metric(const std::optional<double>& v) { return v ? format_double(*v) : "na"; }

/// Mean of each column over the rows where it is defined.
inline MetricRow mean_metric_row(const std::vector<MetricRow>& rows, std::string method = "all") {
  auto mean = [&](std::optional<double> MetricRow::*field) -> std::optional<double> {
    double sum = 0.0;
    std::size_t n = 0;
    for (const MetricRow& r : rows) {
      if (r.*field) {
        sum += *(r.*field);
        ++n;
      }
    }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
  };
  return {"mean", std::move(method), mean(&MetricRow::loc), mean(&MetricRow::eg), mean(&MetricRow::pp),
          mean(&MetricRow::con)};
}

/// `id,method,loc,eg,pp,con` with one trailing mean row per method, in order
/// of first appearance. No rows gives the header alone.
inline std::string metric_csv(const std::vector<MetricRow>& rows) {
  std::string out = "id,method,loc,eg,pp,con\n";
  auto line = [&](const MetricRow& r) {
    out += r.id + "," + r.method + "," + format_metric(r.loc) + "," + format_metric(r.eg) + "," +
           format_metric(r.pp) + "," + format_metric(r.con) + "\n";
  };
  std::vector<std::string> methods;
  for (const MetricRow& r : rows) {
    line(r);
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
  }
  for (const std::string& m : methods) {
    std::vector<MetricRow> subset;
    for (const MetricRow& r : rows) {
      if (r.method == m) subset.push_back(r);
    }
    line(mean_metric_row(subset, m));
  }
  return out;
}

}  // namespace bdry
