#pragma once

#include <bdry/errors.hpp>
#include <bdry/metrics.hpp>
#include <bdry/rng.hpp>
#include <bdry/tensor.hpp>

#include <cmath>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

namespace bdry {

/// Small labelled dataset with optional ground-truth boxes.
struct ToyDataset {
  std::string name;
  Shape input_shape;
  std::size_t num_classes = 2;
  std::vector<Tensor> inputs;
  std::vector<std::size_t> labels;
  /// Box around the class-determining patch, one per input (image sets only).
  std::vector<BoundingBox> boxes;
  /// Box around the causally irrelevant patch (two-patch set only).
  std::vector<BoundingBox> distractor_boxes;
  /// Input domain; attacks and training perturbations are clipped to it.
  double domain_lo = 0.0;
  double domain_hi = 1.0;
  /// Pixel value used when a patch is masked out.
  double background = 0.0;

  std::size_t size() const noexcept { return inputs.size(); }
  bool has_boxes() const noexcept { return !boxes.empty(); }
};

namespace detail {

inline void fill_patch(Tensor& img, std::size_t width, const BoundingBox& b, double value) {
  for (std::size_t y = b.y_min; y < b.y_max; ++y) {
    for (std::size_t x = b.x_min; x < b.x_max; ++x) img[y * width + x] = value;
  }
}

inline bool overlaps(const BoundingBox& a, const BoundingBox& b) {
  return a.x_min < b.x_max && b.x_min < a.x_max && a.y_min < b.y_max && b.y_min < a.y_max;
}

/// 3x3 patch whose left edge sits in the left (class 0) or right (class 1)
/// part of an 8x8 image; rows are free.
inline BoundingBox class_patch(std::size_t label, CounterRng& rng) {
  const std::size_t x0 = (label == 0 ? 0 : 4) + rng.below(2);
  const std::size_t y0 = rng.below(6);
  return {x0, y0, x0 + 3, y0 + 3};
}

}  // namespace detail

/// Dataset kinds:
///  - blobs2d: two Gaussian blobs centred at (-1, 0) and (1, 0), std 0.35
///  - rings2d: a disc of radius ~1 (class 0) inside a ring of radius ~2.2
///  - patches8x8: dim noise plus a bright 3x3 patch on the left (class 0)
///    or right (class 1); the patch is the bounding box
///  - twopatch8x8: grey image with a white 3x3 patch placed as above and a
///    black 3x3 distractor anywhere else
/// Labels alternate 0, 1, 0, ... so every set is balanced.
inline ToyDataset synth_dataset(std::string_view kind, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw PreconditionError("dataset size must be >= 1");
  ToyDataset ds;
  ds.name = std::string(kind);
  CounterRng rng(seed);
  GaussianSampler normal(seed ^ 0x9e3779b97f4a7c15ULL);
  for (std::size_t i = 0; i < n; ++i) ds.labels.push_back(i % 2);

  if (kind == "blobs2d") {
    ds.input_shape = {2};
    ds.domain_lo = -3.0;
    ds.domain_hi = 3.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double cx = ds.labels[i] == 0 ? -1.0 : 1.0;
      Tensor x = Tensor::vector({cx + 0.35 * normal.next(), 0.35 * normal.next()});
      clip(x, ds.domain_lo, ds.domain_hi);
      ds.inputs.push_back(std::move(x));
    }
  } else if (kind == "rings2d") {
    ds.input_shape = {2};
    ds.domain_lo = -3.5;
    ds.domain_hi = 3.5;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = (ds.labels[i] == 0 ? 1.0 : 2.2) + 0.15 * normal.next();
      const double a = 2.0 * std::numbers::pi * rng.uniform();
      ds.inputs.push_back(Tensor::vector({r * std::cos(a), r * std::sin(a)}));
    }
  } else if (kind == "patches8x8") {
    ds.input_shape = {1, 8, 8};
    ds.background = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      Tensor img(ds.input_shape);
      for (double& v : img.values()) v = 0.2 * rng.uniform();
      const BoundingBox b = detail::class_patch(ds.labels[i], rng);
      detail::fill_patch(img, 8, b, 1.0);
      ds.inputs.push_back(std::move(img));
      ds.boxes.push_back(b);
    }
  } else if (kind == "twopatch8x8") {
    ds.input_shape = {1, 8, 8};
    ds.background = 0.5;
    for (std::size_t i = 0; i < n; ++i) {
      Tensor img(ds.input_shape);
      for (double& v : img.values()) v = 0.5 + 0.05 * (rng.uniform() - 0.5);
      const BoundingBox white = detail::class_patch(ds.labels[i], rng);
      BoundingBox black;
      do {
        const std::size_t x0 = rng.below(6);
        const std::size_t y0 = rng.below(6);
        black = {x0, y0, x0 + 3, y0 + 3};
      } while (detail::overlaps(black, white));
      detail::fill_patch(img, 8, white, 1.0);
      detail::fill_patch(img, 8, black, 0.0);
      ds.inputs.push_back(std::move(img));
      ds.boxes.push_back(white);
      ds.distractor_boxes.push_back(black);
    }
  } else {
    throw PreconditionError("unknown dataset kind \"" + std::string(kind) + "\"");
  }
  return ds;
}

/// Subset with the given indices, keeping metadata.
inline ToyDataset subset(const ToyDataset& ds, const std::vector<std::size_t>& idx) {
  ToyDataset out = ds;
  out.inputs.clear();
  out.labels.clear();
  out.boxes.clear();
  out.distractor_boxes.clear();
  for (std::size_t i : idx) {
    out.inputs.push_back(ds.inputs.at(i));
    out.labels.push_back(ds.labels.at(i));
    if (ds.has_boxes()) out.boxes.push_back(ds.boxes.at(i));
    if (!ds.distractor_boxes.empty()) out.distractor_boxes.push_back(ds.distractor_boxes.at(i));
  }
  return out;
}

}  // namespace bdry
