#pragma once

#include <bdry/errors.hpp>
#include <bdry/network.hpp>
#include <bdry/tensor.hpp>

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace bdry {

inline constexpr std::string_view kModelMagic = "BDRYNET1";
inline constexpr std::string_view kTensorMagic = "BDRYTEN1";

enum class LayerKind : std::uint8_t { dense = 0, relu = 1, softplus = 2, conv2d = 3, flatten = 4 };

namespace detail {

class ByteWriter {
 public:
  void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

  const std::vector<char>& bytes() const noexcept { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

  std::uint64_t offset() const noexcept { return pos_; }
  bool at_end() const noexcept { return pos_ == bytes_.size(); }

  void expect_magic(std::string_view magic) {
    if (bytes_.size() < magic.size() ||
        std::memcmp(bytes_.data(), magic.data(), magic.size()) != 0) {
      throw FormatError("bad magic, expected \"" + std::string(magic) + "\"", 0);
    }
    pos_ = magic.size();
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{static_cast<std::uint8_t>(bytes_[pos_ + i])} << (8 * i);
    pos_ += 4;
    return v;
  }
  float finite_f32() {
    const std::uint64_t at = pos_;
    const float v = std::bit_cast<float>(u32());
    if (!std::isfinite(v)) throw FormatError("non-finite value", at);
    return v;
  }
  std::vector<float> finite_f32s(std::uint64_t count) {
    need_count(count, 4);
    std::vector<float> out(count);
    for (float& v : out) v = finite_f32();
    return out;
  }

 private:
  void need(std::uint64_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("truncated payload", pos_);
  }
  void need_count(std::uint64_t count, std::uint64_t width) const {
    if (count > (bytes_.size() - pos_) / width) throw FormatError("truncated payload", pos_);
  }

  std::vector<char> bytes_;
  std::uint64_t pos_ = 0;
};

inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::filesystem::path& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Model files
// ---------------------------------------------------------------------------

inline std::vector<char> encode_model(const Network& net) {
  detail::ByteWriter w;
  w.raw(kModelMagic);
  w.u32(static_cast<std::uint32_t>(net.layers().size()));
  for (const Layer& layer : net.layers()) {
    std::visit(
        [&](const auto& l) {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, Dense>) {
            w.u8(static_cast<std::uint8_t>(LayerKind::dense));
            w.u32(l.in);
            w.u32(l.out);
            for (float v : l.weights) w.f32(v);
            for (float v : l.bias) w.f32(v);
          } else if constexpr (std::is_same_v<L, Relu>) {
            w.u8(static_cast<std::uint8_t>(LayerKind::relu));
          } else if constexpr (std::is_same_v<L, Softplus>) {
            w.u8(static_cast<std::uint8_t>(LayerKind::softplus));
            w.f32(l.beta);
          } else if constexpr (std::is_same_v<L, Conv2d>) {
            w.u8(static_cast<std::uint8_t>(LayerKind::conv2d));
            for (std::uint32_t v : {l.in_ch, l.out_ch, l.kh, l.kw, l.stride, l.pad}) w.u32(v);
            for (float v : l.weights) w.f32(v);
            for (float v : l.bias) w.f32(v);
          } else {
            w.u8(static_cast<std::uint8_t>(LayerKind::flatten));
          }
        },
        layer);
  }
  return w.bytes();
}

inline Network decode_model(std::vector<char> bytes, std::optional<Shape> input_shape = std::nullopt) {
  detail::ByteReader r(std::move(bytes));
  r.expect_magic(kModelMagic);
  const std::uint32_t count = r.u32();
  std::vector<Layer> layers;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint64_t at = r.offset();
    switch (static_cast<LayerKind>(r.u8())) {
      case LayerKind::dense: {
        Dense d;
        d.in = r.u32();
        d.out = r.u32();
        d.weights = r.finite_f32s(std::uint64_t{d.in} * d.out);
        d.bias = r.finite_f32s(d.out);
        layers.emplace_back(std::move(d));
        break;
      }
      case LayerKind::relu:
        layers.emplace_back(Relu{});
        break;
      case LayerKind::softplus: {
        const std::uint64_t beta_at = r.offset();
        Softplus s{r.finite_f32()};
        if (!(s.beta > 0.0f)) throw FormatError("softplus beta must be positive", beta_at);
        layers.emplace_back(s);
        break;
      }
      case LayerKind::conv2d: {
        Conv2d c;
        c.in_ch = r.u32();
        c.out_ch = r.u32();
        c.kh = r.u32();
        c.kw = r.u32();
        c.stride = r.u32();
        c.pad = r.u32();
        c.weights = r.finite_f32s(std::uint64_t{c.out_ch} * c.in_ch * c.kh * c.kw);
        c.bias = r.finite_f32s(c.out_ch);
        layers.emplace_back(std::move(c));
        break;
      }
      case LayerKind::flatten:
        layers.emplace_back(Flatten{});
        break;
      default:
        throw FormatError("unknown layer kind", at);
    }
  }
  if (!r.at_end()) throw FormatError("trailing bytes after last layer", r.offset());
  try {
    return Network(std::move(layers), std::move(input_shape));
  } catch (const InputError& e) {
    throw FormatError(std::string("inconsistent layers: ") + e.what(), r.offset());
  }
}

inline void save_model(const Network& net, const std::filesystem::path& path) {
  detail::write_file(path, encode_model(net));
}

inline Network load_model(const std::filesystem::path& path,
                          std::optional<Shape> input_shape = std::nullopt) {
  return decode_model(detail::read_file(path), std::move(input_shape));
}

// ---------------------------------------------------------------------------
// Tensor files
// ---------------------------------------------------------------------------

/// Values are narrowed to f32 on write.
inline std::vector<char> encode_tensor(const Tensor& t) {
  detail::ByteWriter w;
  w.raw(kTensorMagic);
  w.u8(0);
  w.u8(static_cast<std::uint8_t>(t.shape().size()));
  for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (double v : t.values()) w.f32(static_cast<float>(v));
  return w.bytes();
}

inline Tensor decode_tensor(std::vector<char> bytes) {
  detail::ByteReader r(std::move(bytes));
  r.expect_magic(kTensorMagic);
  const std::uint64_t dtype_at = r.offset();
  if (r.u8() != 0) throw FormatError("unsupported dtype", dtype_at);
  const std::uint8_t ndim = r.u8();
  Shape shape;
  for (std::uint8_t i = 0; i < ndim; ++i) shape.push_back(r.u32());
  const std::vector<float> values = r.finite_f32s(shape_size(shape));
  if (!r.at_end()) throw FormatError("trailing bytes after tensor data", r.offset());
  return Tensor(std::move(shape), std::vector<double>(values.begin(), values.end()));
}

inline void save_tensor(const Tensor& t, const std::filesystem::path& path) {
  detail::write_file(path, encode_tensor(t));
}

inline Tensor load_tensor(const std::filesystem::path& path) {
  return decode_tensor(detail::read_file(path));
}

}  // namespace bdry
