#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include "dsq/rng.hpp"
#include "dsq/types.hpp"

namespace dsq::compression {

// Compression operators C[x] with bounded signal-to-noise factor
// E||C[x] - x||^2 <= alpha^2 ||x||^2, alpha < 1, plus their exact wire
// encodings and bit accounting.
//
// The simulation consumes `decoded`, computed in the working scalar type so
// that error feedback and the identity reductions stay exact.  `payload` is
// the bit-exact wire format (32-bit float slots); decoding it reproduces
// `decoded` whenever the carried values are binary32-representable.

enum class Kind { Identity, TopK, RandK, BitQuant };

inline const char* kind_name(Kind k) {
  switch (k) {
    case Kind::Identity: return "identity";
    case Kind::TopK: return "topk";
    case Kind::RandK: return "randk";
    case Kind::BitQuant: return "bitquant";
  }
  return "unknown";
}

inline bool is_deterministic(Kind k) { return k != Kind::RandK; }

struct CompressorSpec {
  Kind kind = Kind::Identity;
  Index k = 0;    // TopK / RandK kept-coordinate count
  int bits = 0;   // BitQuant bits per element, 1..16
  std::optional<double> analytic_alpha2{};

  static CompressorSpec identity() { return {Kind::Identity, 0, 0, 0.0}; }
  static CompressorSpec topk(Index k) { return {Kind::TopK, k, 0, {}}; }
  static CompressorSpec randk(Index k) { return {Kind::RandK, k, 0, {}}; }
  static CompressorSpec bit_quant(int bits) { return {Kind::BitQuant, 0, bits, {}}; }
};

inline void validate_spec(const CompressorSpec& spec, Index d) {
  if (d < 1) throw std::invalid_argument("compressor: dimension must be positive");
  switch (spec.kind) {
    case Kind::Identity:
      break;
    case Kind::TopK:
    case Kind::RandK:
      if (spec.k < 1 || spec.k > d)
        throw std::invalid_argument("compressor: k must satisfy 1 <= k <= dim");
      break;
    case Kind::BitQuant:
      if (spec.bits < 1 || spec.bits > 16)
        throw std::invalid_argument("compressor: bits must satisfy 1 <= b <= 16");
      break;
  }
  if (spec.analytic_alpha2 && (*spec.analytic_alpha2 < 0.0 || *spec.analytic_alpha2 >= 1.0))
    throw std::invalid_argument("compressor: analytic_alpha2 must lie in [0, 1)");
}

// ceil(log2 d): index width for sparse payloads.
inline int index_bits(Index d) {
  return d <= 1 ? 0 : std::bit_width(static_cast<std::uint64_t>(d - 1));
}

// Semantic payload size in bits.  Identity: 32 d.  BitQuant: b d + 32 (norm).
// TopK/RandK: k (32 + ceil(log2 d)) + 32.  The byte buffer is zero-padded to
// a byte boundary; padding is not counted.
inline std::uint64_t message_bits(const CompressorSpec& spec, Index d) {
  validate_spec(spec, d);
  const std::uint64_t ud = static_cast<std::uint64_t>(d);
  switch (spec.kind) {
    case Kind::Identity: return 32 * ud;
    case Kind::BitQuant: return static_cast<std::uint64_t>(spec.bits) * ud + 32;
    case Kind::TopK:
    case Kind::RandK:
      return static_cast<std::uint64_t>(spec.k) *
                 (32 + static_cast<std::uint64_t>(index_bits(d))) + 32;
  }
  return 0;
}

namespace detail {

// MSB-first bit packing.
class BitWriter {
 public:
  void write(std::uint32_t value, int nbits) {
    for (int b = nbits - 1; b >= 0; --b) {
      if (fill_ == 0) buf_.push_back(0);
      buf_.back() = static_cast<std::uint8_t>(buf_.back() << 1 |
                                              ((value >> b) & 1u));
      fill_ = (fill_ + 1) % 8;
    }
  }
  void write_f32_be(float v) { write(std::bit_cast<std::uint32_t>(v), 32); }
  std::vector<std::uint8_t> finish() {
    if (fill_ != 0) {
      buf_.back() = static_cast<std::uint8_t>(buf_.back() << (8 - fill_));
      fill_ = 0;
    }
    return std::move(buf_);
  }

 private:
  std::vector<std::uint8_t> buf_;
  int fill_ = 0;
};

class BitReader {
 public:
  explicit BitReader(const std::vector<std::uint8_t>& buf) : buf_(buf) {}
  std::uint32_t read(int nbits) {
    std::uint32_t v = 0;
    for (int b = 0; b < nbits; ++b) {
      const std::size_t byte = pos_ / 8;
      if (byte >= buf_.size()) throw std::runtime_error("payload truncated");
      const int shift = 7 - static_cast<int>(pos_ % 8);
      v = v << 1 | ((buf_[byte] >> shift) & 1u);
      ++pos_;
    }
    return v;
  }
  float read_f32_be() { return std::bit_cast<float>(read(32)); }

 private:
  const std::vector<std::uint8_t>& buf_;
  std::size_t pos_ = 0;
};

// Nearest of the 2^b uniform signed levels {-1 + 2j/(2^b - 1)}; ties go to
// the level nearer zero, then to the positive one.
template <typename Scalar>
int nearest_level(Scalar u, int bits) {
  const int top = (1 << bits) - 1;
  const double g = (static_cast<double>(u) + 1.0) * top / 2.0;
  int j0 = static_cast<int>(std::floor(g));
  j0 = std::clamp(j0, 0, top);
  const int j1 = std::min(j0 + 1, top);
  const auto level = [top](int j) { return -1.0 + 2.0 * j / top; };
  const double d0 = std::abs(static_cast<double>(u) - level(j0));
  const double d1 = std::abs(static_cast<double>(u) - level(j1));
  if (d0 < d1) return j0;
  if (d1 < d0) return j1;
  const double a0 = std::abs(level(j0));
  const double a1 = std::abs(level(j1));
  if (a0 < a1) return j0;
  if (a1 < a0) return j1;
  return level(j0) > level(j1) ? j0 : j1;
}

template <typename Scalar>
std::vector<int> quantize_levels(const VectorX<Scalar>& x, int bits) {
  std::vector<int> levels(static_cast<std::size_t>(x.size()));
  const Scalar s = x.cwiseAbs().maxCoeff();
  if (s == Scalar(0)) {
    for (auto& l : levels) l = nearest_level(Scalar(0), bits);
    return levels;
  }
  for (Index i = 0; i < x.size(); ++i)
    levels[static_cast<std::size_t>(i)] = nearest_level(x[i] / s, bits);
  return levels;
}

template <typename Scalar>
VectorX<Scalar> levels_to_pattern(const std::vector<int>& levels, int bits) {
  const Scalar top = Scalar((1 << bits) - 1);
  VectorX<Scalar> p(static_cast<Index>(levels.size()));
  for (std::size_t i = 0; i < levels.size(); ++i)
    p[static_cast<Index>(i)] = Scalar(-1) + Scalar(2 * levels[i]) / top;
  return p;
}

// Rescale a level pattern so the output carries the given Euclidean norm.
template <typename Scalar>
VectorX<Scalar> pattern_to_output(const VectorX<Scalar>& pattern, Scalar norm) {
  const Scalar pnorm = pattern.norm();
  if (pnorm == Scalar(0) || norm == Scalar(0))
    return VectorX<Scalar>::Zero(pattern.size());
  return pattern * (norm / pnorm);
}

// Indices of the k largest-magnitude entries; ties favour the smaller index.
template <typename Scalar>
std::vector<Index> topk_indices(const VectorX<Scalar>& x, Index k) {
  std::vector<Index> order(static_cast<std::size_t>(x.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return std::abs(x[a]) > std::abs(x[b]);
  });
  order.resize(static_cast<std::size_t>(k));
  std::sort(order.begin(), order.end());
  return order;
}

// k distinct uniform indices (partial Fisher-Yates), returned sorted.
inline std::vector<Index> randk_indices(Index d, Index k, RandomStream& rng) {
  std::vector<Index> pool(static_cast<std::size_t>(d));
  std::iota(pool.begin(), pool.end(), Index{0});
  for (Index i = 0; i < k; ++i) {
    const Index j = i + rng.uniform_index(d - i);
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
  }
  pool.resize(static_cast<std::size_t>(k));
  std::sort(pool.begin(), pool.end());
  return pool;
}

template <typename Scalar>
std::vector<std::uint8_t> encode_sparse(const VectorX<Scalar>& x,
                                        const std::vector<Index>& kept, Index d) {
  BitWriter w;
  w.write(0, 32);  // norm placeholder
  const int ib = index_bits(d);
  for (Index idx : kept) {
    w.write(static_cast<std::uint32_t>(idx), ib);
    w.write_f32_be(static_cast<float>(x[idx]));
  }
  return w.finish();
}

}  // namespace detail

template <typename Scalar>
struct CompressedMessageT {
  std::vector<std::uint8_t> payload;  // wire bytes, zero-padded to byte boundary
  VectorX<Scalar> decoded;            // operator output, working precision
  std::uint64_t bit_size = 0;         // semantic bits == message_bits(spec, d)
};
using CompressedMessage = CompressedMessageT<double>;

// Scale to max-abs 1, round to 2^b uniform signed levels, restore the input's
// Euclidean norm.  Zero passes through as zero.
template <typename Scalar>
VectorX<Scalar> bit_quantize(const VectorX<Scalar>& x, int bits) {
  if (bits < 1 || bits > 16)
    throw std::invalid_argument("bit_quantize: bits must satisfy 1 <= b <= 16");
  if (!x.allFinite()) throw std::domain_error("bit_quantize: non-finite input");
  if (x.size() == 0) return x;
  const auto levels = detail::quantize_levels(x, bits);
  return detail::pattern_to_output(detail::levels_to_pattern<Scalar>(levels, bits),
                                   x.norm());
}

template <typename Scalar>
CompressedMessageT<Scalar> compress(const CompressorSpec& spec,
                                    const VectorX<Scalar>& x, RandomStream& rng) {
  if (!x.allFinite()) throw std::domain_error("compress: non-finite input");
  const Index d = x.size();
  validate_spec(spec, d);
  CompressedMessageT<Scalar> msg;
  msg.bit_size = message_bits(spec, d);
  switch (spec.kind) {
    case Kind::Identity: {
      msg.decoded = x;
      detail::BitWriter w;
      for (Index i = 0; i < d; ++i) w.write_f32_be(static_cast<float>(x[i]));
      msg.payload = w.finish();
      break;
    }
    case Kind::TopK:
    case Kind::RandK: {
      const auto kept = spec.kind == Kind::TopK
                            ? detail::topk_indices(x, spec.k)
                            : detail::randk_indices(d, spec.k, rng);
      msg.decoded = VectorX<Scalar>::Zero(d);
      for (Index idx : kept) msg.decoded[idx] = x[idx];
      msg.payload = detail::encode_sparse(x, kept, d);
      break;
    }
    case Kind::BitQuant: {
      const auto levels = detail::quantize_levels(x, spec.bits);
      msg.decoded = detail::pattern_to_output(
          detail::levels_to_pattern<Scalar>(levels, spec.bits), x.norm());
      detail::BitWriter w;
      w.write_f32_be(static_cast<float>(x.norm()));
      for (int l : levels) w.write(static_cast<std::uint32_t>(l), spec.bits);
      msg.payload = w.finish();
      break;
    }
  }
  return msg;
}

// Reconstruct the dense vector a payload carries.
template <typename Scalar = double>
VectorX<Scalar> decode_payload(const CompressorSpec& spec,
                               const std::vector<std::uint8_t>& payload, Index d) {
  validate_spec(spec, d);
  detail::BitReader r(payload);
  switch (spec.kind) {
    case Kind::Identity: {
      VectorX<Scalar> x(d);
      for (Index i = 0; i < d; ++i) x[i] = static_cast<Scalar>(r.read_f32_be());
      return x;
    }
    case Kind::TopK:
    case Kind::RandK: {
      r.read(32);  // norm placeholder
      VectorX<Scalar> x = VectorX<Scalar>::Zero(d);
      const int ib = index_bits(d);
      for (Index i = 0; i < spec.k; ++i) {
        const Index idx = static_cast<Index>(r.read(ib));
        x[idx] = static_cast<Scalar>(r.read_f32_be());
      }
      return x;
    }
    case Kind::BitQuant: {
      const Scalar norm = static_cast<Scalar>(r.read_f32_be());
      std::vector<int> levels(static_cast<std::size_t>(d));
      for (auto& l : levels) l = static_cast<int>(r.read(spec.bits));
      return detail::pattern_to_output(
          detail::levels_to_pattern<Scalar>(levels, spec.bits), norm);
    }
  }
  throw std::logic_error("decode_payload: unreachable");
}

struct AlphaEstimate {
  double mean_ratio = 0.0;  // mean of ||C[x]-x||^2 / ||x||^2
  double max_ratio = 0.0;   // pathwise max of the same ratio
};

// Measures the signal-to-noise ratio on standard-normal draws.
template <typename Scalar = double>
AlphaEstimate empirical_alpha(const CompressorSpec& spec, Index d, int samples,
                              RandomStream& rng) {
  if (samples < 1) throw std::invalid_argument("empirical_alpha: samples must be >= 1");
  validate_spec(spec, d);
  AlphaEstimate est;
  for (int s = 0; s < samples; ++s) {
    const VectorX<Scalar> x = rng.normal_vector<Scalar>(d);
    const auto msg = compress(spec, x, rng);
    const double ratio = static_cast<double>((msg.decoded - x).squaredNorm() /
                                             x.squaredNorm());
    est.mean_ratio += (ratio - est.mean_ratio) / (s + 1);
    est.max_ratio = std::max(est.max_ratio, ratio);
  }
  return est;
}

}  // namespace dsq::compression
