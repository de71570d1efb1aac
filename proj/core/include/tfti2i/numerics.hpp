#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string_view>
#include <vector>

#include "tfti2i/tensor.hpp"

namespace tfti2i {

// ---------------------------------------------------------------------------
// Random numbers
// ---------------------------------------------------------------------------

/// SplitMix64 generator with Box-Muller normal sampling. Identical seeds give
/// identical sequences within one build.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) noexcept : state_(seed) {}

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1) with 53 bits: (x >> 11) / 2^53.
  double next_uniform() noexcept;
  double next_gaussian() noexcept;

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

std::uint64_t fnv1a64(std::string_view bytes) noexcept;
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) noexcept;

/// Derives an independent sub-seed from a base seed and a stream label
/// (purpose tag plus indices).
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag,
                          std::initializer_list<std::uint64_t> indices = {}) noexcept;

/// rows x cols standard-normal samples drawn row-major from SeededRng(seed).
Tensor2 seeded_gaussian(std::uint64_t seed, std::size_t rows, std::size_t cols);

// ---------------------------------------------------------------------------
// Attention masks
// ---------------------------------------------------------------------------

/// Additive attention mask whose entries are exactly 0 or -inf.
class AttentionMask {
 public:
  AttentionMask() = default;
  /// All-pass (all zero) mask.
  AttentionMask(std::size_t rows, std::size_t cols);

  /// Validates that every value is 0 or -inf.
  static AttentionMask from_values(const Tensor2& values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  void block(std::size_t r, std::size_t c) noexcept { blocked_[r * cols_ + c] = 1; }
  void block_range(std::size_t r, std::size_t col_begin, std::size_t col_end) noexcept;
  bool blocked(std::size_t r, std::size_t c) const noexcept { return blocked_[r * cols_ + c] != 0; }
  double value(std::size_t r, std::size_t c) const noexcept;

  std::size_t blocked_count() const noexcept;
  std::size_t blocked_in_row(std::size_t r) const noexcept;
  bool all_pass() const noexcept { return blocked_count() == 0; }

  Tensor2 to_tensor() const;

  friend bool operator==(const AttentionMask&, const AttentionMask&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> blocked_;
};

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

/// Numerically stable softmax of each row. -inf entries map to exactly 0.
/// Throws Errc::RowFullyMasked when a row is entirely -inf.
Tensor2 row_softmax(const Tensor2& x);

/// softmax((Q Kᵀ + M) / sqrt(head_width)), the weights used by masked_attention.
Tensor2 attention_weights(const Tensor2& q, const Tensor2& k, const AttentionMask& mask,
                          std::size_t head_width);

/// softmax((Q Kᵀ + M) / sqrt(head_width)) V.
Tensor2 masked_attention(const Tensor2& q, const Tensor2& k, const Tensor2& v,
                         const AttentionMask& mask, std::size_t head_width);

/// Same as masked_attention with M = 0.
Tensor2 attention(const Tensor2& q, const Tensor2& k, const Tensor2& v, std::size_t head_width);

// ---------------------------------------------------------------------------
// Thresholding
// ---------------------------------------------------------------------------

inline constexpr std::size_t kDefaultOtsuBins = 256;

/// Otsu threshold over an equal-width histogram on [min, max].
///
/// Candidates are the interior bin edges e_k = min + k (max - min) / bins,
/// k = 1 .. bins-1. Edge e_k splits the values into {v <= e_k} and {v > e_k},
/// which is exactly the split `binarize` applies to the returned threshold.
/// The edge maximizing the between-class variance w0 w1 (mu0 - mu1)^2 wins;
/// exact ties go to the lowest edge.
///
/// Throws Errc::DegenerateHistogram when max - min < 1e-12.
double otsu_threshold(std::span<const double> values, std::size_t bins = kDefaultOtsuBins);

/// out[i] = values[i] > threshold.
std::vector<bool> binarize(std::span<const double> values, double threshold);

}  // namespace tfti2i
