#include "tfti2i/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "tfti2i/error.hpp"

namespace tfti2i {

const char* to_string(Errc code) noexcept {
  switch (code) {
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::RowFullyMasked: return "RowFullyMasked";
    case Errc::DegenerateHistogram: return "DegenerateHistogram";
    case Errc::InvalidMask: return "InvalidMask";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::BadImageShape: return "BadImageShape";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

// ---------------------------------------------------------------------------

std::uint64_t SeededRng::next_u64() noexcept {
  state_ += kGolden;
  return mix64(state_);
}

double SeededRng::next_uniform() noexcept {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double SeededRng::next_gaussian() noexcept {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // 1 - u lies in (0, 1], so the log is finite.
  const double u1 = 1.0 - next_uniform();
  const double u2 = next_uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view tag,
                          std::initializer_list<std::uint64_t> indices) noexcept {
  std::uint64_t h = mix64(base + kGolden);
  h = mix64(h ^ fnv1a64(tag));
  for (std::uint64_t idx : indices) h = mix64(h ^ ((idx + 1) * kGolden));
  return h;
}

Tensor2 seeded_gaussian(std::uint64_t seed, std::size_t rows, std::size_t cols) {
  SeededRng rng(seed);
  Tensor2 out(rows, cols);
  for (double& x : out.values()) x = rng.next_gaussian();
  return out;
}

// ---------------------------------------------------------------------------

AttentionMask::AttentionMask(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), blocked_(rows * cols, 0) {}

AttentionMask AttentionMask::from_values(const Tensor2& values) {
  AttentionMask mask(values.rows(), values.cols());
  for (std::size_t r = 0; r < values.rows(); ++r) {
    for (std::size_t c = 0; c < values.cols(); ++c) {
      const double v = values(r, c);
      if (v == kNegInf) {
        mask.block(r, c);
      } else if (v != 0.0) {
        throw Error(Errc::InvalidMask, "entry (" + std::to_string(r) + ", " + std::to_string(c) +
                                           ") is neither 0 nor -inf");
      }
    }
  }
  return mask;
}

void AttentionMask::block_range(std::size_t r, std::size_t col_begin, std::size_t col_end) noexcept {
  for (std::size_t c = col_begin; c < col_end; ++c) block(r, c);
}

double AttentionMask::value(std::size_t r, std::size_t c) const noexcept {
  return blocked(r, c) ? kNegInf : 0.0;
}

std::size_t AttentionMask::blocked_count() const noexcept {
  return static_cast<std::size_t>(std::count(blocked_.begin(), blocked_.end(), 1));
}

std::size_t AttentionMask::blocked_in_row(std::size_t r) const noexcept {
  const auto begin = blocked_.begin() + static_cast<std::ptrdiff_t>(r * cols_);
  return static_cast<std::size_t>(std::count(begin, begin + static_cast<std::ptrdiff_t>(cols_), 1));
}

Tensor2 AttentionMask::to_tensor() const {
  Tensor2 out(rows_, cols_);
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t c = 0; c < cols_; ++c) out(r, c) = value(r, c);
  }
  return out;
}

// ---------------------------------------------------------------------------

Tensor2 row_softmax(const Tensor2& x) {
  Tensor2 out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto in = x.row(r);
    auto dst = out.row(r);
    double row_max = kNegInf;
    for (double v : in) row_max = std::max(row_max, v);
    if (row_max == kNegInf) {
      throw Error(Errc::RowFullyMasked, "row " + std::to_string(r) + " has no unmasked entry");
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      dst[c] = in[c] == kNegInf ? 0.0 : std::exp(in[c] - row_max);
      sum += dst[c];
    }
    for (double& v : dst) v /= sum;
  }
  return out;
}

namespace {

Tensor2 scaled_logits(const Tensor2& q, const Tensor2& k, const AttentionMask* mask,
                      std::size_t head_width) {
  if (q.cols() != head_width || k.cols() != head_width) {
    throw Error(Errc::ShapeMismatch, "query/key width must equal head width " +
                                         std::to_string(head_width));
  }
  if (mask != nullptr && (mask->rows() != q.rows() || mask->cols() != k.rows())) {
    throw Error(Errc::ShapeMismatch,
                "mask " + std::to_string(mask->rows()) + "x" + std::to_string(mask->cols()) +
                    " does not gate " + std::to_string(q.rows()) + "x" + std::to_string(k.rows()));
  }
  Tensor2 logits = matmul_transposed(q, k);
  const double scale = std::sqrt(static_cast<double>(head_width));
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    for (std::size_t c = 0; c < logits.cols(); ++c) {
      double v = logits(r, c);
      if (mask != nullptr) v += mask->value(r, c);
      logits(r, c) = v / scale;
    }
  }
  return logits;
}

}  // namespace

Tensor2 attention_weights(const Tensor2& q, const Tensor2& k, const AttentionMask& mask,
                          std::size_t head_width) {
  return row_softmax(scaled_logits(q, k, &mask, head_width));
}

Tensor2 masked_attention(const Tensor2& q, const Tensor2& k, const Tensor2& v,
                         const AttentionMask& mask, std::size_t head_width) {
  if (k.rows() != v.rows()) throw Error(Errc::ShapeMismatch, "key and value counts differ");
  return matmul(attention_weights(q, k, mask, head_width), v);
}

Tensor2 attention(const Tensor2& q, const Tensor2& k, const Tensor2& v, std::size_t head_width) {
  if (k.rows() != v.rows()) throw Error(Errc::ShapeMismatch, "key and value counts differ");
  return matmul(row_softmax(scaled_logits(q, k, nullptr, head_width)), v);
}

// ---------------------------------------------------------------------------

double otsu_threshold(std::span<const double> values, std::size_t bins) {
  if (bins < 2) throw Error(Errc::InvalidConfig, "otsu needs at least 2 bins");
  if (values.size() < 2) throw Error(Errc::DegenerateHistogram, "fewer than 2 values");

  const auto [min_it, max_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *min_it;
  const double hi = *max_it;
  if (hi - lo < 1e-12) throw Error(Errc::DegenerateHistogram, "all values equal");

  const double width = (hi - lo) / static_cast<double>(bins);
  auto edge = [&](std::size_t k) { return lo + static_cast<double>(k) * width; };

  // Bin b holds values with edge(b) < v <= edge(b + 1); bin 0 also holds the minimum.
  std::vector<std::size_t> counts(bins, 0);
  std::vector<double> sums(bins, 0.0);
  for (double v : values) {
    auto b = static_cast<std::size_t>(std::clamp(std::floor((v - lo) / width), 0.0,
                                                 static_cast<double>(bins - 1)));
    while (b + 1 < bins && edge(b + 1) < v) ++b;
    while (b > 0 && !(edge(b) < v)) --b;
    ++counts[b];
    sums[b] += v;
  }

  // Suffix sums so each class mean is accumulated from its own members only.
  std::vector<std::size_t> upper_count(bins + 1, 0);
  std::vector<double> upper_sum(bins + 1, 0.0);
  for (std::size_t b = bins; b-- > 0;) {
    upper_count[b] = upper_count[b + 1] + counts[b];
    upper_sum[b] = upper_sum[b + 1] + sums[b];
  }

  const double n = static_cast<double>(values.size());
  std::size_t lower_count = 0;
  double lower_sum = 0.0;
  double best_score = -1.0;
  std::size_t best_k = 1;
  for (std::size_t k = 1; k < bins; ++k) {
    lower_count += counts[k - 1];
    lower_sum += sums[k - 1];
    const std::size_t n1 = upper_count[k];
    if (lower_count == 0 || n1 == 0) continue;
    const double w0 = static_cast<double>(lower_count) / n;
    const double w1 = static_cast<double>(n1) / n;
    const double mu0 = lower_sum / static_cast<double>(lower_count);
    const double mu1 = upper_sum[k] / static_cast<double>(n1);
    const double score = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
    if (score > best_score) {
      best_score = score;
      best_k = k;
    }
  }
  return edge(best_k);
}

std::vector<bool> binarize(std::span<const double> values, double threshold) {
  std::vector<bool> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = values[i] > threshold;
  return out;
}

}  // namespace tfti2i
