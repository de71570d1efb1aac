#include "tfti2i/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "tfti2i/error.hpp"

namespace tfti2i {

namespace {

void require_same_shape(const Tensor2& a, const Tensor2& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(Errc::ShapeMismatch, std::string(op) + ": " + std::to_string(a.rows()) + "x" +
                                         std::to_string(a.cols()) + " vs " +
                                         std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

}  // namespace

Tensor2::Tensor2(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor2::Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw Error(Errc::ShapeMismatch, "data length " + std::to_string(data_.size()) +
                                         " does not match " + std::to_string(rows_) + "x" +
                                         std::to_string(cols_));
  }
}

Tensor2 Tensor2::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw Error(Errc::ShapeMismatch, "ragged row list");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor2(r, c, std::move(data));
}

bool Tensor2::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
  if (a.cols() != b.rows()) {
    throw Error(Errc::ShapeMismatch, "matmul inner dimensions " + std::to_string(a.cols()) +
                                         " and " + std::to_string(b.rows()));
  }
  Tensor2 out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out_row = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      const auto b_row = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
    }
  }
  return out;
}

Tensor2 matmul_transposed(const Tensor2& a, const Tensor2& b) {
  if (a.cols() != b.cols()) {
    throw Error(Errc::ShapeMismatch, "matmul_transposed widths " + std::to_string(a.cols()) +
                                         " and " + std::to_string(b.cols()));
  }
  Tensor2 out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto a_row = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const auto b_row = b.row(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a_row[k] * b_row[k];
      out(i, j) = acc;
    }
  }
  return out;
}

Tensor2 operator+(const Tensor2& a, const Tensor2& b) {
  require_same_shape(a, b, "add");
  Tensor2 out = a;
  auto dst = out.values();
  const auto src = b.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  return out;
}

Tensor2 operator-(const Tensor2& a, const Tensor2& b) {
  require_same_shape(a, b, "subtract");
  Tensor2 out = a;
  auto dst = out.values();
  const auto src = b.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= src[i];
  return out;
}

Tensor2 operator*(double s, const Tensor2& a) {
  Tensor2 out = a;
  for (double& x : out.values()) x *= s;
  return out;
}

Tensor2 vstack(std::span<const Tensor2> parts) {
  if (parts.empty()) return {};
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw Error(Errc::ShapeMismatch, "vstack column counts differ");
    rows += p.rows();
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const auto& p : parts) data.insert(data.end(), p.values().begin(), p.values().end());
  return Tensor2(rows, cols, std::move(data));
}

Tensor2 hstack(std::span<const Tensor2> parts) {
  if (parts.empty()) return {};
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw Error(Errc::ShapeMismatch, "hstack row counts differ");
    cols += p.cols();
  }
  Tensor2 out(rows, cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(p.row(r).begin(), p.row(r).end(), out.row(r).begin() + offset);
    }
    offset += p.cols();
  }
  return out;
}

Tensor2 slice_rows(const Tensor2& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.rows()) throw Error(Errc::ShapeMismatch, "row slice out of range");
  std::vector<double> data(a.values().begin() + begin * a.cols(),
                           a.values().begin() + (begin + count) * a.cols());
  return Tensor2(count, a.cols(), std::move(data));
}

Tensor2 slice_cols(const Tensor2& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.cols()) throw Error(Errc::ShapeMismatch, "column slice out of range");
  Tensor2 out(a.rows(), count);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const auto src = a.row(r).subspan(begin, count);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

double frobenius_norm(const Tensor2& a) {
  double acc = 0.0;
  for (double x : a.values()) acc += x * x;
  return std::sqrt(acc);
}

double frobenius_distance(const Tensor2& a, const Tensor2& b) {
  require_same_shape(a, b, "distance");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.values()[i] - b.values()[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

double max_abs_diff(const Tensor2& a, const Tensor2& b) {
  require_same_shape(a, b, "max_abs_diff");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a.values()[i] - b.values()[i]));
  }
  return worst;
}

bool bit_equal(const Tensor2& a, const Tensor2& b) noexcept {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  if (a.size() == 0) return true;
  return std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(double)) == 0;
}

}  // namespace tfti2i
