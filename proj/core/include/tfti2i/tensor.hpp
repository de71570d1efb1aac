#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace tfti2i {

/// Dense row-major matrix of doubles.
class Tensor2 {
 public:
  Tensor2() = default;
  Tensor2(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor2 from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor2&, const Tensor2&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Tensor2 matmul(const Tensor2& a, const Tensor2& b);
/// a · bᵀ without materializing the transpose.
Tensor2 matmul_transposed(const Tensor2& a, const Tensor2& b);

Tensor2 operator+(const Tensor2& a, const Tensor2& b);
Tensor2 operator-(const Tensor2& a, const Tensor2& b);
Tensor2 operator*(double s, const Tensor2& a);

Tensor2 vstack(std::span<const Tensor2> parts);
Tensor2 hstack(std::span<const Tensor2> parts);
Tensor2 slice_rows(const Tensor2& a, std::size_t begin, std::size_t count);
Tensor2 slice_cols(const Tensor2& a, std::size_t begin, std::size_t count);

double frobenius_norm(const Tensor2& a);
double frobenius_distance(const Tensor2& a, const Tensor2& b);
double max_abs_diff(const Tensor2& a, const Tensor2& b);

/// Byte-level equality; distinguishes -0.0 from 0.0 and treats identical NaN
/// payloads as equal.
bool bit_equal(const Tensor2& a, const Tensor2& b) noexcept;

}  // namespace tfti2i
