#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "test_util.hpp"
#include "tfti2i/error.hpp"
#include "tfti2i/numerics.hpp"

using namespace tfti2i;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

using testutil::error_code_of;
}  // namespace

TEST_SUITE("seeded_gaussian") {
  TEST_CASE("same seed is bit-identical") {
    CHECK(bit_equal(seeded_gaussian(7, 1, 4), seeded_gaussian(7, 1, 4)));
  }

  TEST_CASE("different seeds differ") {
    CHECK_FALSE(seeded_gaussian(7, 1, 4) == seeded_gaussian(8, 1, 4));
  }

  TEST_CASE("uniform mapping uses the top 53 bits") {
    SeededRng a(123);
    SeededRng b(123);
    for (int i = 0; i < 100; ++i) {
      const double u = a.next_uniform();
      CHECK(u == static_cast<double>(b.next_u64() >> 11) / 9007199254740992.0);
      CHECK(u >= 0.0);
      CHECK(u < 1.0);
    }
  }

  TEST_CASE("10^5 draws have standard moments, frozen mean for seed 0") {
    const Tensor2 t = seeded_gaussian(0, 100, 1000);
    double sum = 0.0, sq = 0.0;
    for (double x : t.values()) {
      sum += x;
      sq += x * x;
    }
    const double mean = sum / 1e5;
    const double var = sq / 1e5 - mean * mean;
    CHECK(std::abs(mean) <= 0.02);
    CHECK(std::abs(var - 1.0) <= 0.05);
    // Regression value produced by this generator.
    CHECK(mean == doctest::Approx(0.002595373638187912).epsilon(1e-12));
  }

  TEST_CASE("derive_seed separates tags and indices") {
    CHECK(derive_seed(1, "a", {0}) != derive_seed(1, "b", {0}));
    CHECK(derive_seed(1, "a", {0}) != derive_seed(1, "a", {1}));
    CHECK(derive_seed(1, "a", {0, 1}) != derive_seed(1, "a", {1, 0}));
    CHECK(derive_seed(1, "a", {0}) == derive_seed(1, "a", {0}));
  }

  TEST_CASE("fnv1a64 known vectors") {
    CHECK(fnv1a64(std::string_view("")) == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64(std::string_view("a")) == 0xaf63dc4c8601ec8cULL);
  }
}

TEST_SUITE("row_softmax") {
  TEST_CASE("symmetric row") {
    const Tensor2 out = row_softmax(Tensor2::from_rows({{0.0, 0.0}}));
    CHECK(out(0, 0) == 0.5);
    CHECK(out(0, 1) == 0.5);
  }

  TEST_CASE("masked entry is exactly zero") {
    const Tensor2 out = row_softmax(Tensor2::from_rows({{3.7, kNegInf}}));
    CHECK(out(0, 0) == 1.0);
    CHECK(out(0, 1) == 0.0);
    CHECK_FALSE(std::signbit(out(0, 1)));
  }

  TEST_CASE("[1, 2, 3] matches high-precision exp-normalize") {
    // 40-digit evaluation of e^k / (e + e^2 + e^3).
    const Tensor2 out = row_softmax(Tensor2::from_rows({{1.0, 2.0, 3.0}}));
    CHECK(out(0, 0) == doctest::Approx(0.090030573170380458).epsilon(1e-14));
    CHECK(out(0, 1) == doctest::Approx(0.24472847105479765).epsilon(1e-14));
    CHECK(out(0, 2) == doctest::Approx(0.66524095577482189).epsilon(1e-14));
  }

  TEST_CASE("fully masked row is an error") {
    CHECK(error_code_of([] { row_softmax(Tensor2::from_rows({{0.0}, {kNegInf}})); }) ==
          Errc::RowFullyMasked);
  }

  TEST_CASE("property: 1000 random rows sum to one and are shift invariant") {
    std::mt19937_64 rng(42);
    std::uniform_int_distribution<int> len(1, 40);
    std::uniform_real_distribution<double> shift(-50.0, 50.0);
    std::bernoulli_distribution masked(0.2);
    for (int trial = 0; trial < 1000; ++trial) {
      const auto n = static_cast<std::size_t>(len(rng));
      Tensor2 row = oracle::random_tensor(rng, 1, n, 5.0);
      for (std::size_t j = 1; j < n; ++j) {
        if (masked(rng)) row(0, j) = kNegInf;
      }
      const Tensor2 p = row_softmax(row);
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        CHECK(p(0, j) >= 0.0);
        if (row(0, j) == kNegInf) CHECK(p(0, j) == 0.0);
        total += p(0, j);
      }
      CHECK(std::abs(total - 1.0) <= 1e-9);

      Tensor2 shifted = row;
      const double c = shift(rng);
      for (double& x : shifted.values()) x += c;
      CHECK(max_abs_diff(row_softmax(shifted), p) <= 1e-12);
    }
  }
}

TEST_SUITE("masked_attention") {
  TEST_CASE("single key returns its value row exactly") {
    const Tensor2 q = Tensor2::from_rows({{0.3, -1.2}, {2.0, 0.5}});
    const Tensor2 k = Tensor2::from_rows({{1.0, 1.0}});
    const Tensor2 v = Tensor2::from_rows({{4.25, -7.5, 0.125}});
    const Tensor2 out = masked_attention(q, k, v, AttentionMask(2, 1), 2);
    for (std::size_t r = 0; r < 2; ++r) {
      for (std::size_t c = 0; c < 3; ++c) CHECK(out(r, c) == v(0, c));
    }
  }

  TEST_CASE("fully blocked key column ignores its value row") {
    std::mt19937_64 rng(3);
    const Tensor2 q = oracle::random_tensor(rng, 3, 4);
    const Tensor2 k = oracle::random_tensor(rng, 5, 4);
    Tensor2 v = oracle::random_tensor(rng, 5, 2);
    AttentionMask mask(3, 5);
    for (std::size_t r = 0; r < 3; ++r) mask.block(r, 2);
    const Tensor2 before = masked_attention(q, k, v, mask, 4);
    v(2, 0) = 1e6;
    v(2, 1) = -3e5;
    CHECK(bit_equal(before, masked_attention(q, k, v, mask, 4)));
  }

  TEST_CASE("2x2 hand-set case matches brute force") {
    const Tensor2 q = Tensor2::from_rows({{1.0, 0.0}, {0.5, -1.0}});
    const Tensor2 k = Tensor2::from_rows({{0.0, 2.0}, {1.5, 1.0}});
    const Tensor2 v = Tensor2::from_rows({{1.0, 2.0}, {-3.0, 0.25}});
    const oracle::Matrix zero(2, std::vector<double>(2, 0.0));
    const auto expected =
        oracle::attention(oracle::to_matrix(q), oracle::to_matrix(k), oracle::to_matrix(v), zero, 2);
    CHECK(oracle::max_abs_diff(expected, masked_attention(q, k, v, AttentionMask(2, 2), 2)) <= 1e-12);
  }

  TEST_CASE("zero mask is bit-identical to unmasked attention") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 20; ++trial) {
      const Tensor2 q = oracle::random_tensor(rng, 6, 8);
      const Tensor2 k = oracle::random_tensor(rng, 9, 8);
      const Tensor2 v = oracle::random_tensor(rng, 9, 3);
      CHECK(bit_equal(masked_attention(q, k, v, AttentionMask(6, 9), 8), attention(q, k, v, 8)));
    }
  }

  TEST_CASE("blocked positions receive exactly zero weight") {
    std::mt19937_64 rng(11);
    std::bernoulli_distribution coin(0.4);
    for (int trial = 0; trial < 50; ++trial) {
      const Tensor2 q = oracle::random_tensor(rng, 4, 4, 3.0);
      const Tensor2 k = oracle::random_tensor(rng, 7, 4, 3.0);
      AttentionMask mask(4, 7);
      for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t c = 1; c < 7; ++c) {
          if (coin(rng)) mask.block(r, c);
        }
      }
      const Tensor2 w = attention_weights(q, k, mask, 4);
      for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t c = 0; c < 7; ++c) {
          if (mask.blocked(r, c)) CHECK(w(r, c) == 0.0);
        }
      }
    }
  }

  TEST_CASE("shape errors") {
    const Tensor2 q(2, 3), k(4, 3), v(4, 2);
    CHECK(error_code_of([&] { masked_attention(q, k, v, AttentionMask(2, 5), 3); }) ==
          Errc::ShapeMismatch);
    CHECK(error_code_of([&] { masked_attention(q, k, v, AttentionMask(2, 4), 2); }) ==
          Errc::ShapeMismatch);
    CHECK(error_code_of([&] { masked_attention(q, k, Tensor2(3, 2), AttentionMask(2, 4), 3); }) ==
          Errc::ShapeMismatch);
  }
}

TEST_SUITE("attention_mask") {
  TEST_CASE("from_values accepts only 0 and -inf") {
    const AttentionMask m = AttentionMask::from_values(Tensor2::from_rows({{0.0, kNegInf}}));
    CHECK(m.blocked(0, 1));
    CHECK_FALSE(m.blocked(0, 0));
    CHECK(m.to_tensor()(0, 1) == kNegInf);
    CHECK(error_code_of([] { AttentionMask::from_values(Tensor2::from_rows({{-1e30}})); }) ==
          Errc::InvalidMask);
  }
}

TEST_SUITE("otsu") {
  TEST_CASE("two clusters are split strictly between them") {
    std::vector<double> v(50, 0.1);
    v.insert(v.end(), 50, 0.9);
    const double t = otsu_threshold(v);
    CHECK(t > 0.1);
    CHECK(t < 0.9);
    const auto b = binarize(v, t);
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(b[i] == (i >= 50));
  }

  TEST_CASE("constant input is degenerate") {
    const std::vector<double> v(10, 0.5);
    CHECK(error_code_of([&] { otsu_threshold(v); }) == Errc::DegenerateHistogram);
    CHECK(error_code_of([] { otsu_threshold(std::vector<double>{1.0}); }) ==
          Errc::DegenerateHistogram);
  }

  TEST_CASE("six-value example equals the exhaustive search") {
    const std::vector<double> v{0.1, 0.12, 0.11, 0.85, 0.9, 0.88};
    const double t = otsu_threshold(v, 256);
    CHECK(t == oracle::exhaustive_otsu(v, 256));
    CHECK(binarize(v, t) == std::vector<bool>{false, false, false, true, true, true});
  }

  TEST_CASE("property: matches exhaustive search on random inputs") {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> len(2, 64);
    std::uniform_int_distribution<int> bins(2, 300);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    for (int trial = 0; trial < 300; ++trial) {
      std::vector<double> v(static_cast<std::size_t>(len(rng)));
      for (double& x : v) x = u(rng);
      const auto b = static_cast<std::size_t>(bins(rng));
      CHECK(otsu_threshold(v, b) == oracle::exhaustive_otsu(v, b));
    }
  }
}

TEST_SUITE("binarize") {
  TEST_CASE("strict comparison") {
    CHECK(binarize(std::vector<double>{0.0, 1.0}, 0.5) == std::vector<bool>{false, true});
    CHECK(binarize(std::vector<double>{0.5}, 0.5) == std::vector<bool>{false});
  }

  TEST_CASE("threshold below the minimum passes everything") {
    const std::vector<double> v{0.3, -2.0, 7.0};
    CHECK(binarize(v, -3.0) == std::vector<bool>(3, true));
  }
}
