#include <array>
#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "test_util.hpp"
#include "tfti2i/model.hpp"

using namespace tfti2i;
using testutil::error_code_of;
using testutil::small_config;

namespace {

TokenBlock random_block(std::mt19937_64& rng, Modality m, std::size_t rows, std::size_t d) {
  return TokenBlock{m, oracle::random_tensor(rng, rows, d), std::nullopt};
}

/// Flat single-head dual-update oracle on nested vectors.
oracle::Matrix mma_oracle(const Model& model, std::size_t layer, const Tensor2& vision,
                          const Tensor2& text, const oracle::Matrix& mask) {
  const LayerWeights& w = model.layers[layer];
  using oracle::concat_rows;
  using oracle::matmul;
  using oracle::to_matrix;
  const auto xv = to_matrix(vision);
  const auto xt = to_matrix(text);
  const auto q = concat_rows(matmul(xv, to_matrix(w.vision_q)), matmul(xt, to_matrix(w.text_q)));
  const auto k = concat_rows(matmul(xv, to_matrix(w.vision_k)), matmul(xt, to_matrix(w.text_k)));
  const auto v = concat_rows(matmul(xv, to_matrix(w.vision_v)), matmul(xt, to_matrix(w.text_v)));
  auto out = oracle::attention(q, k, v, mask, model.config.width);
  const auto x = concat_rows(xv, xt);
  for (std::size_t r = 0; r < out.size(); ++r) {
    for (std::size_t c = 0; c < out[r].size(); ++c) out[r][c] += x[r][c];
  }
  return out;
}

}  // namespace

TEST_SUITE("init_model") {
  TEST_CASE("deterministic") {
    const Model a = init_model(small_config());
    const Model b = init_model(small_config());
    REQUIRE(a.layers.size() == 3);
    for (std::size_t l = 0; l < 3; ++l) {
      CHECK(bit_equal(a.layers[l].vision_q, b.layers[l].vision_q));
      CHECK(bit_equal(a.layers[l].text_v, b.layers[l].text_v));
    }
    CHECK(bit_equal(a.output_projection, b.output_projection));
  }

  TEST_CASE("seed changes weights") {
    const Model a = init_model(small_config(1));
    const Model b = init_model(small_config(2));
    CHECK_FALSE(a.layers[0].vision_q == b.layers[0].vision_q);
  }

  TEST_CASE("d=64 entries have variance near 1/d") {
    const Model m = init_model(ModelConfig{});
    for (const LayerWeights& w : m.layers) {
      for (const Tensor2* t : {&w.vision_q, &w.vision_k, &w.vision_v, &w.text_q, &w.text_k, &w.text_v}) {
        double sq = 0.0;
        for (double x : t->values()) sq += x * x;
        const double var = sq / static_cast<double>(t->size());
        CHECK(var == doctest::Approx(1.0 / 64.0).epsilon(0.2));
      }
    }
  }

  TEST_CASE("invalid shapes are rejected") {
    ModelConfig c = small_config();
    c.heads = 3;
    CHECK(error_code_of([&] { init_model(c); }) == Errc::InvalidConfig);
    c = small_config();
    c.vision_tokens = 5;
    CHECK(error_code_of([&] { init_model(c); }) == Errc::InvalidConfig);
    c = small_config();
    c.rcm_gate_layer = c.layers;
    CHECK(error_code_of([&] { init_model(c); }) == Errc::InvalidConfig);
  }
}

TEST_SUITE("encode_prompt") {
  const Model model = init_model(small_config());

  TEST_CASE("deterministic") {
    CHECK(bit_equal(encode_prompt("a cat", model).tokens, encode_prompt("a cat", model).tokens));
  }

  TEST_CASE("differing words differ only in their rows") {
    const Tensor2 cat = encode_prompt("a cat", model).tokens;
    const Tensor2 dog = encode_prompt("a dog", model).tokens;
    CHECK(bit_equal(slice_rows(cat, 0, 1), slice_rows(dog, 0, 1)));
    CHECK_FALSE(slice_rows(cat, 1, 1) == slice_rows(dog, 1, 1));
  }

  TEST_CASE("empty prompt is all padding") {
    const TokenBlock b = encode_prompt("", model);
    CHECK(b.modality == Modality::Text);
    REQUIRE(b.rows() == 2);
    const Tensor2 pad = word_embedding("", model);
    for (std::size_t r = 0; r < b.rows(); ++r) CHECK(bit_equal(slice_rows(b.tokens, r, 1), pad));
  }

  TEST_CASE("long prompts are truncated") {
    const Tensor2 b = encode_prompt("one two three four", model).tokens;
    CHECK(b.rows() == 2);
    CHECK(bit_equal(slice_rows(b, 1, 1), word_embedding("two", model)));
  }
}

TEST_SUITE("encode_image") {
  ModelConfig cfg64() {
    ModelConfig c = small_config();
    c.vision_tokens = 64;
    return c;
  }

  TEST_CASE("uniform gray image gives identical rows") {
    const Model model = init_model(cfg64());
    const Tensor2 t = encode_image(Image::filled(16, 16, 1, 90), model).tokens;
    REQUIRE(t.rows() == 64);
    for (std::size_t r = 1; r < 64; ++r) CHECK(bit_equal(slice_rows(t, r, 1), slice_rows(t, 0, 1)));
  }

  TEST_CASE("one changed patch changes one row") {
    const Model model = init_model(cfg64());
    Image a = Image::filled(16, 16, 3, 40);
    Image b = a;
    // Patch (row 2, col 5) covers pixels y in [4, 6), x in [10, 12).
    b.at(5, 11, 1) = 200;
    const Tensor2 ta = encode_image(a, model).tokens;
    const Tensor2 tb = encode_image(b, model).tokens;
    for (std::size_t r = 0; r < 64; ++r) {
      const bool same = bit_equal(slice_rows(ta, r, 1), slice_rows(tb, r, 1));
      CHECK(same == (r != 2 * 8 + 5));
    }
  }

  TEST_CASE("checkerboard pooling matches hand values") {
    // 2-pixel squares align with 2x2 patches: each patch is all 0 or all 255.
    Image coarse = Image::filled(16, 16, 1, 0);
    Image fine = Image::filled(16, 16, 1, 0);
    for (std::size_t y = 0; y < 16; ++y) {
      for (std::size_t x = 0; x < 16; ++x) {
        if (((y / 2) + (x / 2)) % 2 == 1) coarse.at(y, x, 0) = 255;
        if ((y + x) % 2 == 1) fine.at(y, x, 0) = 255;
      }
    }
    const Tensor2 pc = pool_image(coarse, 8);
    const Tensor2 pf = pool_image(fine, 8);
    for (std::size_t gy = 0; gy < 8; ++gy) {
      for (std::size_t gx = 0; gx < 8; ++gx) {
        CHECK(pc(gy * 8 + gx, 0) == ((gy + gx) % 2 == 1 ? 1.0 : -1.0));
        // Two black and two white pixels: mean 127.5 maps to 0.
        CHECK(pf(gy * 8 + gx, 0) == 0.0);
      }
    }
  }

  TEST_CASE("indivisible image is rejected") {
    const Model model = init_model(cfg64());
    CHECK(error_code_of([&] { encode_image(Image::filled(15, 16, 1, 0), model); }) ==
          Errc::BadImageShape);
  }
}

TEST_SUITE("project_qkv") {
  TEST_CASE("zero input gives zero projections") {
    const Model model = init_model(small_config());
    const HeadedProjection p = project_qkv(TokenBlock{Modality::Text, Tensor2(2, 8), {}}, 0, model);
    for (const auto* group : {&p.q, &p.k, &p.v}) {
      for (const Tensor2& t : *group) {
        for (double x : t.values()) CHECK(x == 0.0);
      }
    }
  }

  TEST_CASE("H=1 heads equal the unsplit projection") {
    ModelConfig c = small_config();
    c.heads = 1;
    const Model model = init_model(c);
    std::mt19937_64 rng(1);
    const TokenBlock b = random_block(rng, Modality::Vision, 4, 8);
    const HeadedProjection p = project_qkv(b, 1, model);
    REQUIRE(p.q.size() == 1);
    CHECK(bit_equal(p.q[0], matmul(b.tokens, model.layers[1].vision_q)));
    CHECK(bit_equal(p.v[0], matmul(b.tokens, model.layers[1].vision_v)));
  }

  TEST_CASE("d=4, H=2 random block matches multiply and slice") {
    ModelConfig c = small_config();
    c.width = 4;
    const Model model = init_model(c);
    std::mt19937_64 rng(2);
    const TokenBlock b = random_block(rng, Modality::Text, 2, 4);
    const HeadedProjection p = project_qkv(b, 0, model);
    const auto full = oracle::matmul(oracle::to_matrix(b.tokens), oracle::to_matrix(model.layers[0].text_k));
    REQUIRE(p.k.size() == 2);
    for (std::size_t h = 0; h < 2; ++h) {
      REQUIRE(p.k[h].cols() == 2);
      for (std::size_t r = 0; r < 2; ++r) {
        for (std::size_t j = 0; j < 2; ++j) CHECK(std::abs(p.k[h](r, j) - full[r][h * 2 + j]) <= 1e-12);
      }
    }
  }

  TEST_CASE("layer and width errors") {
    const Model model = init_model(small_config());
    CHECK(error_code_of([&] { project_qkv(TokenBlock{Modality::Text, Tensor2(2, 8), {}}, 3, model); }) ==
          Errc::ShapeMismatch);
    CHECK(error_code_of([&] { project_qkv(TokenBlock{Modality::Text, Tensor2(2, 7), {}}, 0, model); }) ==
          Errc::ShapeMismatch);
  }
}

TEST_SUITE("mma_forward") {
  TEST_CASE("H=1 matches flat brute force") {
    ModelConfig c = small_config();
    c.heads = 1;
    const Model model = init_model(c);
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 10; ++trial) {
      const TokenBlock v = random_block(rng, Modality::Vision, 4, 8);
      const TokenBlock t = random_block(rng, Modality::Text, 2, 8);
      const DualTokens out = mma_forward(v, t, AttentionMask(6, 6), 2, model);
      const auto expected = mma_oracle(model, 2, v.tokens, t.tokens, oracle::Matrix(6, std::vector<double>(6, 0.0)));
      CHECK(oracle::max_abs_diff(expected, vstack(std::array{out.vision.tokens, out.text.tokens})) <= 1e-12);
    }
  }

  TEST_CASE("zero value weights leave inputs unchanged") {
    Model model = init_model(small_config());
    model.layers[0].vision_v = Tensor2(8, 8);
    model.layers[0].text_v = Tensor2(8, 8);
    std::mt19937_64 rng(8);
    const TokenBlock v = random_block(rng, Modality::Vision, 4, 8);
    const TokenBlock t = random_block(rng, Modality::Text, 2, 8);
    const DualTokens out = mma_forward(v, t, AttentionMask(6, 6), 0, model);
    CHECK(bit_equal(out.vision.tokens, v.tokens));
    CHECK(bit_equal(out.text.tokens, t.tokens));
  }

  TEST_CASE("blocking cross-modal attention gives text self-attention") {
    ModelConfig c = small_config();
    c.heads = 1;
    const Model model = init_model(c);
    std::mt19937_64 rng(9);
    const TokenBlock v = random_block(rng, Modality::Vision, 4, 8);
    const TokenBlock t = random_block(rng, Modality::Text, 2, 8);
    AttentionMask mask(6, 6);
    for (std::size_t r = 0; r < 6; ++r) {
      for (std::size_t col = 0; col < 6; ++col) {
        if ((r < 4) != (col < 4)) mask.block(r, col);
      }
    }
    const DualTokens out = mma_forward(v, t, mask, 1, model);
    const LayerWeights& w = model.layers[1];
    using oracle::matmul;
    using oracle::to_matrix;
    const auto xt = to_matrix(t.tokens);
    auto expected = oracle::attention(matmul(xt, to_matrix(w.text_q)), matmul(xt, to_matrix(w.text_k)),
                                      matmul(xt, to_matrix(w.text_v)),
                                      oracle::Matrix(2, std::vector<double>(2, 0.0)), 8);
    for (std::size_t r = 0; r < 2; ++r) {
      for (std::size_t col = 0; col < 8; ++col) expected[r][col] += xt[r][col];
    }
    CHECK(oracle::max_abs_diff(expected, out.text.tokens) <= 1e-12);
  }

  TEST_CASE("dual update changes both streams") {
    const Model model = init_model(small_config());
    std::mt19937_64 rng(10);
    const TokenBlock v = random_block(rng, Modality::Vision, 4, 8);
    const TokenBlock t = random_block(rng, Modality::Text, 2, 8);
    const DualTokens out = mma_forward(v, t, AttentionMask(6, 6), 0, model);
    CHECK(frobenius_distance(out.vision.tokens, v.tokens) > 0.0);
    CHECK(frobenius_distance(out.text.tokens, t.tokens) > 0.0);
    CHECK(out.vision.modality == Modality::Vision);
    CHECK(out.text.modality == Modality::Text);
  }

  TEST_CASE("wrong mask size is rejected") {
    const Model model = init_model(small_config());
    const TokenBlock v{Modality::Vision, Tensor2(4, 8), {}};
    const TokenBlock t{Modality::Text, Tensor2(2, 8), {}};
    CHECK(error_code_of([&] { mma_forward(v, t, AttentionMask(5, 6), 0, model); }) ==
          Errc::ShapeMismatch);
  }
}

TEST_SUITE("predict_velocity") {
  const Model model = init_model(small_config());

  TEST_CASE("zero tokens give zero velocity") {
    const Tensor2 v = predict_velocity(TokenBlock{Modality::Vision, Tensor2(4, 8), {}}, model);
    for (double x : v.values()) CHECK(x == 0.0);
  }

  TEST_CASE("linear and deterministic") {
    std::mt19937_64 rng(11);
    const TokenBlock a = random_block(rng, Modality::Vision, 4, 8);
    const TokenBlock b = random_block(rng, Modality::Vision, 4, 8);
    const TokenBlock sum{Modality::Vision, a.tokens + b.tokens, {}};
    CHECK(bit_equal(predict_velocity(a, model), predict_velocity(a, model)));
    CHECK(max_abs_diff(predict_velocity(sum, model), predict_velocity(a, model) + predict_velocity(b, model)) <=
          1e-12);
  }
}
