#include "tfti2i/model.hpp"

#include <array>
#include <cmath>
#include <sstream>
#include <string>

#include "tfti2i/error.hpp"

namespace tfti2i {

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(Errc::InvalidConfig, what); };
  if (layers == 0) fail("layer count must be positive");
  if (width == 0 || heads == 0) fail("width and head count must be positive");
  if (width % heads != 0) fail("width " + std::to_string(width) + " not divisible by " +
                               std::to_string(heads) + " heads");
  if (vision_tokens == 0 || text_tokens == 0) fail("token counts must be positive");
  const std::size_t side = grid_side();
  if (side * side != vision_tokens) {
    fail("vision token count " + std::to_string(vision_tokens) + " is not a perfect square");
  }
  if (rcm_gate_layer >= layers) fail("rcm_gate_layer must be below the layer count");
}

std::size_t ModelConfig::grid_side() const noexcept {
  auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(vision_tokens))));
  while (side * side > vision_tokens) --side;
  while ((side + 1) * (side + 1) <= vision_tokens) ++side;
  return side;
}

std::uint64_t weight_seed(std::uint64_t model_seed, std::size_t layer,
                          std::string_view role) noexcept {
  return derive_seed(model_seed, role, {layer});
}

Model init_model(const ModelConfig& config) {
  config.validate();
  const std::size_t d = config.width;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  auto draw = [&](std::size_t layer, std::string_view role) {
    return scale * seeded_gaussian(weight_seed(config.seed, layer, role), d, d);
  };

  Model model;
  model.config = config;
  model.layers.reserve(config.layers);
  for (std::size_t l = 0; l < config.layers; ++l) {
    model.layers.push_back(LayerWeights{
        draw(l, "vision_q"), draw(l, "vision_k"), draw(l, "vision_v"),
        draw(l, "text_q"), draw(l, "text_k"), draw(l, "text_v"),
    });
  }
  model.output_projection = draw(config.layers, "output");
  return model;
}

// ---------------------------------------------------------------------------

Tensor2 word_embedding(std::string_view word, const Model& model) {
  return seeded_gaussian(derive_seed(model.config.seed, "word", {fnv1a64(word)}), 1,
                         model.config.width);
}

TokenBlock encode_prompt(std::string_view text, const Model& model) {
  const std::size_t n = model.config.text_tokens;
  const Tensor2 pad = word_embedding("", model);

  std::vector<Tensor2> rows;
  rows.reserve(n);
  std::istringstream words{std::string(text)};
  std::string word;
  while (rows.size() < n && words >> word) rows.push_back(word_embedding(word, model));
  while (rows.size() < n) rows.push_back(pad);

  return TokenBlock{Modality::Text, vstack(rows), std::nullopt};
}

Tensor2 pool_image(const Image& image, std::size_t grid) {
  if (grid == 0 || image.width == 0 || image.height == 0 || image.width % grid != 0 ||
      image.height % grid != 0) {
    throw Error(Errc::BadImageShape, std::to_string(image.width) + "x" +
                                         std::to_string(image.height) +
                                         " image is not divisible into a " + std::to_string(grid) +
                                         "x" + std::to_string(grid) + " patch grid");
  }
  if (image.channels == 0 || image.pixels.size() != image.width * image.height * image.channels) {
    throw Error(Errc::BadImageShape, "pixel buffer does not match image dimensions");
  }
  const std::size_t ph = image.height / grid;
  const std::size_t pw = image.width / grid;
  const double patch_area = static_cast<double>(ph * pw);

  Tensor2 pooled(grid * grid, image.channels);
  for (std::size_t gy = 0; gy < grid; ++gy) {
    for (std::size_t gx = 0; gx < grid; ++gx) {
      for (std::size_t c = 0; c < image.channels; ++c) {
        std::uint64_t sum = 0;
        for (std::size_t y = gy * ph; y < (gy + 1) * ph; ++y) {
          for (std::size_t x = gx * pw; x < (gx + 1) * pw; ++x) sum += image.at(y, x, c);
        }
        const double mean = static_cast<double>(sum) / patch_area;
        pooled(gy * grid + gx, c) = mean / 127.5 - 1.0;
      }
    }
  }
  return pooled;
}

Tensor2 image_projection(const Model& model, std::size_t channels) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(channels));
  return scale * seeded_gaussian(derive_seed(model.config.seed, "image_projection", {channels}),
                                 channels, model.config.width);
}

TokenBlock encode_image(const Image& image, const Model& model) {
  const Tensor2 pooled = pool_image(image, model.config.grid_side());
  return TokenBlock{Modality::Vision, matmul(pooled, image_projection(model, image.channels)),
                    std::nullopt};
}

// ---------------------------------------------------------------------------

std::vector<Tensor2> split_heads(const Tensor2& x, std::size_t heads) {
  if (heads == 0 || x.cols() % heads != 0) {
    throw Error(Errc::ShapeMismatch, "width " + std::to_string(x.cols()) +
                                         " cannot be split into " + std::to_string(heads) +
                                         " heads");
  }
  const std::size_t hw = x.cols() / heads;
  std::vector<Tensor2> out;
  out.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) out.push_back(slice_cols(x, h * hw, hw));
  return out;
}

HeadedProjection project_qkv(const TokenBlock& block, std::size_t layer, const Model& model) {
  if (layer >= model.layers.size()) {
    throw Error(Errc::ShapeMismatch, "layer " + std::to_string(layer) + " out of range");
  }
  if (block.tokens.cols() != model.config.width) {
    throw Error(Errc::ShapeMismatch, "token width " + std::to_string(block.tokens.cols()) +
                                         " != model width " + std::to_string(model.config.width));
  }
  const LayerWeights& w = model.layers[layer];
  const bool vision = block.modality == Modality::Vision;
  const std::size_t heads = model.config.heads;
  return HeadedProjection{
      split_heads(matmul(block.tokens, vision ? w.vision_q : w.text_q), heads),
      split_heads(matmul(block.tokens, vision ? w.vision_k : w.text_k), heads),
      split_heads(matmul(block.tokens, vision ? w.vision_v : w.text_v), heads),
  };
}

Tensor2 multihead_attention(std::span<const Tensor2> q, std::span<const Tensor2> k,
                            std::span<const Tensor2> v, const AttentionMask& mask,
                            std::size_t head_width, std::vector<Tensor2>* head_outputs) {
  if (q.size() != k.size() || q.size() != v.size() || q.empty()) {
    throw Error(Errc::ShapeMismatch, "inconsistent head counts");
  }
  std::vector<Tensor2> outputs;
  outputs.reserve(q.size());
  for (std::size_t h = 0; h < q.size(); ++h) {
    outputs.push_back(masked_attention(q[h], k[h], v[h], mask, head_width));
  }
  Tensor2 joined = hstack(outputs);
  if (head_outputs != nullptr) *head_outputs = std::move(outputs);
  return joined;
}

namespace {

struct JointHeads {
  std::vector<Tensor2> q, k, v;
};

JointHeads joint_heads(const TokenBlock& vision, const TokenBlock& text, std::size_t layer,
                       const Model& model) {
  const HeadedProjection pv = project_qkv(vision, layer, model);
  const HeadedProjection pt = project_qkv(text, layer, model);
  JointHeads out;
  for (std::size_t h = 0; h < model.config.heads; ++h) {
    out.q.push_back(vstack(std::array{pv.q[h], pt.q[h]}));
    out.k.push_back(vstack(std::array{pv.k[h], pt.k[h]}));
    out.v.push_back(vstack(std::array{pv.v[h], pt.v[h]}));
  }
  return out;
}

void require_joint_mask(const TokenBlock& vision, const TokenBlock& text,
                        const AttentionMask& mask) {
  const std::size_t n = vision.rows() + text.rows();
  if (mask.rows() != n || mask.cols() != n) {
    throw Error(Errc::ShapeMismatch, "joint mask must be " + std::to_string(n) + "x" +
                                         std::to_string(n));
  }
}

}  // namespace

void apply_residual(TokenBlock& vision, TokenBlock& text, const Tensor2& update) {
  const std::size_t n_vision = vision.rows();
  if (update.rows() != n_vision + text.rows()) {
    throw Error(Errc::ShapeMismatch, "residual update row count mismatch");
  }
  vision.tokens = vision.tokens + slice_rows(update, 0, n_vision);
  text.tokens = text.tokens + slice_rows(update, n_vision, text.rows());
}

DualTokens mma_forward(const TokenBlock& vision, const TokenBlock& text, const AttentionMask& mask,
                       std::size_t layer, const Model& model) {
  require_joint_mask(vision, text, mask);
  const JointHeads heads = joint_heads(vision, text, layer, model);
  const Tensor2 update =
      multihead_attention(heads.q, heads.k, heads.v, mask, model.config.head_width());
  DualTokens out{vision, text};
  apply_residual(out.vision, out.text, update);
  return out;
}

std::vector<Tensor2> mma_attention_weights(const TokenBlock& vision, const TokenBlock& text,
                                           const AttentionMask& mask, std::size_t layer,
                                           const Model& model) {
  require_joint_mask(vision, text, mask);
  const JointHeads heads = joint_heads(vision, text, layer, model);
  std::vector<Tensor2> weights;
  for (std::size_t h = 0; h < heads.q.size(); ++h) {
    weights.push_back(attention_weights(heads.q[h], heads.k[h], mask, model.config.head_width()));
  }
  return weights;
}

Tensor2 predict_velocity(const TokenBlock& vision, const Model& model) {
  return matmul(vision.tokens, model.output_projection);
}

}  // namespace tfti2i
