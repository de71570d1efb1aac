#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "tfti2i/image.hpp"
#include "tfti2i/numerics.hpp"
#include "tfti2i/tensor.hpp"

namespace tfti2i {

/// Toy MM-DiT dimensions. Defaults are the desk-scale setting; the full-scale
/// backbone this mirrors has 38 layers, 4096 vision and 333 text tokens.
struct ModelConfig {
  std::size_t layers = 8;
  std::size_t width = 64;
  std::size_t heads = 4;
  std::size_t vision_tokens = 64;
  std::size_t text_tokens = 16;
  /// RCM is active on layers strictly above this index (ceil(8 * 25 / 38) = 6).
  std::size_t rcm_gate_layer = 6;
  std::uint64_t seed = 0;

  /// Throws Errc::InvalidConfig.
  void validate() const;
  std::size_t head_width() const noexcept { return width / heads; }
  std::size_t grid_side() const noexcept;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerWeights {
  Tensor2 vision_q, vision_k, vision_v;
  Tensor2 text_q, text_k, text_v;
};

struct Model {
  ModelConfig config;
  std::vector<LayerWeights> layers;
  /// Velocity head applied to final vision tokens.
  Tensor2 output_projection;
};

/// Every weight matrix is N(0, 1/d), seeded from (config.seed, layer, role).
Model init_model(const ModelConfig& config);

/// Seed of a single weight matrix; `role` is one of "vision_q", ..., "text_v", "output".
std::uint64_t weight_seed(std::uint64_t model_seed, std::size_t layer, std::string_view role) noexcept;

enum class Modality { Vision, Text };

/// n x d latent tokens of one modality. `reference` is empty for the output
/// stream and holds the 0-based reference index otherwise.
struct TokenBlock {
  Modality modality = Modality::Vision;
  Tensor2 tokens;
  std::optional<std::size_t> reference;

  std::size_t rows() const noexcept { return tokens.rows(); }
};

/// Hash-seeded stand-in for a text encoder: one Gaussian row per
/// whitespace-separated word, truncated or padded to text_tokens.
TokenBlock encode_prompt(std::string_view text, const Model& model);
/// Embedding row for a single word (the pad row is word_embedding("")).
Tensor2 word_embedding(std::string_view word, const Model& model);

/// Patch means per channel normalized to [-1, 1]; (grid*grid) x channels,
/// patches in row-major grid order. Throws Errc::BadImageShape.
Tensor2 pool_image(const Image& image, std::size_t grid);
/// Seeded channels x d projection used by encode_image.
Tensor2 image_projection(const Model& model, std::size_t channels);
/// Stand-in for a VAE encoder: pool_image followed by image_projection.
TokenBlock encode_image(const Image& image, const Model& model);

/// Per-head projections; head h occupies columns [h*d/H, (h+1)*d/H).
struct HeadedProjection {
  std::vector<Tensor2> q, k, v;
};

std::vector<Tensor2> split_heads(const Tensor2& x, std::size_t heads);
HeadedProjection project_qkv(const TokenBlock& block, std::size_t layer, const Model& model);

/// Per-head masked attention followed by width-wise head concatenation.
/// Each span holds one matrix per head. If `head_outputs` is non-null the
/// unconcatenated per-head results are stored there.
Tensor2 multihead_attention(std::span<const Tensor2> q, std::span<const Tensor2> k,
                            std::span<const Tensor2> v, const AttentionMask& mask,
                            std::size_t head_width, std::vector<Tensor2>* head_outputs = nullptr);

struct DualTokens {
  TokenBlock vision;
  TokenBlock text;
};

/// One multimodal attention block with residual dual update:
/// [vision'; text'] = [vision; text] + A(vision, text, mask).
/// mask must be (n_I + n_P) square.
DualTokens mma_forward(const TokenBlock& vision, const TokenBlock& text, const AttentionMask& mask,
                       std::size_t layer, const Model& model);

/// Post-softmax joint attention weights of mma_forward, one matrix per head.
std::vector<Tensor2> mma_attention_weights(const TokenBlock& vision, const TokenBlock& text,
                                           const AttentionMask& mask, std::size_t layer,
                                           const Model& model);

/// Adds the attention update rows to the vision and text streams in place.
void apply_residual(TokenBlock& vision, TokenBlock& text, const Tensor2& update);

/// tokens · W_out.
Tensor2 predict_velocity(const TokenBlock& vision, const Model& model);

}  // namespace tfti2i
