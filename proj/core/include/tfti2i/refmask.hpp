#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tfti2i/image.hpp"
#include "tfti2i/model.hpp"
#include "tfti2i/numerics.hpp"

namespace tfti2i {

/// Query axis: [output vision | output prompt].
/// Key axis:   [output vision | output prompt | ref-0 prompt | ... | ref-(R-1) prompt].
struct TokenLayout {
  std::size_t vision_tokens = 0;
  std::size_t text_tokens = 0;
  std::size_t references = 0;

  std::size_t query_count() const noexcept { return vision_tokens + text_tokens; }
  std::size_t key_count() const noexcept {
    return vision_tokens + text_tokens * (references + 1);
  }
  /// First key column of reference r (0-based).
  std::size_t reference_column(std::size_t r) const noexcept {
    return vision_tokens + text_tokens * (r + 1);
  }
};

// ---------------------------------------------------------------------------
// Reference contextual masking
// ---------------------------------------------------------------------------

/// Per vision token of a reference: softmax mass its query puts on the output
/// prompt's keys when attending over [K_ref_vision; K_output_prompt],
/// averaged across heads. Each span holds one matrix per head.
std::vector<double> rcm_saliency(std::span<const Tensor2> ref_vision_q,
                                 std::span<const Tensor2> ref_vision_k,
                                 std::span<const Tensor2> output_prompt_k,
                                 std::size_t head_width);

struct RcmResult {
  std::vector<double> saliency;
  std::vector<bool> salient;
  /// (n_I + n_P) square. Blocks (prompt row, non-salient vision column) cells.
  AttentionMask mask;
  /// Otsu found no split; the mask is all-pass.
  bool degenerate = false;
  /// NaN when degenerate or when the gate kept RCM off.
  double threshold = 0.0;
};

/// Otsu-binarizes the saliency and blocks reference-prompt queries from
/// non-salient vision keys. Degenerate saliency yields an all-pass mask.
RcmResult build_rcm_mask(std::span<const double> saliency, const TokenLayout& layout);

struct ReferenceForward {
  DualTokens tokens;
  /// Saliency is always computed. When the gate kept RCM off, every token is
  /// marked salient and the mask is all-pass.
  RcmResult rcm;
  bool rcm_active = false;
};

/// Dual-update forward of one reference. RCM is applied when layer > gate,
/// using the output prompt's keys at the same layer.
ReferenceForward reference_forward(const TokenBlock& ref_vision, const TokenBlock& ref_prompt,
                                   const TokenBlock& output_prompt, std::size_t layer,
                                   const Model& model, std::size_t gate);

// ---------------------------------------------------------------------------
// Winner takes all
// ---------------------------------------------------------------------------

/// scores(i, r): softmax mass vision query i puts on reference r's contextual
/// keys, normalized over the full key axis and averaged across heads.
struct SaliencyMatrix {
  Tensor2 scores;
};

/// Winner reference per vision token, 0-based.
struct WinnerAssignment {
  std::vector<std::size_t> winner;

  friend bool operator==(const WinnerAssignment&, const WinnerAssignment&) = default;
};

/// `keys` holds one full CTS key matrix per head (layout.key_count() rows).
SaliencyMatrix wta_saliency(std::span<const Tensor2> output_vision_q, std::span<const Tensor2> keys,
                            const TokenLayout& layout, std::size_t head_width);

/// Row-wise argmax; ties go to the lowest reference index.
WinnerAssignment wta_winners(const SaliencyMatrix& saliency);

/// Vision rows keep only their winner's contextual block. Output-prompt rows
/// are blocked from every reference block.
AttentionMask build_wta_mask(const WinnerAssignment& winners, const TokenLayout& layout);

/// Mask used when WTA is off: only output-prompt rows are blocked from the
/// reference blocks.
AttentionMask build_sharing_mask(const TokenLayout& layout);

// ---------------------------------------------------------------------------
// Contextual token sharing
// ---------------------------------------------------------------------------

/// Everything the CTS attention needs, before the softmax.
struct CtsAttention {
  TokenLayout layout;
  std::vector<Tensor2> q, k, v;  // per head
  AttentionMask mask;
  std::optional<SaliencyMatrix> saliency;
  std::optional<WinnerAssignment> winners;
};

/// Reference contextual blocks are projected with this layer's text weights
/// and contribute keys and values only.
CtsAttention prepare_cts(const TokenBlock& output_vision, const TokenBlock& output_prompt,
                         std::span<const TokenBlock> contexts, std::size_t layer,
                         const Model& model, bool wta);

/// Per-head post-softmax weights of a prepared CTS attention.
std::vector<Tensor2> cts_attention_weights(const CtsAttention& cts, std::size_t head_width);

struct CtsResult {
  DualTokens tokens;
  AttentionMask mask;
  std::optional<SaliencyMatrix> saliency;
  std::optional<WinnerAssignment> winners;
  std::vector<Tensor2> head_outputs;
};

CtsResult cts_forward(const TokenBlock& output_vision, const TokenBlock& output_prompt,
                      std::span<const TokenBlock> contexts, std::size_t layer, const Model& model,
                      bool wta);

// ---------------------------------------------------------------------------
// Cost model
// ---------------------------------------------------------------------------

/// Attention cost of R references relative to a single-image pass.
struct CostReport {
  std::size_t references = 0;
  double text_to_vision_ratio = 0.0;
  /// 2R - 1: concatenating every reference's vision tokens.
  double paper_share_factor = 0.0;
  /// (R - 1) + (n_P / n_I) R: concatenating contextual tokens only.
  double paper_cts_factor = 0.0;
  std::size_t exact_share_keys = 0;
  std::size_t exact_cts_keys = 0;

  double cts_to_share_ratio() const noexcept { return paper_cts_factor / paper_share_factor; }
};

CostReport attention_cost(std::size_t references, std::size_t vision_tokens,
                          std::size_t text_tokens);

// ---------------------------------------------------------------------------
// Mask dumps
// ---------------------------------------------------------------------------

/// 8-bit gray image of a mask: 0 = blocked, 255 = pass.
Image mask_image(const AttentionMask& mask);
/// mask_{kind}_{t}_{l}_{ref}.pgm
std::string mask_filename(std::string_view kind, std::size_t step, std::size_t layer,
                          std::size_t ref);

}  // namespace tfti2i
