#include "tfti2i/refmask.hpp"

#include <array>
#include <cmath>
#include <limits>

#include "tfti2i/error.hpp"

namespace tfti2i {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void require_heads(std::size_t a, std::size_t b, std::size_t c) {
  if (a == 0 || a != b || a != c) throw Error(Errc::ShapeMismatch, "inconsistent head counts");
}

}  // namespace

std::vector<double> rcm_saliency(std::span<const Tensor2> ref_vision_q,
                                 std::span<const Tensor2> ref_vision_k,
                                 std::span<const Tensor2> output_prompt_k,
                                 std::size_t head_width) {
  require_heads(ref_vision_q.size(), ref_vision_k.size(), output_prompt_k.size());
  const std::size_t n_vision = ref_vision_q.front().rows();
  std::vector<double> saliency(n_vision, 0.0);

  for (std::size_t h = 0; h < ref_vision_q.size(); ++h) {
    if (ref_vision_k[h].rows() != n_vision) {
      throw Error(Errc::ShapeMismatch, "reference vision keys and queries differ in count");
    }
    const Tensor2 keys = vstack(std::array{ref_vision_k[h], output_prompt_k[h]});
    const AttentionMask open(n_vision, keys.rows());
    const Tensor2 weights = attention_weights(ref_vision_q[h], keys, open, head_width);
    for (std::size_t i = 0; i < n_vision; ++i) {
      double mass = 0.0;
      for (std::size_t j = n_vision; j < keys.rows(); ++j) mass += weights(i, j);
      saliency[i] += mass;
    }
  }
  const double heads = static_cast<double>(ref_vision_q.size());
  for (double& s : saliency) s /= heads;
  return saliency;
}

RcmResult build_rcm_mask(std::span<const double> saliency, const TokenLayout& layout) {
  if (saliency.size() != layout.vision_tokens) {
    throw Error(Errc::ShapeMismatch, "saliency length must equal the vision token count");
  }
  RcmResult out;
  out.saliency.assign(saliency.begin(), saliency.end());
  out.mask = AttentionMask(layout.query_count(), layout.query_count());
  try {
    out.threshold = otsu_threshold(saliency);
  } catch (const Error& e) {
    if (e.code() != Errc::DegenerateHistogram) throw;
    out.degenerate = true;
    out.threshold = kNaN;
    out.salient.assign(saliency.size(), true);
    return out;
  }
  out.salient = binarize(saliency, out.threshold);
  for (std::size_t row = layout.vision_tokens; row < layout.query_count(); ++row) {
    for (std::size_t col = 0; col < layout.vision_tokens; ++col) {
      if (!out.salient[col]) out.mask.block(row, col);
    }
  }
  return out;
}

ReferenceForward reference_forward(const TokenBlock& ref_vision, const TokenBlock& ref_prompt,
                                   const TokenBlock& output_prompt, std::size_t layer,
                                   const Model& model, std::size_t gate) {
  const TokenLayout layout{ref_vision.rows(), ref_prompt.rows(), 0};
  const HeadedProjection vision = project_qkv(ref_vision, layer, model);
  const HeadedProjection prompt = project_qkv(output_prompt, layer, model);
  const std::vector<double> saliency =
      rcm_saliency(vision.q, vision.k, prompt.k, model.config.head_width());

  ReferenceForward out;
  out.rcm_active = layer > gate;
  if (out.rcm_active) {
    out.rcm = build_rcm_mask(saliency, layout);
  } else {
    out.rcm.saliency = saliency;
    out.rcm.salient.assign(saliency.size(), true);
    out.rcm.mask = AttentionMask(layout.query_count(), layout.query_count());
    out.rcm.threshold = kNaN;
  }
  out.tokens = mma_forward(ref_vision, ref_prompt, out.rcm.mask, layer, model);
  return out;
}

// ---------------------------------------------------------------------------

SaliencyMatrix wta_saliency(std::span<const Tensor2> output_vision_q,
                            std::span<const Tensor2> keys, const TokenLayout& layout,
                            std::size_t head_width) {
  if (layout.references == 0) throw Error(Errc::ShapeMismatch, "WTA needs at least one reference");
  if (output_vision_q.empty() || output_vision_q.size() != keys.size()) {
    throw Error(Errc::ShapeMismatch, "inconsistent head counts");
  }
  SaliencyMatrix out{Tensor2(layout.vision_tokens, layout.references)};
  for (std::size_t h = 0; h < output_vision_q.size(); ++h) {
    if (output_vision_q[h].rows() != layout.vision_tokens || keys[h].rows() != layout.key_count()) {
      throw Error(Errc::ShapeMismatch, "query/key counts do not match the token layout");
    }
    const AttentionMask open(layout.vision_tokens, layout.key_count());
    const Tensor2 weights = attention_weights(output_vision_q[h], keys[h], open, head_width);
    for (std::size_t i = 0; i < layout.vision_tokens; ++i) {
      for (std::size_t r = 0; r < layout.references; ++r) {
        const std::size_t begin = layout.reference_column(r);
        double mass = 0.0;
        for (std::size_t j = begin; j < begin + layout.text_tokens; ++j) mass += weights(i, j);
        out.scores(i, r) += mass;
      }
    }
  }
  const double heads = static_cast<double>(output_vision_q.size());
  for (double& s : out.scores.values()) s /= heads;
  return out;
}

WinnerAssignment wta_winners(const SaliencyMatrix& saliency) {
  const Tensor2& s = saliency.scores;
  if (s.cols() == 0) throw Error(Errc::ShapeMismatch, "WTA needs at least one reference");
  WinnerAssignment out;
  out.winner.resize(s.rows(), 0);
  for (std::size_t i = 0; i < s.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t r = 1; r < s.cols(); ++r) {
      if (s(i, r) > s(i, best)) best = r;
    }
    out.winner[i] = best;
  }
  return out;
}

AttentionMask build_sharing_mask(const TokenLayout& layout) {
  AttentionMask mask(layout.query_count(), layout.key_count());
  for (std::size_t row = layout.vision_tokens; row < layout.query_count(); ++row) {
    mask.block_range(row, layout.reference_column(0), layout.key_count());
  }
  return mask;
}

AttentionMask build_wta_mask(const WinnerAssignment& winners, const TokenLayout& layout) {
  if (winners.winner.size() != layout.vision_tokens) {
    throw Error(Errc::ShapeMismatch, "winner count must equal the vision token count");
  }
  AttentionMask mask = build_sharing_mask(layout);
  for (std::size_t i = 0; i < layout.vision_tokens; ++i) {
    if (winners.winner[i] >= layout.references) {
      throw Error(Errc::ShapeMismatch, "winner index out of range");
    }
    for (std::size_t r = 0; r < layout.references; ++r) {
      if (r == winners.winner[i]) continue;
      const std::size_t begin = layout.reference_column(r);
      mask.block_range(i, begin, begin + layout.text_tokens);
    }
  }
  return mask;
}

// ---------------------------------------------------------------------------

CtsAttention prepare_cts(const TokenBlock& output_vision, const TokenBlock& output_prompt,
                         std::span<const TokenBlock> contexts, std::size_t layer,
                         const Model& model, bool wta) {
  CtsAttention cts;
  cts.layout = TokenLayout{output_vision.rows(), output_prompt.rows(), contexts.size()};

  const HeadedProjection pv = project_qkv(output_vision, layer, model);
  const HeadedProjection pp = project_qkv(output_prompt, layer, model);
  std::vector<HeadedProjection> pc;
  pc.reserve(contexts.size());
  for (const TokenBlock& ctx : contexts) {
    if (ctx.rows() != output_prompt.rows()) {
      throw Error(Errc::ShapeMismatch, "contextual block row count differs from the prompt");
    }
    TokenBlock as_text = ctx;
    as_text.modality = Modality::Text;
    pc.push_back(project_qkv(as_text, layer, model));
  }

  for (std::size_t h = 0; h < model.config.heads; ++h) {
    std::vector<Tensor2> keys{pv.k[h], pp.k[h]};
    std::vector<Tensor2> values{pv.v[h], pp.v[h]};
    for (const HeadedProjection& p : pc) {
      keys.push_back(p.k[h]);
      values.push_back(p.v[h]);
    }
    cts.q.push_back(vstack(std::array{pv.q[h], pp.q[h]}));
    cts.k.push_back(vstack(keys));
    cts.v.push_back(vstack(values));
  }

  if (wta && !contexts.empty()) {
    cts.saliency = wta_saliency(pv.q, cts.k, cts.layout, model.config.head_width());
    cts.winners = wta_winners(*cts.saliency);
    cts.mask = build_wta_mask(*cts.winners, cts.layout);
  } else {
    cts.mask = build_sharing_mask(cts.layout);
  }
  return cts;
}

std::vector<Tensor2> cts_attention_weights(const CtsAttention& cts, std::size_t head_width) {
  std::vector<Tensor2> weights;
  weights.reserve(cts.q.size());
  for (std::size_t h = 0; h < cts.q.size(); ++h) {
    weights.push_back(attention_weights(cts.q[h], cts.k[h], cts.mask, head_width));
  }
  return weights;
}

CtsResult cts_forward(const TokenBlock& output_vision, const TokenBlock& output_prompt,
                      std::span<const TokenBlock> contexts, std::size_t layer, const Model& model,
                      bool wta) {
  CtsAttention cts = prepare_cts(output_vision, output_prompt, contexts, layer, model, wta);
  CtsResult out{DualTokens{output_vision, output_prompt}, std::move(cts.mask),
                std::move(cts.saliency), std::move(cts.winners), {}};
  const Tensor2 update = multihead_attention(cts.q, cts.k, cts.v, out.mask,
                                             model.config.head_width(), &out.head_outputs);
  apply_residual(out.tokens.vision, out.tokens.text, update);
  return out;
}

// ---------------------------------------------------------------------------

CostReport attention_cost(std::size_t references, std::size_t vision_tokens,
                          std::size_t text_tokens) {
  if (vision_tokens == 0 || text_tokens == 0) {
    throw Error(Errc::InvalidConfig, "token counts must be positive");
  }
  const double r = static_cast<double>(references);
  CostReport out;
  out.references = references;
  out.text_to_vision_ratio = static_cast<double>(text_tokens) / static_cast<double>(vision_tokens);
  out.paper_share_factor = 2.0 * r - 1.0;
  out.paper_cts_factor = (r - 1.0) + out.text_to_vision_ratio * r;
  out.exact_share_keys = (references + 1) * vision_tokens + text_tokens;
  out.exact_cts_keys = vision_tokens + (references + 1) * text_tokens;
  return out;
}

// ---------------------------------------------------------------------------

Image mask_image(const AttentionMask& mask) {
  Image img = Image::filled(mask.cols(), mask.rows(), 1, 255);
  for (std::size_t r = 0; r < mask.rows(); ++r) {
    for (std::size_t c = 0; c < mask.cols(); ++c) {
      if (mask.blocked(r, c)) img.at(r, c, 0) = 0;
    }
  }
  return img;
}

std::string mask_filename(std::string_view kind, std::size_t step, std::size_t layer,
                          std::size_t ref) {
  return "mask_" + std::string(kind) + "_" + std::to_string(step) + "_" + std::to_string(layer) +
         "_" + std::to_string(ref) + ".pgm";
}

}  // namespace tfti2i
