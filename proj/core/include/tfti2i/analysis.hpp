#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tfti2i/config.hpp"
#include "tfti2i/image.hpp"
#include "tfti2i/model.hpp"
#include "tfti2i/refmask.hpp"

namespace tfti2i {

// ---------------------------------------------------------------------------
// Contextual-token clustering
// ---------------------------------------------------------------------------

/// 50 prompts of the form
/// "<object> with the texture of <texture> doing <action> in the background of <background>."
/// drawn from fixed word lists.
std::vector<std::string> template_prompts();

/// Two fixed, visually distinct 32x32 RGB test images.
std::pair<Image, Image> builtin_image_pair();

struct ClusterScore {
  /// Number of attention layers applied; 0 is the encoder output.
  std::size_t layer = 0;
  std::size_t step = 0;
  std::size_t steps = 0;
  /// ||c1 - c2||^2 / mean within-group variance. 0 when the centroids
  /// coincide; +inf when the groups are separated but have zero spread.
  double separation = 0.0;
  double centroid_distance_sq = 0.0;
  double within_variance = 0.0;
};

struct ClusterReport {
  std::vector<ClusterScore> scores;

  const ClusterScore* find(std::size_t layer, std::size_t step) const;
};

/// Mean-pools the text tokens after `layer` attention blocks for every
/// (prompt, image) pair at each noise level, and scores how well the two
/// image groups separate. Layers range over [0, L].
ClusterReport cluster_separation(const Model& model, const std::vector<std::string>& prompts,
                                 const std::pair<Image, Image>& images,
                                 const std::vector<std::size_t>& layers,
                                 const std::vector<std::size_t>& steps, std::size_t total_steps,
                                 std::uint64_t seed);

/// Probe grid used when none is configured: layers {1, ceil(L/2), L-1},
/// steps {round(0.8 T), round(0.5 T)}.
std::vector<std::size_t> default_probe_layers(const ModelConfig& config);
std::vector<std::size_t> default_probe_steps(std::size_t total_steps);

// ---------------------------------------------------------------------------
// Contextual-token replacement
// ---------------------------------------------------------------------------

struct ReplacementReport {
  /// Run A re-run with its own recorded prompt tokens, distance to A. Always 0.
  double identity_distance = 0.0;
  /// Run A re-run with B's recorded prompt tokens, distance to B and to A.
  double replaced_to_b = 0.0;
  double replaced_to_a = 0.0;
  /// Reference distance between the unmodified runs A and B.
  double a_to_b = 0.0;
};

/// Runs the prompt with seeds A and B (no references), then re-runs A with
/// the output-prompt tokens entering every layer replaced by a recording.
ReplacementReport token_replacement(const Model& model, const RunConfig& base,
                                    const std::string& prompt, std::uint64_t seed_a,
                                    std::uint64_t seed_b);

// ---------------------------------------------------------------------------
// Multi-reference head variance
// ---------------------------------------------------------------------------

struct VarianceEntry {
  std::size_t references = 0;
  double wta_off = 0.0;
  double wta_on = 0.0;
};

struct VarianceReport {
  std::size_t step = 0;
  std::size_t layer = 0;
  std::vector<VarianceEntry> entries;
  /// Measured, never enforced: WTA-on variance <= WTA-off variance for every R.
  bool wta_reduces_variance = false;
};

/// Mean over vision tokens of the across-head variance of head outputs
/// (per component, then averaged over the head width).
double head_output_variance(const std::vector<Tensor2>& head_outputs, std::size_t vision_tokens);

/// For each R, runs one sampler step with R references (cycling through the
/// base reference images) with WTA off and on, and measures the output-pass
/// head variance at (step, layer). References that reuse the same source
/// image share its noise stream.
VarianceReport reference_variance(const Model& model, const RunConfig& base,
                                  const std::vector<Image>& reference_images,
                                  const std::vector<std::size_t>& r_values, std::size_t step,
                                  std::size_t layer);

// ---------------------------------------------------------------------------
// Cost
// ---------------------------------------------------------------------------

std::vector<CostReport> cost_report(const std::vector<std::size_t>& r_values,
                                    std::size_t vision_tokens, std::size_t text_tokens);

}  // namespace tfti2i
