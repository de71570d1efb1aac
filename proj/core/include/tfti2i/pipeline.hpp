#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tfti2i/config.hpp"
#include "tfti2i/model.hpp"
#include "tfti2i/refmask.hpp"

namespace tfti2i {

// ---------------------------------------------------------------------------
// Noising
// ---------------------------------------------------------------------------

/// Noise stream of the output latent; reference r uses r + 1 by default.
inline constexpr std::uint64_t kOutputNoiseStream = 0;

/// Rectified-flow interpolation x_t = (1 - s) x_0 + s eps with s = t / T and
/// eps drawn from (seed, stream, t).
TokenBlock noise_to_t(const TokenBlock& clean, std::size_t step, std::size_t steps,
                      std::uint64_t seed, std::uint64_t stream);

/// Brings clean reference latents to the sampler's noise level. Gaussian
/// noising is built in; inversion-based noise would plug in here.
class ReferenceNoiser {
 public:
  virtual ~ReferenceNoiser() = default;
  virtual TokenBlock noise(const TokenBlock& clean, std::size_t step, std::size_t steps,
                           std::uint64_t seed, std::uint64_t stream) const = 0;
};

class GaussianNoiser final : public ReferenceNoiser {
 public:
  TokenBlock noise(const TokenBlock& clean, std::size_t step, std::size_t steps,
                   std::uint64_t seed, std::uint64_t stream) const override {
    return noise_to_t(clean, step, steps, seed, stream);
  }
};

// ---------------------------------------------------------------------------
// Run state
// ---------------------------------------------------------------------------

struct ReferenceBundle {
  TokenBlock clean_latent;
  TokenBlock prompt_tokens;
  /// Regenerated from clean_latent at every step.
  TokenBlock noised_latent;
  std::uint64_t noise_stream = 1;
};

/// Token streams flowing through the layers of one pass.
struct PassState {
  TokenBlock vision;
  TokenBlock prompt;
  std::vector<TokenBlock> reference_vision;
  std::vector<TokenBlock> reference_prompt;
};

struct LayerSettings {
  bool rcm_enabled = true;
  bool wta_enabled = true;
  /// RCM fires on layers strictly above the gate; a gate >= L disables it.
  std::size_t gate = 0;
};

struct LayerOutput {
  PassState state;
  std::vector<ReferenceForward> references;
  CtsResult output;
};

/// One layer: reference passes (with RCM past the gate) on the layer-l
/// snapshot, then the CTS output pass using the same snapshot.
LayerOutput run_layer(const Model& model, const PassState& state, std::size_t layer,
                      const LayerSettings& settings);

// ---------------------------------------------------------------------------
// Tracing
// ---------------------------------------------------------------------------

/// Recorded at layer input (pre-update) for one (step, layer) pair.
struct LayerRecord {
  std::optional<Tensor2> output_prompt;
  std::vector<Tensor2> reference_prompts;
  std::vector<RcmResult> rcm;
  std::vector<bool> rcm_active;
  std::optional<SaliencyMatrix> wta_saliency;
  std::optional<WinnerAssignment> winners;
  std::optional<AttentionMask> output_mask;
  /// The output mask came from WTA (otherwise it is the plain sharing mask).
  bool wta_applied = false;
};

struct RunTrace {
  std::map<std::pair<std::size_t, std::size_t>, LayerRecord> layers;

  const LayerRecord* find(std::size_t step, std::size_t layer) const;
};

enum class PassKind { Conditional, Unconditional };

struct LayerEvent {
  std::size_t step;
  std::size_t layer;
  PassKind pass;
  const PassState& input;
  const LayerOutput& output;
};

using LayerObserver = std::function<void(const LayerEvent&)>;

struct RunOptions {
  /// When set, the conditional pass's output-prompt tokens entering each
  /// layer are replaced by the ones recorded in this trace.
  const RunTrace* prompt_override = nullptr;
  LayerObserver observer;
  const ReferenceNoiser* noiser = nullptr;
};

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

struct PreparedRun {
  Model model;
  RunConfig config;
  TokenBlock prompt_tokens;
  TokenBlock empty_prompt_tokens;
  std::vector<ReferenceBundle> references;
  TokenBlock initial_latent;
};

/// Encodes prompts and reference images and draws the initial latent.
/// `init_image` selects editing mode.
PreparedRun prepare_run(const RunConfig& config, const std::vector<Image>& reference_images,
                        const std::optional<Image>& init_image = std::nullopt);
PreparedRun prepare_run(const Model& model, const RunConfig& config,
                        const std::vector<Image>& reference_images,
                        const std::optional<Image>& init_image = std::nullopt);

/// g == 0 disables guidance and g == 1 reduces to the conditional velocity;
/// otherwise v_u + g (v_c - v_u).
Tensor2 combine_guidance(const Tensor2& unconditional, const Tensor2& conditional, double scale);

struct StepOutput {
  TokenBlock latent;
  Tensor2 velocity;
};

/// One sampler step at noise level `step`: re-noise references, reset their
/// prompts, run all layers, predict velocity (with guidance) and take an
/// Euler step x - v / T.
StepOutput run_step(const PreparedRun& run, const TokenBlock& latent, std::size_t step,
                    const RunOptions& options = {}, RunTrace* trace = nullptr);

struct RunResult {
  TokenBlock final_latent;
  RunTrace trace;
  std::map<std::string, double> metrics;
};

RunResult execute(const PreparedRun& run, const RunOptions& options = {});

/// Loads images named by the config and executes the full run.
RunResult run_pipeline(const RunConfig& config);

/// Plain dual-update sampler without references or masks, implemented
/// separately from the CTS path as a regression oracle.
RunResult run_t2i_baseline(const RunConfig& config);
RunResult run_t2i_baseline(const Model& model, const RunConfig& config,
                           const std::optional<Image>& init_image = std::nullopt);

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

/// Row-major CSV with 17 significant digits.
std::string tensor_csv(const Tensor2& t);
std::string metrics_json(const std::map<std::string, double>& metrics);

/// Writes trace tensors (CSV) and masks (PGM) into `dir`; returns the file
/// names written, sorted.
std::vector<std::string> write_trace(const RunTrace& trace, const std::filesystem::path& dir,
                                     const TraceFlags& flags);

}  // namespace tfti2i
