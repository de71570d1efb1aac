#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "tfti2i/model.hpp"

namespace tfti2i {

struct TraceFlags {
  bool tokens = false;
  bool masks = false;
  bool saliency = false;

  bool any() const noexcept { return tokens || masks || saliency; }
  friend bool operator==(const TraceFlags&, const TraceFlags&) = default;
};

struct ReferenceSpec {
  std::string image;
  /// May be empty.
  std::string prompt;

  friend bool operator==(const ReferenceSpec&, const ReferenceSpec&) = default;
};

/// Parameters of the diagnostic commands (cluster, replace, variance, cost).
/// Empty lists mean "use the built-in default".
struct AnalysisSettings {
  std::vector<std::string> images;
  std::vector<std::size_t> layers;
  std::vector<std::size_t> timesteps;
  std::size_t noise_steps = 10;
  std::uint64_t seed_a = 1;
  std::uint64_t seed_b = 2;
  std::string replace_prompt = "a princess in the dress";
  std::vector<std::size_t> r_values{1, 2, 4};
  std::size_t cost_vision_tokens = 4096;
  std::size_t cost_text_tokens = 333;
  /// 0 selects max(1, steps / 2).
  std::size_t variance_step = 0;
  /// Defaults to the last layer when unset.
  std::size_t variance_layer = SIZE_MAX;

  friend bool operator==(const AnalysisSettings&, const AnalysisSettings&) = default;
};

/// Desk-scale defaults: 4 steps, no guidance. The full-scale setting is 28
/// steps with guidance 5 and seed 0.
struct RunConfig {
  ModelConfig model;
  std::size_t steps = 4;
  double cfg_scale = 0.0;
  std::string prompt;
  std::vector<ReferenceSpec> references;
  bool rcm_enabled = true;
  bool wta_enabled = true;
  TraceFlags trace;
  std::uint64_t seed = 0;
  /// Editing mode when non-empty: the output starts from this image noised
  /// to `init_step` instead of from pure noise.
  std::string init_image;
  /// 0 selects `steps`.
  std::size_t init_step = 0;
  AnalysisSettings analysis;

  /// Throws Errc::InvalidConfig.
  void validate() const;
  std::size_t start_step() const noexcept { return init_step == 0 ? steps : init_step; }

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Strict JSON parsing: unknown keys and wrong types are InvalidConfig.
/// Relative image paths are resolved against `base_dir`.
RunConfig parse_run_config(std::string_view json, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace tfti2i
