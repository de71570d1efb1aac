#include "tfti2i/analysis.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "tfti2i/error.hpp"
#include "tfti2i/parallel.hpp"
#include "tfti2i/pipeline.hpp"

namespace tfti2i {

namespace {

constexpr std::array<const char*, 5> kObjects{"a cat", "a robot", "a dragon", "a teapot",
                                              "an astronaut"};
constexpr std::array<const char*, 5> kTextures{"marble", "wool", "stained glass", "tree bark",
                                               "copper"};
constexpr std::array<const char*, 5> kActions{"jumping", "sleeping", "dancing", "reading a book",
                                              "playing guitar"};
constexpr std::array<const char*, 5> kBackgrounds{"a pine forest", "a city street", "a desert",
                                                  "a stormy ocean", "an old library"};

}  // namespace

std::vector<std::string> template_prompts() {
  // 625 combinations in mixed radix; every 12th keeps 50 distinct prompts
  // that cycle through every word of every list.
  std::vector<std::string> prompts;
  prompts.reserve(50);
  for (std::size_t i = 0; i < 50; ++i) {
    const std::size_t k = i * 12;
    prompts.push_back(std::string(kObjects[k / 125]) + " with the texture of " +
                      kTextures[(k / 25) % 5] + " doing " + kActions[(k / 5) % 5] +
                      " in the background of " + kBackgrounds[k % 5] + ".");
  }
  return prompts;
}

std::pair<Image, Image> builtin_image_pair() {
  constexpr std::size_t kSide = 32;
  Image sunset = Image::filled(kSide, kSide, 3, 0);
  Image tiles = Image::filled(kSide, kSide, 3, 0);
  for (std::size_t y = 0; y < kSide; ++y) {
    for (std::size_t x = 0; x < kSide; ++x) {
      sunset.at(y, x, 0) = static_cast<std::uint8_t>(255 - y * 4);
      sunset.at(y, x, 1) = static_cast<std::uint8_t>(64 + x * 3);
      sunset.at(y, x, 2) = static_cast<std::uint8_t>(y * 6);
      const bool on = ((x / 8) + (y / 8)) % 2 == 0;
      tiles.at(y, x, 0) = on ? 20 : 230;
      tiles.at(y, x, 1) = on ? 200 : 40;
      tiles.at(y, x, 2) = static_cast<std::uint8_t>(x * 8);
    }
  }
  return {std::move(sunset), std::move(tiles)};
}

const ClusterScore* ClusterReport::find(std::size_t layer, std::size_t step) const {
  for (const ClusterScore& s : scores) {
    if (s.layer == layer && s.step == step) return &s;
  }
  return nullptr;
}

std::vector<std::size_t> default_probe_layers(const ModelConfig& config) {
  const std::size_t L = config.layers;
  std::vector<std::size_t> layers{1, (L + 1) / 2, L - 1};
  for (std::size_t& l : layers) l = std::min(l, L);
  layers.erase(std::unique(layers.begin(), layers.end()), layers.end());
  return layers;
}

std::vector<std::size_t> default_probe_steps(std::size_t total_steps) {
  const double t = static_cast<double>(total_steps);
  std::vector<std::size_t> steps{static_cast<std::size_t>(std::lround(0.8 * t)),
                                 static_cast<std::size_t>(std::lround(0.5 * t))};
  steps.erase(std::unique(steps.begin(), steps.end()), steps.end());
  return steps;
}

namespace {

std::vector<double> mean_pool(const Tensor2& tokens) {
  std::vector<double> out(tokens.cols(), 0.0);
  for (std::size_t r = 0; r < tokens.rows(); ++r) {
    for (std::size_t c = 0; c < tokens.cols(); ++c) out[c] += tokens(r, c);
  }
  for (double& v : out) v /= static_cast<double>(tokens.rows());
  return out;
}

std::vector<double> centroid(const std::vector<std::vector<double>>& group) {
  std::vector<double> c(group.front().size(), 0.0);
  for (const auto& x : group) {
    for (std::size_t i = 0; i < c.size(); ++i) c[i] += x[i];
  }
  for (double& v : c) v /= static_cast<double>(group.size());
  return c;
}

double spread(const std::vector<std::vector<double>>& group, const std::vector<double>& c) {
  double acc = 0.0;
  for (const auto& x : group) {
    for (std::size_t i = 0; i < c.size(); ++i) acc += (x[i] - c[i]) * (x[i] - c[i]);
  }
  return acc / static_cast<double>(group.size());
}

}  // namespace

ClusterReport cluster_separation(const Model& model, const std::vector<std::string>& prompts,
                                 const std::pair<Image, Image>& images,
                                 const std::vector<std::size_t>& layers,
                                 const std::vector<std::size_t>& steps, std::size_t total_steps,
                                 std::uint64_t seed) {
  if (prompts.size() < 2) throw Error(Errc::InvalidConfig, "clustering needs at least 2 prompts");
  if (layers.empty() || steps.empty()) {
    throw Error(Errc::InvalidConfig, "clustering needs probe layers and steps");
  }
  const std::size_t max_layer = *std::max_element(layers.begin(), layers.end());
  if (max_layer > model.config.layers) {
    throw Error(Errc::InvalidConfig, "probe layer " + std::to_string(max_layer) +
                                         " exceeds the layer count");
  }

  const std::array<TokenBlock, 2> clean{encode_image(images.first, model),
                                        encode_image(images.second, model)};
  const std::size_t n = model.config.vision_tokens + model.config.text_tokens;
  const AttentionMask open(n, n);

  // pooled[group][step][layer][prompt]
  using Pooled = std::vector<std::vector<std::vector<std::vector<double>>>>;
  std::array<Pooled, 2> pooled;
  for (auto& g : pooled) {
    g.assign(steps.size(), std::vector<std::vector<std::vector<double>>>(
                               layers.size(), std::vector<std::vector<double>>(prompts.size())));
  }

  for (std::size_t g = 0; g < 2; ++g) {
    for (std::size_t si = 0; si < steps.size(); ++si) {
      const TokenBlock noised =
          noise_to_t(clean[g], steps[si], total_steps, seed, kOutputNoiseStream);
      parallel_for(prompts.size(), [&](std::size_t p) {
        DualTokens tokens{noised, encode_prompt(prompts[p], model)};
        for (std::size_t l = 0; l <= max_layer; ++l) {
          for (std::size_t li = 0; li < layers.size(); ++li) {
            if (layers[li] == l) pooled[g][si][li][p] = mean_pool(tokens.text.tokens);
          }
          if (l < max_layer) tokens = mma_forward(tokens.vision, tokens.text, open, l, model);
        }
      });
    }
  }

  ClusterReport report;
  for (std::size_t si = 0; si < steps.size(); ++si) {
    for (std::size_t li = 0; li < layers.size(); ++li) {
      const auto& a = pooled[0][si][li];
      const auto& b = pooled[1][si][li];
      const std::vector<double> ca = centroid(a);
      const std::vector<double> cb = centroid(b);
      double between = 0.0;
      for (std::size_t i = 0; i < ca.size(); ++i) between += (ca[i] - cb[i]) * (ca[i] - cb[i]);
      const double within = 0.5 * (spread(a, ca) + spread(b, cb));

      ClusterScore s;
      s.layer = layers[li];
      s.step = steps[si];
      s.steps = total_steps;
      s.centroid_distance_sq = between;
      s.within_variance = within;
      if (between == 0.0) {
        s.separation = 0.0;
      } else if (within == 0.0) {
        s.separation = std::numeric_limits<double>::infinity();
      } else {
        s.separation = between / within;
      }
      report.scores.push_back(s);
    }
  }
  return report;
}

// ---------------------------------------------------------------------------

ReplacementReport token_replacement(const Model& model, const RunConfig& base,
                                    const std::string& prompt, std::uint64_t seed_a,
                                    std::uint64_t seed_b) {
  RunConfig cfg = base;
  cfg.references.clear();
  cfg.init_image.clear();
  cfg.init_step = 0;
  cfg.prompt = prompt;
  cfg.trace = TraceFlags{true, false, false};

  cfg.seed = seed_a;
  const PreparedRun run_a = prepare_run(model, cfg, {});
  cfg.seed = seed_b;
  const PreparedRun run_b = prepare_run(model, cfg, {});

  const RunResult a = execute(run_a);
  const RunResult b = execute(run_b);

  RunOptions own;
  own.prompt_override = &a.trace;
  const RunResult a_own = execute(run_a, own);

  RunOptions swapped;
  swapped.prompt_override = &b.trace;
  const RunResult a_swapped = execute(run_a, swapped);

  ReplacementReport report;
  report.identity_distance = frobenius_distance(a_own.final_latent.tokens, a.final_latent.tokens);
  report.replaced_to_b = frobenius_distance(a_swapped.final_latent.tokens, b.final_latent.tokens);
  report.replaced_to_a = frobenius_distance(a_swapped.final_latent.tokens, a.final_latent.tokens);
  report.a_to_b = frobenius_distance(a.final_latent.tokens, b.final_latent.tokens);
  return report;
}

// ---------------------------------------------------------------------------

double head_output_variance(const std::vector<Tensor2>& head_outputs, std::size_t vision_tokens) {
  if (head_outputs.empty()) throw Error(Errc::ShapeMismatch, "no head outputs");
  const std::size_t heads = head_outputs.size();
  const std::size_t width = head_outputs.front().cols();
  double total = 0.0;
  for (std::size_t i = 0; i < vision_tokens; ++i) {
    double token_var = 0.0;
    for (std::size_t c = 0; c < width; ++c) {
      double mean = 0.0;
      for (const Tensor2& h : head_outputs) mean += h(i, c);
      mean /= static_cast<double>(heads);
      double var = 0.0;
      for (const Tensor2& h : head_outputs) var += (h(i, c) - mean) * (h(i, c) - mean);
      token_var += var / static_cast<double>(heads);
    }
    total += token_var / static_cast<double>(width);
  }
  return total / static_cast<double>(vision_tokens);
}

VarianceReport reference_variance(const Model& model, const RunConfig& base,
                                  const std::vector<Image>& reference_images,
                                  const std::vector<std::size_t>& r_values, std::size_t step,
                                  std::size_t layer) {
  if (r_values.empty()) throw Error(Errc::InvalidConfig, "R_values must not be empty");
  if (reference_images.size() != base.references.size()) {
    throw Error(Errc::InvalidConfig, "reference image count does not match the config");
  }
  if (layer >= model.config.layers) throw Error(Errc::InvalidConfig, "probe layer out of range");
  if (step == 0 || step > base.steps) throw Error(Errc::InvalidConfig, "probe step out of range");

  auto measure = [&](std::size_t refs, bool wta) {
    if (refs > 0 && reference_images.empty()) {
      throw Error(Errc::InvalidConfig, "variance analysis needs at least one reference");
    }
    RunConfig cfg = base;
    cfg.init_image.clear();
    cfg.init_step = 0;
    cfg.cfg_scale = 0.0;
    cfg.trace = {};
    cfg.wta_enabled = wta;
    cfg.references.clear();
    std::vector<Image> images;
    for (std::size_t r = 0; r < refs; ++r) {
      cfg.references.push_back(base.references[r % base.references.size()]);
      images.push_back(reference_images[r % reference_images.size()]);
    }
    PreparedRun run = prepare_run(model, cfg, images);
    for (std::size_t r = 0; r < refs; ++r) {
      run.references[r].noise_stream = r % reference_images.size() + 1;
    }

    double variance = 0.0;
    RunOptions options;
    options.observer = [&](const LayerEvent& e) {
      if (e.pass == PassKind::Conditional && e.layer == layer) {
        variance = head_output_variance(e.output.output.head_outputs, model.config.vision_tokens);
      }
    };
    run_step(run, run.initial_latent, step, options);
    return variance;
  };

  VarianceReport report;
  report.step = step;
  report.layer = layer;
  report.wta_reduces_variance = true;
  for (std::size_t refs : r_values) {
    VarianceEntry e{refs, measure(refs, false), measure(refs, true)};
    if (e.wta_on > e.wta_off) report.wta_reduces_variance = false;
    report.entries.push_back(e);
  }
  return report;
}

std::vector<CostReport> cost_report(const std::vector<std::size_t>& r_values,
                                    std::size_t vision_tokens, std::size_t text_tokens) {
  std::vector<CostReport> out;
  out.reserve(r_values.size());
  for (std::size_t r : r_values) out.push_back(attention_cost(r, vision_tokens, text_tokens));
  return out;
}

}  // namespace tfti2i
