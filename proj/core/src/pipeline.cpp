#include "tfti2i/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "json.hpp"

#include "tfti2i/error.hpp"
#include "tfti2i/parallel.hpp"

namespace tfti2i {

TokenBlock noise_to_t(const TokenBlock& clean, std::size_t step, std::size_t steps,
                      std::uint64_t seed, std::uint64_t stream) {
  if (steps == 0 || step > steps) {
    throw Error(Errc::InvalidConfig, "noise step " + std::to_string(step) + " outside [0, " +
                                         std::to_string(steps) + "]");
  }
  const double sigma = static_cast<double>(step) / static_cast<double>(steps);
  const Tensor2 eps = seeded_gaussian(derive_seed(seed, "noise", {stream, step}),
                                      clean.tokens.rows(), clean.tokens.cols());
  TokenBlock out = clean;
  out.tokens = (1.0 - sigma) * clean.tokens + sigma * eps;
  return out;
}

// ---------------------------------------------------------------------------

LayerOutput run_layer(const Model& model, const PassState& state, std::size_t layer,
                      const LayerSettings& settings) {
  const std::size_t n_refs = state.reference_vision.size();
  if (state.reference_prompt.size() != n_refs) {
    throw Error(Errc::ShapeMismatch, "reference vision and prompt counts differ");
  }
  const std::size_t gate = settings.rcm_enabled ? settings.gate : model.config.layers;

  LayerOutput out;
  out.references.resize(n_refs);
  parallel_for(n_refs, [&](std::size_t r) {
    out.references[r] = reference_forward(state.reference_vision[r], state.reference_prompt[r],
                                          state.prompt, layer, model, gate);
  });
  out.output = cts_forward(state.vision, state.prompt, state.reference_prompt, layer, model,
                           settings.wta_enabled);

  out.state.vision = out.output.tokens.vision;
  out.state.prompt = out.output.tokens.text;
  out.state.reference_vision.reserve(n_refs);
  out.state.reference_prompt.reserve(n_refs);
  for (const ReferenceForward& ref : out.references) {
    out.state.reference_vision.push_back(ref.tokens.vision);
    out.state.reference_prompt.push_back(ref.tokens.text);
  }
  return out;
}

const LayerRecord* RunTrace::find(std::size_t step, std::size_t layer) const {
  const auto it = layers.find({step, layer});
  return it == layers.end() ? nullptr : &it->second;
}

// ---------------------------------------------------------------------------

namespace {

TokenBlock initial_latent(const Model& model, const RunConfig& config,
                          const std::optional<Image>& init_image) {
  if (init_image) {
    return noise_to_t(encode_image(*init_image, model), config.start_step(), config.steps,
                      config.seed, kOutputNoiseStream);
  }
  return TokenBlock{Modality::Vision,
                    seeded_gaussian(derive_seed(config.seed, "initial_latent"),
                                    model.config.vision_tokens, model.config.width),
                    std::nullopt};
}

TokenBlock euler_update(const TokenBlock& latent, const Tensor2& velocity, std::size_t steps) {
  TokenBlock out = latent;
  out.tokens = latent.tokens - (1.0 / static_cast<double>(steps)) * velocity;
  return out;
}

bool guidance_needs_unconditional(double scale) { return scale != 0.0 && scale != 1.0; }

LayerRecord make_record(const TraceFlags& flags, const PassState& input, const LayerOutput& out) {
  LayerRecord rec;
  if (flags.tokens) {
    rec.output_prompt = input.prompt.tokens;
    for (const TokenBlock& p : input.reference_prompt) rec.reference_prompts.push_back(p.tokens);
  }
  if (flags.masks || flags.saliency) {
    for (const ReferenceForward& ref : out.references) {
      rec.rcm.push_back(ref.rcm);
      rec.rcm_active.push_back(ref.rcm_active);
    }
  }
  if (flags.saliency) {
    rec.wta_saliency = out.output.saliency;
    rec.winners = out.output.winners;
  }
  if (flags.masks) rec.output_mask = out.output.mask;
  rec.wta_applied = out.output.winners.has_value();
  return rec;
}

}  // namespace

PreparedRun prepare_run(const RunConfig& config, const std::vector<Image>& reference_images,
                        const std::optional<Image>& init_image) {
  config.validate();
  return prepare_run(init_model(config.model), config, reference_images, init_image);
}

PreparedRun prepare_run(const Model& model, const RunConfig& config,
                        const std::vector<Image>& reference_images,
                        const std::optional<Image>& init_image) {
  if (reference_images.size() != config.references.size()) {
    throw Error(Errc::InvalidConfig, "expected " + std::to_string(config.references.size()) +
                                         " reference images, got " +
                                         std::to_string(reference_images.size()));
  }
  PreparedRun run;
  run.model = model;
  run.config = config;
  run.config.model = model.config;
  run.prompt_tokens = encode_prompt(config.prompt, model);
  run.empty_prompt_tokens = encode_prompt("", model);
  for (std::size_t r = 0; r < reference_images.size(); ++r) {
    ReferenceBundle bundle;
    bundle.clean_latent = encode_image(reference_images[r], model);
    bundle.clean_latent.reference = r;
    bundle.prompt_tokens = encode_prompt(config.references[r].prompt, model);
    bundle.prompt_tokens.reference = r;
    bundle.noised_latent = bundle.clean_latent;
    bundle.noise_stream = r + 1;
    run.references.push_back(std::move(bundle));
  }
  run.initial_latent = initial_latent(model, run.config, init_image);
  return run;
}

Tensor2 combine_guidance(const Tensor2& unconditional, const Tensor2& conditional, double scale) {
  if (!guidance_needs_unconditional(scale)) return conditional;
  return unconditional + scale * (conditional - unconditional);
}

StepOutput run_step(const PreparedRun& run, const TokenBlock& latent, std::size_t step,
                    const RunOptions& options, RunTrace* trace) {
  const RunConfig& cfg = run.config;
  const Model& model = run.model;
  if (step == 0 || step > cfg.steps) {
    throw Error(Errc::InvalidConfig, "step " + std::to_string(step) + " outside [1, " +
                                         std::to_string(cfg.steps) + "]");
  }
  const GaussianNoiser gaussian;
  const ReferenceNoiser& noiser = options.noiser != nullptr ? *options.noiser : gaussian;
  const LayerSettings settings{cfg.rcm_enabled, cfg.wta_enabled, model.config.rcm_gate_layer};

  PassState state;
  state.vision = latent;
  state.prompt = run.prompt_tokens;
  for (const ReferenceBundle& ref : run.references) {
    TokenBlock noised = noiser.noise(ref.clean_latent, step, cfg.steps, cfg.seed, ref.noise_stream);
    noised.reference = ref.clean_latent.reference;
    state.reference_vision.push_back(std::move(noised));
    state.reference_prompt.push_back(ref.prompt_tokens);
  }

  for (std::size_t l = 0; l < model.config.layers; ++l) {
    if (options.prompt_override != nullptr) {
      const LayerRecord* rec = options.prompt_override->find(step, l);
      if (rec == nullptr || !rec->output_prompt) {
        throw Error(Errc::InvalidConfig, "override trace lacks prompt tokens for step " +
                                             std::to_string(step) + " layer " + std::to_string(l));
      }
      state.prompt.tokens = *rec->output_prompt;
    }
    LayerOutput out = run_layer(model, state, l, settings);
    if (options.observer) options.observer(LayerEvent{step, l, PassKind::Conditional, state, out});
    if (trace != nullptr && cfg.trace.any()) {
      trace->layers[{step, l}] = make_record(cfg.trace, state, out);
    }
    state = std::move(out.state);
  }
  const Tensor2 conditional = predict_velocity(state.vision, model);

  Tensor2 unconditional;
  if (guidance_needs_unconditional(cfg.cfg_scale)) {
    PassState uncond;
    uncond.vision = latent;
    uncond.prompt = run.empty_prompt_tokens;
    for (std::size_t l = 0; l < model.config.layers; ++l) {
      LayerOutput out = run_layer(model, uncond, l, settings);
      if (options.observer) {
        options.observer(LayerEvent{step, l, PassKind::Unconditional, uncond, out});
      }
      uncond = std::move(out.state);
    }
    unconditional = predict_velocity(uncond.vision, model);
  }

  StepOutput result;
  result.velocity = combine_guidance(unconditional, conditional, cfg.cfg_scale);
  result.latent = euler_update(latent, result.velocity, cfg.steps);
  return result;
}

// ---------------------------------------------------------------------------

namespace {

void add_latent_metrics(const TokenBlock& latent, std::map<std::string, double>& metrics) {
  const auto values = latent.tokens.values();
  const double n = static_cast<double>(values.size());
  double sum = 0.0;
  double max_abs = 0.0;
  for (double v : values) {
    sum += v;
    max_abs = std::max(max_abs, std::abs(v));
  }
  const double mean = sum / n;
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  metrics["latent_mean"] = mean;
  metrics["latent_std"] = std::sqrt(sq / n);
  metrics["latent_l2_norm"] = frobenius_norm(latent.tokens);
  metrics["latent_max_abs"] = max_abs;
}

struct MechanismStats {
  std::size_t rcm_active = 0;
  std::size_t rcm_degenerate = 0;
  double salient_fraction_sum = 0.0;
  std::vector<std::size_t> winner_counts;
  std::size_t winner_total = 0;

  void observe(const LayerOutput& out) {
    for (const ReferenceForward& ref : out.references) {
      if (!ref.rcm_active) continue;
      if (ref.rcm.degenerate) {
        ++rcm_degenerate;
        continue;
      }
      ++rcm_active;
      const auto salient = std::count(ref.rcm.salient.begin(), ref.rcm.salient.end(), true);
      salient_fraction_sum +=
          static_cast<double>(salient) / static_cast<double>(ref.rcm.salient.size());
    }
    if (out.output.winners) {
      winner_counts.resize(out.references.size(), 0);
      for (std::size_t w : out.output.winners->winner) ++winner_counts[w];
      winner_total += out.output.winners->winner.size();
    }
  }
};

}  // namespace

RunResult execute(const PreparedRun& run, const RunOptions& options) {
  MechanismStats stats;
  RunOptions inner = options;
  inner.observer = [&](const LayerEvent& e) {
    if (e.pass == PassKind::Conditional) stats.observe(e.output);
    if (options.observer) options.observer(e);
  };

  RunResult result;
  TokenBlock latent = run.initial_latent;
  const std::size_t start = run.config.start_step();
  for (std::size_t t = start; t >= 1; --t) {
    latent = run_step(run, latent, t, inner, &result.trace).latent;
  }
  result.final_latent = std::move(latent);

  auto& m = result.metrics;
  add_latent_metrics(result.final_latent, m);
  m["steps"] = static_cast<double>(start);
  m["references"] = static_cast<double>(run.references.size());
  m["cfg_scale"] = run.config.cfg_scale;
  m["rcm_active_masks"] = static_cast<double>(stats.rcm_active);
  m["rcm_degenerate_masks"] = static_cast<double>(stats.rcm_degenerate);
  m["rcm_mean_salient_fraction"] =
      stats.rcm_active == 0 ? 0.0 : stats.salient_fraction_sum / static_cast<double>(stats.rcm_active);
  for (std::size_t r = 0; r < stats.winner_counts.size(); ++r) {
    m["wta_winner_share_ref" + std::to_string(r + 1)] =
        static_cast<double>(stats.winner_counts[r]) / static_cast<double>(stats.winner_total);
  }
  return result;
}

namespace {

std::vector<Image> load_reference_images(const RunConfig& config) {
  std::vector<Image> images;
  for (const ReferenceSpec& ref : config.references) images.push_back(read_pnm(ref.image));
  return images;
}

std::optional<Image> load_init_image(const RunConfig& config) {
  if (config.init_image.empty()) return std::nullopt;
  return read_pnm(config.init_image);
}

}  // namespace

RunResult run_pipeline(const RunConfig& config) {
  config.validate();
  const PreparedRun run =
      prepare_run(config, load_reference_images(config), load_init_image(config));
  return execute(run);
}

RunResult run_t2i_baseline(const RunConfig& config) {
  config.validate();
  return run_t2i_baseline(init_model(config.model), config, load_init_image(config));
}

RunResult run_t2i_baseline(const Model& model, const RunConfig& config,
                           const std::optional<Image>& init_image) {
  const std::size_t n = model.config.vision_tokens + model.config.text_tokens;
  const AttentionMask open(n, n);
  const TokenBlock prompt = encode_prompt(config.prompt, model);
  const TokenBlock empty_prompt = encode_prompt("", model);

  auto forward = [&](const TokenBlock& latent, const TokenBlock& text) {
    DualTokens tokens{latent, text};
    for (std::size_t l = 0; l < model.config.layers; ++l) {
      tokens = mma_forward(tokens.vision, tokens.text, open, l, model);
    }
    return predict_velocity(tokens.vision, model);
  };

  RunResult result;
  TokenBlock latent = initial_latent(model, config, init_image);
  const std::size_t start = config.start_step();
  for (std::size_t t = start; t >= 1; --t) {
    const Tensor2 conditional = forward(latent, prompt);
    Tensor2 unconditional;
    if (guidance_needs_unconditional(config.cfg_scale)) unconditional = forward(latent, empty_prompt);
    latent = euler_update(latent, combine_guidance(unconditional, conditional, config.cfg_scale),
                          config.steps);
  }
  result.final_latent = std::move(latent);
  add_latent_metrics(result.final_latent, result.metrics);
  result.metrics["steps"] = static_cast<double>(start);
  result.metrics["references"] = 0.0;
  result.metrics["cfg_scale"] = config.cfg_scale;
  return result;
}

// ---------------------------------------------------------------------------

std::string tensor_csv(const Tensor2& t) {
  std::string out;
  char buf[32];
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.cols(); ++c) {
      if (c > 0) out.push_back(',');
      std::snprintf(buf, sizeof buf, "%.17g", t(r, c));
      out += buf;
    }
    out.push_back('\n');
  }
  return out;
}

std::string metrics_json(const std::map<std::string, double>& metrics) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [key, value] : metrics) j[key] = value;
  return j.dump(2) + "\n";
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

std::string suffix(std::size_t t, std::size_t l) {
  return std::to_string(t) + "_" + std::to_string(l);
}

}  // namespace

std::vector<std::string> write_trace(const RunTrace& trace, const std::filesystem::path& dir,
                                     const TraceFlags& flags) {
  std::vector<std::string> written;
  auto emit = [&](const std::string& name, const std::string& content) {
    write_text(dir / name, content);
    written.push_back(name);
  };

  for (const auto& [key, rec] : trace.layers) {
    const auto [t, l] = key;
    if (flags.tokens && rec.output_prompt) {
      emit("tokens_output_prompt_" + suffix(t, l) + ".csv", tensor_csv(*rec.output_prompt));
      for (std::size_t r = 0; r < rec.reference_prompts.size(); ++r) {
        emit("tokens_ref" + std::to_string(r + 1) + "_prompt_" + suffix(t, l) + ".csv",
             tensor_csv(rec.reference_prompts[r]));
      }
    }
    if (flags.saliency) {
      for (std::size_t r = 0; r < rec.rcm.size(); ++r) {
        const auto& s = rec.rcm[r].saliency;
        emit("saliency_rcm_" + suffix(t, l) + "_" + std::to_string(r + 1) + ".csv",
             tensor_csv(Tensor2(s.size(), 1, s)));
      }
      if (rec.wta_saliency) {
        emit("saliency_wta_" + suffix(t, l) + ".csv", tensor_csv(rec.wta_saliency->scores));
      }
      if (rec.winners) {
        std::string rows;
        for (std::size_t w : rec.winners->winner) rows += std::to_string(w + 1) + "\n";
        emit("winners_" + suffix(t, l) + ".csv", rows);
      }
    }
    if (flags.masks) {
      for (std::size_t r = 0; r < rec.rcm.size(); ++r) {
        emit(mask_filename("rcm", t, l, r + 1), encode_pnm(mask_image(rec.rcm[r].mask)));
      }
      if (rec.output_mask) {
        emit(mask_filename(rec.wta_applied ? "wta" : "cts", t, l, 0),
             encode_pnm(mask_image(*rec.output_mask)));
      }
    }
  }
  std::sort(written.begin(), written.end());
  return written;
}

}  // namespace tfti2i
