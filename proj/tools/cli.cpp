#include "cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "tfti2i/analysis.hpp"
#include "tfti2i/config.hpp"
#include "tfti2i/error.hpp"
#include "tfti2i/pipeline.hpp"

namespace tfti2i::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string command;
  std::string config_path;
  std::string out_dir;
  bool force = false;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> trace;
};

/// Collects every emitted file with its checksum for manifest.json.
class OutputDir {
 public:
  explicit OutputDir(fs::path root) : root_(std::move(root)) {}

  void write(const std::string& name, const std::string& bytes) {
    std::ofstream out(root_ / name, std::ios::binary);
    if (!out) throw Error(Errc::Io, "cannot write " + (root_ / name).string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    record(name, bytes);
  }

  void adopt(const std::string& name) {
    std::ifstream in(root_ / name, std::ios::binary);
    if (!in) throw Error(Errc::Io, "cannot read back " + (root_ / name).string());
    record(name, std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>()));
  }

  void write_manifest(const std::string& command) {
    json files = json::array();
    for (const auto& [name, entry] : entries_) {
      files.push_back({{"name", name}, {"bytes", entry.first}, {"fnv1a64", entry.second}});
    }
    const json manifest{{"command", command}, {"files", files}};
    std::ofstream out(root_ / "manifest.json", std::ios::binary);
    if (!out) throw Error(Errc::Io, "cannot write manifest");
    out << manifest.dump(2) << '\n';
  }

 private:
  void record(const std::string& name, const std::string& bytes) {
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(std::string_view(bytes))));
    entries_[name] = {bytes.size(), hex};
  }

  fs::path root_;
  std::map<std::string, std::pair<std::size_t, std::string>> entries_;
};

TraceFlags parse_trace_flags(const std::string& spec) {
  TraceFlags flags;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "tokens") flags.tokens = true;
    else if (item == "masks") flags.masks = true;
    else if (item == "saliency") flags.saliency = true;
    else if (!item.empty()) throw UsageError("unknown trace kind '" + item + "'");
  }
  return flags;
}

RunConfig load_config(const Options& opts) {
  RunConfig cfg = opts.config_path.empty() ? RunConfig{} : load_run_config(opts.config_path);
  if (opts.seed) cfg.seed = *opts.seed;
  if (opts.trace) cfg.trace = parse_trace_flags(*opts.trace);
  cfg.validate();
  return cfg;
}

OutputDir prepare_out_dir(const Options& opts) {
  if (opts.out_dir.empty()) throw UsageError("--out DIR is required for '" + opts.command + "'");
  const fs::path dir(opts.out_dir);
  if (fs::exists(dir) && !opts.force) {
    throw UsageError("output directory " + dir.string() + " exists (use --force)");
  }
  fs::create_directories(dir);
  return OutputDir(dir);
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

void emit_run(OutputDir& out, const RunResult& result, const TraceFlags& trace,
              const fs::path& dir) {
  out.write("final_latent.csv", tensor_csv(result.final_latent.tokens));
  out.write("metrics.json", metrics_json(result.metrics));
  for (const std::string& name : write_trace(result.trace, dir, trace)) out.adopt(name);
}

int cmd_generate(const Options& opts, std::ostream& log) {
  const RunConfig cfg = load_config(opts);
  OutputDir out = prepare_out_dir(opts);
  const RunResult result = run_pipeline(cfg);
  emit_run(out, result, cfg.trace, opts.out_dir);
  out.write_manifest(opts.command);
  log << "generate: " << cfg.references.size() << " reference(s), " << cfg.steps
      << " step(s) -> " << opts.out_dir << "\n";
  return kExitOk;
}

int cmd_baseline(const Options& opts, std::ostream& log) {
  const RunConfig cfg = load_config(opts);
  OutputDir out = prepare_out_dir(opts);
  const RunResult result = run_t2i_baseline(cfg);
  emit_run(out, result, {}, opts.out_dir);
  out.write_manifest(opts.command);
  log << "baseline: " << cfg.steps << " step(s) -> " << opts.out_dir << "\n";
  return kExitOk;
}

int cmd_dump_masks(const Options& opts, std::ostream& log) {
  RunConfig cfg = load_config(opts);
  cfg.trace = TraceFlags{false, true, false};
  OutputDir out = prepare_out_dir(opts);
  const RunResult result = run_pipeline(cfg);
  const auto names = write_trace(result.trace, opts.out_dir, cfg.trace);
  for (const std::string& name : names) out.adopt(name);
  out.write_manifest(opts.command);
  log << "dump-masks: " << names.size() << " mask(s) -> " << opts.out_dir << "\n";
  return kExitOk;
}

std::pair<Image, Image> cluster_images(const AnalysisSettings& a) {
  if (a.images.empty()) return builtin_image_pair();
  if (a.images.size() != 2) throw Error(Errc::InvalidConfig, "analysis.images must name exactly 2 images");
  return {read_pnm(a.images[0]), read_pnm(a.images[1])};
}

int cmd_cluster(const Options& opts, std::ostream& log) {
  const RunConfig cfg = load_config(opts);
  const AnalysisSettings& a = cfg.analysis;
  const auto layers = a.layers.empty() ? default_probe_layers(cfg.model) : a.layers;
  const auto steps = a.timesteps.empty() ? default_probe_steps(a.noise_steps) : a.timesteps;
  for (std::size_t s : steps) {
    if (s > a.noise_steps) throw Error(Errc::InvalidConfig, "analysis timestep exceeds noise_steps");
  }
  const std::vector<std::string> prompts = template_prompts();
  OutputDir out = prepare_out_dir(opts);
  const ClusterReport report = cluster_separation(init_model(cfg.model), prompts, cluster_images(a),
                                                  layers, steps, a.noise_steps, cfg.seed);

  json scores = json::array();
  std::string csv = "layer,step,steps,separation,centroid_distance_sq,within_variance\n";
  char line[256];
  for (const ClusterScore& s : report.scores) {
    scores.push_back({{"layer", s.layer},
                      {"step", s.step},
                      {"steps", s.steps},
                      {"separation", s.separation},
                      {"centroid_distance_sq", s.centroid_distance_sq},
                      {"within_variance", s.within_variance}});
    std::snprintf(line, sizeof line, "%zu,%zu,%zu,%.17g,%.17g,%.17g\n", s.layer, s.step, s.steps,
                  s.separation, s.centroid_distance_sq, s.within_variance);
    csv += line;
  }
  out.write("cluster_report.json", dump({{"prompts", prompts.size()}, {"scores", scores}}));
  out.write("cluster_scores.csv", csv);
  out.write_manifest(opts.command);
  log << "cluster: " << report.scores.size() << " probe(s) -> " << opts.out_dir << "\n";
  return kExitOk;
}

int cmd_replace(const Options& opts, std::ostream& log) {
  const RunConfig cfg = load_config(opts);
  const AnalysisSettings& a = cfg.analysis;
  if (a.seed_a == a.seed_b) throw Error(Errc::InvalidConfig, "seed_a and seed_b must differ");
  OutputDir out = prepare_out_dir(opts);
  const ReplacementReport r =
      token_replacement(init_model(cfg.model), cfg, a.replace_prompt, a.seed_a, a.seed_b);
  out.write("replacement_report.json",
            dump({{"prompt", a.replace_prompt},
                  {"seed_a", a.seed_a},
                  {"seed_b", a.seed_b},
                  {"d_AA_identity", r.identity_distance},
                  {"d_replaced_B", r.replaced_to_b},
                  {"d_replaced_A", r.replaced_to_a},
                  {"d_AB", r.a_to_b}}));
  out.write_manifest(opts.command);
  log << "replace: d(A', A) = " << r.replaced_to_a << " -> " << opts.out_dir << "\n";
  return kExitOk;
}

int cmd_variance(const Options& opts, std::ostream& log) {
  const RunConfig cfg = load_config(opts);
  const AnalysisSettings& a = cfg.analysis;
  if (cfg.references.empty()) {
    throw Error(Errc::InvalidConfig, "variance analysis needs at least one reference");
  }
  const std::size_t step = a.variance_step == 0 ? std::max<std::size_t>(1, cfg.steps / 2)
                                                : a.variance_step;
  const std::size_t layer = a.variance_layer == SIZE_MAX ? cfg.model.layers - 1 : a.variance_layer;
  std::vector<Image> images;
  for (const ReferenceSpec& ref : cfg.references) images.push_back(read_pnm(ref.image));
  OutputDir out = prepare_out_dir(opts);
  const VarianceReport report =
      reference_variance(init_model(cfg.model), cfg, images, a.r_values, step, layer);

  json entries = json::array();
  for (const VarianceEntry& e : report.entries) {
    entries.push_back({{"R", e.references}, {"wta_off", e.wta_off}, {"wta_on", e.wta_on}});
  }
  out.write("variance_report.json", dump({{"step", report.step},
                                          {"layer", report.layer},
                                          {"entries", entries},
                                          {"wta_reduces_variance", report.wta_reduces_variance}}));
  out.write_manifest(opts.command);
  log << "variance: " << report.entries.size() << " R value(s) -> " << opts.out_dir << "\n";
  return kExitOk;
}

int cmd_cost(const Options& opts, std::ostream& log) {
  const RunConfig cfg = load_config(opts);
  const AnalysisSettings& a = cfg.analysis;
  OutputDir out = prepare_out_dir(opts);
  json entries = json::array();
  for (const CostReport& c : cost_report(a.r_values, a.cost_vision_tokens, a.cost_text_tokens)) {
    entries.push_back({{"R", c.references},
                       {"text_to_vision_ratio", c.text_to_vision_ratio},
                       {"paper_share_factor", c.paper_share_factor},
                       {"paper_cts_factor", c.paper_cts_factor},
                       {"cts_to_share_ratio", c.cts_to_share_ratio()},
                       {"exact_share_keys", c.exact_share_keys},
                       {"exact_cts_keys", c.exact_cts_keys}});
  }
  out.write("cost_report.json", dump({{"n_I", a.cost_vision_tokens},
                                      {"n_P", a.cost_text_tokens},
                                      {"entries", entries}}));
  out.write_manifest(opts.command);
  log << "cost: " << entries.size() << " R value(s) -> " << opts.out_dir << "\n";
  return kExitOk;
}

int cmd_selftest(const Options& opts, std::ostream& log) {
  RunConfig cfg = load_config(opts);
  cfg.references.clear();
  cfg.rcm_enabled = false;
  cfg.wta_enabled = false;
  cfg.init_image.clear();
  cfg.init_step = 0;
  cfg.trace = {};

  json seeds = json::array();
  bool all_equal = true;
  for (std::uint64_t k = 0; k < 5; ++k) {
    cfg.seed = (opts.seed ? *opts.seed : 0) + k;
    const bool equal =
        bit_equal(run_pipeline(cfg).final_latent.tokens, run_t2i_baseline(cfg).final_latent.tokens);
    all_equal = all_equal && equal;
    seeds.push_back({{"seed", cfg.seed}, {"bit_identical", equal}});
    log << "selftest seed " << cfg.seed << ": " << (equal ? "bit-identical" : "MISMATCH") << "\n";
  }
  if (!opts.out_dir.empty()) {
    OutputDir out = prepare_out_dir(opts);
    out.write("selftest.json", dump({{"vanilla_equivalence", seeds}, {"passed", all_equal}}));
    out.write_manifest(opts.command);
  }
  return all_equal ? kExitOk : kExitRuntimeError;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Training-free text-and-image-to-image attention toolkit", "tfti2i"};
  app.require_subcommand(1, 1);

  Options opts;
  std::uint64_t seed_value = 0;
  std::string trace_value;

  struct Command {
    const char* name;
    const char* help;
    int (*fn)(const Options&, std::ostream&);
  };
  const Command commands[] = {
      {"generate", "Run the full pipeline and write the final latent", cmd_generate},
      {"baseline", "Run the plain text-to-image sampler", cmd_baseline},
      {"cluster", "Contextual-token clustering separation", cmd_cluster},
      {"replace", "Contextual-token replacement between two seeds", cmd_replace},
      {"variance", "Across-head variance with multiple references", cmd_variance},
      {"cost", "Attention cost of vision sharing vs contextual sharing", cmd_cost},
      {"dump-masks", "Run the pipeline and write every RCM/WTA mask as PGM", cmd_dump_masks},
      {"selftest", "Check that the shared-token path reduces to the baseline", cmd_selftest},
  };
  std::map<std::string, int (*)(const Options&, std::ostream&)> handlers;
  for (const Command& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("--config", opts.config_path, "Run configuration (JSON)");
    sub->add_option("--out", opts.out_dir, "Output directory");
    sub->add_flag("--force", opts.force, "Allow an existing output directory");
    sub->add_option("--seed", seed_value, "Override the run seed");
    sub->add_option("--trace", trace_value, "Comma list of tokens,masks,saliency");
    handlers[c.name] = c.fn;
  }

  std::vector<const char*> argv{"tfti2i"};
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfigError;
  }

  CLI::App* chosen = app.get_subcommands().front();
  opts.command = chosen->get_name();
  if (chosen->count("--seed") > 0) opts.seed = seed_value;
  if (chosen->count("--trace") > 0) opts.trace = trace_value;

  try {
    return handlers.at(opts.command)(opts, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.code() == Errc::InvalidConfig ? kExitConfigError : kExitRuntimeError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntimeError;
  }
}

}  // namespace tfti2i::cli
