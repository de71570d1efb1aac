#include "tfti2i/config.hpp"

#include <fstream>
#include <iterator>

#include "json.hpp"

#include "tfti2i/error.hpp"

namespace tfti2i {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& what) { throw Error(Errc::InvalidConfig, what); }

const json& require_object(const json& j, const std::string& where) {
  if (!j.is_object()) fail(where + " must be a JSON object");
  return j;
}

template <typename T>
T read_as(const json& j, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!j.is_boolean()) fail(key + " must be a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!j.is_number_integer()) fail(key + " must be an integer");
      if (j.is_number_integer() && !j.is_number_unsigned() && j.get<std::int64_t>() < 0) {
        fail(key + " must be non-negative");
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!j.is_number()) fail(key + " must be a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!j.is_string()) fail(key + " must be a string");
    }
    return j.get<T>();
  } catch (const json::exception& e) {
    fail(key + ": " + e.what());
  }
}

template <typename T>
std::vector<T> read_list(const json& j, const std::string& key) {
  if (!j.is_array()) fail(key + " must be an array");
  std::vector<T> out;
  for (const json& item : j) out.push_back(read_as<T>(item, key + "[]"));
  return out;
}

std::string resolve(const std::string& path, const std::filesystem::path& base_dir) {
  if (path.empty() || base_dir.empty()) return path;
  const std::filesystem::path p(path);
  return p.is_absolute() ? path : (base_dir / p).lexically_normal().string();
}

ModelConfig parse_model(const json& j) {
  require_object(j, "model");
  ModelConfig m;
  for (const auto& [key, value] : j.items()) {
    if (key == "L") m.layers = read_as<std::size_t>(value, key);
    else if (key == "d") m.width = read_as<std::size_t>(value, key);
    else if (key == "H") m.heads = read_as<std::size_t>(value, key);
    else if (key == "n_I") m.vision_tokens = read_as<std::size_t>(value, key);
    else if (key == "n_P") m.text_tokens = read_as<std::size_t>(value, key);
    else if (key == "rcm_gate_layer") m.rcm_gate_layer = read_as<std::size_t>(value, key);
    else if (key == "seed") m.seed = read_as<std::uint64_t>(value, key);
    else fail("unknown model key '" + key + "'");
  }
  return m;
}

TraceFlags parse_trace(const json& j) {
  require_object(j, "trace");
  TraceFlags t;
  for (const auto& [key, value] : j.items()) {
    if (key == "tokens") t.tokens = read_as<bool>(value, key);
    else if (key == "masks") t.masks = read_as<bool>(value, key);
    else if (key == "saliency") t.saliency = read_as<bool>(value, key);
    else fail("unknown trace key '" + key + "'");
  }
  return t;
}

ReferenceSpec parse_reference(const json& j, const std::filesystem::path& base_dir) {
  require_object(j, "reference");
  ReferenceSpec r;
  bool has_image = false;
  for (const auto& [key, value] : j.items()) {
    if (key == "image") {
      r.image = resolve(read_as<std::string>(value, key), base_dir);
      has_image = true;
    } else if (key == "prompt") {
      r.prompt = read_as<std::string>(value, key);
    } else {
      fail("unknown reference key '" + key + "'");
    }
  }
  if (!has_image) fail("reference is missing 'image'");
  return r;
}

AnalysisSettings parse_analysis(const json& j, const std::filesystem::path& base_dir) {
  require_object(j, "analysis");
  AnalysisSettings a;
  for (const auto& [key, value] : j.items()) {
    if (key == "images") {
      a.images = read_list<std::string>(value, key);
      for (auto& img : a.images) img = resolve(img, base_dir);
    } else if (key == "layers") a.layers = read_list<std::size_t>(value, key);
    else if (key == "timesteps") a.timesteps = read_list<std::size_t>(value, key);
    else if (key == "noise_steps") a.noise_steps = read_as<std::size_t>(value, key);
    else if (key == "seed_a") a.seed_a = read_as<std::uint64_t>(value, key);
    else if (key == "seed_b") a.seed_b = read_as<std::uint64_t>(value, key);
    else if (key == "replace_prompt") a.replace_prompt = read_as<std::string>(value, key);
    else if (key == "R_values") a.r_values = read_list<std::size_t>(value, key);
    else if (key == "cost_n_I") a.cost_vision_tokens = read_as<std::size_t>(value, key);
    else if (key == "cost_n_P") a.cost_text_tokens = read_as<std::size_t>(value, key);
    else if (key == "variance_step") a.variance_step = read_as<std::size_t>(value, key);
    else if (key == "variance_layer") a.variance_layer = read_as<std::size_t>(value, key);
    else fail("unknown analysis key '" + key + "'");
  }
  return a;
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  if (steps == 0) fail("steps must be at least 1");
  if (!(cfg_scale >= 0.0)) fail("cfg_scale must be non-negative");
  if (init_step > steps) fail("init_step must not exceed steps");
  if (init_step != 0 && init_image.empty()) fail("init_step requires init_image");
  if (analysis.noise_steps == 0) fail("analysis.noise_steps must be at least 1");
  if (analysis.r_values.empty()) fail("analysis.R_values must not be empty");
  if (analysis.cost_vision_tokens == 0 || analysis.cost_text_tokens == 0) {
    fail("analysis cost token counts must be positive");
  }
}

RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(std::string("malformed JSON: ") + e.what());
  }
  require_object(root, "config");

  RunConfig cfg;
  for (const auto& [key, value] : root.items()) {
    if (key == "model") cfg.model = parse_model(value);
    else if (key == "steps") cfg.steps = read_as<std::size_t>(value, key);
    else if (key == "cfg_scale") cfg.cfg_scale = read_as<double>(value, key);
    else if (key == "prompt") cfg.prompt = read_as<std::string>(value, key);
    else if (key == "references") {
      if (!value.is_array()) fail("references must be an array");
      for (const json& r : value) cfg.references.push_back(parse_reference(r, base_dir));
    } else if (key == "rcm_enabled") cfg.rcm_enabled = read_as<bool>(value, key);
    else if (key == "wta_enabled") cfg.wta_enabled = read_as<bool>(value, key);
    else if (key == "trace") cfg.trace = parse_trace(value);
    else if (key == "seed") cfg.seed = read_as<std::uint64_t>(value, key);
    else if (key == "init_image") cfg.init_image = resolve(read_as<std::string>(value, key), base_dir);
    else if (key == "init_step") cfg.init_step = read_as<std::size_t>(value, key);
    else if (key == "analysis") cfg.analysis = parse_analysis(value, base_dir);
    else fail("unknown config key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open config " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_run_config(text, path.parent_path());
}

}  // namespace tfti2i
