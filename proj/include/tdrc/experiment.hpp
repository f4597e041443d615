#pragma once

#include <json.hpp>

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

#include "tdrc/errors.hpp"
#include "tdrc/generators.hpp"
#include "tdrc/kalman.hpp"
#include "tdrc/kernel.hpp"
#include "tdrc/moments.hpp"
#include "tdrc/properties.hpp"
#include "tdrc/reservoir_model.hpp"
#include "tdrc/tdr.hpp"
#include "tdrc/time_series.hpp"

namespace tdrc {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Seed derivation: one master seed fans out into per-role streams
// ---------------------------------------------------------------------------

[[nodiscard]] inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t salt) {
  std::uint64_t x = master ^ ((salt + 1) * 0x9E3779B97F4A7C15ULL);
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

namespace seed_salt {
inline constexpr std::uint64_t input = 1;
inline constexpr std::uint64_t mask = 2;
inline constexpr std::uint64_t moments = 3;
inline constexpr std::uint64_t properties = 4;
}  // namespace seed_salt

// ---------------------------------------------------------------------------
// Configuration schema (versioned; unknown keys are errors)
// ---------------------------------------------------------------------------

inline constexpr int kSchemaVersion = 1;

struct IidGaussian {
  double mean = 0.0;
  double variance = 1.0;
};

using GeneratorConfig = std::variant<ArmaModel, GarchModel, ArsvModel, IidGaussian>;

struct ReservoirConfig {
  int neurons = 40;
  double separation = 0.839;
  std::string kernel = "ikeda";
  std::vector<double> theta{0.461, 2.866, 1.124};
  std::uint64_t mask_seed = 0;  // 0 means "derive from master seed"
  std::vector<double> mask;     // explicit mask wins over mask_seed
  // The input forcing is I(t) = c * z(t) / input_scale; "auto" in the config
  // resolves to the generator's stationary standard deviation, so the gain
  // parameter of the kernel acts on a unit-scale signal.
  double input_scale = 1.0;
};

enum class TaskType { pure_memory, aggregate, quadratic_aggregate, filter };

struct TaskConfig {
  TaskType type = TaskType::pure_memory;
  std::int64_t lag = 0;               // pure_memory
  std::vector<double> weights;        // aggregate
  std::int64_t horizon = 1;           // quadratic_aggregate
  VolTarget target = VolTarget::volatility;  // filter
};

struct LengthConfig {
  std::int64_t burn_in = 1000;
  std::int64_t train = 20000;
  std::int64_t test = 20000;
};

enum class ProviderKind { empirical, gaussian, iid_gaussian };

struct MomentConfig {
  ProviderKind provider = ProviderKind::empirical;
  std::int64_t sample_length = 200000;
  std::int64_t max_abs_lag = 50;
  int max_order = 0;  // 0 means "derive from the model order and task"
  std::int64_t window = -1;  // -1 means "derive from the task"
};

struct SurfaceAxis {
  std::string name;  // eta | gamma | phi | separation | lambda
  double min = 0.0;
  double max = 1.0;
  int steps = 2;
};

enum class SurfaceMode { empirical_tdr, closed_form_model, both };

struct SurfaceConfig {
  SurfaceAxis axis1;
  std::optional<SurfaceAxis> axis2;
  SurfaceMode mode = SurfaceMode::both;
};

struct PropertiesConfig {
  // separation probe
  std::int64_t input_length = 400;
  std::int64_t t_perturb = 200;
  double delta = 1e-3;
  std::int64_t horizon = 3;
  double gap_floor = 1e-12;
  // fading-memory probe
  int history = 300;
  int h_eps = 20;
  double delta_eps = 1e-3;
  double epsilon = 1e-2;
  double input_bound = 1.0;
  int trials = 200;
};

struct ExperimentConfig {
  int schema_version = kSchemaVersion;
  std::uint64_t seed = 1;
  GeneratorConfig generator;
  ReservoirConfig reservoir;
  int order = 2;
  double lambda = 1e-8;
  std::optional<TaskConfig> task;
  LengthConfig lengths;
  MomentConfig moments;
  TruncationPolicy truncation;
  std::optional<SurfaceConfig> surface;
  PropertiesConfig properties;
};

namespace detail {

inline void require_known_keys(const json& j, const std::string& path,
                               std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(path + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) throw ConfigError(path + ": unknown key '" + it.key() + "'");
  }
}

inline const json& require_field(const json& j, const std::string& path, const char* key) {
  const auto it = j.find(key);
  if (it == j.end()) throw ConfigError(path + ": missing required key '" + key + "'");
  return *it;
}

inline double read_double(const json& j, const std::string& path) {
  if (!j.is_number()) throw ConfigError(path + ": expected a number");
  return j.get<double>();
}

inline std::int64_t read_int(const json& j, const std::string& path) {
  if (!j.is_number_integer()) throw ConfigError(path + ": expected an integer");
  return j.get<std::int64_t>();
}

inline std::vector<double> read_double_vector(const json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path + ": expected an array of numbers");
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& v : j) out.push_back(read_double(v, path + "[]"));
  return out;
}

inline std::string read_string(const json& j, const std::string& path) {
  if (!j.is_string()) throw ConfigError(path + ": expected a string");
  return j.get<std::string>();
}

}  // namespace detail

[[nodiscard]] inline VolTarget parse_vol_target(const std::string& s, const std::string& path) {
  if (s == "volatility") return VolTarget::volatility;
  if (s == "variance") return VolTarget::variance;
  if (s == "log_volatility") return VolTarget::log_volatility;
  if (s == "log_variance") return VolTarget::log_variance;
  throw ConfigError(path + ": unknown volatility target '" + s + "'");
}

/// Stationary standard deviation of the generator's output process.
[[nodiscard]] inline double generator_stationary_sd(const GeneratorConfig& g) {
  if (const auto* arma = std::get_if<ArmaModel>(&g)) {
    return std::sqrt(arma_acvf(*arma, 0).at(0));
  }
  if (const auto* garch = std::get_if<GarchModel>(&g)) {
    return std::sqrt(garch_stationary_variance(*garch));
  }
  if (const auto* arsv = std::get_if<ArsvModel>(&g)) {
    return std::sqrt(arsv_z_variance(*arsv));
  }
  return std::sqrt(std::get<IidGaussian>(g).variance);
}

[[nodiscard]] inline GeneratorConfig parse_generator(const json& j, const std::string& path) {
  const std::string type = detail::read_string(detail::require_field(j, path, "type"), path + ".type");
  if (type == "arma") {
    detail::require_known_keys(j, path, {"type", "phi", "theta", "sigma2"});
    ArmaModel m;
    if (j.contains("phi")) m.phi = detail::read_double_vector(j["phi"], path + ".phi");
    if (j.contains("theta")) m.theta = detail::read_double_vector(j["theta"], path + ".theta");
    m.sigma2 = detail::read_double(detail::require_field(j, path, "sigma2"), path + ".sigma2");
    validate(m);
    return m;
  }
  if (type == "garch") {
    detail::require_known_keys(j, path, {"type", "alpha0", "alpha1", "beta"});
    GarchModel m;
    m.alpha0 = detail::read_double(detail::require_field(j, path, "alpha0"), path + ".alpha0");
    m.alpha1 = detail::read_double(detail::require_field(j, path, "alpha1"), path + ".alpha1");
    m.beta = detail::read_double(detail::require_field(j, path, "beta"), path + ".beta");
    validate(m);
    return m;
  }
  if (type == "arsv") {
    detail::require_known_keys(j, path, {"type", "r", "sigma_w", "lambda", "alpha"});
    ArsvModel m;
    m.r = detail::read_double(detail::require_field(j, path, "r"), path + ".r");
    m.sigma_w = detail::read_double(detail::require_field(j, path, "sigma_w"), path + ".sigma_w");
    m.lambda = detail::read_double(detail::require_field(j, path, "lambda"), path + ".lambda");
    m.alpha = detail::read_double(detail::require_field(j, path, "alpha"), path + ".alpha");
    validate(m);
    return m;
  }
  if (type == "iid_gaussian") {
    detail::require_known_keys(j, path, {"type", "mean", "variance"});
    IidGaussian m;
    if (j.contains("mean")) m.mean = detail::read_double(j["mean"], path + ".mean");
    if (j.contains("variance")) {
      m.variance = detail::read_double(j["variance"], path + ".variance");
    }
    if (!(m.variance > 0.0)) throw ConfigError(path + ".variance: must be > 0");
    return m;
  }
  throw ConfigError(path + ".type: unknown generator '" + type + "'");
}

[[nodiscard]] inline TaskConfig parse_task(const json& j, const std::string& path) {
  const std::string type = detail::read_string(detail::require_field(j, path, "type"), path + ".type");
  TaskConfig t;
  if (type == "pure_memory") {
    detail::require_known_keys(j, path, {"type", "lag"});
    t.type = TaskType::pure_memory;
    t.lag = detail::read_int(detail::require_field(j, path, "lag"), path + ".lag");
    if (t.lag < 0) throw ConfigError(path + ".lag: must be >= 0");
    return t;
  }
  if (type == "aggregate") {
    detail::require_known_keys(j, path, {"type", "weights"});
    t.type = TaskType::aggregate;
    t.weights = detail::read_double_vector(detail::require_field(j, path, "weights"),
                                           path + ".weights");
    if (t.weights.empty()) throw ConfigError(path + ".weights: must be nonempty");
    return t;
  }
  if (type == "quadratic_aggregate") {
    detail::require_known_keys(j, path, {"type", "horizon"});
    t.type = TaskType::quadratic_aggregate;
    t.horizon = detail::read_int(detail::require_field(j, path, "horizon"), path + ".horizon");
    if (t.horizon < 1) throw ConfigError(path + ".horizon: must be >= 1");
    return t;
  }
  if (type == "filter") {
    detail::require_known_keys(j, path, {"type", "target"});
    t.type = TaskType::filter;
    t.target = parse_vol_target(
        detail::read_string(detail::require_field(j, path, "target"), path + ".target"),
        path + ".target");
    return t;
  }
  throw ConfigError(path + ".type: unknown task '" + type + "'");
}

[[nodiscard]] inline SurfaceAxis parse_axis(const json& j, const std::string& path) {
  detail::require_known_keys(j, path, {"name", "min", "max", "steps"});
  SurfaceAxis a;
  a.name = detail::read_string(detail::require_field(j, path, "name"), path + ".name");
  if (a.name != "eta" && a.name != "gamma" && a.name != "phi" && a.name != "separation" &&
      a.name != "lambda") {
    throw ConfigError(path + ".name: unknown axis '" + a.name + "'");
  }
  a.min = detail::read_double(detail::require_field(j, path, "min"), path + ".min");
  a.max = detail::read_double(detail::require_field(j, path, "max"), path + ".max");
  a.steps = static_cast<int>(
      detail::read_int(detail::require_field(j, path, "steps"), path + ".steps"));
  if (a.steps < 2) throw ConfigError(path + ".steps: must be >= 2");
  if (!(a.min < a.max)) throw ConfigError(path + ": min must be < max");
  return a;
}

[[nodiscard]] inline ExperimentConfig parse_config(const json& j) {
  detail::require_known_keys(j, "config",
                             {"schema_version", "seed", "generator", "reservoir", "model",
                              "lambda", "task", "lengths", "moments", "truncation", "surface",
                              "properties"});
  ExperimentConfig cfg;

  const auto version =
      detail::read_int(detail::require_field(j, "config", "schema_version"), "schema_version");
  if (version != kSchemaVersion) {
    throw ConfigError("schema_version: expected " + std::to_string(kSchemaVersion) + ", got " +
                      std::to_string(version));
  }
  const auto seed = detail::read_int(detail::require_field(j, "config", "seed"), "seed");
  if (seed < 0) throw ConfigError("seed: must be >= 0");
  cfg.seed = static_cast<std::uint64_t>(seed);

  cfg.generator = parse_generator(detail::require_field(j, "config", "generator"), "generator");

  {
    const json& r = detail::require_field(j, "config", "reservoir");
    detail::require_known_keys(
        r, "reservoir",
        {"neurons", "separation", "kernel", "theta", "mask_seed", "mask", "input_scale"});
    if (r.contains("neurons")) {
      cfg.reservoir.neurons =
          static_cast<int>(detail::read_int(r["neurons"], "reservoir.neurons"));
    }
    if (r.contains("separation")) {
      cfg.reservoir.separation = detail::read_double(r["separation"], "reservoir.separation");
    }
    if (r.contains("kernel")) {
      cfg.reservoir.kernel = detail::read_string(r["kernel"], "reservoir.kernel");
      if (cfg.reservoir.kernel != "ikeda") {
        throw ConfigError("reservoir.kernel: unknown kernel '" + cfg.reservoir.kernel + "'");
      }
    }
    if (r.contains("theta")) {
      cfg.reservoir.theta = detail::read_double_vector(r["theta"], "reservoir.theta");
    }
    if (r.contains("mask_seed")) {
      const auto ms = detail::read_int(r["mask_seed"], "reservoir.mask_seed");
      if (ms < 0) throw ConfigError("reservoir.mask_seed: must be >= 0");
      cfg.reservoir.mask_seed = static_cast<std::uint64_t>(ms);
    }
    if (r.contains("mask")) {
      cfg.reservoir.mask = detail::read_double_vector(r["mask"], "reservoir.mask");
    }
    if (r.contains("input_scale")) {
      if (r["input_scale"].is_string()) {
        if (r["input_scale"].get<std::string>() != "auto") {
          throw ConfigError("reservoir.input_scale: expected a number or \"auto\"");
        }
        cfg.reservoir.input_scale = generator_stationary_sd(cfg.generator);
      } else {
        cfg.reservoir.input_scale =
            detail::read_double(r["input_scale"], "reservoir.input_scale");
      }
      if (!(cfg.reservoir.input_scale > 0.0) || !std::isfinite(cfg.reservoir.input_scale)) {
        throw ConfigError("reservoir.input_scale: must resolve to a positive finite number");
      }
    }
  }

  {
    const json& m = detail::require_field(j, "config", "model");
    detail::require_known_keys(m, "model", {"order"});
    cfg.order = static_cast<int>(
        detail::read_int(detail::require_field(m, "model", "order"), "model.order"));
    if (cfg.order < 1) throw ConfigError("model.order: must be >= 1");
  }

  if (j.contains("lambda")) {
    cfg.lambda = detail::read_double(j["lambda"], "lambda");
    if (cfg.lambda < 0.0) throw ConfigError("lambda: must be >= 0");
  }

  if (j.contains("task")) cfg.task = parse_task(j["task"], "task");

  if (j.contains("lengths")) {
    const json& l = j["lengths"];
    detail::require_known_keys(l, "lengths", {"burn_in", "train", "test"});
    if (l.contains("burn_in")) cfg.lengths.burn_in = detail::read_int(l["burn_in"], "lengths.burn_in");
    if (l.contains("train")) cfg.lengths.train = detail::read_int(l["train"], "lengths.train");
    if (l.contains("test")) cfg.lengths.test = detail::read_int(l["test"], "lengths.test");
    if (cfg.lengths.burn_in < 0 || cfg.lengths.train < 2 || cfg.lengths.test < 2) {
      throw ConfigError("lengths: burn_in >= 0, train >= 2, test >= 2 required");
    }
  }

  if (j.contains("moments")) {
    const json& m = j["moments"];
    detail::require_known_keys(
        m, "moments", {"provider", "sample_length", "max_abs_lag", "max_order", "window"});
    if (m.contains("provider")) {
      const std::string p = detail::read_string(m["provider"], "moments.provider");
      if (p == "empirical") {
        cfg.moments.provider = ProviderKind::empirical;
      } else if (p == "gaussian") {
        cfg.moments.provider = ProviderKind::gaussian;
      } else if (p == "iid_gaussian") {
        cfg.moments.provider = ProviderKind::iid_gaussian;
      } else {
        throw ConfigError("moments.provider: unknown provider '" + p + "'");
      }
    }
    if (m.contains("sample_length")) {
      cfg.moments.sample_length = detail::read_int(m["sample_length"], "moments.sample_length");
      if (cfg.moments.sample_length < 10) throw ConfigError("moments.sample_length: too small");
    }
    if (m.contains("max_abs_lag")) {
      cfg.moments.max_abs_lag = detail::read_int(m["max_abs_lag"], "moments.max_abs_lag");
      if (cfg.moments.max_abs_lag < 0) throw ConfigError("moments.max_abs_lag: must be >= 0");
    }
    if (m.contains("max_order")) {
      cfg.moments.max_order =
          static_cast<int>(detail::read_int(m["max_order"], "moments.max_order"));
      if (cfg.moments.max_order < 0) throw ConfigError("moments.max_order: must be >= 0");
    }
    if (m.contains("window")) {
      cfg.moments.window = detail::read_int(m["window"], "moments.window");
      if (cfg.moments.window < -1) throw ConfigError("moments.window: must be >= -1");
    }
  }

  if (j.contains("truncation")) {
    const json& t = j["truncation"];
    detail::require_known_keys(t, "truncation", {"tol", "k_max", "h_max"});
    if (t.contains("tol")) cfg.truncation.tol = detail::read_double(t["tol"], "truncation.tol");
    if (t.contains("k_max")) {
      cfg.truncation.k_max = static_cast<int>(detail::read_int(t["k_max"], "truncation.k_max"));
    }
    if (t.contains("h_max")) {
      cfg.truncation.h_max = static_cast<int>(detail::read_int(t["h_max"], "truncation.h_max"));
    }
    if (!(cfg.truncation.tol > 0.0) || cfg.truncation.k_max < 1 || cfg.truncation.h_max < 0) {
      throw ConfigError("truncation: tol > 0, k_max >= 1, h_max >= 0 required");
    }
  }

  if (j.contains("surface")) {
    const json& s = j["surface"];
    detail::require_known_keys(s, "surface", {"axis1", "axis2", "mode"});
    SurfaceConfig sc;
    sc.axis1 = parse_axis(detail::require_field(s, "surface", "axis1"), "surface.axis1");
    if (s.contains("axis2")) sc.axis2 = parse_axis(s["axis2"], "surface.axis2");
    if (s.contains("mode")) {
      const std::string m = detail::read_string(s["mode"], "surface.mode");
      if (m == "empirical_tdr") {
        sc.mode = SurfaceMode::empirical_tdr;
      } else if (m == "closed_form_model") {
        sc.mode = SurfaceMode::closed_form_model;
      } else if (m == "both") {
        sc.mode = SurfaceMode::both;
      } else {
        throw ConfigError("surface.mode: unknown mode '" + m + "'");
      }
    }
    cfg.surface = sc;
  }

  if (j.contains("properties")) {
    const json& p = j["properties"];
    detail::require_known_keys(p, "properties",
                               {"input_length", "t_perturb", "delta", "horizon", "gap_floor",
                                "history", "h_eps", "delta_eps", "epsilon", "input_bound",
                                "trials"});
    PropertiesConfig& pc = cfg.properties;
    if (p.contains("input_length")) pc.input_length = detail::read_int(p["input_length"], "properties.input_length");
    if (p.contains("t_perturb")) pc.t_perturb = detail::read_int(p["t_perturb"], "properties.t_perturb");
    if (p.contains("delta")) pc.delta = detail::read_double(p["delta"], "properties.delta");
    if (p.contains("horizon")) pc.horizon = detail::read_int(p["horizon"], "properties.horizon");
    if (p.contains("gap_floor")) pc.gap_floor = detail::read_double(p["gap_floor"], "properties.gap_floor");
    if (p.contains("history")) pc.history = static_cast<int>(detail::read_int(p["history"], "properties.history"));
    if (p.contains("h_eps")) pc.h_eps = static_cast<int>(detail::read_int(p["h_eps"], "properties.h_eps"));
    if (p.contains("delta_eps")) pc.delta_eps = detail::read_double(p["delta_eps"], "properties.delta_eps");
    if (p.contains("epsilon")) pc.epsilon = detail::read_double(p["epsilon"], "properties.epsilon");
    if (p.contains("input_bound")) pc.input_bound = detail::read_double(p["input_bound"], "properties.input_bound");
    if (p.contains("trials")) pc.trials = static_cast<int>(detail::read_int(p["trials"], "properties.trials"));
  } else if (cfg.properties.t_perturb >= cfg.properties.input_length) {
    cfg.properties.t_perturb = cfg.properties.input_length / 2;
  }

  return cfg;
}

[[nodiscard]] inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config parse error in " + path.string() + ": " + e.what());
  }
  return parse_config(j);
}

// ---------------------------------------------------------------------------
// Resolved-config serialization (defaults materialized; replay-sufficient)
// ---------------------------------------------------------------------------

[[nodiscard]] inline json generator_json(const GeneratorConfig& g) {
  json j;
  if (const auto* arma = std::get_if<ArmaModel>(&g)) {
    j["type"] = "arma";
    j["phi"] = arma->phi;
    j["theta"] = arma->theta;
    j["sigma2"] = arma->sigma2;
  } else if (const auto* garch = std::get_if<GarchModel>(&g)) {
    j["type"] = "garch";
    j["alpha0"] = garch->alpha0;
    j["alpha1"] = garch->alpha1;
    j["beta"] = garch->beta;
  } else if (const auto* arsv = std::get_if<ArsvModel>(&g)) {
    j["type"] = "arsv";
    j["r"] = arsv->r;
    j["sigma_w"] = arsv->sigma_w;
    j["lambda"] = arsv->lambda;
    j["alpha"] = arsv->alpha;
  } else {
    const auto& iid = std::get<IidGaussian>(g);
    j["type"] = "iid_gaussian";
    j["mean"] = iid.mean;
    j["variance"] = iid.variance;
  }
  return j;
}

[[nodiscard]] inline json task_json(const TaskConfig& t) {
  json j;
  switch (t.type) {
    case TaskType::pure_memory:
      j["type"] = "pure_memory";
      j["lag"] = t.lag;
      break;
    case TaskType::aggregate:
      j["type"] = "aggregate";
      j["weights"] = t.weights;
      break;
    case TaskType::quadratic_aggregate:
      j["type"] = "quadratic_aggregate";
      j["horizon"] = t.horizon;
      break;
    case TaskType::filter:
      j["type"] = "filter";
      j["target"] = to_string(t.target);
      break;
  }
  return j;
}

[[nodiscard]] inline json resolved_config_json(const ExperimentConfig& cfg) {
  json j;
  j["schema_version"] = cfg.schema_version;
  j["seed"] = cfg.seed;
  j["generator"] = generator_json(cfg.generator);
  j["reservoir"] = {{"neurons", cfg.reservoir.neurons},
                    {"separation", cfg.reservoir.separation},
                    {"kernel", cfg.reservoir.kernel},
                    {"theta", cfg.reservoir.theta},
                    {"mask_seed", cfg.reservoir.mask_seed},
                    {"input_scale", cfg.reservoir.input_scale}};
  if (!cfg.reservoir.mask.empty()) j["reservoir"]["mask"] = cfg.reservoir.mask;
  j["model"] = {{"order", cfg.order}};
  j["lambda"] = cfg.lambda;
  if (cfg.task) j["task"] = task_json(*cfg.task);
  j["lengths"] = {{"burn_in", cfg.lengths.burn_in},
                  {"train", cfg.lengths.train},
                  {"test", cfg.lengths.test}};
  const char* provider = cfg.moments.provider == ProviderKind::empirical ? "empirical"
                         : cfg.moments.provider == ProviderKind::gaussian ? "gaussian"
                                                                          : "iid_gaussian";
  j["moments"] = {{"provider", provider},
                  {"sample_length", cfg.moments.sample_length},
                  {"max_abs_lag", cfg.moments.max_abs_lag},
                  {"max_order", cfg.moments.max_order},
                  {"window", cfg.moments.window}};
  j["truncation"] = {{"tol", cfg.truncation.tol},
                     {"k_max", cfg.truncation.k_max},
                     {"h_max", cfg.truncation.h_max}};
  if (cfg.surface) {
    json s;
    s["axis1"] = {{"name", cfg.surface->axis1.name},
                  {"min", cfg.surface->axis1.min},
                  {"max", cfg.surface->axis1.max},
                  {"steps", cfg.surface->axis1.steps}};
    if (cfg.surface->axis2) {
      s["axis2"] = {{"name", cfg.surface->axis2->name},
                    {"min", cfg.surface->axis2->min},
                    {"max", cfg.surface->axis2->max},
                    {"steps", cfg.surface->axis2->steps}};
    }
    s["mode"] = cfg.surface->mode == SurfaceMode::empirical_tdr     ? "empirical_tdr"
                : cfg.surface->mode == SurfaceMode::closed_form_model ? "closed_form_model"
                                                                      : "both";
    j["surface"] = s;
  }
  j["properties"] = {{"input_length", cfg.properties.input_length},
                     {"t_perturb", cfg.properties.t_perturb},
                     {"delta", cfg.properties.delta},
                     {"horizon", cfg.properties.horizon},
                     {"gap_floor", cfg.properties.gap_floor},
                     {"history", cfg.properties.history},
                     {"h_eps", cfg.properties.h_eps},
                     {"delta_eps", cfg.properties.delta_eps},
                     {"epsilon", cfg.properties.epsilon},
                     {"input_bound", cfg.properties.input_bound},
                     {"trials", cfg.properties.trials}};
  return j;
}

// ---------------------------------------------------------------------------
// Construction helpers
// ---------------------------------------------------------------------------

[[nodiscard]] inline TdrParams build_tdr_params(const ExperimentConfig& cfg) {
  TdrParams p;
  p.neurons = cfg.reservoir.neurons;
  p.separation = cfg.reservoir.separation;
  p.kernel = std::make_shared<IkedaKernel>();
  p.theta = cfg.reservoir.theta;
  if (!cfg.reservoir.mask.empty()) {
    if (static_cast<int>(cfg.reservoir.mask.size()) != p.neurons) {
      throw ConfigError("reservoir.mask: size must equal neurons");
    }
    p.mask = Eigen::Map<const Eigen::VectorXd>(cfg.reservoir.mask.data(),
                                               static_cast<Eigen::Index>(cfg.reservoir.mask.size()));
  } else {
    const std::uint64_t ms = cfg.reservoir.mask_seed != 0
                                 ? cfg.reservoir.mask_seed
                                 : derive_seed(cfg.seed, seed_salt::mask);
    p.mask = make_uniform_mask(p.neurons, ms);
  }
  // I(t) = c z(t) / input_scale, folded into the mask so the cascade, the
  // linearized model, and the moment machinery all see one consistent forcing
  p.mask /= cfg.reservoir.input_scale;
  validate(p);
  return p;
}

struct GeneratedSeries {
  TimeSeries z;
  std::optional<TimeSeries> log_variance;  // arsv
  std::optional<TimeSeries> sigma2;        // garch
};

[[nodiscard]] inline GeneratedSeries run_generator(const GeneratorConfig& g, std::int64_t length,
                                                   std::uint64_t seed) {
  GeneratedSeries out;
  if (const auto* arma = std::get_if<ArmaModel>(&g)) {
    out.z = arma_simulate(*arma, length, seed).z;
  } else if (const auto* garch = std::get_if<GarchModel>(&g)) {
    GarchSample s = garch_simulate(*garch, length, seed);
    out.z = std::move(s.z);
    out.sigma2 = std::move(s.sigma2);
  } else if (const auto* arsv = std::get_if<ArsvModel>(&g)) {
    ArsvSample s = arsv_simulate(*arsv, length, seed);
    out.z = std::move(s.z);
    out.log_variance = std::move(s.log_variance);
  } else {
    const auto& iid = std::get<IidGaussian>(g);
    std::mt19937_64 eng(seed);
    std::normal_distribution<double> normal(iid.mean, std::sqrt(iid.variance));
    out.z.values.resize(static_cast<std::size_t>(length));
    for (double& v : out.z.values) v = normal(eng);
  }
  return out;
}

/// Teaching series for the configured task, aligned on the input's time axis.
[[nodiscard]] inline TimeSeries build_teaching(const TaskConfig& task,
                                               const GeneratedSeries& data) {
  const TimeSeries& z = data.z;
  switch (task.type) {
    case TaskType::pure_memory: {
      if (static_cast<std::int64_t>(z.size()) <= task.lag) {
        throw InsufficientData("teaching: series shorter than the memory lag");
      }
      TimeSeries y;
      y.origin = z.origin + task.lag;
      y.values.assign(z.values.begin(), z.values.end() - static_cast<std::ptrdiff_t>(task.lag));
      return y;
    }
    case TaskType::aggregate:
      return aggregate_target(z, task.weights);
    case TaskType::quadratic_aggregate: {
      const TimeSeries sum =
          aggregate_target(z, std::vector<double>(static_cast<std::size_t>(task.horizon), 1.0));
      TimeSeries y = sum;
      for (double& v : y.values) v = v * v;
      return y;
    }
    case TaskType::filter: {
      if (!data.log_variance) {
        throw ConfigError("filter task requires a stochastic-volatility generator");
      }
      return teaching_from_log_variance(*data.log_variance, task.target);
    }
  }
  throw ConfigError("unknown task type");
}

[[nodiscard]] inline int auto_max_order(const ExperimentConfig& cfg) {
  if (cfg.moments.max_order > 0) return cfg.moments.max_order;
  int order = 2 * cfg.order;
  if (cfg.task && cfg.task->type == TaskType::quadratic_aggregate) {
    order = std::max({order, cfg.order + 2, 4});
  }
  return order;
}

[[nodiscard]] inline std::int64_t auto_window(const ExperimentConfig& cfg) {
  if (cfg.moments.window >= 0) return cfg.moments.window;
  if (cfg.task && cfg.task->type == TaskType::quadratic_aggregate) {
    return cfg.task->horizon + 1;
  }
  return 0;
}

struct MomentData {
  std::shared_ptr<AutomomentProvider> provider;
  std::optional<ComomentTable> comoments;  // filter tasks only
  double mean_y = 0.0;                     // filter tasks only
  double var_y = 0.0;                      // filter tasks only
};

/// Builds the automoment provider (and, for filter tasks, the cross-moment
/// table) the closed-form machinery needs.
[[nodiscard]] inline MomentData build_moment_data(const ExperimentConfig& cfg) {
  MomentData out;
  const bool filter_task = cfg.task && cfg.task->type == TaskType::filter;

  switch (cfg.moments.provider) {
    case ProviderKind::empirical: {
      const GeneratedSeries sample =
          run_generator(cfg.generator, cfg.moments.sample_length,
                        derive_seed(cfg.seed, seed_salt::moments));
      const AutomomentTable table = estimate_automoments(
          sample.z, auto_max_order(cfg), cfg.moments.max_abs_lag, auto_window(cfg));
      out.provider = std::make_shared<EmpiricalAutomomentProvider>(table);
      if (filter_task) {
        const TimeSeries y = build_teaching(*cfg.task, sample);
        out.comoments = estimate_comoments(y, sample.z, cfg.order,
                                           -static_cast<std::int64_t>(cfg.truncation.h_max), 0);
        out.mean_y = series_mean(y);
        out.var_y = series_variance(y);
      }
      return out;
    }
    case ProviderKind::gaussian: {
      const auto* arma = std::get_if<ArmaModel>(&cfg.generator);
      if (arma == nullptr) {
        throw ConfigError(
            "moments.provider=gaussian requires an arma generator (gaussian innovations); "
            "use the empirical provider for garch/arsv inputs");
      }
      if (filter_task) {
        throw ConfigError("filter tasks need empirical cross moments; use provider=empirical");
      }
      const std::int64_t acvf_len = cfg.truncation.k_max + cfg.truncation.h_max +
                                    cfg.moments.max_abs_lag + 64;
      auto acvf = std::make_shared<std::vector<double>>(arma_acvf(*arma, acvf_len));
      out.provider = std::make_shared<GaussianAutomomentProvider>(
          0.0, [acvf](std::int64_t h) -> double {
            const auto a = static_cast<std::size_t>(h < 0 ? -h : h);
            return a < acvf->size() ? (*acvf)[a] : 0.0;
          });
      return out;
    }
    case ProviderKind::iid_gaussian: {
      const auto* iid = std::get_if<IidGaussian>(&cfg.generator);
      if (iid == nullptr) {
        throw ConfigError("moments.provider=iid_gaussian requires the iid_gaussian generator");
      }
      out.provider =
          std::make_shared<IidAutomomentProvider>(make_iid_gaussian_provider(iid->mean, iid->variance));
      if (filter_task) {
        throw ConfigError("filter tasks need empirical cross moments; use provider=empirical");
      }
      return out;
    }
  }
  throw ConfigError("unknown moment provider");
}

// ---------------------------------------------------------------------------
// Closed-form capacity for a configured task
// ---------------------------------------------------------------------------

struct ClosedFormResult {
  CapacityReport report;
  Eigen::MatrixXd gamma0;
  Eigen::VectorXd cov;
  double var_y = 0.0;
  double mean_y = 0.0;
};

[[nodiscard]] inline ClosedFormResult closed_form_capacity(const ReservoirModel& model,
                                                           const MomentData& md,
                                                           const TaskConfig& task,
                                                           const TruncationPolicy& policy,
                                                           double lambda) {
  ClosedFormResult out;
  const StateCovarianceResult gamma = state_autocovariance0(model, *md.provider, policy);
  out.gamma0 = gamma.gamma0;

  switch (task.type) {
    case TaskType::pure_memory: {
      const TaskMoments tm = linear_task_cov(model, *md.provider, pure_memory_task(task.lag), policy);
      out.cov = tm.cov;
      out.var_y = tm.var_y;
      out.mean_y = tm.mean_y;
      break;
    }
    case TaskType::aggregate: {
      const TaskMoments tm =
          linear_task_cov(model, *md.provider, linear_task_for_aggregate(task.weights), policy);
      out.cov = tm.cov;
      out.var_y = tm.var_y;
      out.mean_y = tm.mean_y;
      break;
    }
    case TaskType::quadratic_aggregate: {
      const TaskMoments tm = quadratic_task_cov(
          model, *md.provider, quadratic_task_for_garch_aggregate(task.horizon), policy);
      out.cov = tm.cov;
      out.var_y = tm.var_y;
      out.mean_y = tm.mean_y;
      break;
    }
    case TaskType::filter: {
      if (!md.comoments) {
        throw ConfigError("filter task capacity requires estimated cross moments");
      }
      const Eigen::VectorXd mu_eps = epsilon_mean(model, *md.provider);
      out.cov = filter_task_cov(model, *md.comoments, md.provider->mean(), mu_eps, policy);
      out.var_y = md.var_y;
      out.mean_y = md.mean_y;
      break;
    }
  }
  out.report = capacity_from_components(out.gamma0, out.cov, out.var_y, lambda);
  out.report.truncation_terms_used = gamma.terms_used;
  return out;
}

// ---------------------------------------------------------------------------
// Empirical pipeline: run the cascade, train a readout, evaluate NMSE
// ---------------------------------------------------------------------------

/// Rows of the state path aligned with the teaching signal over [t_begin, t_end).
[[nodiscard]] inline std::pair<Eigen::MatrixXd, Eigen::VectorXd> align_states_with_target(
    const StatePath& path, const TimeSeries& y, std::int64_t t_begin, std::int64_t t_end) {
  const std::int64_t lo = std::max({t_begin, path.origin, y.first_time()});
  const std::int64_t hi =
      std::min({t_end, path.origin + path.states.rows(), y.last_time() + 1});
  if (hi - lo < 2) throw InsufficientData("alignment: fewer than two usable rows");
  const auto n = static_cast<Eigen::Index>(hi - lo);
  Eigen::MatrixXd x(n, path.states.cols());
  Eigen::VectorXd target(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    x.row(i) = path.states.row(lo - path.origin + i);
    target(i) = y.at_time(lo + i);
  }
  return {std::move(x), std::move(target)};
}

struct EmpiricalResult {
  NmseReport train;
  NmseReport test;
  Readout readout;
  TimeSeries prediction_test;  // readout output over the test segment
};

[[nodiscard]] inline EmpiricalResult empirical_readout_nmse(const TdrParams& params,
                                                            const TimeSeries& z,
                                                            const TimeSeries& y,
                                                            const LengthConfig& len,
                                                            double lambda) {
  const StatePath path = tdr_run(params, z, Eigen::VectorXd::Zero(params.neurons));
  const std::int64_t train_begin = z.origin + len.burn_in;
  const std::int64_t train_end = train_begin + len.train;
  const std::int64_t test_end = train_end + len.test;

  auto [x_train, y_train] = align_states_with_target(path, y, train_begin, train_end);
  auto [x_test, y_test] = align_states_with_target(path, y, train_end, test_end);

  EmpiricalResult out;
  out.readout = train_readout(x_train, y_train, lambda);
  out.train = evaluate_nmse(predict(x_train, out.readout), y_train);
  const Eigen::VectorXd pred = predict(x_test, out.readout);
  out.test = evaluate_nmse(pred, y_test);
  out.prediction_test.origin = std::max({train_end, path.origin, y.first_time()});
  out.prediction_test.values.assign(pred.data(), pred.data() + pred.size());
  return out;
}

// ---------------------------------------------------------------------------
// Worker pool: independent tasks, results land in preassigned slots
// ---------------------------------------------------------------------------

template <typename Fn>
inline void parallel_for(std::size_t n, int workers, Fn&& fn) {
  if (n == 0) return;
  const int usable = std::max(1, std::min<int>(workers, static_cast<int>(n)));
  if (usable == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  auto body = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        const std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(usable));
  for (int w = 0; w < usable; ++w) pool.emplace_back(body);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// Output plumbing
// ---------------------------------------------------------------------------

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

inline void write_json_file(const std::filesystem::path& path, const json& j) {
  write_text(path, j.dump(2) + "\n");
}

[[nodiscard]] inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

[[nodiscard]] inline json nmse_json(const NmseReport& r) {
  return json{{"mse", r.mse}, {"nmse", r.nmse}, {"var_y", r.var_y}, {"capacity", r.capacity}};
}

[[nodiscard]] inline json capacity_json(const CapacityReport& r) {
  return json{{"capacity", r.capacity},
              {"capacity_raw", r.capacity_raw},
              {"mse", r.mse},
              {"var_y", r.var_y},
              {"lambda", r.lambda},
              {"gamma0_condition", r.gamma0_condition},
              {"truncation_terms_used", r.truncation_terms_used},
              {"clamped", r.clamped},
              {"warning", r.warning}};
}

inline void ensure_out_dir(const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory: " + out_dir.string());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

/// simulate: generate input + teaching, run the cascade, train and score a
/// ridge readout; writes summary.json, input/teaching/prediction CSVs.
inline void cmd_simulate(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  if (!cfg.task) throw ConfigError("simulate: config needs a 'task' block");
  detail::ensure_out_dir(out_dir);

  const std::int64_t total = cfg.lengths.burn_in + cfg.lengths.train + cfg.lengths.test;
  const GeneratedSeries data =
      run_generator(cfg.generator, total, derive_seed(cfg.seed, seed_salt::input));
  const TimeSeries teaching = build_teaching(*cfg.task, data);
  const TdrParams params = build_tdr_params(cfg);

  const EmpiricalResult res =
      empirical_readout_nmse(params, data.z, teaching, cfg.lengths, cfg.lambda);

  write_series_csv(out_dir / "input.csv", data.z);
  write_series_csv(out_dir / "teaching.csv", teaching);
  write_series_csv(out_dir / "prediction_test.csv", res.prediction_test);

  json summary;
  summary["task"] = task_json(*cfg.task);
  summary["lambda"] = cfg.lambda;
  summary["train"] = detail::nmse_json(res.train);
  summary["test"] = detail::nmse_json(res.test);
  summary["readout"] = {
      {"weights", std::vector<double>(res.readout.weights.data(),
                                      res.readout.weights.data() + res.readout.weights.size())},
      {"intercept", res.readout.intercept},
      {"lambda", res.readout.lambda},
      {"mask_seed", cfg.reservoir.mask_seed != 0 ? cfg.reservoir.mask_seed
                                                 : derive_seed(cfg.seed, seed_salt::mask)}};
  summary["lengths"] = {{"burn_in", cfg.lengths.burn_in},
                        {"train", cfg.lengths.train},
                        {"test", cfg.lengths.test}};
  summary["seed"] = cfg.seed;
  detail::write_json_file(out_dir / "summary.json", summary);
  detail::write_json_file(out_dir / "resolved_config.json", resolved_config_json(cfg));
}

/// capacity: closed-form capacity of the linearized model on the configured
/// task; writes capacity.json with the report and its components.
inline void cmd_capacity(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  if (!cfg.task) throw ConfigError("capacity: config needs a 'task' block");
  detail::ensure_out_dir(out_dir);

  const TdrParams params = build_tdr_params(cfg);
  const ReservoirModel model = make_reservoir_model(params, cfg.order);
  const MomentData md = build_moment_data(cfg);
  const ClosedFormResult res =
      closed_form_capacity(model, md, *cfg.task, cfg.truncation, cfg.lambda);

  json out = detail::capacity_json(res.report);
  out["mean_y"] = res.mean_y;
  out["task"] = task_json(*cfg.task);
  out["model"] = {{"neurons", model.neurons()},
                  {"order", model.order()},
                  {"fixed_point", model.fixed_point()},
                  {"spectral_radius", model.spectral_radius()}};
  json components;
  components["var_y"] = res.var_y;
  components["cov_yx"] =
      std::vector<double>(res.cov.data(), res.cov.data() + res.cov.size());
  std::vector<std::vector<double>> gamma_rows;
  gamma_rows.reserve(static_cast<std::size_t>(res.gamma0.rows()));
  for (Eigen::Index i = 0; i < res.gamma0.rows(); ++i) {
    const Eigen::RowVectorXd row = res.gamma0.row(i);
    gamma_rows.emplace_back(row.data(), row.data() + row.size());
  }
  components["gamma0"] = gamma_rows;
  out["components"] = components;
  detail::write_json_file(out_dir / "capacity.json", out);
  detail::write_json_file(out_dir / "resolved_config.json", resolved_config_json(cfg));
}

namespace detail {

struct SurfaceCell {
  double v1 = 0.0;
  double v2 = 0.0;
  double empirical = std::numeric_limits<double>::quiet_NaN();
  double closed_form = std::numeric_limits<double>::quiet_NaN();
  std::string empirical_note;
  std::string closed_form_note;
};

inline void apply_axis(ExperimentConfig& cfg, const std::string& name, double value) {
  if (name == "eta") {
    cfg.reservoir.theta.at(0) = value;
  } else if (name == "gamma") {
    cfg.reservoir.theta.at(1) = value;
  } else if (name == "phi") {
    cfg.reservoir.theta.at(2) = value;
  } else if (name == "separation") {
    cfg.reservoir.separation = value;
  } else if (name == "lambda") {
    cfg.lambda = value;
  } else {
    throw ConfigError("surface: unknown axis '" + name + "'");
  }
}

[[nodiscard]] inline double axis_value(const SurfaceAxis& a, int i) {
  return a.min + (a.max - a.min) * static_cast<double>(i) / (a.steps - 1);
}

[[nodiscard]] inline std::string first_line(const char* text) {
  std::string s(text);
  const auto pos = s.find('\n');
  return pos == std::string::npos ? s : s.substr(0, pos);
}

}  // namespace detail

/// surface: sweeps one or two reservoir parameters, scoring the empirical
/// cascade and/or the closed-form model on a shared input sample; writes
/// surface.csv (axis1, axis2, mode, value, note) and surface_summary.json
/// with the argmin cell per mode.
inline void cmd_surface(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                        int workers) {
  if (!cfg.surface) throw ConfigError("surface: config needs a 'surface' block");
  if (!cfg.task) throw ConfigError("surface: config needs a 'task' block");
  detail::ensure_out_dir(out_dir);

  const SurfaceConfig& sc = *cfg.surface;
  const int steps1 = sc.axis1.steps;
  const int steps2 = sc.axis2 ? sc.axis2->steps : 1;
  const bool want_empirical = sc.mode != SurfaceMode::closed_form_model;
  const bool want_closed = sc.mode != SurfaceMode::empirical_tdr;

  // one shared sample and one moment table serve every grid cell
  const std::int64_t total = cfg.lengths.burn_in + cfg.lengths.train + cfg.lengths.test;
  const GeneratedSeries data =
      run_generator(cfg.generator, total, derive_seed(cfg.seed, seed_salt::input));
  const TimeSeries teaching = build_teaching(*cfg.task, data);
  std::optional<MomentData> md;
  if (want_closed) md = build_moment_data(cfg);

  std::vector<detail::SurfaceCell> cells(static_cast<std::size_t>(steps1 * steps2));
  parallel_for(cells.size(), workers, [&](std::size_t idx) {
    const int i1 = static_cast<int>(idx) / steps2;
    const int i2 = static_cast<int>(idx) % steps2;
    detail::SurfaceCell& cell = cells[idx];
    cell.v1 = detail::axis_value(sc.axis1, i1);
    cell.v2 = sc.axis2 ? detail::axis_value(*sc.axis2, i2) : 0.0;

    ExperimentConfig local = cfg;
    detail::apply_axis(local, sc.axis1.name, cell.v1);
    if (sc.axis2) detail::apply_axis(local, sc.axis2->name, cell.v2);

    if (want_empirical) {
      try {
        const TdrParams params = build_tdr_params(local);
        const EmpiricalResult res =
            empirical_readout_nmse(params, data.z, teaching, local.lengths, local.lambda);
        cell.empirical = res.test.nmse;
      } catch (const Error& e) {
        cell.empirical_note = detail::first_line(e.what());
      }
    }
    if (want_closed) {
      try {
        const TdrParams params = build_tdr_params(local);
        const ReservoirModel model = make_reservoir_model(params, local.order);
        const ClosedFormResult res =
            closed_form_capacity(model, *md, *local.task, local.truncation, local.lambda);
        cell.closed_form = res.report.mse / res.report.var_y;
      } catch (const Error& e) {
        cell.closed_form_note = detail::first_line(e.what());
      }
    }
  });

  std::ostringstream csv;
  csv << "axis1,axis2,mode,value,note\n";
  json argmin;
  const auto emit = [&](const char* mode, auto value_of, auto note_of) {
    double best = std::numeric_limits<double>::infinity();
    int best1 = -1;
    int best2 = -1;
    for (int i1 = 0; i1 < steps1; ++i1) {
      for (int i2 = 0; i2 < steps2; ++i2) {
        const auto& cell = cells[static_cast<std::size_t>(i1 * steps2 + i2)];
        const double v = value_of(cell);
        csv << detail::fmt_double(cell.v1) << "," << detail::fmt_double(cell.v2) << "," << mode
            << "," << detail::fmt_double(v) << "," << note_of(cell) << "\n";
        if (std::isfinite(v) && v < best) {
          best = v;
          best1 = i1;
          best2 = i2;
        }
      }
    }
    if (best1 >= 0) {
      argmin[mode] = {{"i1", best1},
                      {"i2", best2},
                      {"axis1", detail::axis_value(sc.axis1, best1)},
                      {"axis2", sc.axis2 ? detail::axis_value(*sc.axis2, best2) : 0.0},
                      {"value", best}};
    } else {
      argmin[mode] = nullptr;
    }
  };
  if (want_empirical) {
    emit("empirical_tdr", [](const detail::SurfaceCell& c) { return c.empirical; },
         [](const detail::SurfaceCell& c) { return c.empirical_note; });
  }
  if (want_closed) {
    emit("closed_form_model", [](const detail::SurfaceCell& c) { return c.closed_form; },
         [](const detail::SurfaceCell& c) { return c.closed_form_note; });
  }

  detail::write_text(out_dir / "surface.csv", csv.str());
  json summary;
  summary["argmin"] = argmin;
  summary["steps1"] = steps1;
  summary["steps2"] = steps2;
  summary["modes"] = (want_empirical ? 1 : 0) + (want_closed ? 1 : 0);
  detail::write_json_file(out_dir / "surface_summary.json", summary);
  detail::write_json_file(out_dir / "resolved_config.json", resolved_config_json(cfg));
}

/// benchmark: one shared stochastic-volatility sample scored three ways
/// (cascade readout, closed-form model, linear filter baseline) across the
/// four volatility transforms; writes benchmark.csv and benchmark_summary.json.
inline void cmd_benchmark(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  const auto* arsv = std::get_if<ArsvModel>(&cfg.generator);
  if (arsv == nullptr) {
    throw ConfigError("benchmark: requires the arsv generator");
  }
  detail::ensure_out_dir(out_dir);

  const std::int64_t total = cfg.lengths.burn_in + cfg.lengths.train + cfg.lengths.test;
  const GeneratedSeries data =
      run_generator(cfg.generator, total, derive_seed(cfg.seed, seed_salt::input));
  const TdrParams params = build_tdr_params(cfg);
  const ReservoirModel model = make_reservoir_model(params, cfg.order);

  const std::int64_t train_begin = data.z.origin + cfg.lengths.burn_in;
  const std::int64_t train_end = train_begin + cfg.lengths.train;
  const std::int64_t test_end = train_end + cfg.lengths.test;

  // moment tables come from the training segment of the shared sample
  TimeSeries z_train;
  z_train.origin = train_begin;
  z_train.values.assign(data.z.values.begin() + (train_begin - data.z.origin),
                        data.z.values.begin() + (train_end - data.z.origin));
  const AutomomentTable auto_table =
      estimate_automoments(z_train, 2 * cfg.order, cfg.moments.max_abs_lag, 0);
  const auto provider = std::make_shared<EmpiricalAutomomentProvider>(auto_table);
  const StateCovarianceResult gamma = state_autocovariance0(model, *provider, cfg.truncation);
  const Eigen::VectorXd mu_eps = epsilon_mean(model, *provider);

  const ArsvKalmanResult kf = arsv_kalman_filter(*arsv, data.z);

  const std::array<VolTarget, 4> targets{VolTarget::volatility, VolTarget::variance,
                                         VolTarget::log_volatility, VolTarget::log_variance};
  json per_target;
  std::ostringstream csv;
  csv << "method";
  for (const VolTarget t : targets) csv << "," << to_string(t);
  csv << "\n";
  std::map<std::string, std::array<double, 4>> rows;

  for (std::size_t ti = 0; ti < targets.size(); ++ti) {
    const VolTarget target = targets[ti];
    const TimeSeries teaching = teaching_from_log_variance(*data.log_variance, target);

    // cascade readout
    const EmpiricalResult rc =
        empirical_readout_nmse(params, data.z, teaching, cfg.lengths, cfg.lambda);
    rows["reservoir_computer"][ti] = rc.test.nmse;

    // closed-form model: filter-task capacity from training-segment moments
    TimeSeries y_train;
    y_train.origin = train_begin;
    y_train.values.assign(teaching.values.begin() + (train_begin - teaching.origin),
                          teaching.values.begin() + (train_end - teaching.origin));
    const ComomentTable comoments = estimate_comoments(
        y_train, z_train, cfg.order, -static_cast<std::int64_t>(cfg.truncation.h_max), 0);
    const Eigen::VectorXd cov =
        filter_task_cov(model, comoments, provider->mean(), mu_eps, cfg.truncation);
    const CapacityReport cap = capacity_from_components(gamma.gamma0, cov,
                                                        series_variance(y_train), cfg.lambda);
    rows["reservoir_model"][ti] = cap.mse / cap.var_y;

    // filter baseline on the test segment; plain transform of the filtered
    // log-variance (the classical benchmark column), no posterior-variance
    // correction
    const TimeSeries kalman_est =
        kalman_estimate_series(kf, target, /*use_filtered=*/true,
                               /*lognormal_correction=*/false);
    TimeSeries kalman_test;
    kalman_test.origin = train_end;
    kalman_test.values.assign(kalman_est.values.begin() + (train_end - kalman_est.origin),
                              kalman_est.values.begin() + (test_end - kalman_est.origin));
    rows["kalman_filter"][ti] = evaluate_nmse_series(kalman_test, teaching).nmse;

    per_target[to_string(target)] = {
        {"reservoir_computer", rows["reservoir_computer"][ti]},
        {"reservoir_model", rows["reservoir_model"][ti]},
        {"kalman_filter", rows["kalman_filter"][ti]},
        {"model_capacity", cap.capacity},
    };
  }

  for (const char* method : {"reservoir_computer", "reservoir_model", "kalman_filter"}) {
    csv << method;
    for (std::size_t ti = 0; ti < targets.size(); ++ti) {
      csv << "," << detail::fmt_double(rows[method][ti]);
    }
    csv << "\n";
  }
  detail::write_text(out_dir / "benchmark.csv", csv.str());

  json summary;
  summary["nmse"] = per_target;
  summary["kalman"] = {{"steady_gain", kf.steady_gain},
                       {"estimates", "filtered, plain transform"}};
  summary["lambda"] = cfg.lambda;
  summary["seed"] = cfg.seed;
  summary["lengths"] = {{"burn_in", cfg.lengths.burn_in},
                        {"train", cfg.lengths.train},
                        {"test", cfg.lengths.test}};
  detail::write_json_file(out_dir / "benchmark_summary.json", summary);
  detail::write_json_file(out_dir / "resolved_config.json", resolved_config_json(cfg));
}

/// check-properties: separation and fading-memory probes on the cascade and
/// on the linearized model (with hypothesis checks and the analytic bound);
/// writes properties.json.
inline void cmd_check_properties(const ExperimentConfig& cfg,
                                 const std::filesystem::path& out_dir) {
  detail::ensure_out_dir(out_dir);
  const PropertiesConfig& pc = cfg.properties;
  const TdrParams params = build_tdr_params(cfg);

  TimeSeries probe_input;
  {
    std::mt19937_64 eng(derive_seed(cfg.seed, seed_salt::properties));
    std::uniform_real_distribution<double> unif(-pc.input_bound, pc.input_bound);
    probe_input.values.resize(static_cast<std::size_t>(pc.input_length));
    for (double& v : probe_input.values) v = unif(eng);
  }

  SeparationProbe sp;
  sp.t_perturb = std::min<std::int64_t>(pc.t_perturb, pc.input_length - 1);
  sp.delta = pc.delta;
  sp.horizon = pc.horizon;
  sp.gap_floor = pc.gap_floor;

  FadingMemoryProbe fp;
  fp.history = pc.history;
  fp.h_eps = pc.h_eps;
  fp.delta_eps = pc.delta_eps;
  fp.epsilon = pc.epsilon;
  fp.input_bound = pc.input_bound;
  fp.trials = pc.trials;

  json out;
  out["probe"] = {{"input_length", pc.input_length}, {"t_perturb", sp.t_perturb},
                  {"delta", sp.delta},               {"horizon", sp.horizon},
                  {"gap_floor", sp.gap_floor},       {"history", fp.history},
                  {"h_eps", fp.h_eps},               {"delta_eps", fp.delta_eps},
                  {"epsilon", fp.epsilon},           {"input_bound", fp.input_bound},
                  {"trials", fp.trials}};

  const auto separation_json = [](const SeparationReport& r) {
    return json{{"pass", r.pass}, {"min_gap", r.min_gap}, {"min_gap_time", r.min_gap_time}};
  };
  const auto fading_json = [](const FadingMemoryReport& r) {
    json j{{"pass", r.pass}, {"max_gap", r.max_gap}, {"violations", r.violations}};
    if (std::isfinite(r.analytic_bound)) {
      j["analytic_bound"] = r.analytic_bound;
      j["a_norm"] = r.a_norm;
      j["bound_respected"] = r.max_gap <= r.analytic_bound;
    }
    return j;
  };

  const SystemRunner cascade = make_system(params, Eigen::VectorXd::Zero(params.neurons));
  out["separation_cascade"] = separation_json(check_separation(cascade, probe_input, sp));
  out["fading_memory_cascade"] =
      fading_json(check_fading_memory(cascade, fp, derive_seed(cfg.seed, seed_salt::properties + 1)));

  const ReservoirModel model = make_reservoir_model(params, cfg.order);
  const ModelHypotheses hyp = check_model_hypotheses(model, pc.input_bound);
  out["model_hypotheses"] = {{"a_nonsingular", hyp.a_nonsingular},
                             {"input_map_injective", hyp.input_map_injective},
                             {"min_abs_eigenvalue", hyp.min_abs_eigenvalue}};
  try {
    out["separation_model"] = separation_json(
        check_separation_model(model, probe_input, sp, pc.input_bound));
  } catch (const HypothesisViolated& e) {
    out["separation_model"] = {{"pass", false}, {"hypothesis_violated", e.what()}};
  }
  try {
    out["fading_memory_model"] = fading_json(check_fading_memory_model(
        model, fp, derive_seed(cfg.seed, seed_salt::properties + 2)));
  } catch (const HypothesisViolated& e) {
    out["fading_memory_model"] = {{"pass", false}, {"hypothesis_violated", e.what()}};
  }

  detail::write_json_file(out_dir / "properties.json", out);
  detail::write_json_file(out_dir / "resolved_config.json", resolved_config_json(cfg));
}

}  // namespace tdrc
