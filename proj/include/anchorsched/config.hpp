#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "anchorsched/env.hpp"
#include "anchorsched/errors.hpp"

namespace anchorsched {

struct TrainingConfig {
  int episodes_per_stage = 10;
  int steps_per_episode = 2000;
  int batch_size = 256;
  std::vector<int> hidden_widths{128, 128, 128};
  std::uint64_t replay_capacity = 100000;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double eps_init = 1.0;
};

struct ExperimentConfig {
  int repetitions = 3;
  double baseline_p_prio = 1e-4;
  double au20_p_prio = 0.2;
  double au100_p_prio = 1.0;
  std::vector<double> anchor_weights{1e5, 1e6, 1e7};
  int eval_runs = 2;
  std::int64_t eval_steps = 20000;
  double eval_p_prio = 1e-3;
};

// Full run description. The environment's p_prio is intentionally not part of
// the schema: each scheduler scenario injects its own value.
struct RunConfig {
  std::string profile = "desk";
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  int jobs = 1;
  double snr_db = 10.0;
  EnvConfig environment;
  TrainingConfig training;
  ExperimentConfig experiment;
};

inline RunConfig default_config(std::string_view profile) {
  RunConfig cfg;
  cfg.environment.p_prio = 0.0;
  cfg.environment.snr_linear = 10.0;
  if (profile == "paper") {
    cfg.training.episodes_per_stage = 30;
    cfg.training.steps_per_episode = 10000;
    cfg.experiment.eval_runs = 5;
    cfg.experiment.eval_steps = 200000;
    cfg.experiment.eval_p_prio = 1e-4;
  } else if (profile == "desk") {
    cfg.training.episodes_per_stage = 10;
    cfg.training.steps_per_episode = 2000;
    cfg.experiment.eval_runs = 2;
    cfg.experiment.eval_steps = 20000;
    cfg.experiment.eval_p_prio = 1e-3;
  } else {
    throw ConfigError("unknown profile '" + std::string(profile) +
                      "' (expected: paper, desk)");
  }
  cfg.profile = std::string(profile);
  return cfg;
}

namespace detail {

inline void check_keys(const nlohmann::json& j,
                       std::initializer_list<std::string_view> allowed,
                       const std::string& scope) {
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (auto a : allowed)
      if (key == a) known = true;
    if (!known) {
      std::string msg = "unknown key '" + key + "' in " + scope + " (allowed:";
      for (auto a : allowed) msg += " " + std::string(a);
      msg += ")";
      throw ConfigError(msg);
    }
  }
}

inline const nlohmann::json& expect_object(const nlohmann::json& j,
                                           const std::string& scope) {
  if (!j.is_object()) throw ConfigError(scope + ": expected an object");
  return j;
}

inline double number_field(const nlohmann::json& v, const std::string& where) {
  if (!v.is_number()) throw ConfigError(where + ": expected a number");
  return v.get<double>();
}

inline std::int64_t int_field(const nlohmann::json& v, const std::string& where) {
  if (!v.is_number_integer()) throw ConfigError(where + ": expected an integer");
  return v.get<std::int64_t>();
}

inline std::uint64_t uint_field(const nlohmann::json& v,
                                const std::string& where) {
  if (!v.is_number_integer())
    throw ConfigError(where + ": expected a non-negative integer");
  if (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)
    throw ConfigError(where + ": expected a non-negative integer");
  return v.get<std::uint64_t>();
}

inline std::string string_field(const nlohmann::json& v,
                                const std::string& where) {
  if (!v.is_string()) throw ConfigError(where + ": expected a string");
  return v.get<std::string>();
}

inline void merge_reward_weights(RewardWeights& w, const nlohmann::json& j) {
  expect_object(j, "environment.reward_weights");
  check_keys(j, {"capacity", "timeout_normal", "timeout_prio"},
             "environment.reward_weights");
  if (j.contains("capacity"))
    w.capacity = number_field(j["capacity"], "environment.reward_weights.capacity");
  if (j.contains("timeout_normal"))
    w.timeout_normal =
        number_field(j["timeout_normal"], "environment.reward_weights.timeout_normal");
  if (j.contains("timeout_prio"))
    w.timeout_prio =
        number_field(j["timeout_prio"], "environment.reward_weights.timeout_prio");
}

inline void merge_environment(RunConfig& cfg, const nlohmann::json& j) {
  expect_object(j, "environment");
  check_keys(j,
             {"num_users", "total_blocks", "max_init_blocks", "max_delay",
              "p_job", "snr_db", "rayleigh_scale", "reward_weights"},
             "environment");
  EnvConfig& e = cfg.environment;
  if (j.contains("num_users"))
    e.num_users = static_cast<int>(int_field(j["num_users"], "environment.num_users"));
  if (j.contains("total_blocks"))
    e.total_blocks =
        static_cast<int>(int_field(j["total_blocks"], "environment.total_blocks"));
  if (j.contains("max_init_blocks"))
    e.max_init_blocks = static_cast<int>(
        int_field(j["max_init_blocks"], "environment.max_init_blocks"));
  if (j.contains("max_delay"))
    e.max_delay = static_cast<int>(int_field(j["max_delay"], "environment.max_delay"));
  if (j.contains("p_job")) e.p_job = number_field(j["p_job"], "environment.p_job");
  if (j.contains("snr_db")) {
    cfg.snr_db = number_field(j["snr_db"], "environment.snr_db");
    e.snr_linear = std::pow(10.0, cfg.snr_db / 10.0);
  }
  if (j.contains("rayleigh_scale"))
    e.rayleigh_scale =
        number_field(j["rayleigh_scale"], "environment.rayleigh_scale");
  if (j.contains("reward_weights"))
    merge_reward_weights(e.reward_weights, j["reward_weights"]);
}

inline void merge_training(TrainingConfig& t, const nlohmann::json& j) {
  expect_object(j, "training");
  check_keys(j,
             {"episodes_per_stage", "steps_per_episode", "batch_size",
              "hidden_widths", "replay_capacity", "learning_rate", "adam_beta1",
              "adam_beta2", "adam_epsilon", "eps_init"},
             "training");
  if (j.contains("episodes_per_stage"))
    t.episodes_per_stage = static_cast<int>(
        int_field(j["episodes_per_stage"], "training.episodes_per_stage"));
  if (j.contains("steps_per_episode"))
    t.steps_per_episode = static_cast<int>(
        int_field(j["steps_per_episode"], "training.steps_per_episode"));
  if (j.contains("batch_size"))
    t.batch_size = static_cast<int>(int_field(j["batch_size"], "training.batch_size"));
  if (j.contains("hidden_widths")) {
    const auto& arr = j["hidden_widths"];
    if (!arr.is_array() || arr.empty())
      throw ConfigError("training.hidden_widths: expected a non-empty array");
    t.hidden_widths.clear();
    for (std::size_t i = 0; i < arr.size(); ++i)
      t.hidden_widths.push_back(static_cast<int>(int_field(
          arr[i], "training.hidden_widths[" + std::to_string(i) + "]")));
  }
  if (j.contains("replay_capacity"))
    t.replay_capacity = uint_field(j["replay_capacity"], "training.replay_capacity");
  if (j.contains("learning_rate"))
    t.learning_rate = number_field(j["learning_rate"], "training.learning_rate");
  if (j.contains("adam_beta1"))
    t.adam_beta1 = number_field(j["adam_beta1"], "training.adam_beta1");
  if (j.contains("adam_beta2"))
    t.adam_beta2 = number_field(j["adam_beta2"], "training.adam_beta2");
  if (j.contains("adam_epsilon"))
    t.adam_epsilon = number_field(j["adam_epsilon"], "training.adam_epsilon");
  if (j.contains("eps_init"))
    t.eps_init = number_field(j["eps_init"], "training.eps_init");
}

inline void merge_experiment(ExperimentConfig& e, const nlohmann::json& j) {
  expect_object(j, "experiment");
  check_keys(j,
             {"repetitions", "baseline_p_prio", "au20_p_prio", "au100_p_prio",
              "anchor_weights", "eval_runs", "eval_steps", "eval_p_prio"},
             "experiment");
  if (j.contains("repetitions"))
    e.repetitions =
        static_cast<int>(int_field(j["repetitions"], "experiment.repetitions"));
  if (j.contains("baseline_p_prio"))
    e.baseline_p_prio =
        number_field(j["baseline_p_prio"], "experiment.baseline_p_prio");
  if (j.contains("au20_p_prio"))
    e.au20_p_prio = number_field(j["au20_p_prio"], "experiment.au20_p_prio");
  if (j.contains("au100_p_prio"))
    e.au100_p_prio = number_field(j["au100_p_prio"], "experiment.au100_p_prio");
  if (j.contains("anchor_weights")) {
    const auto& arr = j["anchor_weights"];
    if (!arr.is_array())
      throw ConfigError("experiment.anchor_weights: expected an array");
    e.anchor_weights.clear();
    for (std::size_t i = 0; i < arr.size(); ++i)
      e.anchor_weights.push_back(number_field(
          arr[i], "experiment.anchor_weights[" + std::to_string(i) + "]"));
  }
  if (j.contains("eval_runs"))
    e.eval_runs = static_cast<int>(int_field(j["eval_runs"], "experiment.eval_runs"));
  if (j.contains("eval_steps"))
    e.eval_steps = int_field(j["eval_steps"], "experiment.eval_steps");
  if (j.contains("eval_p_prio"))
    e.eval_p_prio = number_field(j["eval_p_prio"], "experiment.eval_p_prio");
}

}  // namespace detail

// Overlays a (possibly partial) JSON document onto an existing configuration.
// Unknown keys anywhere are an error, as are type mismatches.
inline void merge_json(RunConfig& cfg, const nlohmann::json& j) {
  detail::expect_object(j, "configuration root");
  detail::check_keys(j,
                     {"profile", "seed", "output_dir", "jobs", "environment",
                      "training", "experiment"},
                     "configuration root");
  if (j.contains("profile")) {
    const std::string p = detail::string_field(j["profile"], "profile");
    if (p != "paper" && p != "desk")
      throw ConfigError("profile: expected 'paper' or 'desk', got '" + p + "'");
    cfg.profile = p;
  }
  if (j.contains("seed")) cfg.seed = detail::uint_field(j["seed"], "seed");
  if (j.contains("output_dir"))
    cfg.output_dir = detail::string_field(j["output_dir"], "output_dir");
  if (j.contains("jobs"))
    cfg.jobs = static_cast<int>(detail::int_field(j["jobs"], "jobs"));
  if (j.contains("environment")) detail::merge_environment(cfg, j["environment"]);
  if (j.contains("training")) detail::merge_training(cfg.training, j["training"]);
  if (j.contains("experiment"))
    detail::merge_experiment(cfg.experiment, j["experiment"]);
}

// Full cross-field validation; call after all overlays are applied.
inline void validate_run_config(const RunConfig& cfg) {
  validate(cfg.environment);
  const TrainingConfig& t = cfg.training;
  if (t.episodes_per_stage < 1)
    throw ConfigError("training.episodes_per_stage must be >= 1");
  if (t.steps_per_episode < 1)
    throw ConfigError("training.steps_per_episode must be >= 1");
  if (t.batch_size < 1) throw ConfigError("training.batch_size must be >= 1");
  for (int h : t.hidden_widths)
    if (h < 1) throw ConfigError("training.hidden_widths entries must be >= 1");
  if (t.replay_capacity < static_cast<std::uint64_t>(t.batch_size))
    throw ConfigError("training.replay_capacity must hold at least one batch");
  if (!(t.learning_rate > 0.0))
    throw ConfigError("training.learning_rate must be > 0");
  if (!(t.adam_beta1 >= 0.0 && t.adam_beta1 < 1.0))
    throw ConfigError("training.adam_beta1 must be in [0, 1)");
  if (!(t.adam_beta2 >= 0.0 && t.adam_beta2 < 1.0))
    throw ConfigError("training.adam_beta2 must be in [0, 1)");
  if (!(t.adam_epsilon > 0.0))
    throw ConfigError("training.adam_epsilon must be > 0");
  if (!(t.eps_init >= 0.0 && t.eps_init <= 1.0))
    throw ConfigError("training.eps_init must be in [0, 1]");

  const ExperimentConfig& e = cfg.experiment;
  if (e.repetitions < 1) throw ConfigError("experiment.repetitions must be >= 1");
  auto check_p = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0))
      throw ConfigError(std::string("experiment.") + name +
                        " must be in [0, 1]");
  };
  check_p(e.baseline_p_prio, "baseline_p_prio");
  check_p(e.au20_p_prio, "au20_p_prio");
  check_p(e.au100_p_prio, "au100_p_prio");
  check_p(e.eval_p_prio, "eval_p_prio");
  if (e.anchor_weights.size() != 3)
    throw ConfigError("experiment.anchor_weights must list exactly 3 values");
  for (double w : e.anchor_weights)
    if (!(w > 0.0))
      throw ConfigError("experiment.anchor_weights entries must be > 0");
  if (e.eval_runs < 1) throw ConfigError("experiment.eval_runs must be >= 1");
  if (e.eval_steps < 1) throw ConfigError("experiment.eval_steps must be >= 1");

  if (cfg.jobs < 1) throw ConfigError("jobs must be >= 1");
  if (cfg.output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

// Schema-shaped echo of a configuration; merge_json(default, to_json(cfg))
// reproduces cfg.
inline nlohmann::json to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["profile"] = cfg.profile;
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir;
  j["jobs"] = cfg.jobs;
  j["environment"] = {
      {"num_users", cfg.environment.num_users},
      {"total_blocks", cfg.environment.total_blocks},
      {"max_init_blocks", cfg.environment.max_init_blocks},
      {"max_delay", cfg.environment.max_delay},
      {"p_job", cfg.environment.p_job},
      {"snr_db", cfg.snr_db},
      {"rayleigh_scale", cfg.environment.rayleigh_scale},
      {"reward_weights",
       {{"capacity", cfg.environment.reward_weights.capacity},
        {"timeout_normal", cfg.environment.reward_weights.timeout_normal},
        {"timeout_prio", cfg.environment.reward_weights.timeout_prio}}},
  };
  j["training"] = {
      {"episodes_per_stage", cfg.training.episodes_per_stage},
      {"steps_per_episode", cfg.training.steps_per_episode},
      {"batch_size", cfg.training.batch_size},
      {"hidden_widths", cfg.training.hidden_widths},
      {"replay_capacity", cfg.training.replay_capacity},
      {"learning_rate", cfg.training.learning_rate},
      {"adam_beta1", cfg.training.adam_beta1},
      {"adam_beta2", cfg.training.adam_beta2},
      {"adam_epsilon", cfg.training.adam_epsilon},
      {"eps_init", cfg.training.eps_init},
  };
  j["experiment"] = {
      {"repetitions", cfg.experiment.repetitions},
      {"baseline_p_prio", cfg.experiment.baseline_p_prio},
      {"au20_p_prio", cfg.experiment.au20_p_prio},
      {"au100_p_prio", cfg.experiment.au100_p_prio},
      {"anchor_weights", cfg.experiment.anchor_weights},
      {"eval_runs", cfg.experiment.eval_runs},
      {"eval_steps", cfg.experiment.eval_steps},
      {"eval_p_prio", cfg.experiment.eval_p_prio},
  };
  return j;
}

// Loads a config file on top of profile defaults. The base profile comes from
// `profile_override` when given, otherwise from the file's own "profile" key,
// otherwise "desk".
inline RunConfig load_config_file(const std::string& path,
                                  std::optional<std::string> profile_override =
                                      std::nullopt) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  detail::expect_object(j, path);
  std::string profile = "desk";
  if (j.contains("profile"))
    profile = detail::string_field(j["profile"], "profile");
  if (profile_override) profile = *profile_override;
  RunConfig cfg = default_config(profile);
  merge_json(cfg, j);
  cfg.profile = profile;
  return cfg;
}

// Environment-variable overlay. Names use the ANCHORSCHED_ prefix; a double
// underscore descends one level. ANCHORSCHED_TRAINING__BATCH_SIZE=64 maps to
// {"training": {"batch_size": 64}}. Values parse as JSON when possible and
// fall back to strings.
inline void apply_env_overrides(
    RunConfig& cfg,
    const std::vector<std::pair<std::string, std::string>>& env) {
  constexpr std::string_view prefix = "ANCHORSCHED_";
  nlohmann::json overlay = nlohmann::json::object();
  for (const auto& [name, value] : env) {
    if (name.rfind(prefix, 0) != 0) continue;
    std::string path = name.substr(prefix.size());
    for (auto& c : path) c = static_cast<char>(std::tolower(c));
    std::string pointer = "/";
    for (std::size_t i = 0; i < path.size(); ++i) {
      if (i + 1 < path.size() && path[i] == '_' && path[i + 1] == '_') {
        pointer += '/';
        ++i;
      } else {
        pointer += path[i];
      }
    }
    nlohmann::json parsed;
    try {
      parsed = nlohmann::json::parse(value);
    } catch (const nlohmann::json::parse_error&) {
      parsed = value;
    }
    overlay[nlohmann::json::json_pointer(pointer)] = parsed;
  }
  if (!overlay.empty()) merge_json(cfg, overlay);
}

}  // namespace anchorsched
