#pragma once

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "anchorsched/agent.hpp"
#include "anchorsched/config.hpp"
#include "anchorsched/env.hpp"
#include "anchorsched/errors.hpp"
#include "anchorsched/rng.hpp"
#include "anchorsched/version.hpp"

namespace anchorsched {

// ---------------------------------------------------------------------------
// Protocol description
// ---------------------------------------------------------------------------

// One scheduler cell of the study. Level encodes checkpoint dependencies:
// level-N cells only read checkpoints produced by levels < N.
struct SchedulerSpec {
  std::string id;
  double train_p_prio = 0.0;
  int episodes = 0;
  int level = 0;
  std::optional<std::string> init_from;  // parent checkpoint to start from
  struct AnchorSpec {
    std::string source;  // scheduler whose final actor becomes the reference
    double weight = 0.0;
  };
  std::optional<AnchorSpec> anchor;  // take a fresh anchor from `source`
  bool keep_anchor = false;          // keep the anchor carried by init_from
};

// The eight-cell design: three first-stage schedulers trained from scratch,
// four second-stage variants continuing from their checkpoints, and one
// third-stage continuation probing what the anchored learner retains. The
// high-priority-rate scheduler without a second training stage (AU20) runs
// twice the episodes so its total budget matches the two-stage pipelines.
inline std::vector<SchedulerSpec> build_protocol(const RunConfig& cfg) {
  const int e = cfg.training.episodes_per_stage;
  const ExperimentConfig& x = cfg.experiment;
  if (x.anchor_weights.size() != 3)
    throw ConfigError("experiment.anchor_weights: expected exactly 3 values");
  std::vector<SchedulerSpec> p;
  p.push_back({"BS", x.baseline_p_prio, e, 0, std::nullopt, std::nullopt, false});
  p.push_back({"AU20", x.au20_p_prio, 2 * e, 0, std::nullopt, std::nullopt, false});
  p.push_back({"AU100", x.au100_p_prio, e, 0, std::nullopt, std::nullopt, false});
  for (int i = 0; i < 3; ++i) {
    p.push_back({"AN" + std::to_string(i + 1), x.baseline_p_prio, e, 1, "AU100",
                 SchedulerSpec::AnchorSpec{"AU100", x.anchor_weights
                                                         [static_cast<std::size_t>(i)]},
                 false});
  }
  p.push_back({"AU20+", 0.0, e, 1, "AU20", std::nullopt, false});
  p.push_back({"AN1+", 0.0, e, 2, "AN1", std::nullopt, true});
  return p;
}

// ---------------------------------------------------------------------------
// Seed lineage
// ---------------------------------------------------------------------------

inline std::uint64_t cell_seed(std::uint64_t master, int repetition,
                               std::string_view scheduler) {
  return derive_seed(master, {static_cast<std::uint64_t>(repetition),
                              fnv1a64(scheduler)});
}

inline std::uint64_t stream_seed(std::uint64_t cell, std::string_view purpose) {
  return derive_seed(cell, {fnv1a64(purpose)});
}

// ---------------------------------------------------------------------------
// Training and evaluation
// ---------------------------------------------------------------------------

template <typename Scalar>
AgentConfig<Scalar> make_agent_config(const RunConfig& cfg,
                                      const SchedulerSpec& spec) {
  AgentConfig<Scalar> a;
  a.num_users = cfg.environment.num_users;
  a.feature_width = 4 * cfg.environment.num_users;
  a.hidden_widths = cfg.training.hidden_widths;
  a.batch_size = cfg.training.batch_size;
  a.replay_capacity = cfg.training.replay_capacity;
  a.actor_adam = {cfg.training.learning_rate, cfg.training.adam_beta1,
                  cfg.training.adam_beta2, cfg.training.adam_epsilon};
  a.critic_adam = a.actor_adam;
  a.exploration.eps_init = cfg.training.eps_init;
  a.exploration.decay_steps = static_cast<std::int64_t>(spec.episodes) *
                              cfg.training.steps_per_episode / 2;
  return a;
}

struct EpisodeLog {
  int episode = 0;
  double mean_reward = 0.0;
  double mean_critic_loss = 0.0;
  double mean_actor_objective = 0.0;
  double anchor_penalty = 0.0;  // at episode end
  double epsilon = 0.0;         // at episode end
  std::int64_t updates = 0;
  std::int64_t prio_events = 0;
  std::int64_t timeouts_prio = 0;
};

// Runs the training stage described by `spec` on `agent`, which must already
// be staged (initialized or loaded, optimizers/memory/exploration fresh).
// Episode resets reseed the environment; replay memory persists across
// episodes within the stage.
template <typename Scalar>
std::vector<EpisodeLog> train_scheduler(
    const RunConfig& cfg, const SchedulerSpec& spec, Agent<Scalar>& agent,
    std::uint64_t cell,
    const std::function<void(const EpisodeLog&)>& on_episode = {}) {
  EnvConfig ec = cfg.environment;
  ec.p_prio = spec.train_p_prio;
  validate(ec);
  Environment env(ec);

  const std::uint64_t env_base = stream_seed(cell, "env");
  RandomStream explore(stream_seed(cell, "explore"));
  RandomStream learn(stream_seed(cell, "learn"));

  std::vector<EpisodeLog> logs;
  logs.reserve(static_cast<std::size_t>(spec.episodes));
  for (int ep = 0; ep < spec.episodes; ++ep) {
    env.reset(derive_seed(env_base, {static_cast<std::uint64_t>(ep)}));
    EpisodeLog log;
    log.episode = ep;
    double reward_sum = 0.0, loss_sum = 0.0, objective_sum = 0.0;
    for (int t = 0; t < cfg.training.steps_per_episode; ++t) {
      FeatureVector features = env.observe();
      for (double f : features)
        if (!std::isfinite(f) || f < 0.0)
          throw ContractError("non-finite or negative feature during training");
      std::vector<double> action = agent.act_explore(features, explore);
      StepOutcome out = env.step(action);
      if (!std::isfinite(out.reward))
        throw ContractError("non-finite reward during training");
      reward_sum += out.reward;
      log.prio_events += out.prio_events;
      log.timeouts_prio += out.timeouts_prio;
      agent.record(std::move(features), std::move(action), out.reward);
      LearnReport rep = agent.learn_step(learn);
      if (rep.updated) {
        if (!std::isfinite(rep.critic_loss))
          throw ContractError("non-finite critic loss during training");
        ++log.updates;
        loss_sum += rep.critic_loss;
        objective_sum += rep.actor_objective;
      }
    }
    log.mean_reward = reward_sum / cfg.training.steps_per_episode;
    if (log.updates > 0) {
      log.mean_critic_loss = loss_sum / static_cast<double>(log.updates);
      log.mean_actor_objective = objective_sum / static_cast<double>(log.updates);
    }
    log.anchor_penalty = agent.anchor_penalty();
    log.epsilon = agent.config().exploration.epsilon_at(agent.act_steps());
    logs.push_back(log);
    if (on_episode) on_episode(log);
  }
  return logs;
}

struct EvalTotals {
  std::int64_t steps = 0;
  double reward_sum = 0.0;
  double capacity_sum = 0.0;
  std::int64_t timeouts_normal = 0;
  std::int64_t timeouts_prio = 0;
  std::int64_t prio_events = 0;
};

template <typename Scalar>
std::uint64_t param_hash(const Agent<Scalar>& agent) {
  const auto a = agent.actor().params();
  const auto c = agent.critic().params();
  const std::uint64_t ha = fnv1a64(std::string_view(
      reinterpret_cast<const char*>(a.data()), a.size() * sizeof(Scalar)));
  const std::uint64_t hc = fnv1a64(std::string_view(
      reinterpret_cast<const char*>(c.data()), c.size() * sizeof(Scalar)));
  return derive_seed(ha, {hc});
}

// Frozen-policy evaluation: eval_runs independent environment streams, greedy
// actions only. The agent is checked to be bit-identical afterwards.
template <typename Scalar>
EvalTotals evaluate_scheduler(const RunConfig& cfg, Agent<Scalar>& agent,
                              std::uint64_t eval_base) {
  EnvConfig ec = cfg.environment;
  ec.p_prio = cfg.experiment.eval_p_prio;
  validate(ec);
  Environment env(ec);

  const std::uint64_t before = param_hash(agent);
  EvalTotals totals;
  for (int run = 0; run < cfg.experiment.eval_runs; ++run) {
    env.reset(derive_seed(eval_base, {static_cast<std::uint64_t>(run)}));
    for (std::int64_t t = 0; t < cfg.experiment.eval_steps; ++t) {
      FeatureVector features = env.observe();
      std::vector<double> action = agent.act_greedy(features);
      StepOutcome out = env.step(action);
      ++totals.steps;
      totals.reward_sum += out.reward;
      totals.capacity_sum += out.capacity;
      totals.timeouts_normal += out.timeouts_normal;
      totals.timeouts_prio += out.timeouts_prio;
      totals.prio_events += out.prio_events;
    }
  }
  if (param_hash(agent) != before)
    throw ContractError("evaluation mutated the agent");
  return totals;
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

struct ResultRow {
  std::string scheduler;
  int repetition = 0;
  std::uint64_t seed = 0;  // evaluation stream seed of this cell
  double eval_reward_mean = 0.0;
  double capacity_sum = 0.0;
  std::int64_t timeouts_normal = 0;
  std::int64_t timeouts_prio = 0;
  std::int64_t prio_events = 0;
  double reward_norm_bs = 0.0;
  double prio_timeout_norm_bs = 0.0;
};

// Share of priority designations that ended in a timeout.
inline double prio_timeout_rate(std::int64_t timeouts_prio,
                                std::int64_t prio_events) {
  return static_cast<double>(timeouts_prio) /
         static_cast<double>(std::max<std::int64_t>(1, prio_events));
}

inline double prio_timeout_rate(const ResultRow& row) {
  return prio_timeout_rate(row.timeouts_prio, row.prio_events);
}

struct Moments {
  double mean = 0.0;
  double variance = 0.0;  // population variance (divides by n)
};

inline Moments moments(const std::vector<double>& xs) {
  if (xs.empty()) throw ContractError("moments of an empty sample");
  Moments m;
  for (double x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  for (double x : xs) m.variance += (x - m.mean) * (x - m.mean);
  m.variance /= static_cast<double>(xs.size());
  return m;
}

inline double safe_ratio(double numerator, double denominator) {
  if (denominator != 0.0) return numerator / denominator;
  return numerator == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
}

// Fills the *_norm_bs columns: every row is scaled by the mean of the
// baseline scheduler's repetitions.
inline void normalize_to_baseline(std::vector<ResultRow>& rows,
                                  std::string_view baseline_id = "BS") {
  std::vector<double> bs_rewards, bs_rates;
  for (const ResultRow& r : rows) {
    if (r.scheduler == baseline_id) {
      bs_rewards.push_back(r.eval_reward_mean);
      bs_rates.push_back(prio_timeout_rate(r));
    }
  }
  if (bs_rewards.empty())
    throw ProtocolError("cannot normalize: no '" + std::string(baseline_id) +
                        "' rows present");
  const double bs_reward = moments(bs_rewards).mean;
  const double bs_rate = moments(bs_rates).mean;
  for (ResultRow& r : rows) {
    r.reward_norm_bs = safe_ratio(r.eval_reward_mean, bs_reward);
    r.prio_timeout_norm_bs = safe_ratio(prio_timeout_rate(r), bs_rate);
  }
}

// Shortest round-trip decimal form; deterministic across runs and platforms
// that implement to_chars correctly.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string format_int(std::int64_t v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string format_uint(std::uint64_t v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline constexpr std::string_view kCsvHeader =
    "scheduler,repetition,seed,eval_reward_mean,capacity_sum,timeouts_normal,"
    "timeouts_prio,prio_events,reward_norm_bs,prio_timeout_norm_bs";

// Rows are emitted in the order given; callers construct them in protocol
// order so the bytes are reproducible.
inline std::string to_csv(const std::vector<ResultRow>& rows) {
  std::string out(kCsvHeader);
  out += '\n';
  for (const ResultRow& r : rows) {
    out += r.scheduler;
    out += ',';
    out += format_int(r.repetition);
    out += ',';
    out += format_uint(r.seed);
    out += ',';
    out += format_double(r.eval_reward_mean);
    out += ',';
    out += format_double(r.capacity_sum);
    out += ',';
    out += format_int(r.timeouts_normal);
    out += ',';
    out += format_int(r.timeouts_prio);
    out += ',';
    out += format_int(r.prio_events);
    out += ',';
    out += format_double(r.reward_norm_bs);
    out += ',';
    out += format_double(r.prio_timeout_norm_bs);
    out += '\n';
  }
  return out;
}

inline nlohmann::json report_json(const std::vector<ResultRow>& rows,
                                  const std::vector<SchedulerSpec>& protocol) {
  nlohmann::json per_scheduler = nlohmann::json::object();
  for (const SchedulerSpec& spec : protocol) {
    std::vector<double> rewards, rates, reward_norms, rate_norms;
    nlohmann::json reps = nlohmann::json::array();
    for (const ResultRow& r : rows) {
      if (r.scheduler != spec.id) continue;
      rewards.push_back(r.eval_reward_mean);
      rates.push_back(prio_timeout_rate(r));
      reward_norms.push_back(r.reward_norm_bs);
      rate_norms.push_back(r.prio_timeout_norm_bs);
      reps.push_back({{"repetition", r.repetition},
                      {"seed", r.seed},
                      {"eval_reward_mean", r.eval_reward_mean},
                      {"capacity_sum", r.capacity_sum},
                      {"timeouts_normal", r.timeouts_normal},
                      {"timeouts_prio", r.timeouts_prio},
                      {"prio_events", r.prio_events},
                      {"prio_timeout_rate", prio_timeout_rate(r)},
                      {"reward_norm_bs", r.reward_norm_bs},
                      {"prio_timeout_norm_bs", r.prio_timeout_norm_bs}});
    }
    if (rewards.empty()) continue;
    const Moments mr = moments(rewards);
    const Moments mt = moments(rates);
    per_scheduler[spec.id] = {
        {"reward", {{"mean", mr.mean}, {"variance", mr.variance}}},
        {"prio_timeout_rate", {{"mean", mt.mean}, {"variance", mt.variance}}},
        {"reward_norm_bs_mean", moments(reward_norms).mean},
        {"prio_timeout_norm_bs_mean", moments(rate_norms).mean},
        {"repetitions", reps}};
  }
  return {{"baseline", "BS"}, {"schedulers", per_scheduler}};
}

// ---------------------------------------------------------------------------
// File-based protocol runner
// ---------------------------------------------------------------------------

namespace detail {

inline void write_file_atomic(const std::filesystem::path& path,
                              std::string_view content) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace detail

// Drives the full study over a directory tree:
//   <output_dir>/manifest.json
//   <output_dir>/cells/<scheduler>_rep<k>/{checkpoint.bin,train_log.jsonl,eval.json}
//   <output_dir>/results.csv, <output_dir>/report.json
// Completed cells (all three artifacts present) are skipped, so interrupted
// studies resume where they stopped. Cells are independent given their
// parents' checkpoints; within a dependency level they may run concurrently.
template <typename Scalar>
class ProtocolRunner {
 public:
  explicit ProtocolRunner(RunConfig cfg) : cfg_(std::move(cfg)) {
    validate_run_config(cfg_);
    protocol_ = build_protocol(cfg_);
    out_ = std::filesystem::path(cfg_.output_dir);
  }

  const RunConfig& config() const { return cfg_; }
  const std::vector<SchedulerSpec>& protocol() const { return protocol_; }

  // Progress lines go to `sink` when verbosity >= 1; per-episode summaries
  // additionally when verbosity >= 2. The sink is called under a lock, so it
  // may write to a shared stream.
  void set_logger(std::function<void(const std::string&)> sink, int verbosity) {
    log_sink_ = std::move(sink);
    verbosity_ = verbosity;
  }

  std::filesystem::path cell_dir(std::string_view scheduler, int rep) const {
    return out_ / "cells" /
           (std::string(scheduler) + "_rep" + std::to_string(rep));
  }
  std::filesystem::path checkpoint_path(std::string_view scheduler, int rep) const {
    return cell_dir(scheduler, rep) / "checkpoint.bin";
  }
  std::filesystem::path csv_path() const { return out_ / "results.csv"; }
  std::filesystem::path report_path() const { return out_ / "report.json"; }
  std::filesystem::path manifest_path() const { return out_ / "manifest.json"; }

  const SchedulerSpec& spec_by_id(std::string_view id) const {
    for (const SchedulerSpec& s : protocol_)
      if (s.id == id) return s;
    throw ProtocolError("unknown scheduler '" + std::string(id) + "'");
  }

  bool cell_complete(const SchedulerSpec& spec, int rep) const {
    namespace fs = std::filesystem;
    const fs::path dir = cell_dir(spec.id, rep);
    return fs::exists(dir / "checkpoint.bin") && fs::exists(dir / "eval.json") &&
           fs::exists(dir / "train_log.jsonl");
  }

  // Builds the agent a cell starts its stage with: either freshly initialized
  // or the parent checkpoint with optimizers, memory, and exploration reset.
  Agent<Scalar> prepare_agent(const SchedulerSpec& spec, int rep) const {
    AgentConfig<Scalar> acfg = make_agent_config<Scalar>(cfg_, spec);
    const std::uint64_t cell = cell_seed(cfg_.seed, rep, spec.id);
    if (!spec.init_from) {
      Agent<Scalar> agent(acfg);
      RandomStream init(stream_seed(cell, "init"));
      agent.init_params(init);
      return agent;
    }
    const std::filesystem::path parent = checkpoint_path(*spec.init_from, rep);
    if (!std::filesystem::exists(parent))
      throw ProtocolError("missing artifact " + parent.string() + ": train '" +
                          *spec.init_from + "' before '" + spec.id + "'");
    std::ifstream in(parent, std::ios::binary);
    if (!in) throw IoError("cannot open " + parent.string());
    Agent<Scalar> agent = io::load_agent<Scalar>(in, acfg);

    std::optional<AnchorSet<Scalar>> fresh_anchor;
    if (spec.anchor) {
      if (*spec.init_from != spec.anchor->source)
        throw ProtocolError("anchor source must match init_from for '" +
                            spec.id + "'");
      fresh_anchor = agent.snapshot_anchor(spec.anchor->weight);
    }
    agent.start_stage(acfg.exploration);
    if (fresh_anchor) {
      agent.set_anchor(std::move(*fresh_anchor));
    } else if (!spec.keep_anchor) {
      agent.clear_anchor();
    }
    return agent;
  }

  // Trains and evaluates one cell, writing its artifacts. Skips silently when
  // the cell is already complete.
  void run_cell(const SchedulerSpec& spec, int rep) const {
    const std::string tag = "[" + spec.id + " rep" + std::to_string(rep) + "]";
    if (cell_complete(spec, rep)) {
      log(1, tag + " complete, skipping");
      return;
    }
    std::filesystem::create_directories(cell_dir(spec.id, rep));
    log(1, tag + " training " + std::to_string(spec.episodes) + " episodes x " +
               std::to_string(cfg_.training.steps_per_episode) + " steps");

    Agent<Scalar> agent = prepare_agent(spec, rep);
    const std::uint64_t cell = cell_seed(cfg_.seed, rep, spec.id);
    const std::vector<EpisodeLog> logs = train_scheduler(
        cfg_, spec, agent, cell, [&](const EpisodeLog& l) {
          log(2, tag + " episode " + std::to_string(l.episode + 1) + "/" +
                     std::to_string(spec.episodes) + ": reward " +
                     format_double(l.mean_reward) + ", critic loss " +
                     format_double(l.mean_critic_loss) + ", eps " +
                     format_double(l.epsilon));
        });

    std::string jsonl;
    for (const EpisodeLog& log : logs) {
      nlohmann::json j{{"episode", log.episode},
                       {"mean_reward", log.mean_reward},
                       {"mean_critic_loss", log.mean_critic_loss},
                       {"mean_actor_objective", log.mean_actor_objective},
                       {"anchor_penalty", log.anchor_penalty},
                       {"epsilon", log.epsilon},
                       {"updates", log.updates},
                       {"prio_events", log.prio_events},
                       {"timeouts_prio", log.timeouts_prio}};
      jsonl += j.dump();
      jsonl += '\n';
    }
    detail::write_file_atomic(cell_dir(spec.id, rep) / "train_log.jsonl", jsonl);

    {
      std::ostringstream blob;
      io::save_agent(blob, agent);
      detail::write_file_atomic(checkpoint_path(spec.id, rep), blob.str());
    }

    const std::uint64_t eval_base = stream_seed(cell, "eval");
    const EvalTotals totals = evaluate_scheduler(cfg_, agent, eval_base);
    nlohmann::json ej{{"scheduler", spec.id},
                      {"repetition", rep},
                      {"seed", eval_base},
                      {"steps", totals.steps},
                      {"reward_sum", totals.reward_sum},
                      {"capacity_sum", totals.capacity_sum},
                      {"timeouts_normal", totals.timeouts_normal},
                      {"timeouts_prio", totals.timeouts_prio},
                      {"prio_events", totals.prio_events}};
    detail::write_file_atomic(cell_dir(spec.id, rep) / "eval.json",
                              ej.dump(2) + "\n");
    log(1, tag + " eval: mean reward " +
               format_double(totals.reward_sum /
                             static_cast<double>(totals.steps)) +
               ", prio timeouts " + format_int(totals.timeouts_prio) + "/" +
               format_int(totals.prio_events));
  }

  // Runs every cell level by level. Within a level, up to cfg.jobs cells run
  // concurrently; levels are barriers so parents finish before dependents.
  void run_all_cells() const {
    int max_level = 0;
    for (const SchedulerSpec& s : protocol_) max_level = std::max(max_level, s.level);
    for (int level = 0; level <= max_level; ++level) {
      std::vector<std::pair<const SchedulerSpec*, int>> tasks;
      for (const SchedulerSpec& s : protocol_) {
        if (s.level != level) continue;
        for (int rep = 0; rep < cfg_.experiment.repetitions; ++rep)
          tasks.emplace_back(&s, rep);
      }
      const int workers = std::max(
          1, std::min<int>(cfg_.jobs, static_cast<int>(tasks.size())));
      if (workers == 1) {
        for (auto& [spec, rep] : tasks) run_cell(*spec, rep);
        continue;
      }
      std::atomic<std::size_t> next{0};
      std::mutex failure_mutex;
      std::exception_ptr failure;
      auto worker = [&] {
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= tasks.size()) return;
          {
            std::lock_guard<std::mutex> lock(failure_mutex);
            if (failure) return;
          }
          try {
            run_cell(*tasks[i].first, tasks[i].second);
          } catch (...) {
            std::lock_guard<std::mutex> lock(failure_mutex);
            if (!failure) failure = std::current_exception();
            return;
          }
        }
      };
      std::vector<std::thread> pool;
      pool.reserve(static_cast<std::size_t>(workers));
      for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
      for (std::thread& t : pool) t.join();
      if (failure) std::rethrow_exception(failure);
    }
  }

  // Reads every cell's evaluation artifact into result rows (protocol order,
  // repetitions ascending) and fills the normalized columns.
  std::vector<ResultRow> collect_rows() const {
    std::vector<ResultRow> rows;
    for (const SchedulerSpec& spec : protocol_) {
      for (int rep = 0; rep < cfg_.experiment.repetitions; ++rep) {
        const std::filesystem::path path = cell_dir(spec.id, rep) / "eval.json";
        if (!std::filesystem::exists(path))
          throw ProtocolError("missing artifact " + path.string() +
                              ": run the '" + spec.id + "' cells first");
        const nlohmann::json j = detail::read_json_file(path);
        ResultRow r;
        r.scheduler = j.at("scheduler").get<std::string>();
        r.repetition = j.at("repetition").get<int>();
        r.seed = j.at("seed").get<std::uint64_t>();
        const auto steps = j.at("steps").get<std::int64_t>();
        r.eval_reward_mean =
            j.at("reward_sum").get<double>() / static_cast<double>(steps);
        r.capacity_sum = j.at("capacity_sum").get<double>();
        r.timeouts_normal = j.at("timeouts_normal").get<std::int64_t>();
        r.timeouts_prio = j.at("timeouts_prio").get<std::int64_t>();
        r.prio_events = j.at("prio_events").get<std::int64_t>();
        rows.push_back(std::move(r));
      }
    }
    normalize_to_baseline(rows);
    return rows;
  }

  void write_manifest() const {
    const nlohmann::json echo = to_json(cfg_);
    nlohmann::json m{{"config", echo},
                     {"config_hash", format_uint(fnv1a64(echo.dump()))},
                     {"master_seed", cfg_.seed},
                     {"version", std::string(kVersion)}};
    std::filesystem::create_directories(out_);
    detail::write_file_atomic(manifest_path(), m.dump(2) + "\n");
  }

  // Assembles results.csv and report.json from existing cell artifacts.
  std::vector<ResultRow> assemble() const {
    const std::vector<ResultRow> rows = collect_rows();
    detail::write_file_atomic(csv_path(), to_csv(rows));
    detail::write_file_atomic(
        report_path(), report_json(rows, protocol_).dump(2) + "\n");
    return rows;
  }

  // The whole study: manifest, all cells, aggregation.
  std::vector<ResultRow> run() const {
    write_manifest();
    run_all_cells();
    return assemble();
  }

 private:
  void log(int level, const std::string& line) const {
    if (!log_sink_ || verbosity_ < level) return;
    std::lock_guard<std::mutex> lock(log_mutex_);
    log_sink_(line);
  }

  RunConfig cfg_;
  std::vector<SchedulerSpec> protocol_;
  std::filesystem::path out_;
  std::function<void(const std::string&)> log_sink_;
  int verbosity_ = 0;
  mutable std::mutex log_mutex_;
};

}  // namespace anchorsched
