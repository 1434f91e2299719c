#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <unistd.h>

#include "anchorsched/experiment.hpp"
#include "anchorsched/version.hpp"

namespace {

using Scalar = float;

std::vector<std::pair<std::string, std::string>> environment_variables() {
  std::vector<std::pair<std::string, std::string>> vars;
  for (char** e = environ; e != nullptr && *e != nullptr; ++e) {
    const std::string_view entry(*e);
    const std::size_t pos = entry.find('=');
    if (pos == std::string_view::npos) continue;
    vars.emplace_back(std::string(entry.substr(0, pos)),
                      std::string(entry.substr(pos + 1)));
  }
  return vars;
}

struct Options {
  std::string config_path;
  std::string profile;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::optional<int> episodes;
  std::optional<int> steps;
  int verbosity = 0;
  std::string scheduler;  // train
  int rep = 0;            // train
  std::string checkpoint;  // eval
  std::string label = "checkpoint";  // eval
};

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--config", o.config_path, "JSON configuration file");
  sub->add_option("--profile", o.profile,
                  "base profile selecting the study scale")
      ->check(CLI::IsMember({"paper", "desk"}));
  sub->add_option("--seed", o.seed, "master seed");
  sub->add_option("--out", o.out, "output directory");
  sub->add_option("--jobs", o.jobs, "maximum concurrent cells")
      ->check(CLI::PositiveNumber);
  sub->add_option("--episodes", o.episodes, "episodes per training stage")
      ->check(CLI::PositiveNumber);
  sub->add_option("--steps", o.steps, "steps per episode")
      ->check(CLI::PositiveNumber);
  sub->add_flag("-v,--verbose", o.verbosity,
                "print progress (repeat for per-episode detail)");
}

// Precedence: flags > environment variables > config file > profile defaults.
anchorsched::RunConfig assemble_config(const Options& o) {
  anchorsched::RunConfig cfg;
  try {
    if (!o.config_path.empty()) {
      cfg = anchorsched::load_config_file(
          o.config_path,
          o.profile.empty() ? std::nullopt : std::make_optional(o.profile));
    } else {
      cfg = anchorsched::default_config(o.profile.empty() ? "desk" : o.profile);
    }
  } catch (const anchorsched::IoError& e) {
    // an unreadable config file is a usage problem, not a runtime failure
    throw anchorsched::ConfigError(e.what());
  }
  anchorsched::apply_env_overrides(cfg, environment_variables());
  nlohmann::json overlay = nlohmann::json::object();
  if (o.seed) overlay["seed"] = *o.seed;
  if (!o.out.empty()) overlay["output_dir"] = o.out;
  if (o.jobs) overlay["jobs"] = *o.jobs;
  if (o.episodes) overlay["training"]["episodes_per_stage"] = *o.episodes;
  if (o.steps) overlay["training"]["steps_per_episode"] = *o.steps;
  if (!overlay.empty()) anchorsched::merge_json(cfg, overlay);
  anchorsched::validate_run_config(cfg);
  return cfg;
}

void attach_logger(anchorsched::ProtocolRunner<Scalar>& runner, int verbosity) {
  if (verbosity <= 0) return;
  runner.set_logger([](const std::string& line) { std::cerr << line << "\n"; },
                    verbosity);
}

const anchorsched::SchedulerSpec& find_spec(
    const anchorsched::ProtocolRunner<Scalar>& runner, const std::string& id) {
  for (const anchorsched::SchedulerSpec& s : runner.protocol())
    if (s.id == id) return s;
  std::string ids;
  for (const anchorsched::SchedulerSpec& s : runner.protocol()) {
    if (!ids.empty()) ids += ", ";
    ids += s.id;
  }
  throw anchorsched::ConfigError("unknown scheduler '" + id +
                                 "' (expected one of: " + ids + ")");
}

// A standalone evaluation has no baseline context, so the two normalized
// columns are left empty.
std::string eval_csv_row(const std::string& label, std::uint64_t seed,
                         const anchorsched::EvalTotals& t) {
  using anchorsched::format_double;
  using anchorsched::format_int;
  using anchorsched::format_uint;
  std::string out(anchorsched::kCsvHeader);
  out += '\n';
  out += label;
  out += ",0,";
  out += format_uint(seed);
  out += ',';
  out += format_double(t.reward_sum / static_cast<double>(t.steps));
  out += ',';
  out += format_double(t.capacity_sum);
  out += ',';
  out += format_int(t.timeouts_normal);
  out += ',';
  out += format_int(t.timeouts_prio);
  out += ',';
  out += format_int(t.prio_events);
  out += ",,\n";
  return out;
}

int run_reproduce(const Options& o) {
  const anchorsched::RunConfig cfg = assemble_config(o);
  anchorsched::ProtocolRunner<Scalar> runner(cfg);
  attach_logger(runner, o.verbosity);
  const auto rows = runner.run();
  std::cout << "completed " << rows.size() << " cells\n"
            << "results: " << runner.csv_path().string() << "\n"
            << "report:  " << runner.report_path().string() << "\n";
  return 0;
}

int run_train(const Options& o) {
  const anchorsched::RunConfig cfg = assemble_config(o);
  anchorsched::ProtocolRunner<Scalar> runner(cfg);
  attach_logger(runner, o.verbosity);
  const anchorsched::SchedulerSpec& spec = find_spec(runner, o.scheduler);
  if (o.rep >= cfg.experiment.repetitions)
    throw anchorsched::ConfigError(
        "--rep " + std::to_string(o.rep) + " out of range (repetitions: " +
        std::to_string(cfg.experiment.repetitions) + ")");
  runner.run_cell(spec, o.rep);
  std::cout << "checkpoint: "
            << runner.checkpoint_path(spec.id, o.rep).string() << "\n";
  return 0;
}

int run_eval(const Options& o) {
  if (o.label.find(',') != std::string::npos)
    throw anchorsched::ConfigError("--id must not contain a comma");
  const anchorsched::RunConfig cfg = assemble_config(o);
  anchorsched::SchedulerSpec spec{o.label, 0.0,
                                  cfg.training.episodes_per_stage, 0,
                                  std::nullopt, std::nullopt, false};
  std::ifstream in(o.checkpoint, std::ios::binary);
  if (!in) throw anchorsched::IoError("cannot open " + o.checkpoint);
  anchorsched::Agent<Scalar> agent = anchorsched::io::load_agent<Scalar>(
      in, anchorsched::make_agent_config<Scalar>(cfg, spec));
  const anchorsched::EvalTotals totals =
      anchorsched::evaluate_scheduler(cfg, agent, cfg.seed);
  std::cout << eval_csv_row(o.label, cfg.seed, totals);
  return 0;
}

int run_report(const Options& o) {
  const anchorsched::RunConfig cfg = assemble_config(o);
  anchorsched::ProtocolRunner<Scalar> runner(cfg);
  const auto rows = runner.assemble();

  std::cout << std::left << std::setw(10) << "scheduler" << std::right
            << std::setw(14) << "reward_mean" << std::setw(10) << "vs_BS"
            << std::setw(14) << "prio_rate" << std::setw(10) << "vs_BS"
            << "\n";
  for (const anchorsched::SchedulerSpec& spec : runner.protocol()) {
    std::vector<double> rewards, rates, reward_norms, rate_norms;
    for (const anchorsched::ResultRow& r : rows) {
      if (r.scheduler != spec.id) continue;
      rewards.push_back(r.eval_reward_mean);
      rates.push_back(anchorsched::prio_timeout_rate(r));
      reward_norms.push_back(r.reward_norm_bs);
      rate_norms.push_back(r.prio_timeout_norm_bs);
    }
    if (rewards.empty()) continue;
    std::cout << std::left << std::setw(10) << spec.id << std::right
              << std::fixed << std::setprecision(4) << std::setw(14)
              << anchorsched::moments(rewards).mean << std::setw(10)
              << anchorsched::moments(reward_norms).mean << std::setw(14)
              << anchorsched::moments(rates).mean << std::setw(10)
              << anchorsched::moments(rate_norms).mean << "\n"
              << std::defaultfloat;
  }
  std::cout << "results: " << runner.csv_path().string() << "\n"
            << "report:  " << runner.report_path().string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weight-anchored deep-RL resource scheduler study"};
  app.set_version_flag("--version", std::string(anchorsched::kVersion));
  app.require_subcommand(1);

  Options o;
  CLI::App* reproduce =
      app.add_subcommand("reproduce", "Run the full eight-scheduler protocol");
  add_common(reproduce, o);

  CLI::App* train =
      app.add_subcommand("train", "Train and evaluate one scheduler cell");
  train->add_option("scheduler", o.scheduler,
                    "scheduler id (e.g. BS, AU100, AN1)")
      ->required();
  train->add_option("--rep", o.rep, "repetition index (default 0)")
      ->check(CLI::NonNegativeNumber);
  add_common(train, o);

  CLI::App* eval = app.add_subcommand(
      "eval", "Evaluate a checkpoint under the frozen policy");
  eval->add_option("--checkpoint", o.checkpoint, "agent checkpoint file")
      ->required();
  eval->add_option("--id", o.label, "scheduler label for the emitted row");
  add_common(eval, o);

  CLI::App* report = app.add_subcommand(
      "report", "Aggregate existing cell artifacts into CSV and JSON");
  add_common(report, o);

  reproduce->callback([&] { run_reproduce(o); });
  train->callback([&] { run_train(o); });
  eval->callback([&] { run_eval(o); });
  report->callback([&] { run_report(o); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);  // --help / --version
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const anchorsched::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
