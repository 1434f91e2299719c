#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>
#include <sys/wait.h>

// Spawns the installed binary and checks the documented process contract:
// flags, env overrides, artifacts, and exit codes 0 (ok), 1 (usage/config),
// 2 (runtime failure).

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CliResult run_cli(const std::string& args, const std::string& env = "") {
  static int counter = 0;
  const fs::path dir =
      fs::temp_directory_path() / ("anchorsched_cli_io_" + std::to_string(counter++));
  fs::create_directories(dir);
  const fs::path out = dir / "stdout", err = dir / "stderr";
  const std::string cmd = "env " + env + " " + ANCHORSCHED_CLI_PATH + " " +
                          args + " >" + out.string() + " 2>" + err.string();
  const int raw = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

// Shrinks every knob so a full protocol run takes about a second.
const std::string kMicroEnv =
    "'ANCHORSCHED_ENVIRONMENT__NUM_USERS=2' "
    "'ANCHORSCHED_ENVIRONMENT__TOTAL_BLOCKS=3' "
    "'ANCHORSCHED_ENVIRONMENT__MAX_INIT_BLOCKS=2' "
    "'ANCHORSCHED_ENVIRONMENT__MAX_DELAY=2' "
    "'ANCHORSCHED_TRAINING__HIDDEN_WIDTHS=[8]' "
    "'ANCHORSCHED_TRAINING__BATCH_SIZE=8' "
    "'ANCHORSCHED_TRAINING__REPLAY_CAPACITY=64' "
    "'ANCHORSCHED_TRAINING__EPISODES_PER_STAGE=1' "
    "'ANCHORSCHED_TRAINING__STEPS_PER_EPISODE=120' "
    "'ANCHORSCHED_EXPERIMENT__REPETITIONS=1' "
    "'ANCHORSCHED_EXPERIMENT__EVAL_RUNS=1' "
    "'ANCHORSCHED_EXPERIMENT__EVAL_STEPS=200' "
    "'ANCHORSCHED_EXPERIMENT__EVAL_P_PRIO=0.05' ";

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("usage errors exit with code 1") {
  REQUIRE(run_cli("").code == 1);                    // no subcommand
  REQUIRE(run_cli("frobnicate").code == 1);          // unknown subcommand
  REQUIRE(run_cli("reproduce --profile nope").code == 1);
  REQUIRE(run_cli("eval").code == 1);                // missing --checkpoint
  REQUIRE(run_cli("--help").code == 0);
  REQUIRE(run_cli("--version").code == 0);
}

TEST_CASE("a missing config file exits 1 and writes nothing") {
  const fs::path out = fresh_dir("anchorsched_cli_noconfig");
  CliResult r = run_cli("reproduce --config /does/not/exist.json --out " +
                        out.string());
  REQUIRE(r.code == 1);
  REQUIRE(r.err.find("/does/not/exist.json") != std::string::npos);
  REQUIRE_FALSE(fs::exists(out));
}

TEST_CASE("invalid config values exit 1 with a field diagnostic") {
  const fs::path dir = fresh_dir("anchorsched_cli_badcfg");
  fs::create_directories(dir);
  const fs::path cfg = dir / "bad.json";
  std::ofstream(cfg) << R"({"training": {"batch_size": 0}})";
  CliResult r = run_cli("reproduce --config " + cfg.string());
  REQUIRE(r.code == 1);
  REQUIRE(r.err.find("batch_size") != std::string::npos);

  std::ofstream(cfg) << R"({"training": {"batch_sizzle": 1}})";
  CliResult u = run_cli("reproduce --config " + cfg.string());
  REQUIRE(u.code == 1);
  REQUIRE(u.err.find("batch_sizzle") != std::string::npos);
}

TEST_CASE("training a dependent cell without its parent exits 2") {
  const fs::path out = fresh_dir("anchorsched_cli_orphan");
  CliResult r = run_cli("train AN1 --seed 5 --out " + out.string(), kMicroEnv);
  REQUIRE(r.code == 2);
  REQUIRE(r.err.find("AU100") != std::string::npos);
  REQUIRE(r.err.find("checkpoint.bin") != std::string::npos);
}

TEST_CASE("an unknown scheduler id is a usage error") {
  const fs::path out = fresh_dir("anchorsched_cli_badid");
  CliResult r = run_cli("train ZZ --seed 5 --out " + out.string(), kMicroEnv);
  REQUIRE(r.code == 1);
  REQUIRE(r.err.find("ZZ") != std::string::npos);
  REQUIRE(r.err.find("AU100") != std::string::npos);  // lists the valid ids
}

TEST_CASE("reproduce runs the protocol and is byte-reproducible") {
  const fs::path out_a = fresh_dir("anchorsched_cli_rep_a");
  const fs::path out_b = fresh_dir("anchorsched_cli_rep_b");

  CliResult a =
      run_cli("reproduce --seed 11 --out " + out_a.string(), kMicroEnv);
  INFO(a.err);
  REQUIRE(a.code == 0);
  REQUIRE(fs::exists(out_a / "results.csv"));
  REQUIRE(fs::exists(out_a / "report.json"));
  REQUIRE(fs::exists(out_a / "manifest.json"));

  CliResult b =
      run_cli("reproduce --seed 11 --out " + out_b.string(), kMicroEnv);
  REQUIRE(b.code == 0);
  REQUIRE(slurp(out_a / "results.csv") == slurp(out_b / "results.csv"));

  // the manifest echoes the effective configuration, overrides included
  const auto manifest = nlohmann::json::parse(slurp(out_a / "manifest.json"));
  REQUIRE(manifest.at("config").at("training").at("batch_size").get<int>() == 8);
  REQUIRE(manifest.at("config").at("seed").get<std::uint64_t>() == 11);

  // rerunning from the echoed config reproduces the same bytes
  const fs::path out_c = fresh_dir("anchorsched_cli_rep_c");
  const fs::path echo_cfg = out_c.string() + ".json";
  {
    nlohmann::json cfg = manifest.at("config");
    cfg["output_dir"] = out_c.string();
    fs::create_directories(out_c.parent_path());
    std::ofstream(echo_cfg) << cfg.dump(2);
  }
  CliResult c = run_cli("reproduce --config " + echo_cfg.string());
  INFO(c.err);
  REQUIRE(c.code == 0);
  REQUIRE(slurp(out_a / "results.csv") == slurp(out_c / "results.csv"));
}

TEST_CASE("flags take precedence over env overrides") {
  const fs::path out = fresh_dir("anchorsched_cli_prec");
  CliResult r = run_cli("reproduce --seed 13 --steps 90 --out " + out.string(),
                        kMicroEnv);  // env says 120 steps, flag says 90
  REQUIRE(r.code == 0);
  const auto manifest = nlohmann::json::parse(slurp(out / "manifest.json"));
  REQUIRE(manifest.at("config").at("training").at("steps_per_episode").get<int>() == 90);
  REQUIRE(manifest.at("config").at("seed").get<std::uint64_t>() == 13);
}

TEST_CASE("train writes one cell and eval emits stable rows") {
  const fs::path out = fresh_dir("anchorsched_cli_cell");
  CliResult t = run_cli("train BS --seed 21 --out " + out.string(), kMicroEnv);
  INFO(t.err);
  REQUIRE(t.code == 0);
  const fs::path ckpt = out / "cells" / "BS_rep0" / "checkpoint.bin";
  REQUIRE(fs::exists(ckpt));
  REQUIRE(fs::exists(out / "cells" / "BS_rep0" / "train_log.jsonl"));
  REQUIRE(fs::exists(out / "cells" / "BS_rep0" / "eval.json"));
  REQUIRE(t.out.find(ckpt.string()) != std::string::npos);

  const std::string eval_args =
      "eval --checkpoint " + ckpt.string() + " --id BS --seed 3";
  CliResult e1 = run_cli(eval_args, kMicroEnv);
  CliResult e2 = run_cli(eval_args, kMicroEnv);
  INFO(e1.err);
  REQUIRE(e1.code == 0);
  REQUIRE(e1.out == e2.out);
  REQUIRE(e1.out.rfind("scheduler,repetition,seed,", 0) == 0);
  REQUIRE(e1.out.find("\nBS,0,3,") != std::string::npos);
  REQUIRE(e1.out.substr(e1.out.size() - 3) == ",,\n");  // no baseline columns

  CliResult missing = run_cli(
      "eval --checkpoint " + (out / "nope.bin").string(), kMicroEnv);
  REQUIRE(missing.code == 2);
  REQUIRE(missing.err.find("nope.bin") != std::string::npos);
}

TEST_CASE("report aggregates existing artifacts without retraining") {
  const fs::path out = fresh_dir("anchorsched_cli_report");
  CliResult r = run_cli("reproduce --seed 31 --out " + out.string(), kMicroEnv);
  REQUIRE(r.code == 0);
  const std::string csv_before = slurp(out / "results.csv");

  fs::remove(out / "results.csv");
  fs::remove(out / "report.json");
  CliResult rep = run_cli("report --seed 31 --out " + out.string(), kMicroEnv);
  INFO(rep.err);
  REQUIRE(rep.code == 0);
  REQUIRE(slurp(out / "results.csv") == csv_before);
  REQUIRE(rep.out.find("BS") != std::string::npos);
  REQUIRE(rep.out.find("AN1+") != std::string::npos);

  // with no cells at all, aggregation is a runtime failure naming the gap
  const fs::path empty = fresh_dir("anchorsched_cli_report_empty");
  CliResult none =
      run_cli("report --seed 31 --out " + empty.string(), kMicroEnv);
  REQUIRE(none.code == 2);
  REQUIRE(none.err.find("eval.json") != std::string::npos);
}
