// Copyright 2026 The mrt Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// mrt command-line tool: simulate, calibrate, serve, gen-fixture.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "mrt/config.hpp"
#include "mrt/fixture.hpp"
#include "mrt/service_http.hpp"
#include "mrt/sim.hpp"
#include "mrt/testbed.hpp"

#ifndef MRT_GIT_DESCRIBE
#define MRT_GIT_DESCRIBE "unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

std::string version_string() { return std::string(MRT_VERSION_STRING) + "+" + MRT_GIT_DESCRIBE; }

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << content;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

mrt::BasePopulation load_fixture(const std::string& path, std::string& hash) {
  const std::string p = path.empty() ? mrt::default_fixture_path() : path;
  const std::string text = read_file(p);
  hash = mrt::hex64(mrt::fnv1a64(text));
  return mrt::parse_base_population(text);
}

json row_summary(const mrt::GridRow& r) {
  return {{"environment", mrt::environment_name(r.env)},
          {"algorithm", r.alg.label()},
          {"completed_trials", r.trials},
          {"aborted_trials", r.aborted},
          {"exceptions", r.diagnostics},
          {"pi_min", r.pi_min},
          {"pi_max", r.pi_max},
          {"pi_count", r.pi_count},
          {"pi_out_of_range", r.pi_out_of_range}};
}

std::string trial_csv_header() {
  return "environment,model,variant,B,posterior_cadence,hyper_cadence,trial,aborted,avg_total_reward,"
         "median_total_reward,lower25_avg,lower25_median\n";
}

std::string trial_line(const mrt::GridRow& r, int k, const mrt::TrialOutcome& o, mrt::TrialLogFormat fmt,
                       std::uint64_t seed) {
  using mrt::format_number;
  if (fmt == mrt::TrialLogFormat::kCsv) {
    std::string s = mrt::environment_name(r.env) + "," + mrt::reward_model_name(r.alg.model) + "," +
                    std::string(mrt::variant_name(r.alg.variant)) + "," + format_number(r.alg.smooth.big_b) + "," +
                    mrt::cadence_name(r.alg.posterior_cadence) + "," + mrt::cadence_name(r.alg.hyper_cadence) + "," +
                    std::to_string(k) + "," + (o.aborted ? "1" : "0");
    for (double v : {o.metrics.avg_total_reward, o.metrics.median_total_reward, o.metrics.lower25_avg,
                     o.metrics.lower25_median}) {
      s += "," + (o.aborted ? std::string() : format_number(v));
    }
    return s + "\n";
  }
  json records = json::array();
  for (const auto& rec : o.records) {
    records.push_back({{"participant", rec.participant},
                       {"t", rec.t},
                       {"state", {rec.state.s1, rec.state.s2, rec.state.s3}},
                       {"pi", rec.pi},
                       {"action", rec.action},
                       {"reward", rec.reward}});
  }
  json j = {{"environment", mrt::environment_name(r.env)},
            {"algorithm", r.alg.label()},
            {"trial", k},
            {"seed", mrt::trial_seed(seed, k)},
            {"aborted", o.aborted},
            {"diagnostic", o.diagnostic},
            {"posterior_updates", o.posterior_updates},
            {"hyper_updates", o.hyper_updates},
            {"records", records}};
  if (!o.aborted) {
    j["metrics"] = {{"avg_total_reward", o.metrics.avg_total_reward},
                    {"median_total_reward", o.metrics.median_total_reward},
                    {"lower25_avg", o.metrics.lower25_avg},
                    {"lower25_median", o.metrics.lower25_median}};
  }
  return j.dump() + "\n";
}

int cmd_simulate(const std::string& config_path, int jobs, const std::string& output_override) {
  mrt::RunConfig cfg;
  try {
    cfg = mrt::load_run_config(config_path);
  } catch (const mrt::ConfigError& e) {
    std::cerr << "config error (" << config_path << "): " << e.what() << "\n";
    return kExitConfig;
  }
  if (!output_override.empty()) cfg.output_dir = output_override;
  try {
    std::string fixture_hash;
    const mrt::BasePopulation base = load_fixture(cfg.fixture, fixture_hash);
    const fs::path out_dir(cfg.output_dir);
    fs::create_directories(out_dir);

    const bool jsonl = cfg.format == mrt::TrialLogFormat::kJsonl;
    const fs::path trial_path = out_dir / (jsonl ? "trials.jsonl" : "trials.csv");
    std::ofstream trial_log(trial_path, std::ios::binary | std::ios::trunc);
    if (!trial_log) throw std::runtime_error("cannot write " + trial_path.string());
    if (!jsonl) trial_log << trial_csv_header();

    // Reorder buffer: trial lines are written in job order whatever the
    // completion order, so outputs do not depend on --jobs.
    std::map<std::size_t, std::string> pending;
    std::size_t next_job = 0;
    mrt::GridOptions opt;
    opt.jobs = jobs;
    opt.trial.keep_records = jsonl;
    opt.trial.optimizer = cfg.optimizer;
    const std::size_t total = cfg.environments.size() * cfg.algorithms.size() * static_cast<std::size_t>(cfg.k_trials);
    opt.on_trial = [&](std::size_t job, const mrt::GridRow& r, int k, const mrt::TrialOutcome& o) {
      pending.emplace(job, trial_line(r, k, o, cfg.format, cfg.seed));
      while (!pending.empty() && pending.begin()->first == next_job) {
        trial_log << pending.begin()->second;
        pending.erase(pending.begin());
        ++next_job;
      }
      if (next_job % 25 == 0 || next_job == total) {
        std::cerr << "\r" << next_job << "/" << total << " trials" << std::flush;
      }
    };
    const auto rows = mrt::run_grid(cfg.environments, cfg.algorithms, cfg.k_trials, cfg.seed, base, opt);
    std::cerr << "\n";
    trial_log.close();

    json outputs = json::array();
    json summary = {{"k_trials", cfg.k_trials}, {"seed", cfg.seed}, {"cells", json::array()}};
    const std::size_t n_alg = cfg.algorithms.size();
    for (std::size_t e = 0; e < cfg.environments.size(); ++e) {
      std::vector<mrt::GridRow> env_rows(rows.begin() + static_cast<std::ptrdiff_t>(e * n_alg),
                                         rows.begin() + static_cast<std::ptrdiff_t>((e + 1) * n_alg));
      std::string name = mrt::environment_name(cfg.environments[e]);
      if (cfg.environments.size() > 1) {
        // Disambiguate repeated variants that differ only in size.
        int dup = 0;
        for (std::size_t f = 0; f < e; ++f) dup += mrt::environment_name(cfg.environments[f]) == name;
        if (dup > 0) name += "_" + std::to_string(dup);
      }
      const std::string file = name + ".csv";
      write_file(out_dir / file, mrt::table_csv(env_rows));
      outputs.push_back(file);
      for (const auto& r : env_rows) summary["cells"].push_back(row_summary(r));
    }
    outputs.push_back(trial_path.filename().string());
    write_file(out_dir / "summary.json", summary.dump(2) + "\n");
    outputs.push_back("summary.json");

    json manifest = {{"command", "simulate"},
                     {"version", version_string()},
                     {"config_path", config_path},
                     {"config_hash", mrt::config_hash(cfg)},
                     {"seed", cfg.seed},
                     {"fixture_hash", fixture_hash},
                     {"outputs", outputs}};
    write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");

    int aborted = 0;
    for (const auto& r : rows) aborted += r.aborted;
    if (aborted > 0) std::cerr << "warning: " << aborted << " trial(s) aborted; see summary.json\n";
    std::cout << "wrote " << outputs.size() << " files to " << out_dir.string() << "\n";
    return kExitOk;
  } catch (const mrt::InputDomainError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int cmd_calibrate(const std::vector<double>& multipliers, int k, std::uint64_t seed, const std::string& fixture,
                  const std::string& output, bool untransformed) {
  try {
    std::string fixture_hash;
    const mrt::BasePopulation base = load_fixture(fixture, fixture_hash);
    std::string csv = "# K=" + std::to_string(k) + " seed=" + std::to_string(seed) + " fixture=" + fixture_hash +
                      " transform=" + (untransformed ? "none" : "class0-min,class23-average") + "\n";
    csv += "multiplier,effect_size\n";
    for (double m : multipliers) {
      const auto r = mrt::standardized_effect_size(m, base, k, seed, !untransformed);
      if (r.skipped > 0) {
        std::cerr << "warning: multiplier " << m << ": skipped " << r.skipped << " dataset(s) with zero reward variance\n";
      }
      csv += mrt::format_number(m) + "," + mrt::format_number(r.mean) + "\n";
    }
    if (output.empty()) {
      std::cout << csv;
    } else {
      write_file(output, csv);
      json manifest = {{"command", "calibrate"}, {"version", version_string()}, {"seed", seed},
                       {"k", k},                 {"fixture_hash", fixture_hash}, {"outputs", {fs::path(output).filename().string()}}};
      write_file(fs::path(output).parent_path() / (fs::path(output).stem().string() + ".manifest.json"),
                 manifest.dump(2) + "\n");
    }
    return kExitOk;
  } catch (const mrt::InputDomainError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

httplib::Server* g_server = nullptr;

extern "C" void handle_signal(int) {
  if (g_server) g_server->stop();
}

int cmd_serve(const mrt::ServiceConfig& scfg, const std::string& bind) {
  std::string host;
  int port = 0;
  if (!mrt::parse_bind_address(bind, host, port)) {
    std::cerr << "error: --bind expects HOST:PORT, got '" << bind << "'\n";
    return kExitConfig;
  }
  try {
    mrt::DecisionService service(scfg);
    httplib::Server server;
    mrt::mount_routes(server, service);
    if (!server.bind_to_port(host, port)) {
      std::cerr << "error: cannot bind " << bind << "\n";
      return kExitRuntime;
    }
    g_server = &server;
    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    std::cerr << "serving on " << bind << " (snapshot version " << service.version() << ", "
              << service.log_entries() << " log entries replayed)\n";
    server.listen_after_bind();
    g_server = nullptr;
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int cmd_gen_fixture(std::uint64_t seed, const std::string& output) {
  try {
    const std::string text = mrt::serialize_base_population(mrt::generate_base_population(seed));
    if (output == "-") {
      std::cout << text;
    } else {
      write_file(output, text);
    }
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixed-effects Thompson sampling for micro-randomized trials: simulation and decision service"};
  app.set_version_flag("--version", version_string());
  app.require_subcommand(1);

  std::string config_path, output_override;
  int jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  auto* sim = app.add_subcommand("simulate", "Run a grid of simulated trials from a config file");
  sim->add_option("--config", config_path, "JSON run configuration")->required();
  sim->add_option("--jobs", jobs, "Worker threads (default: available cores)")->check(CLI::PositiveNumber);
  sim->add_option("--output-dir", output_override, "Override the config's output_dir");

  std::vector<double> multipliers;
  int k = 100;
  std::uint64_t seed = 0;
  std::string fixture, cal_output;
  bool untransformed = false;
  auto* cal = app.add_subcommand("calibrate", "Standardized effect size per advantage-intercept multiplier");
  cal->add_option("--multipliers", multipliers, "Multipliers (space or comma separated)")
      ->required()
      ->delimiter(',');
  cal->add_option("--k", k, "Simulated datasets per multiplier")->check(CLI::PositiveNumber);
  cal->add_option("--seed", seed, "Master seed");
  cal->add_option("--fixture", fixture, "Base population fixture (default: bundled)");
  cal->add_option("--output", cal_output, "Write CSV here instead of stdout");
  cal->add_flag("--untransformed", untransformed, "Skip the class-0/class-2,3 intercept reshaping");

  mrt::ServiceConfig scfg;
  std::string bind = "127.0.0.1:8080", model = "mixed";
  int variant = 0;
  double big_b = 20.0;
  auto* serve = app.add_subcommand("serve", "Run the HTTP decision service");
  serve->add_option("--snapshots", scfg.snapshot_dir, "Directory for log.jsonl and snapshots")->required();
  serve->add_option("--bind", bind, "HOST:PORT");
  serve->add_option("--model", model, "pooled or mixed")->check(CLI::IsMember({"pooled", "mixed"}));
  serve->add_option("--variant", variant, "Baseline/advantage variant")->check(CLI::Range(0, 2));
  serve->add_option("--B", big_b, "Smooth allocation steepness B")->check(CLI::PositiveNumber);
  serve->add_option("--seed", scfg.seed, "Seed for action draws");
  serve->add_flag("--no-sync", [&scfg](std::int64_t) { scfg.sync = false; }, "Do not fsync the log");

  std::uint64_t fixture_seed = mrt::kFixtureSeed;
  std::string fixture_out = "-";
  auto* gen = app.add_subcommand("gen-fixture", "Generate the synthetic base population fixture");
  gen->add_option("--seed", fixture_seed, "Generator seed");
  gen->add_option("--output", fixture_out, "Output path ('-' for stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  if (*sim) return cmd_simulate(config_path, jobs, output_override);
  if (*cal) return cmd_calibrate(multipliers, k, seed, fixture, cal_output, untransformed);
  if (*serve) {
    scfg.model = *mrt::parse_reward_model(model);
    scfg.variant = mrt::variant_from_index(variant);
    scfg.smooth.big_b = big_b;
    return cmd_serve(scfg, bind);
  }
  if (*gen) return cmd_gen_fixture(fixture_seed, fixture_out);
  return kExitConfig;
}
