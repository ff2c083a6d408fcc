// knobtuner command-line front end: tune, extract, report.

#include <algorithm>
#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "knobtuner/errors.hpp"
#include "knobtuner/extraction.hpp"
#include "knobtuner/session.hpp"
#include "knobtuner/space_gen.hpp"

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) {
  g_stop.store(true);
  std::signal(SIGINT, SIG_DFL);
  std::signal(SIGTERM, SIG_DFL);
}

struct TuneArgs {
  std::string config_file;
  std::string space;
  std::string knowledge;
  std::string backend;
  std::string evaluator;
  std::string eval_cmd;
  double eval_timeout = 0;
  bool no_prune = false;
  std::string ablate;
  std::uint64_t seed = 1;
  int rollouts = 0;
  double target_tps = 0;
  std::string out;
  std::string resume;
  int repeat = 1;
  std::uint64_t model_seed = 1;
  double difficulty = 0.5;
  int checkpoint_every = 1;
};

int run_tune(const TuneArgs& a, const CLI::App& cmd) {
  using namespace knobtuner;
  SessionConfig config;
  if (!a.config_file.empty()) {
    config = SessionConfig::from_json(read_json_file(a.config_file));
    // Input paths in a config file are relative to the file itself.
    const auto base = std::filesystem::path(a.config_file).parent_path();
    if (!config.space_file.empty() && config.space_file.is_relative()) config.space_file = base / config.space_file;
    if (!config.knowledge_dir.empty() && config.knowledge_dir.is_relative()) config.knowledge_dir = base / config.knowledge_dir;
  }
  auto given = [&](const char* name) { return cmd.count(name) > 0; };
  if (given("--space")) config.space_file = a.space;
  if (given("--knowledge")) config.knowledge_dir = a.knowledge;
  if (given("--backend")) config.backend = backend_kind_from_string(a.backend);
  if (given("--evaluator")) config.evaluator = evaluator_kind_from_string(a.evaluator);
  if (given("--eval-cmd")) config.external.command_template = a.eval_cmd;
  if (given("--eval-timeout")) config.external.timeout = std::chrono::duration<double>(a.eval_timeout);
  if (given("--ablate")) config.ablation = Ablation::parse(a.ablate);
  if (a.no_prune) config.ablation.no_pruning = true;
  if (given("--seed")) config.mcts.seed = a.seed;
  if (given("--rollouts")) config.mcts.max_rollouts = a.rollouts;
  if (given("--target-tps")) config.mcts.target_throughput = a.target_tps;
  if (given("--out")) config.out_dir = a.out;
  if (given("--resume")) config.resume = a.resume;
  if (given("--model-seed")) config.synthetic.seed = a.model_seed;
  if (given("--difficulty")) config.synthetic.difficulty = a.difficulty;
  if (given("--checkpoint-every")) config.checkpoint_every = a.checkpoint_every;

  if (a.repeat < 1) throw Error(ErrorCode::InvalidArgument, "--repeat must be at least 1");
  if (a.repeat > 1 && config.resume) throw Error(ErrorCode::InvalidArgument, "--repeat cannot be combined with --resume");

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);

  std::vector<SessionReport> reports;
  const auto base_out = config.out_dir;
  const auto base_seed = config.mcts.seed;
  for (int i = 0; i < a.repeat && !g_stop; ++i) {
    SessionConfig run = config;
    if (a.repeat > 1) {
      run.mcts.seed = base_seed + static_cast<std::uint64_t>(i);
      run.out_dir = base_out / fmt::format("run-{}", i + 1);
    }
    const SessionReport report = run_session(run, &g_stop);
    std::cout << report.to_text() << "\n";
    spdlog::info("results written to {}", run.out_dir.string());
    reports.push_back(report);
    if (!report.error.empty()) return 1;
  }
  if (reports.size() > 1) {
    std::vector<double> best;
    for (const auto& r : reports) best.push_back(r.t_best);
    std::sort(best.begin(), best.end());
    const double median = best.size() % 2 ? best[best.size() / 2] : 0.5 * (best[best.size() / 2 - 1] + best[best.size() / 2]);
    std::cout << fmt::format("median T* over {} runs: {:.2f} tps\n", best.size(), median);
    nlohmann::json summary = {{"runs", reports.size()}, {"median_t_best", median}, {"t_best", best}};
    knobtuner::write_json_atomic(base_out / "repeat_summary.json", summary);
  }
  return g_stop ? 130 : 0;
}

int run_extract(const std::string& manual, const std::string& backend, const std::string& out) {
  using namespace knobtuner;
  if (backend != "remote") {
    throw Error(ErrorCode::InvalidArgument, "extraction needs a language-model backend; use --backend remote");
  }
  RemoteBackend remote(RemoteOptions::from_env());
  const auto chunks = load_manual_dir(manual);
  spdlog::info("extracting from {} manual chunk(s)", chunks.size());
  const KnobKnowledge knowledge = extract_knob_knowledge(chunks, remote);
  write_json_atomic(out, knob_knowledge_to_json(knowledge));
  std::cout << fmt::format("{} knobs in {} clusters written to {}\n", knowledge.records.size(), knowledge.clusters.size(), out);
  return 0;
}

int run_generate(const knobtuner::SpaceGenOptions& options, const std::string& out_dir) {
  using namespace knobtuner;
  const std::filesystem::path dir(out_dir);
  std::filesystem::create_directories(dir);
  const KnobKnowledge knowledge = generate_knob_knowledge(options);
  write_json_atomic(dir / "space.json", knob_knowledge_to_json(knowledge));
  write_json_atomic(dir / "system.json", system_context_to_json(default_system_context()));
  std::cout << fmt::format("{} knobs in {} clusters written to {}\n", knowledge.records.size(), knowledge.clusters.size(), dir.string());
  return 0;
}

int run_report(const std::string& session_dir) {
  using namespace knobtuner;
  const SessionReport report = SessionReport::from_json(read_json_file(std::filesystem::path(session_dir) / "report.json"));
  std::cout << report.to_text();
  const auto timing = std::filesystem::path(session_dir) / "timing.json";
  if (std::filesystem::exists(timing)) {
    const auto t = read_json_file(timing);
    std::cout << fmt::format("\nTime: total {:.2f} s, search overhead {:.2f} s, deployment {:.2f} s, evaluation {:.2f} s, backend {:.2f} s\n",
                             t.value("total_seconds", 0.0), t.value("search_overhead_seconds", 0.0),
                             t.value("deployment_seconds", 0.0), t.value("evaluation_seconds", 0.0),
                             t.value("backend_seconds", 0.0));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LLM-guided tree search for blockchain configuration tuning"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  TuneArgs tune;
  auto* tune_cmd = app.add_subcommand("tune", "Run a tuning session");
  tune_cmd->add_option("--config", tune.config_file, "JSON session config; flags override it")->check(CLI::ExistingFile);
  tune_cmd->add_option("--space", tune.space, "Knob knowledge / configuration space JSON")->check(CLI::ExistingFile);
  tune_cmd->add_option("--knowledge", tune.knowledge, "Directory with system.json and optional knobs.json")->check(CLI::ExistingDirectory);
  tune_cmd->add_option("--backend", tune.backend, "remote, oracle or random");
  tune_cmd->add_option("--evaluator", tune.evaluator, "synthetic or external");
  tune_cmd->add_option("--eval-cmd", tune.eval_cmd, "Benchmark command with {config_path} and {workload_path}");
  tune_cmd->add_option("--eval-timeout", tune.eval_timeout, "Benchmark timeout in seconds");
  tune_cmd->add_flag("--no-prune", tune.no_prune, "Disable pruning rules");
  tune_cmd->add_option("--ablate", tune.ablate, "Comma-separated ablation tokens");
  tune_cmd->add_option("--seed", tune.seed, "Search seed");
  tune_cmd->add_option("--rollouts", tune.rollouts, "Rollout budget");
  tune_cmd->add_option("--target-tps", tune.target_tps, "Stop once this throughput is reached");
  tune_cmd->add_option("--out", tune.out, "Output directory");
  tune_cmd->add_option("--resume", tune.resume, "Checkpoint to resume from")->check(CLI::ExistingFile);
  tune_cmd->add_option("--repeat", tune.repeat, "Run N sessions with consecutive seeds");
  tune_cmd->add_option("--model-seed", tune.model_seed, "Seed of the synthetic model");
  tune_cmd->add_option("--difficulty", tune.difficulty, "Synthetic model difficulty in [0, 1]");
  tune_cmd->add_option("--checkpoint-every", tune.checkpoint_every, "Rollouts between checkpoints");

  std::string manual;
  std::string extract_backend;
  std::string extract_out;
  auto* extract_cmd = app.add_subcommand("extract", "Build knob knowledge from component manuals");
  extract_cmd->add_option("--manual", manual, "Directory of plain-text manual files")->required()->check(CLI::ExistingDirectory);
  extract_cmd->add_option("--backend", extract_backend, "Backend (remote)")->required();
  extract_cmd->add_option("--out", extract_out, "Output knob knowledge JSON")->required();

  std::string session_dir;
  auto* report_cmd = app.add_subcommand("report", "Print the report of a finished session");
  report_cmd->add_option("--session", session_dir, "Session output directory")->required()->check(CLI::ExistingDirectory);

  knobtuner::SpaceGenOptions gen;
  std::string gen_out;
  auto* gen_cmd = app.add_subcommand("generate", "Write a seeded synthetic space.json and system.json");
  gen_cmd->add_option("--knobs", gen.knobs, "Number of knobs");
  gen_cmd->add_option("--clusters", gen.clusters, "Number of clusters");
  gen_cmd->add_option("--seed", gen.seed, "Generator seed");
  gen_cmd->add_option("--out", gen_out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);
  spdlog::set_default_logger(spdlog::stderr_color_mt("knobtuner"));
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (*tune_cmd) return run_tune(tune, *tune_cmd);
    if (*extract_cmd) return run_extract(manual, extract_backend, extract_out);
    if (*report_cmd) return run_report(session_dir);
    if (*gen_cmd) return run_generate(gen, gen_out);
  } catch (const knobtuner::Error& e) {
    spdlog::error("{}: {}", knobtuner::to_string(e.code()), e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
