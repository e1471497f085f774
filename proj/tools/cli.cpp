#include "cli.hpp"

#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "synthpsych/errors.hpp"
#include "synthpsych/pipeline.hpp"

namespace synthpsych::cli {

namespace fs = std::filesystem;

int run_cli(int argc, char** argv, std::shared_ptr<transport::HttpBackend> backend) {
  CLI::App app{"synthpsych: synthetic respondents for the Academic Motivation Scale"};
  app.require_subcommand(1);
  app.fallthrough();

  std::optional<fs::path> config_path;
  std::optional<fs::path> out_dir;
  std::optional<fs::path> replay_store;
  std::optional<fs::path> record_store;
  std::optional<std::uint64_t> seed;
  bool passthrough = false;
  bool force = false;
  bool verbose = false;
  app.add_option("--config", config_path, "INI run configuration")->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "Run directory");
  auto* replay = app.add_option("--replay", replay_store, "Serve every model call from this transcript store");
  auto* record = app.add_option("--record", record_store, "Call the API and append exchanges to a store (default: config)")
                     ->expected(0, 1);
  auto* pass = app.add_flag("--passthrough", passthrough, "Call the API without a transcript store");
  replay->excludes(record)->excludes(pass);
  record->excludes(pass);
  app.add_option("--seed", seed, "Global RNG seed");
  app.add_flag("--force", force, "Overwrite existing stage outputs");
  app.add_flag("-v,--verbose", verbose, "Log progress to stderr");

  std::optional<int> n_personas;
  std::optional<int> batch;
  auto* generate = app.add_subcommand("generate-personas", "Generate the persona cohort");
  generate->add_option("--n", n_personas, "Cohort size")->check(CLI::PositiveNumber);
  generate->add_option("--batch", batch, "Personas per request")->check(CLI::PositiveNumber);

  fs::path personas_in;
  fs::path responses_in;
  auto* administer = app.add_subcommand("administer", "Collect AMS responses for each persona");
  administer->add_option("--personas", personas_in, "personas.jsonl (default: <out>/personas.jsonl)");

  auto* analyze = app.add_subcommand("analyze", "Parallel analysis, EFA and CFA");
  analyze->add_option("--responses", responses_in, "responses.csv (default: <out>/responses.csv)");

  auto* cluster = app.add_subcommand("cluster", "Embed, cluster and compare persona subgroups");
  cluster->add_option("--personas", personas_in, "personas.jsonl");
  cluster->add_option("--responses", responses_in, "responses.csv");

  std::optional<std::size_t> sim_n;
  std::optional<std::string> profiles;
  std::optional<double> loading;
  std::optional<double> factor_corr;
  auto* simulate = app.add_subcommand("simulate", "Sample responses from a planted factor model");
  simulate->add_option("--n", sim_n, "Respondents")->check(CLI::PositiveNumber);
  simulate->add_option("--profiles", profiles, "none | two")->check(CLI::IsMember({"none", "two"}));
  simulate->add_option("--loading", loading, "Own-factor loading");
  simulate->add_option("--factor-corr", factor_corr, "Common factor correlation");

  std::optional<fs::path> run_dir;
  auto* report = app.add_subcommand("report", "Assemble report.md from a run directory");
  report->add_option("--run", run_dir, "Run directory (default: --out)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : exit_code_for(ErrorCode::ConfigInvalid);
  }

  if (!spdlog::get("synthpsych")) spdlog::set_default_logger(spdlog::stderr_color_mt("synthpsych"));
  spdlog::set_level(verbose ? spdlog::level::info : spdlog::level::warn);

  try {
    pipeline::Context ctx;
    ctx.config = config_path ? pipeline::load_config(*config_path) : pipeline::RunConfig{};
    if (ctx.config.item_bank.empty()) ctx.config.item_bank = pipeline::default_item_bank();
    if (out_dir) ctx.config.out_dir = *out_dir;
    if (seed) pipeline::apply_seed(ctx.config, *seed);
    if (replay_store) {
      ctx.config.transcript_mode = transport::StoreMode::Replay;
      ctx.config.transcript_store = *replay_store;
    } else if (record->count() > 0) {
      ctx.config.transcript_mode = transport::StoreMode::Record;
      if (record_store && !record_store->empty()) ctx.config.transcript_store = *record_store;
    } else if (passthrough) {
      ctx.config.transcript_mode = transport::StoreMode::Passthrough;
    }
    if (n_personas) ctx.config.cohort.n_total = *n_personas;
    if (batch) ctx.config.cohort.batch_size = *batch;
    if (sim_n) ctx.config.simulate.n = *sim_n;
    if (profiles) ctx.config.simulate.profiles = *profiles;
    if (loading) ctx.config.simulate.own_loading = *loading;
    if (factor_corr) ctx.config.simulate.factor_corr = *factor_corr;
    ctx.force = force;
    ctx.backend = std::move(backend);

    pipeline::StageReport result;
    if (*generate) result = pipeline::cmd_generate_personas(ctx);
    else if (*administer) result = pipeline::cmd_administer(ctx, personas_in);
    else if (*analyze) result = pipeline::cmd_analyze(ctx, responses_in);
    else if (*cluster) result = pipeline::cmd_cluster(ctx, personas_in, responses_in);
    else if (*simulate) result = pipeline::cmd_simulate(ctx);
    else result = pipeline::cmd_report(run_dir.value_or(ctx.config.out_dir), force);

    nlohmann::json summary = {{"stage", result.stage}, {"details", result.details}};
    for (const auto& p : result.outputs) summary["outputs"].push_back(p.generic_string());
    std::cout << summary.dump(2) << "\n";
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: IoFailure: " << e.what() << "\n";
    return exit_code_for(ErrorCode::IoFailure);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace synthpsych::cli
