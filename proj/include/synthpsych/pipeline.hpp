#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "synthpsych/cluster_engine.hpp"
#include "synthpsych/factor_engine.hpp"
#include "synthpsych/persona_gen.hpp"
#include "synthpsych/transport.hpp"

namespace synthpsych::pipeline {

inline constexpr std::string_view kToolVersion = "0.3.0";

struct SimulateConfig {
  std::size_t n = 2000;
  double own_loading = 0.8;
  double factor_corr = 0.3;
  std::string profiles = "none";  // none | two
  double profile_shift = 1.0;
};

struct RunConfig {
  std::string api_base_url = "https://api.openai.com/v1";
  std::string chat_model = "gpt-4o";
  std::string embedding_model = "text-embedding-3-small";
  std::size_t embedding_dim = 1536;
  std::size_t max_in_flight = 4;

  persona::CohortSpec cohort;  // temperature 1.0
  double response_temperature = 0.0;
  int response_reprompt_budget = 3;
  std::filesystem::path item_bank;

  factor::EfaConfig efa;
  factor::CfaOptions cfa;
  cluster::ClusterConfig cluster;
  cluster::TsneConfig tsne;
  SimulateConfig simulate;

  transport::StoreMode transcript_mode = transport::StoreMode::Record;
  std::filesystem::path transcript_store = "transcripts.jsonl";
  std::filesystem::path out_dir = "run";
  std::uint64_t seed = 42;
};

// Default item bank shipped with the tool.
std::filesystem::path default_item_bank();

// Key-value config with [sections]; every key is optional, unknown keys are ConfigInvalid.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
// Canonical config echo (same format parse_config reads).
std::string render_config(const RunConfig& config);
// Pushes the global seed into the per-module configs.
void apply_seed(RunConfig& config, std::uint64_t seed);

struct Context {
  RunConfig config;
  bool force = false;
  // Network backend for live modes; when null a real HTTPS backend is created on demand.
  std::shared_ptr<transport::HttpBackend> backend;
  transport::Gateway::Sleeper sleeper;
};

struct StageReport {
  std::string stage;
  std::vector<std::filesystem::path> outputs;
  nlohmann::json details;
};

StageReport cmd_generate_personas(const Context& ctx);
StageReport cmd_administer(const Context& ctx, const std::filesystem::path& personas = {});
StageReport cmd_analyze(const Context& ctx, const std::filesystem::path& responses = {});
StageReport cmd_cluster(const Context& ctx, const std::filesystem::path& personas = {},
                        const std::filesystem::path& responses = {});
StageReport cmd_simulate(const Context& ctx);
StageReport cmd_report(const std::filesystem::path& run_dir, bool force = false);

// Manifest helpers.
std::string file_digest(const std::filesystem::path& path);
nlohmann::json read_manifest(const std::filesystem::path& run_dir);

// Figures (self-contained SVG, no timestamps).
std::string scree_svg(const factor::ParallelAnalysis& pa);
std::string tsne_svg(const Eigen::MatrixXd& layout, const std::vector<int>& clusters);
std::string boxplot_svg(const cluster::SubgroupSummary& summary);

std::string render_report(const nlohmann::json& efa, const nlohmann::json& cfa, const nlohmann::json* kw_tests);
std::string format_fit_line(double cfi, double tli, double rmsea, double srmr);

}  // namespace synthpsych::pipeline
