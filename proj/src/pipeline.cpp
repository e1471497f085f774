#include "synthpsych/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <chrono>
#include <ctime>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "synthpsych/errors.hpp"
#include "synthpsych/scale_admin.hpp"
#include "synthpsych/synth_oracle.hpp"

#ifndef SYNTHPSYCH_DEFAULT_ITEM_BANK
#define SYNTHPSYCH_DEFAULT_ITEM_BANK "data/ams_items.json"
#endif

namespace synthpsych::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Config fields

[[noreturn]] void bad_value(const std::string& key, const std::string& value, std::string_view expected) {
  throw Error(ErrorCode::ConfigInvalid, fmt::format("{} = \"{}\": expected {}", key, value, expected));
}

template <typename Int>
Int to_integer(const std::string& key, const std::string& value, Int min_value) {
  Int out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size() || out < min_value) {
    bad_value(key, value, fmt::format("an integer >= {}", min_value));
  }
  return out;
}

double to_real(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(value, &used);
  } catch (const std::exception&) {
    bad_value(key, value, "a real number");
  }
  if (used != value.size() || !std::isfinite(out)) bad_value(key, value, "a real number");
  return out;
}

struct Field {
  std::string section;
  std::string key;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::string real_text(double v) { return fmt::format("{}", v); }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    auto text = [&](std::string s, std::string k, auto member) {
      f.push_back({std::move(s), std::move(k),
                   [member](RunConfig& c, const std::string&, const std::string& v) { member(c) = v; },
                   [member](const RunConfig& c) { return std::string(member(const_cast<RunConfig&>(c))); }});
    };
    auto path = [&](std::string s, std::string k, auto member) {
      f.push_back({std::move(s), std::move(k),
                   [member](RunConfig& c, const std::string&, const std::string& v) { member(c) = fs::path(v); },
                   [member](const RunConfig& c) { return member(const_cast<RunConfig&>(c)).generic_string(); }});
    };
    auto integer = [&](std::string s, std::string k, auto member, long long min_value) {
      f.push_back({std::move(s), std::move(k),
                   [member, min_value](RunConfig& c, const std::string& key, const std::string& v) {
                     using T = std::remove_reference_t<decltype(member(c))>;
                     member(c) = static_cast<T>(to_integer<long long>(key, v, min_value));
                   },
                   [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); }});
    };
    auto real = [&](std::string s, std::string k, auto member) {
      f.push_back({std::move(s), std::move(k),
                   [member](RunConfig& c, const std::string& key, const std::string& v) { member(c) = to_real(key, v); },
                   [member](const RunConfig& c) { return real_text(member(const_cast<RunConfig&>(c))); }});
    };

    text("api", "base_url", [](RunConfig& c) -> std::string& { return c.api_base_url; });
    text("api", "chat_model", [](RunConfig& c) -> std::string& { return c.chat_model; });
    text("api", "embedding_model", [](RunConfig& c) -> std::string& { return c.embedding_model; });
    integer("api", "embedding_dim", [](RunConfig& c) -> std::size_t& { return c.embedding_dim; }, 0);
    integer("api", "max_in_flight", [](RunConfig& c) -> std::size_t& { return c.max_in_flight; }, 1);

    integer("cohort", "n_total", [](RunConfig& c) -> int& { return c.cohort.n_total; }, 1);
    integer("cohort", "batch_size", [](RunConfig& c) -> int& { return c.cohort.batch_size; }, 1);
    real("cohort", "temperature", [](RunConfig& c) -> double& { return c.cohort.temperature; });
    text("cohort", "seed_note", [](RunConfig& c) -> std::string& { return c.cohort.seed_note; });
    integer("cohort", "reprompt_budget", [](RunConfig& c) -> int& { return c.cohort.reprompt_budget; }, 0);

    real("administer", "temperature", [](RunConfig& c) -> double& { return c.response_temperature; });
    integer("administer", "reprompt_budget", [](RunConfig& c) -> int& { return c.response_reprompt_budget; }, 0);
    path("administer", "item_bank", [](RunConfig& c) -> fs::path& { return c.item_bank; });

    integer("efa", "pa_replicates", [](RunConfig& c) -> int& { return c.efa.pa_replicates; }, 1);
    f.push_back({"efa", "pa_criterion",
                 [](RunConfig& c, const std::string& key, const std::string& v) {
                   if (v == "mean") c.efa.pa_criterion = factor::PaCriterion::Mean;
                   else if (v == "p95") c.efa.pa_criterion = factor::PaCriterion::P95;
                   else bad_value(key, v, "mean or p95");
                 },
                 [](const RunConfig& c) {
                   return std::string(c.efa.pa_criterion == factor::PaCriterion::Mean ? "mean" : "p95");
                 }});
    integer("efa", "paf_max_iter", [](RunConfig& c) -> int& { return c.efa.paf_max_iter; }, 1);
    real("efa", "paf_tol", [](RunConfig& c) -> double& { return c.efa.paf_tol; });
    integer("efa", "promax_kappa", [](RunConfig& c) -> int& { return c.efa.promax_kappa; }, 1);

    integer("cfa", "max_iter", [](RunConfig& c) -> int& { return c.cfa.max_iter; }, 1);
    real("cfa", "grad_tol", [](RunConfig& c) -> double& { return c.cfa.grad_tol; });

    integer("cluster", "k", [](RunConfig& c) -> int& { return c.cluster.k; }, 1);
    integer("cluster", "restarts", [](RunConfig& c) -> int& { return c.cluster.restarts; }, 1);
    integer("cluster", "max_iter", [](RunConfig& c) -> int& { return c.cluster.max_iter; }, 1);
    real("cluster", "tol", [](RunConfig& c) -> double& { return c.cluster.tol; });

    real("tsne", "perplexity", [](RunConfig& c) -> double& { return c.tsne.perplexity; });
    integer("tsne", "iterations", [](RunConfig& c) -> int& { return c.tsne.iterations; }, 1);
    real("tsne", "learning_rate", [](RunConfig& c) -> double& { return c.tsne.learning_rate; });
    real("tsne", "early_exaggeration", [](RunConfig& c) -> double& { return c.tsne.early_exaggeration; });
    integer("tsne", "exaggeration_iters", [](RunConfig& c) -> int& { return c.tsne.exaggeration_iters; }, 0);
    integer("tsne", "pca_predim", [](RunConfig& c) -> int& { return c.tsne.pca_predim; }, 0);

    integer("simulate", "n", [](RunConfig& c) -> std::size_t& { return c.simulate.n; }, 1);
    real("simulate", "own_loading", [](RunConfig& c) -> double& { return c.simulate.own_loading; });
    real("simulate", "factor_corr", [](RunConfig& c) -> double& { return c.simulate.factor_corr; });
    f.push_back({"simulate", "profiles",
                 [](RunConfig& c, const std::string& key, const std::string& v) {
                   if (v != "none" && v != "two") bad_value(key, v, "none or two");
                   c.simulate.profiles = v;
                 },
                 [](const RunConfig& c) { return c.simulate.profiles; }});
    real("simulate", "profile_shift", [](RunConfig& c) -> double& { return c.simulate.profile_shift; });

    f.push_back({"run", "transcript_mode",
                 [](RunConfig& c, const std::string&, const std::string& v) {
                   c.transcript_mode = transport::parse_store_mode(v);
                 },
                 [](const RunConfig& c) { return std::string(transport::to_string(c.transcript_mode)); }});
    path("run", "transcript_store", [](RunConfig& c) -> fs::path& { return c.transcript_store; });
    path("run", "out_dir", [](RunConfig& c) -> fs::path& { return c.out_dir; });
    f.push_back({"run", "seed",
                 [](RunConfig& c, const std::string& key, const std::string& v) {
                   apply_seed(c, to_integer<std::uint64_t>(key, v, 0));
                 },
                 [](const RunConfig& c) { return std::to_string(c.seed); }});
    return f;
  }();
  return table;
}

// ---------------------------------------------------------------------------
// Run directory plumbing

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out << content;
  if (!out) throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingArtifacts, "missing " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::IoFailure, path.string() + ": " + e.what());
  }
}

class Stage {
 public:
  Stage(const Context& ctx, std::string name, std::vector<std::string> outputs)
      : ctx_(ctx), name_(std::move(name)), started_(utc_now()) {
    const fs::path& dir = ctx.config.out_dir;
    fs::create_directories(dir);
    for (auto& file : outputs) {
      fs::path path = dir / file;
      if (fs::exists(path) && !ctx.force) {
        throw Error(ErrorCode::OutputExists, path.string() + " exists; pass --force to overwrite");
      }
      outputs_.push_back(std::move(path));
    }
    write_text(dir / "config.ini", render_config(ctx.config));
  }

  const fs::path& output(std::size_t i) const { return outputs_.at(i); }
  void input(const fs::path& path) { inputs_.push_back(path); }

  StageReport finish(json details) {
    const fs::path& dir = ctx_.config.out_dir;
    json manifest = read_manifest(dir);
    const std::string config_digest = transport::sha256_hex(render_config(ctx_.config));
    if (!manifest.contains("run_id")) manifest["run_id"] = "run-" + config_digest.substr(0, 12);
    manifest["tool_version"] = kToolVersion;
    manifest["config_digest"] = config_digest;

    json stage = {{"started", started_}, {"finished", utc_now()}, {"config_digest", config_digest},
                  {"details", details}};
    for (const auto& in : inputs_) stage["inputs"][in.filename().string()] = file_digest(in);
    for (const auto& out : outputs_) stage["outputs"][out.filename().string()] = file_digest(out);
    manifest["stages"][name_] = stage;
    write_json(dir / "manifest.json", manifest);

    spdlog::info("{}: wrote {} file(s) to {}", name_, outputs_.size(), dir.string());
    return {name_, outputs_, std::move(details)};
  }

 private:
  const Context& ctx_;
  std::string name_;
  std::string started_;
  std::vector<fs::path> inputs_;
  std::vector<fs::path> outputs_;
};

struct GatewayBundle {
  std::unique_ptr<transport::TranscriptStore> store;
  std::unique_ptr<transport::Gateway> gateway;
};

GatewayBundle open_gateway(const Context& ctx) {
  const RunConfig& c = ctx.config;
  GatewayBundle out;
  out.store = std::make_unique<transport::TranscriptStore>(c.transcript_mode, c.transcript_store);
  std::shared_ptr<transport::HttpBackend> backend;
  if (c.transcript_mode != transport::StoreMode::Replay) {
    backend = ctx.backend ? ctx.backend : std::shared_ptr<transport::HttpBackend>(transport::make_https_backend());
  }
  transport::GatewayConfig gc;
  gc.base_url = c.api_base_url;
  gc.max_in_flight = c.max_in_flight;
  gc.embedding_dim = c.embedding_dim;
  out.gateway = std::make_unique<transport::Gateway>(gc, *out.store, std::move(backend), ctx.sleeper);
  return out;
}

fs::path input_or_default(const fs::path& given, const RunConfig& c, std::string_view name) {
  fs::path path = given.empty() ? c.out_dir / name : given;
  if (!fs::exists(path)) throw Error(ErrorCode::MissingArtifacts, "missing input " + path.string());
  return path;
}

std::string csv_real(double v) { return fmt::format("{}", v); }

}  // namespace

// ---------------------------------------------------------------------------
// Config

fs::path default_item_bank() {
  const fs::path local = "data/ams_items.json";
  if (fs::exists(local)) return local;
  return SYNTHPSYCH_DEFAULT_ITEM_BANK;
}

void apply_seed(RunConfig& config, std::uint64_t seed) {
  config.seed = seed;
  config.efa.rng_seed = seed;
  config.cluster.rng_seed = seed;
  config.tsne.rng_seed = seed;
}

RunConfig parse_config(const std::string& text) {
  boost::property_tree::ptree tree;
  try {
    std::istringstream in(text);
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error(ErrorCode::ConfigInvalid, e.what());
  }

  RunConfig config;
  config.item_bank = default_item_bank();
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw Error(ErrorCode::ConfigInvalid, "key outside a section: " + section);
    }
    for (const auto& [key, value] : body) {
      const auto& table = fields();
      const auto it = std::find_if(table.begin(), table.end(),
                                   [&](const Field& f) { return f.section == section && f.key == key; });
      if (it == table.end()) throw Error(ErrorCode::ConfigInvalid, fmt::format("unknown key [{}] {}", section, key));
      it->set(config, section + "." + key, value.data());
    }
  }
  return config;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigInvalid, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string render_config(const RunConfig& config) {
  std::string out;
  std::string current;
  for (const auto& f : fields()) {
    if (f.section != current) {
      if (!current.empty()) out += '\n';
      out += "[" + f.section + "]\n";
      current = f.section;
    }
    out += f.key + " = " + f.get(config) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest

std::string file_digest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return transport::sha256_hex(ss.str());
}

json read_manifest(const fs::path& run_dir) {
  const fs::path path = run_dir / "manifest.json";
  if (!fs::exists(path)) return json::object();
  return read_json(path);
}

// ---------------------------------------------------------------------------
// Stages

StageReport cmd_generate_personas(const Context& ctx) {
  Stage stage(ctx, "generate-personas", {"personas.jsonl"});
  auto io = open_gateway(ctx);
  persona::CohortSpec spec = ctx.config.cohort;
  spec.model_id = ctx.config.chat_model;
  const auto cohort = persona::generate_cohort(spec, *io.gateway);
  persona::write_personas_jsonl(stage.output(0), cohort.personas);
  return stage.finish({{"n_personas", cohort.personas.size()},
                       {"chat_requests", cohort.requests},
                       {"retries", cohort.retries},
                       {"soft_warnings", cohort.warnings.size()},
                       {"temperature", spec.temperature},
                       {"batch_size", spec.batch_size},
                       {"transcript_mode", transport::to_string(ctx.config.transcript_mode)}});
}

StageReport cmd_administer(const Context& ctx, const fs::path& personas_path) {
  const fs::path personas_file = input_or_default(personas_path, ctx.config, "personas.jsonl");
  Stage stage(ctx, "administer", {"responses.csv", "dropouts.jsonl"});
  stage.input(personas_file);
  const auto cohort = persona::read_personas_jsonl(personas_file);
  const fs::path bank_path = ctx.config.item_bank.empty() ? default_item_bank() : ctx.config.item_bank;
  const auto bank = scale::load_item_bank(bank_path);
  auto io = open_gateway(ctx);

  scale::AdministerOptions options;
  options.model_id = ctx.config.chat_model;
  options.temperature = ctx.config.response_temperature;
  options.reprompt_budget = ctx.config.response_reprompt_budget;
  const auto result = scale::administer(cohort, bank, *io.gateway, options);
  scale::write_responses_csv(stage.output(0), result.matrix);
  scale::write_dropouts_jsonl(stage.output(1), result.dropouts);
  return stage.finish({{"n_personas", cohort.size()},
                       {"n_responses", result.matrix.n()},
                       {"dropouts", result.dropouts.size()},
                       {"chat_requests", result.requests},
                       {"retries", result.retries},
                       {"temperature", options.temperature},
                       {"item_bank_digest", file_digest(bank_path)}});
}

StageReport cmd_analyze(const Context& ctx, const fs::path& responses_path) {
  const fs::path responses_file = input_or_default(responses_path, ctx.config, "responses.csv");
  Stage stage(ctx, "analyze", {"efa_result.json", "cfa_result.json", "scree.csv", "scree.svg"});
  stage.input(responses_file);
  const auto matrix = scale::read_responses_csv(responses_file);
  const Eigen::MatrixXd data = scale::to_real_matrix(matrix);

  const auto efa = factor::run_efa(data, ctx.config.efa);
  const auto spec = factor::ams_cfa_spec();
  const auto cfa = factor::fit_cfa(factor::sample_covariance(data), matrix.n(), spec, ctx.config.cfa);

  json efa_json = factor::to_json(efa);
  efa_json["n"] = matrix.n();
  write_json(stage.output(0), efa_json);
  write_json(stage.output(1), factor::to_json(cfa, spec));

  std::string scree = "rank,observed,reference_mean,reference_p95\n";
  for (Eigen::Index r = 0; r < efa.pa.observed.size(); ++r) {
    scree += fmt::format("{},{},{},{}\n", r + 1, csv_real(efa.pa.observed(r)), csv_real(efa.pa.reference_mean(r)),
                         csv_real(efa.pa.reference_p95(r)));
  }
  write_text(stage.output(2), scree);
  write_text(stage.output(3), scree_svg(efa.pa));
  return stage.finish({{"n", matrix.n()},
                       {"retained_k", efa.retained_k},
                       {"cfa_converged", cfa.converged},
                       {"cfi", cfa.fit.cfi},
                       {"tli", cfa.fit.tli},
                       {"rmsea", cfa.fit.rmsea},
                       {"srmr", cfa.fit.srmr}});
}

StageReport cmd_cluster(const Context& ctx, const fs::path& personas_path, const fs::path& responses_path) {
  const fs::path personas_file = input_or_default(personas_path, ctx.config, "personas.jsonl");
  const fs::path responses_file = input_or_default(responses_path, ctx.config, "responses.csv");
  Stage stage(ctx, "cluster",
              {"clusters.csv", "tsne.csv", "tsne.svg", "kw_tests.json", "boxplot_data.csv", "boxplots.svg"});
  stage.input(personas_file);
  stage.input(responses_file);

  const auto cohort = persona::read_personas_jsonl(personas_file);
  const auto matrix = scale::read_responses_csv(responses_file);
  std::map<int, const persona::Persona*> by_id;
  for (const auto& p : cohort) by_id[p.id] = &p;

  std::vector<std::string> texts;
  std::vector<int> ids;
  for (const auto& row : matrix.rows) {
    const auto it = by_id.find(row.persona_id);
    if (it == by_id.end()) {
      throw Error(ErrorCode::IdMismatch, fmt::format("responses.csv persona {} not in personas file", row.persona_id));
    }
    texts.push_back(it->second->description);
    ids.push_back(row.persona_id);
  }
  if (ids.size() < cohort.size()) {
    spdlog::info("clustering {} of {} personas (the rest have no responses)", ids.size(), cohort.size());
  }

  auto io = open_gateway(ctx);
  const auto embeddings = io.gateway->embed(texts, ctx.config.embedding_model, ids);
  Eigen::MatrixXd vectors(static_cast<Eigen::Index>(embeddings.size()),
                          static_cast<Eigen::Index>(embeddings.front().dim()));
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    for (std::size_t j = 0; j < embeddings[i].dim(); ++j) {
      vectors(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = embeddings[i].values[j];
    }
  }

  const auto clusters = cluster::kmeans(vectors, ctx.config.cluster);
  const auto layout = cluster::tsne(vectors, ctx.config.tsne);

  const auto bank = scale::load_item_bank(ctx.config.item_bank.empty() ? default_item_bank() : ctx.config.item_bank);
  std::vector<scale::SubscaleScores> scores;
  std::map<int, int> assignment;
  std::vector<int> labels;  // 1-based for reporting
  for (std::size_t i = 0; i < matrix.rows.size(); ++i) {
    scores.push_back(scale::subscale_scores(matrix.rows[i], bank));
    labels.push_back(clusters.assignments[i] + 1);
    assignment[matrix.rows[i].persona_id] = labels.back();
  }
  const auto summary = cluster::subgroup_summary(scores, assignment);

  std::string clusters_csv = "persona_id,cluster\n";
  std::string tsne_csv = "persona_id,x,y,cluster\n";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    clusters_csv += fmt::format("{},{}\n", ids[i], labels[i]);
    tsne_csv += fmt::format("{},{},{},{}\n", ids[i], csv_real(layout.layout(static_cast<Eigen::Index>(i), 0)),
                            csv_real(layout.layout(static_cast<Eigen::Index>(i), 1)), labels[i]);
  }
  write_text(stage.output(0), clusters_csv);
  write_text(stage.output(1), tsne_csv);
  write_text(stage.output(2), tsne_svg(layout.layout, labels));

  json kw = json::array();
  for (const auto& t : summary.tests) kw.push_back(cluster::to_json(t));
  write_json(stage.output(3), kw);

  std::string box_csv = "cluster,subscale,n,median,q1,q3,lo_whisker,hi_whisker,outliers\n";
  for (const auto& b : summary.boxes) {
    std::string outliers;
    for (std::size_t i = 0; i < b.outliers.size(); ++i) outliers += (i ? ";" : "") + csv_real(b.outliers[i]);
    box_csv += fmt::format("{},{},{},{},{},{},{},{},{}\n", b.cluster, b.subscale, b.n, csv_real(b.median),
                           csv_real(b.q1), csv_real(b.q3), csv_real(b.lo_whisker), csv_real(b.hi_whisker), outliers);
  }
  write_text(stage.output(4), box_csv);
  write_text(stage.output(5), boxplot_svg(summary));

  std::vector<std::size_t> sizes(static_cast<std::size_t>(ctx.config.cluster.k), 0);
  for (int a : clusters.assignments) ++sizes[static_cast<std::size_t>(a)];
  return stage.finish({{"n", ids.size()},
                       {"k", ctx.config.cluster.k},
                       {"cluster_sizes", sizes},
                       {"inertia", clusters.inertia},
                       {"embedding_dim", embeddings.front().dim()},
                       {"final_kl", layout.kl_trace.empty() ? 0.0 : layout.kl_trace.back().second}});
}

StageReport cmd_simulate(const Context& ctx) {
  Stage stage(ctx, "simulate", {"responses.csv", "planted_model.json"});
  const auto& sim = ctx.config.simulate;
  const auto model = oracle::ams_model(sim.own_loading, sim.factor_corr);
  oracle::ProfileMix mix;
  if (sim.profiles == "two") {
    mix = {{oracle::intrinsic_dominant(sim.profile_shift), 1.0}, {oracle::external_dominant(sim.profile_shift), 1.0}};
  }
  const auto sample = oracle::sample_respondents(model, sim.n, mix, ctx.config.seed);
  scale::write_responses_csv(stage.output(0), sample.matrix);

  json planted = oracle::to_json(model);
  planted["n"] = sim.n;
  planted["seed"] = ctx.config.seed;
  json profiles = json::array();
  for (const auto& share : mix) {
    const auto& o = share.profile.factor_offsets;
    profiles.push_back({{"name", share.profile.name},
                        {"weight", share.weight},
                        {"factor_offsets", std::vector<double>(o.data(), o.data() + o.size())}});
  }
  planted["profiles"] = profiles;
  planted["row_profile"] = sample.profile;
  write_json(stage.output(1), planted);
  return stage.finish({{"n", sim.n}, {"profiles", sim.profiles}, {"seed", ctx.config.seed}});
}

StageReport cmd_report(const fs::path& run_dir, bool force) {
  const fs::path efa_path = run_dir / "efa_result.json";
  const fs::path cfa_path = run_dir / "cfa_result.json";
  for (const auto& p : {efa_path, cfa_path}) {
    if (!fs::exists(p)) throw Error(ErrorCode::MissingArtifacts, "run directory lacks " + p.filename().string());
  }
  const fs::path out = run_dir / "report.md";
  if (fs::exists(out) && !force) throw Error(ErrorCode::OutputExists, out.string() + " exists; pass --force to overwrite");

  const json efa = read_json(efa_path);
  const json cfa = read_json(cfa_path);
  const fs::path kw_path = run_dir / "kw_tests.json";
  std::optional<json> kw;
  if (fs::exists(kw_path)) kw = read_json(kw_path);
  write_text(out, render_report(efa, cfa, kw ? &*kw : nullptr));
  return {"report", {out}, json::object()};
}

}  // namespace synthpsych::pipeline
