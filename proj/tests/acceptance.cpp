// Acceptance suite: one PASS/FAIL line per criterion; exit status is the number of failures.
#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <unistd.h>

#include "fixture_backend.hpp"
#include "synthpsych/cluster_engine.hpp"
#include "synthpsych/factor_engine.hpp"
#include "synthpsych/persona_gen.hpp"
#include "synthpsych/pipeline.hpp"
#include "synthpsych/random.hpp"
#include "synthpsych/scale_admin.hpp"
#include "synthpsych/synth_oracle.hpp"

using namespace synthpsych;
using Eigen::MatrixXd;
using Eigen::VectorXd;
namespace fs = std::filesystem;

namespace tol {
constexpr double kPaSeconds = 30.0;
constexpr double kPhi = 0.1;
constexpr double kFmlExact = 1e-8;
constexpr double kCfiExact = 1e-12;
constexpr double kRmseaExact = 1e-12;
constexpr double kSrmrExact = 1e-6;
constexpr double kLoadingExact = 1e-4;
constexpr double kLoadingCorridor = 0.05;
constexpr double kCfiSample = 0.99;
constexpr double kRmseaSample = 0.03;
constexpr double kFdStep = 1e-6;
constexpr double kGradRel = 1e-4;
constexpr double kFitIndex = 1e-5;
constexpr double kRmsea = 1e-6;
constexpr double kKwH = 1e-12;
constexpr double kKwP = 1e-10;
constexpr double kTail = 1e-10;
constexpr double kPipelineSeconds = 60.0;
}  // namespace tol

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const oracle::PlantedModel& ams() {
  static const auto m = oracle::ams_model(0.8, 0.3);
  return m;
}

const MatrixXd& ams_sample() {
  static const MatrixXd data = oracle::sample(ams(), 2000, {}, 42).categories;
  return data;
}

// Attenuated targets from the oracle's discretized population correlation.
struct Targets {
  double within = 0.0;   // same-factor item correlation
  double between = 0.0;  // cross-factor item correlation
  double loading() const { return std::sqrt(within); }
  double phi() const { return between / within; }
};

Targets attenuated_targets() {
  const MatrixXd r = oracle::discretized_population_correlation(ams());
  Targets t;
  int nw = 0, nb = 0;
  for (int i = 0; i < 28; ++i) {
    for (int j = 0; j < i; ++j) {
      if (scale::kAmsItemMap[static_cast<std::size_t>(i)] == scale::kAmsItemMap[static_cast<std::size_t>(j)]) {
        t.within += r(i, j);
        ++nw;
      } else {
        t.between += r(i, j);
        ++nb;
      }
    }
  }
  t.within /= nw;
  t.between /= nb;
  return t;
}

Verdict factor_count() {
  factor::EfaConfig cfg;
  auto t0 = std::chrono::steady_clock::now();
  const int k7 = factor::parallel_analysis(ams_sample(), cfg).retained_k;
  const double s7 = seconds_since(t0);

  const MatrixXd single = oracle::sample(oracle::single_factor_model(28, 0.9), 2000, {}, 42).categories;
  t0 = std::chrono::steady_clock::now();
  const int k1 = factor::parallel_analysis(single, cfg).retained_k;
  const double s1 = seconds_since(t0);

  return {k7 == 7 && k1 == 1 && s7 < tol::kPaSeconds && s1 < tol::kPaSeconds,
          fmt::format("7-factor model -> {}, 1-factor model -> {}; {:.2f} s / {:.2f} s", k7, k1, s7, s1)};
}

Verdict structure_recovery() {
  factor::EfaConfig cfg;
  const auto r = factor::pearson_correlation(ams_sample()).r;
  const auto paf = factor::principal_axis_factoring(r, 7, cfg);
  const auto pm = factor::promax_rotate(paf.loadings, cfg.promax_kappa);

  // Map each rotated column to the planted factor of the items it dominates.
  std::vector<int> item_col(28);
  std::vector<std::map<int, int>> votes(7);
  for (int i = 0; i < 28; ++i) {
    Eigen::Index c = 0;
    pm.pattern.row(i).cwiseAbs().maxCoeff(&c);
    item_col[static_cast<std::size_t>(i)] = static_cast<int>(c);
    ++votes[static_cast<std::size_t>(c)][static_cast<int>(scale::kAmsItemMap[static_cast<std::size_t>(i)])];
  }
  std::vector<int> col_factor(7, -1);
  std::set<int> used;
  for (int c = 0; c < 7; ++c) {
    int best = -1, count = 0;
    for (const auto& [f, n] : votes[static_cast<std::size_t>(c)]) {
      if (n > count) best = f, count = n;
    }
    col_factor[static_cast<std::size_t>(c)] = best;
    if (best >= 0) used.insert(best);
  }
  int correct = 0;
  for (int i = 0; i < 28; ++i) {
    correct += col_factor[static_cast<std::size_t>(item_col[static_cast<std::size_t>(i)])] ==
               static_cast<int>(scale::kAmsItemMap[static_cast<std::size_t>(i)]);
  }

  const double target = attenuated_targets().phi();
  double worst = 0.0;
  for (int a = 0; a < 7; ++a) {
    for (int b = 0; b < a; ++b) worst = std::max(worst, std::abs(pm.phi(a, b) - target));
  }
  const bool bijective = used.size() == 7;
  return {bijective && correct == 28 && worst <= tol::kPhi,
          fmt::format("{}/28 items on planted factor{}; max |phi - {:.4f}| = {:.4f}", correct,
                      bijective ? "" : " (column map not one-to-one)", target, worst)};
}

Verdict cfa_exactness() {
  const auto spec = factor::ams_cfa_spec();
  const auto exact = factor::fit_cfa(oracle::population_covariance(ams()), 2000, spec);
  const double loading_err = (exact.loadings.array() - 0.8).abs().maxCoeff();
  const bool exact_ok = exact.f_ml < tol::kFmlExact && std::abs(exact.fit.cfi - 1.0) <= tol::kCfiExact &&
                        exact.fit.rmsea <= tol::kRmseaExact && exact.fit.srmr < tol::kSrmrExact &&
                        loading_err <= tol::kLoadingExact;

  const auto sampled = factor::fit_cfa(factor::sample_covariance(ams_sample()), 2000, spec);
  const double target = attenuated_targets().loading();
  const double corridor = (sampled.standardized_loadings.array() - target).abs().maxCoeff();
  const bool sample_ok = corridor <= tol::kLoadingCorridor && sampled.fit.cfi > tol::kCfiSample &&
                         sampled.fit.rmsea < tol::kRmseaSample;

  return {exact_ok && sample_ok,
          fmt::format("population: F_ML = {:.2e}, CFI = {:.12f}, RMSEA = {:.2e}, SRMR = {:.2e}, max |lambda - 0.8| = "
                      "{:.2e}; sample: max |std lambda - {:.4f}| = {:.4f}, CFI = {:.4f}, RMSEA = {:.4f}",
                      exact.f_ml, exact.fit.cfi, exact.fit.rmsea, exact.fit.srmr, loading_err, target, corridor,
                      sampled.fit.cfi, sampled.fit.rmsea)};
}

Verdict gradient_check() {
  const factor::CfaModel model(factor::ams_cfa_spec());
  const MatrixXd s = factor::sample_covariance(ams_sample());
  Rng rng(2024);
  double worst = 0.0;
  int points = 0;
  while (points < 10) {
    VectorXd theta = model.start_values(s);
    for (Eigen::Index i = 0; i < theta.size(); ++i) theta(i) += 0.3 * rng.normal();
    const auto obj = factor::cfa_objective(model, s, theta);
    if (!std::isfinite(obj.value)) continue;
    VectorXd fd(theta.size());
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      VectorXd up = theta, down = theta;
      up(i) += tol::kFdStep;
      down(i) -= tol::kFdStep;
      fd(i) = (factor::cfa_objective(model, s, up).value - factor::cfa_objective(model, s, down).value) /
              (2.0 * tol::kFdStep);
    }
    worst = std::max(worst, (fd - obj.gradient).norm() / std::max(obj.gradient.norm(), 1e-12));
    ++points;
  }
  return {worst < tol::kGradRel, fmt::format("10 points, max ||fd - g|| / ||g|| = {:.2e}", worst)};
}

Verdict fit_arithmetic() {
  // Hand arithmetic: CFI = 1 - 10/622, TLI = (1000/378 - 50/40) / (1000/378 - 1), RMSEA = sqrt(10 / (40 * 2000)).
  const double cfi = 1.0 - 10.0 / 622.0;
  const double tli = (1000.0 / 378.0 - 50.0 / 40.0) / (1000.0 / 378.0 - 1.0);
  const double rmsea = std::sqrt(10.0 / (40.0 * 2000.0));
  const MatrixXd id = MatrixXd::Identity(2, 2);
  const auto fit = factor::fit_indices(50.0, 40, 1000.0, 378, 2000, id, id);
  const bool ok = std::abs(fit.cfi - 0.98392) <= tol::kFitIndex && std::abs(fit.tli - 0.84807) <= tol::kFitIndex &&
                  std::abs(fit.rmsea - 0.011180) <= tol::kRmsea && std::abs(fit.cfi - cfi) < 1e-14 &&
                  std::abs(fit.tli - tli) < 1e-14 && std::abs(fit.rmsea - rmsea) < 1e-15;
  return {ok, fmt::format("CFI = {:.6f}, TLI = {:.6f}, RMSEA = {:.7f}", fit.cfi, fit.tli, fit.rmsea)};
}

Verdict kruskal_wallis() {
  const auto kw = cluster::kruskal_wallis({{1, 2, 3}, {4, 5, 6}, {7, 8, 9}});
  const auto same = cluster::kruskal_wallis({{1, 2, 3}, {1, 2, 3}, {1, 2, 3}});
  double tail_err = 0.0;
  for (double h : {0.1, 1.0, 5.0, 20.0}) tail_err = std::max(tail_err, std::abs(cluster::chi_square_sf(h, 2) - std::exp(-h / 2.0)));
  const bool ok = std::abs(kw.h - 7.2) <= tol::kKwH && std::abs(kw.p - std::exp(-3.6)) <= tol::kKwP &&
                  same.h == 0.0 && same.p == 1.0 && tail_err <= tol::kTail;
  return {ok, fmt::format("H = {:.15f}, p = {:.15f}; identical groups H = {}, p = {}; tail error {:.1e}", kw.h, kw.p,
                          same.h, same.p, tail_err)};
}

Verdict clustering() {
  constexpr int kDim = 1536, kPerBlob = 100;
  Rng rng(7);
  MatrixXd centers(3, kDim);
  for (int b = 0; b < 3; ++b) {
    for (int j = 0; j < kDim; ++j) centers(b, j) = rng.normal();
    centers.row(b) *= 100.0 / centers.row(b).norm();  // 100x the unit per-coordinate spread
  }
  MatrixXd x(3 * kPerBlob, kDim);
  std::vector<int> truth;
  for (int b = 0; b < 3; ++b) {
    for (int i = 0; i < kPerBlob; ++i) {
      for (int j = 0; j < kDim; ++j) x(b * kPerBlob + i, j) = centers(b, j) + rng.normal();
      truth.push_back(b);
    }
  }
  const auto result = cluster::kmeans(x, cluster::ClusterConfig{});
  const double ari = cluster::adjusted_rand_index(result.assignments, truth);
  bool monotone = true;
  std::size_t steps = 0;
  for (const auto& run : result.runs) {
    for (std::size_t i = 1; i < run.inertia_trace.size(); ++i) {
      monotone = monotone && run.inertia_trace[i] <= run.inertia_trace[i - 1];
      ++steps;
    }
  }
  return {ari == 1.0 && monotone,
          fmt::format("ARI = {}; inertia non-increasing over {} logged steps in {} runs: {}", ari, steps,
                      result.runs.size(), monotone ? "yes" : "no")};
}

Verdict tsne_sanity() {
  Rng rng(11);
  MatrixXd x(20, 10);
  std::vector<int> truth;
  for (int i = 0; i < 20; ++i) {
    const int g = i % 2;
    for (int j = 0; j < 10; ++j) x(i, j) = (g == 0 ? 0.0 : 10.0) + 0.1 * rng.normal();
    truth.push_back(g);
  }
  cluster::TsneConfig cfg;
  cfg.perplexity = 5.0;
  const auto a = cluster::tsne(x, cfg);
  const auto b = cluster::tsne(x, cfg);
  int pure = 0;
  for (Eigen::Index i = 0; i < 20; ++i) {
    Eigen::Index nearest = 0;
    double best = INFINITY;
    for (Eigen::Index j = 0; j < 20; ++j) {
      const double d = (a.layout.row(i) - a.layout.row(j)).squaredNorm();
      if (i != j && d < best) best = d, nearest = j;
    }
    pure += truth[static_cast<std::size_t>(i)] == truth[static_cast<std::size_t>(nearest)];
  }
  const bool identical = std::memcmp(a.layout.data(), b.layout.data(), sizeof(double) * 40) == 0;
  return {pure == 20 && identical,
          fmt::format("nearest-neighbour purity {}/20; repeated run bit-identical: {}", pure, identical ? "yes" : "no")};
}

Verdict pipeline_determinism() {
  const fs::path root = fs::temp_directory_path() / fmt::format("synthpsych-acceptance-{}", ::getpid());
  fs::remove_all(root);
  fixture::ensure_test_credential();

  pipeline::Context ctx;
  ctx.config = pipeline::load_config(fs::path(SYNTHPSYCH_TEST_DIR) / "data/fixture.ini");
  ctx.config.transcript_store = root / "store.jsonl";
  ctx.config.out_dir = root / "recorded";
  ctx.backend = std::make_shared<fixture::ScriptedBackend>(ctx.config.embedding_dim);
  pipeline::cmd_generate_personas(ctx);
  pipeline::cmd_administer(ctx);
  pipeline::cmd_cluster(ctx);

  const std::vector<std::string> files = {"responses.csv", "efa_result.json", "cfa_result.json", "clusters.csv",
                                          "kw_tests.json"};
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::string> runs[2];
  std::size_t personas = 0;
  for (int r = 0; r < 2; ++r) {
    pipeline::Context replay;
    replay.config = ctx.config;
    replay.config.transcript_mode = transport::StoreMode::Replay;
    replay.config.out_dir = root / fmt::format("replay{}", r);
    pipeline::cmd_generate_personas(replay);
    pipeline::cmd_administer(replay);
    pipeline::cmd_analyze(replay);
    pipeline::cmd_cluster(replay);
    for (const auto& f : files) runs[r].push_back(slurp(replay.config.out_dir / f));
    personas = persona::read_personas_jsonl(replay.config.out_dir / "personas.jsonl").size();
  }
  const double secs = seconds_since(t0);
  std::size_t identical = 0;
  for (std::size_t i = 0; i < files.size(); ++i) identical += runs[0][i] == runs[1][i] && !runs[0][i].empty();
  fs::remove_all(root);
  return {identical == files.size() && personas == 40 && secs < tol::kPipelineSeconds,
          fmt::format("{} personas; {}/{} artifacts byte-identical; two replays in {:.2f} s", personas, identical,
                      files.size(), secs)};
}

Verdict prompt_fidelity() {
  const pipeline::RunConfig defaults = pipeline::parse_config("");
  const std::string persona_prompt = persona::build_persona_prompt(defaults.cohort.batch_size, 1);
  const auto bank = scale::load_item_bank(defaults.item_bank);
  const persona::Persona example{1, 20, "Female",
                                 "Loves collaborative learning; often uses concept maps to organize her thoughts; "
                                 "tends to get anxious during exams."};
  const std::string response_prompt = scale::build_response_prompt(example, bank);
  const fs::path golden = fs::path(SYNTHPSYCH_TEST_DIR) / "golden";
  const bool sentences = persona_prompt.find("Generate 20 fictional student personas") != std::string::npos &&
                         response_prompt.find("Please return exactly 28 integers separated only by commas") !=
                             std::string::npos;
  const bool persona_golden = persona_prompt == slurp(golden / "persona_prompt_default.txt");
  const bool response_golden = response_prompt == slurp(golden / "response_prompt_example.txt");
  return {sentences && persona_golden && response_golden,
          fmt::format("verbatim sentences present: {}; persona golden: {}; response golden: {}", sentences ? "yes" : "no",
                      persona_golden ? "match" : "DIFF", response_golden ? "match" : "DIFF")};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"factor-count recovery", factor_count},
      {"structure recovery", structure_recovery},
      {"CFA exactness and sampling corridor", cfa_exactness},
      {"gradient correctness", gradient_check},
      {"fit-index arithmetic", fit_arithmetic},
      {"Kruskal-Wallis oracle", kruskal_wallis},
      {"clustering", clustering},
      {"t-SNE sanity", tsne_sanity},
      {"pipeline determinism", pipeline_determinism},
      {"prompt fidelity", prompt_fidelity},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failures += !v.pass;
    std::cout << fmt::format("[{}] {:>2}. {}: {}", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, v.detail)
              << std::endl;
  }
  std::cout << fmt::format("{}/{} acceptance criteria passed", criteria.size() - failures, criteria.size())
            << std::endl;
  return failures;
}
