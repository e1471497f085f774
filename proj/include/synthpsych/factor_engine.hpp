#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace synthpsych::factor {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct CorrelationMatrix {
  MatrixXd r;
  std::size_t n = 0;  // sample size
};

// Product-moment correlations of the columns of `data` (rows = respondents).
CorrelationMatrix pearson_correlation(const MatrixXd& data);
MatrixXd sample_covariance(const MatrixXd& data);

// Eigenvalues of a symmetric matrix, descending.
VectorXd descending_eigenvalues(const MatrixXd& symmetric);

enum class PaCriterion { Mean, P95 };

struct EfaConfig {
  int pa_replicates = 100;
  PaCriterion pa_criterion = PaCriterion::Mean;
  int paf_max_iter = 100;
  double paf_tol = 1e-4;
  int promax_kappa = 4;
  std::uint64_t rng_seed = 42;
  std::size_t workers = 0;  // 0: hardware concurrency
};

struct ParallelAnalysis {
  int retained_k = 0;
  VectorXd observed;        // descending
  VectorXd reference_mean;  // matched-rank mean of random-data eigenvalues
  VectorXd reference_p95;
  int replicates = 0;
  PaCriterion criterion = PaCriterion::Mean;

  const VectorXd& reference() const { return criterion == PaCriterion::Mean ? reference_mean : reference_p95; }
};

ParallelAnalysis parallel_analysis(const MatrixXd& data, const EfaConfig& cfg);

struct PafResult {
  MatrixXd loadings;      // p x k
  VectorXd communalities; // p
  int iterations = 0;
  bool converged = false;
  bool smc_fallback = false;  // true when R was singular and max |r| seeded the communalities
  bool heywood = false;       // some communality reached 1
};

PafResult principal_axis_factoring(const MatrixXd& r, int k, const EfaConfig& cfg);

struct PromaxResult {
  MatrixXd pattern;    // p x k
  MatrixXd structure;  // pattern * phi
  MatrixXd phi;        // k x k factor correlations
  MatrixXd rotation;   // k x k, pattern = unrotated * rotation
};

// Kaiser-normalized varimax; returns rotated loadings and the orthogonal rotation.
std::pair<MatrixXd, MatrixXd> varimax(const MatrixXd& loadings, int max_iter = 1000, double eps = 1e-5);
PromaxResult promax_rotate(const MatrixXd& loadings, int kappa);

struct EfaResult {
  ParallelAnalysis pa;
  int retained_k = 0;
  PafResult paf;
  PromaxResult rotated;
  VectorXd communalities;
};

// Parallel analysis, PAF at the retained count (at least 1), then promax.
EfaResult run_efa(const MatrixXd& data, const EfaConfig& cfg);

// ---------------------------------------------------------------------------
// Confirmatory factor analysis

struct CfaSpec {
  std::vector<int> item_factor;  // item -> factor index, size p
  int n_factors = 0;
  std::vector<std::string> factor_names;
  std::vector<std::string> item_names;
};

// Checks simple structure and >= 2 items per factor; throws InvalidInput otherwise.
void validate(const CfaSpec& spec);

struct CfaOptions {
  int max_iter = 500;
  double grad_tol = 1e-6;
  double uniqueness_floor = 1e-4;
};

// Free parameters of the simple-structure model, in vector order:
//   [0, p)                 loadings, one per item
//   [p, 2p)                log(theta_i - floor)
//   [2p, 2p + k(k-1)/2)    strictly-lower entries of the row-normalized Cholesky factor of Phi
// Row i of that factor is a_i / |a_i| with a_ii = 1, which keeps Phi unit-diagonal and PD.
class CfaModel {
 public:
  CfaModel(CfaSpec spec, double uniqueness_floor = 1e-4);

  int n_items() const { return static_cast<int>(spec_.item_factor.size()); }
  int n_factors() const { return spec_.n_factors; }
  int n_params() const;
  const CfaSpec& spec() const { return spec_; }

  MatrixXd loadings(const VectorXd& theta) const;  // p x k, simple structure
  VectorXd uniquenesses(const VectorXd& theta) const;
  MatrixXd phi(const VectorXd& theta) const;
  MatrixXd implied(const VectorXd& theta) const;

  VectorXd encode(const VectorXd& lambda, const VectorXd& uniqueness, const MatrixXd& phi) const;
  VectorXd start_values(const MatrixXd& s) const;

 private:
  MatrixXd cholesky_factor(const VectorXd& theta) const;

  CfaSpec spec_;
  double floor_;
};

// F_ML = ln|Sigma| + tr(S Sigma^-1) - ln|S| - p. Returns +inf if Sigma is not PD.
double ml_discrepancy(const MatrixXd& s, const MatrixXd& sigma);

struct Objective {
  double value = 0.0;
  VectorXd gradient;
};

Objective cfa_objective(const CfaModel& model, const MatrixXd& s, const VectorXd& theta);

struct FitIndices {
  double cfi = 0.0;
  double tli = 0.0;
  double rmsea = 0.0;
  double srmr = 0.0;
};

FitIndices fit_indices(double chi2_model, int df_model, double chi2_baseline, int df_baseline, std::size_t n,
                       const MatrixXd& s, const MatrixXd& sigma_hat);
double srmr(const MatrixXd& s, const MatrixXd& sigma_hat);

struct CfaResult {
  VectorXd loadings;               // unstandardized, one per item
  VectorXd standardized_loadings;  // loading / sqrt(sigma_hat_ii)
  MatrixXd phi;
  VectorXd uniquenesses;
  MatrixXd implied;
  double f_ml = 0.0;
  double chi2 = 0.0;
  int df = 0;
  double chi2_baseline = 0.0;
  int df_baseline = 0;
  FitIndices fit;
  bool converged = false;
  int iterations = 0;
  double gradient_norm = 0.0;  // infinity norm at the reported point
  std::vector<double> trace;   // F_ML of every accepted iterate
  std::vector<int> heywood_items;
  std::vector<std::string> warnings;
  std::size_t n = 0;
};

CfaResult fit_cfa(const MatrixXd& s, std::size_t n, const CfaSpec& spec, const CfaOptions& options = {});

// Seven-factor AMS spec (factors in IMTK..AMOT order, items AMS_Q1..AMS_Q28).
CfaSpec ams_cfa_spec();

nlohmann::json to_json(const EfaResult& efa);
nlohmann::json to_json(const CfaResult& cfa, const CfaSpec& spec);

}  // namespace synthpsych::factor
