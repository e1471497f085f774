#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "synthpsych/scale_admin.hpp"

namespace synthpsych::cluster {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct ClusterConfig {
  int k = 3;
  int restarts = 10;
  int max_iter = 300;
  double tol = 1e-6;  // relative inertia change
  std::uint64_t rng_seed = 42;
  std::size_t workers = 0;
};

struct KmeansRun {
  std::vector<int> assignments;
  MatrixXd centroids;
  double inertia = 0.0;
  std::vector<double> inertia_trace;  // after every assignment step
  int iterations = 0;
};

struct ClusterResult {
  std::vector<int> assignments;  // labels 0..k-1, canonicalized by descending cluster size
  MatrixXd centroids;            // k x d
  double inertia = 0.0;
  int best_restart = 0;
  std::vector<KmeansRun> runs;  // every restart, in seed order
};

// Rows of `vectors` are points.
ClusterResult kmeans(const MatrixXd& vectors, const ClusterConfig& cfg);
double inertia(const MatrixXd& vectors, const std::vector<int>& assignments, const MatrixXd& centroids);
double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b);

struct TsneConfig {
  double perplexity = 30.0;
  int iterations = 1000;
  double learning_rate = 200.0;
  double early_exaggeration = 12.0;
  int exaggeration_iters = 250;
  int pca_predim = 50;  // 0 disables
  std::uint64_t rng_seed = 42;
};

struct TsneResult {
  MatrixXd layout;                             // n x 2
  std::vector<std::pair<int, double>> kl_trace;  // (iteration, KL divergence)
};

TsneResult tsne(const MatrixXd& vectors, const TsneConfig& cfg);

// Projects rows onto their leading principal components (fewer if rank-limited).
MatrixXd pca_reduce(const MatrixXd& vectors, int dims);

struct KwResult {
  std::string subscale;
  double h = 0.0;
  int df = 0;
  double p = 1.0;
  std::vector<std::size_t> group_sizes;
};

KwResult kruskal_wallis(const std::vector<std::vector<double>>& groups);

// Upper tail of the chi-square distribution.
double chi_square_sf(double x, int df);

struct BoxStats {
  int cluster = 0;
  std::string subscale;
  std::size_t n = 0;
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  double lo_whisker = 0.0;
  double hi_whisker = 0.0;
  std::vector<double> outliers;
};

BoxStats box_stats(std::vector<double> values);

struct SubgroupSummary {
  std::vector<BoxStats> boxes;  // cluster-major, subscales in canonical order
  std::vector<KwResult> tests;  // one per subscale
};

// `assignments` maps persona id -> cluster label; ids must match the score rows exactly.
SubgroupSummary subgroup_summary(const std::vector<scale::SubscaleScores>& scores,
                                 const std::map<int, int>& assignments);

nlohmann::json to_json(const KwResult& kw);

}  // namespace synthpsych::cluster
