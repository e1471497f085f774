#include "synthpsych/cluster_engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include <boost/math/special_functions/gamma.hpp>
#include <fmt/format.h>

#include "synthpsych/errors.hpp"
#include "synthpsych/parallel.hpp"
#include "synthpsych/random.hpp"

namespace synthpsych::cluster {

namespace {

// Nearest centroid by squared distance; ties go to the lowest centroid index.
std::pair<int, double> nearest(const MatrixXd& vectors, Eigen::Index row, const MatrixXd& centroids) {
  int best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
    const double dist = (vectors.row(row) - centroids.row(c)).squaredNorm();
    if (dist < best_dist) {
      best_dist = dist;
      best = static_cast<int>(c);
    }
  }
  return {best, best_dist};
}

MatrixXd kmeans_plus_plus(const MatrixXd& vectors, int k, Rng& rng) {
  const auto n = vectors.rows();
  MatrixXd centroids(k, vectors.cols());
  centroids.row(0) = vectors.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n))));
  VectorXd dist(n);
  for (Eigen::Index i = 0; i < n; ++i) dist(i) = (vectors.row(i) - centroids.row(0)).squaredNorm();

  for (int c = 1; c < k; ++c) {
    const double total = dist.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double target = rng.uniform() * total;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (dist(i) <= 0.0) continue;
        if (target < dist(i)) {
          pick = i;
          break;
        }
        target -= dist(i);
      }
      while (dist(pick) <= 0.0 && pick > 0) --pick;
    } else {
      pick = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
    }
    centroids.row(c) = vectors.row(pick);
    for (Eigen::Index i = 0; i < n; ++i) {
      dist(i) = std::min(dist(i), (vectors.row(i) - centroids.row(c)).squaredNorm());
    }
  }
  return centroids;
}

KmeansRun lloyd(const MatrixXd& vectors, int k, const ClusterConfig& cfg, std::uint64_t seed) {
  const auto n = vectors.rows();
  Rng rng(seed);
  KmeansRun run;
  run.centroids = kmeans_plus_plus(vectors, k, rng);
  run.assignments.assign(static_cast<std::size_t>(n), -1);
  std::vector<double> point_dist(static_cast<std::size_t>(n));

  for (int iter = 0; iter < cfg.max_iter; ++iter) {
    bool changed = false;
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto [label, dist] = nearest(vectors, i, run.centroids);
      if (run.assignments[static_cast<std::size_t>(i)] != label) changed = true;
      run.assignments[static_cast<std::size_t>(i)] = label;
      point_dist[static_cast<std::size_t>(i)] = dist;
      total += dist;
    }
    run.inertia_trace.push_back(total);
    run.iterations = iter + 1;

    // Update step; an emptied cluster takes the point farthest from its centroid.
    MatrixXd sums = MatrixXd::Zero(k, vectors.cols());
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int label = run.assignments[static_cast<std::size_t>(i)];
      sums.row(label) += vectors.row(i);
      ++counts[static_cast<std::size_t>(label)];
    }
    bool reseeded = false;
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        run.centroids.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
        continue;
      }
      const auto far = std::max_element(point_dist.begin(), point_dist.end()) - point_dist.begin();
      run.centroids.row(c) = vectors.row(far);
      point_dist[static_cast<std::size_t>(far)] = 0.0;
      reseeded = true;
    }

    if (reseeded) continue;
    if (!changed) break;
    const std::size_t m = run.inertia_trace.size();
    if (m >= 2) {
      const double prev = run.inertia_trace[m - 2];
      if (prev - total <= cfg.tol * std::max(prev, std::numeric_limits<double>::min())) break;
    }
  }
  run.inertia = inertia(vectors, run.assignments, run.centroids);
  return run;
}

double quantile_sorted(const std::vector<double>& sorted, double prob) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double choose2(double x) { return x * (x - 1.0) / 2.0; }

}  // namespace

// ---------------------------------------------------------------------------
// k-means

double inertia(const MatrixXd& vectors, const std::vector<int>& assignments, const MatrixXd& centroids) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < vectors.rows(); ++i) {
    total += (vectors.row(i) - centroids.row(assignments[static_cast<std::size_t>(i)])).squaredNorm();
  }
  return total;
}

ClusterResult kmeans(const MatrixXd& vectors, const ClusterConfig& cfg) {
  if (cfg.k < 1 || cfg.restarts < 1 || cfg.max_iter < 1) throw Error(ErrorCode::InvalidInput, "bad k-means config");
  if (vectors.cols() < 1) throw Error(ErrorCode::InvalidInput, "vectors need at least one dimension");
  if (vectors.rows() < cfg.k) {
    throw Error(ErrorCode::TooFewPoints, fmt::format("{} points for k = {}", vectors.rows(), cfg.k));
  }

  ClusterResult out;
  out.runs.resize(static_cast<std::size_t>(cfg.restarts));
  parallel_for(out.runs.size(), cfg.workers == 0 ? default_workers() : cfg.workers, [&](std::size_t r) {
    out.runs[r] = lloyd(vectors, cfg.k, cfg, derive_seed(cfg.rng_seed, r));
  });
  for (std::size_t r = 1; r < out.runs.size(); ++r) {
    if (out.runs[r].inertia < out.runs[static_cast<std::size_t>(out.best_restart)].inertia) {
      out.best_restart = static_cast<int>(r);
    }
  }
  const KmeansRun& best = out.runs[static_cast<std::size_t>(out.best_restart)];

  // Relabel by descending size, ties by first member.
  std::vector<int> sizes(static_cast<std::size_t>(cfg.k), 0);
  std::vector<std::size_t> first(static_cast<std::size_t>(cfg.k), best.assignments.size());
  for (std::size_t i = 0; i < best.assignments.size(); ++i) {
    const auto c = static_cast<std::size_t>(best.assignments[i]);
    ++sizes[c];
    first[c] = std::min(first[c], i);
  }
  std::vector<int> order(static_cast<std::size_t>(cfg.k));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const auto ua = static_cast<std::size_t>(a), ub = static_cast<std::size_t>(b);
    return sizes[ua] != sizes[ub] ? sizes[ua] > sizes[ub] : first[ua] < first[ub];
  });
  std::vector<int> relabel(static_cast<std::size_t>(cfg.k));
  out.centroids.resize(cfg.k, vectors.cols());
  for (int new_label = 0; new_label < cfg.k; ++new_label) {
    relabel[static_cast<std::size_t>(order[static_cast<std::size_t>(new_label)])] = new_label;
    out.centroids.row(new_label) = best.centroids.row(order[static_cast<std::size_t>(new_label)]);
  }
  out.assignments.reserve(best.assignments.size());
  for (int a : best.assignments) out.assignments.push_back(relabel[static_cast<std::size_t>(a)]);
  out.inertia = best.inertia;
  return out;
}

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::InvalidInput, "label vectors differ in length");
  std::map<std::pair<int, int>, double> table;
  std::map<int, double> rows;
  std::map<int, double> cols;
  for (std::size_t i = 0; i < a.size(); ++i) {
    table[{a[i], b[i]}] += 1.0;
    rows[a[i]] += 1.0;
    cols[b[i]] += 1.0;
  }
  double index = 0.0, sum_rows = 0.0, sum_cols = 0.0;
  for (const auto& [key, count] : table) index += choose2(count);
  for (const auto& [key, count] : rows) sum_rows += choose2(count);
  for (const auto& [key, count] : cols) sum_cols += choose2(count);
  const double total = choose2(static_cast<double>(a.size()));
  const double expected = total > 0.0 ? sum_rows * sum_cols / total : 0.0;
  const double max_index = 0.5 * (sum_rows + sum_cols);
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

// ---------------------------------------------------------------------------
// t-SNE

MatrixXd pca_reduce(const MatrixXd& vectors, int dims) {
  const MatrixXd centered = vectors.rowwise() - vectors.colwise().mean();
  if (dims <= 0 || centered.cols() <= dims) return centered;
  const auto n = centered.rows();
  const int keep = static_cast<int>(std::min<Eigen::Index>(dims, std::min(n, centered.cols())));
  if (n < centered.cols()) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> solver(centered * centered.transpose());
    const VectorXd values = solver.eigenvalues().tail(keep).reverse().cwiseMax(0.0);
    const MatrixXd vecs = solver.eigenvectors().rightCols(keep).rowwise().reverse();
    return vecs * values.cwiseSqrt().asDiagonal();
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> solver(centered.transpose() * centered);
  const MatrixXd vecs = solver.eigenvectors().rightCols(keep).rowwise().reverse();
  return centered * vecs;
}

TsneResult tsne(const MatrixXd& vectors, const TsneConfig& cfg) {
  const auto n = vectors.rows();
  if (n < 4) throw Error(ErrorCode::InvalidInput, "t-SNE needs at least 4 points");
  if (!(cfg.perplexity > 0.0) || cfg.perplexity >= static_cast<double>(n - 1) / 3.0) {
    throw Error(ErrorCode::PerplexityTooLarge,
                fmt::format("perplexity {} must be below (n - 1) / 3 = {:.3f}", cfg.perplexity, (n - 1) / 3.0));
  }
  const MatrixXd x = cfg.pca_predim > 0 ? pca_reduce(vectors, cfg.pca_predim) : vectors;

  MatrixXd d2(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) d2(i, j) = d2(j, i) = (x.row(i) - x.row(j)).squaredNorm();
  }

  // Conditional affinities with the bandwidth matched to the target entropy.
  const double target_entropy = std::log(cfg.perplexity);
  MatrixXd p = MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    double min_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i) min_d = std::min(min_d, d2(i, j));
    }
    for (int step = 0; step < 200; ++step) {
      double sum = 0.0, weighted = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == i) continue;
        const double w = std::exp(-beta * (d2(i, j) - min_d));
        p(i, j) = w;
        sum += w;
        weighted += w * (d2(i, j) - min_d);
      }
      const double entropy = std::log(sum) + beta * weighted / sum;
      p.row(i) /= sum;
      const double diff = entropy - target_entropy;
      if (std::abs(diff) < 1e-10) break;
      if (diff > 0.0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
    }
  }
  MatrixXd pij = (p + p.transpose()) / (2.0 * static_cast<double>(n));
  pij = pij.cwiseMax(1e-12);
  pij.diagonal().setZero();

  Rng rng(cfg.rng_seed);
  TsneResult out;
  MatrixXd& y = out.layout;
  y.resize(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    y(i, 0) = 1e-4 * rng.normal();
    y(i, 1) = 1e-4 * rng.normal();
  }
  MatrixXd update = MatrixXd::Zero(n, 2);
  MatrixXd gains = MatrixXd::Ones(n, 2);
  MatrixXd num(n, n);
  MatrixXd grad(n, 2);

  auto kl_divergence = [&](double q_sum) {
    double kl = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i == j) continue;
        const double q = std::max(num(i, j) / q_sum, 1e-300);
        kl += pij(i, j) * std::log(pij(i, j) / q);
      }
    }
    return kl;
  };

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    const double exaggeration = iter < cfg.exaggeration_iters ? cfg.early_exaggeration : 1.0;
    const double momentum = iter < cfg.exaggeration_iters ? 0.5 : 0.8;

    double q_sum = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      num(i, i) = 0.0;
      for (Eigen::Index j = 0; j < i; ++j) {
        const double v = 1.0 / (1.0 + (y.row(i) - y.row(j)).squaredNorm());
        num(i, j) = num(j, i) = v;
        q_sum += 2.0 * v;
      }
    }
    if (iter % 50 == 0 || iter == cfg.exaggeration_iters || iter == cfg.iterations - 1) {
      out.kl_trace.emplace_back(iter, kl_divergence(q_sum));
    }

    grad.setZero();
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i == j) continue;
        const double coeff = (exaggeration * pij(i, j) - num(i, j) / q_sum) * num(i, j);
        grad.row(i) += 4.0 * coeff * (y.row(i) - y.row(j));
      }
    }

    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index c = 0; c < 2; ++c) {
        const bool same_sign = (grad(i, c) > 0.0) == (update(i, c) > 0.0);
        gains(i, c) = same_sign ? std::max(gains(i, c) * 0.8, 0.01) : gains(i, c) + 0.2;
        update(i, c) = momentum * update(i, c) - cfg.learning_rate * gains(i, c) * grad(i, c);
      }
    }
    y += update;
    y.rowwise() -= y.colwise().mean();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Kruskal-Wallis

double chi_square_sf(double x, int df) {
  if (df < 1) throw Error(ErrorCode::InvalidInput, "chi-square df must be >= 1");
  if (x <= 0.0) return 1.0;
  return boost::math::gamma_q(0.5 * df, 0.5 * x);
}

KwResult kruskal_wallis(const std::vector<std::vector<double>>& groups) {
  std::vector<std::pair<double, std::size_t>> pooled;
  KwResult out;
  std::size_t non_empty = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    out.group_sizes.push_back(groups[g].size());
    if (!groups[g].empty()) ++non_empty;
    for (double v : groups[g]) pooled.emplace_back(v, g);
  }
  const auto total = static_cast<double>(pooled.size());
  if (non_empty < 2 || pooled.size() < 3) {
    throw Error(ErrorCode::InsufficientData, "Kruskal-Wallis needs >= 2 non-empty groups and N >= 3");
  }
  out.df = static_cast<int>(non_empty) - 1;

  std::sort(pooled.begin(), pooled.end());
  std::vector<double> rank_sums(groups.size(), 0.0);
  double tie_term = 0.0;
  for (std::size_t i = 0; i < pooled.size();) {
    std::size_t j = i;
    while (j < pooled.size() && pooled[j].first == pooled[i].first) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
    const auto t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    for (std::size_t m = i; m < j; ++m) rank_sums[pooled[m].second] += mid_rank;
    i = j;
  }

  const double correction = 1.0 - tie_term / (total * total * total - total);
  if (correction <= 0.0) {
    out.h = 0.0;
    out.p = 1.0;
    return out;
  }
  double spread = 0.0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].empty()) continue;
    const auto size = static_cast<double>(groups[g].size());
    const double deviation = rank_sums[g] / size - 0.5 * (total + 1.0);
    spread += size * deviation * deviation;
  }
  out.h = std::max(0.0, 12.0 / (total * (total + 1.0)) * spread / correction);
  out.p = chi_square_sf(out.h, out.df);
  return out;
}

// ---------------------------------------------------------------------------
// Boxplots

BoxStats box_stats(std::vector<double> values) {
  if (values.empty()) throw Error(ErrorCode::InsufficientData, "box statistics need at least one value");
  std::sort(values.begin(), values.end());
  BoxStats out;
  out.n = values.size();
  out.q1 = quantile_sorted(values, 0.25);
  out.median = quantile_sorted(values, 0.5);
  out.q3 = quantile_sorted(values, 0.75);
  const double fence = 1.5 * (out.q3 - out.q1);
  const double lo_fence = out.q1 - fence;
  const double hi_fence = out.q3 + fence;
  out.lo_whisker = *std::find_if(values.begin(), values.end(), [&](double v) { return v >= lo_fence; });
  out.hi_whisker = *std::find_if(values.rbegin(), values.rend(), [&](double v) { return v <= hi_fence; });
  for (double v : values) {
    if (v < lo_fence || v > hi_fence) out.outliers.push_back(v);
  }
  return out;
}

SubgroupSummary subgroup_summary(const std::vector<scale::SubscaleScores>& scores,
                                 const std::map<int, int>& assignments) {
  if (scores.size() != assignments.size()) {
    throw Error(ErrorCode::IdMismatch,
                fmt::format("{} score rows but {} cluster assignments", scores.size(), assignments.size()));
  }
  std::map<int, std::vector<const scale::SubscaleScores*>> by_cluster;
  for (const auto& row : scores) {
    const auto it = assignments.find(row.persona_id);
    if (it == assignments.end()) {
      throw Error(ErrorCode::IdMismatch, fmt::format("persona {} has no cluster assignment", row.persona_id));
    }
    by_cluster[it->second].push_back(&row);
  }

  SubgroupSummary out;
  for (const auto& [cluster, rows] : by_cluster) {
    for (auto s : scale::kSubscales) {
      std::vector<double> values;
      values.reserve(rows.size());
      for (const auto* row : rows) values.push_back((*row)[s]);
      BoxStats box = box_stats(std::move(values));
      box.cluster = cluster;
      box.subscale = std::string(scale::to_string(s));
      out.boxes.push_back(std::move(box));
    }
  }
  if (by_cluster.size() < 2) return out;

  for (auto s : scale::kSubscales) {
    std::vector<std::vector<double>> groups;
    for (const auto& [cluster, rows] : by_cluster) {
      auto& g = groups.emplace_back();
      for (const auto* row : rows) g.push_back((*row)[s]);
    }
    KwResult kw = kruskal_wallis(groups);
    kw.subscale = std::string(scale::to_string(s));
    out.tests.push_back(std::move(kw));
  }
  return out;
}

nlohmann::json to_json(const KwResult& kw) {
  return {{"subscale", kw.subscale}, {"H", kw.h}, {"df", kw.df}, {"p", kw.p}, {"group_sizes", kw.group_sizes}};
}

}  // namespace synthpsych::cluster
