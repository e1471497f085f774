#include "synthpsych/factor_engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "synthpsych/errors.hpp"
#include "synthpsych/parallel.hpp"
#include "synthpsych/random.hpp"
#include "synthpsych/scale_admin.hpp"

namespace synthpsych::factor {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Linear-interpolation quantile of an unsorted sample (the usual "type 7" definition).
double quantile(std::vector<double> values, double prob) {
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

// Flips factor columns so every column of `pattern` has a non-negative sum; keeps phi and
// the rotation consistent.
void align_signs(MatrixXd& pattern, MatrixXd* phi, MatrixXd* rotation) {
  for (Eigen::Index j = 0; j < pattern.cols(); ++j) {
    if (pattern.col(j).sum() >= 0.0) continue;
    pattern.col(j) *= -1.0;
    if (rotation != nullptr) rotation->col(j) *= -1.0;
    if (phi != nullptr) {
      phi->row(j) *= -1.0;
      phi->col(j) *= -1.0;
    }
  }
}

nlohmann::json to_json(const MatrixXd& m) {
  auto out = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index j = 0; j < m.cols(); ++j) row[static_cast<std::size_t>(j)] = m(i, j);
    out.push_back(row);
  }
  return out;
}

nlohmann::json to_json(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

}  // namespace

// ---------------------------------------------------------------------------
// Correlation and eigenvalues

MatrixXd sample_covariance(const MatrixXd& data) {
  if (data.rows() < 2) throw Error(ErrorCode::InvalidInput, "covariance needs at least 2 rows");
  const MatrixXd centered = data.rowwise() - data.colwise().mean();
  MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(data.rows() - 1);
  return 0.5 * (cov + cov.transpose());
}

CorrelationMatrix pearson_correlation(const MatrixXd& data) {
  if (data.rows() < 3) throw Error(ErrorCode::InvalidInput, "correlation needs n >= 3");
  MatrixXd centered = data.rowwise() - data.colwise().mean();
  for (Eigen::Index j = 0; j < centered.cols(); ++j) {
    const double norm = centered.col(j).norm();
    if (!(norm > 0.0) || norm <= 1e-12 * std::max(1.0, data.col(j).cwiseAbs().maxCoeff())) {
      throw Error(ErrorCode::ZeroVarianceColumn, fmt::format("column {} has zero variance", j));
    }
    centered.col(j) /= norm;
  }
  MatrixXd r = centered.transpose() * centered;
  r = 0.5 * (r + r.transpose());
  r.diagonal().setOnes();
  r = r.cwiseMax(-1.0).cwiseMin(1.0);
  return {std::move(r), static_cast<std::size_t>(data.rows())};
}

VectorXd descending_eigenvalues(const MatrixXd& symmetric) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> solver(symmetric, Eigen::EigenvaluesOnly);
  return solver.eigenvalues().reverse();
}

// ---------------------------------------------------------------------------
// Parallel analysis

ParallelAnalysis parallel_analysis(const MatrixXd& data, const EfaConfig& cfg) {
  if (cfg.pa_replicates < 1) throw Error(ErrorCode::InvalidInput, "pa_replicates must be positive");
  const auto n = data.rows();
  const auto p = data.cols();

  ParallelAnalysis out;
  out.criterion = cfg.pa_criterion;
  out.replicates = cfg.pa_replicates;
  out.observed = descending_eigenvalues(pearson_correlation(data).r);

  const auto reps = static_cast<std::size_t>(cfg.pa_replicates);
  std::vector<VectorXd> random_eigen(reps);
  parallel_for(reps, cfg.workers == 0 ? default_workers() : cfg.workers, [&](std::size_t rep) {
    Rng rng(derive_seed(cfg.rng_seed, rep));
    MatrixXd sim(n, p);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < p; ++j) sim(i, j) = rng.normal();
    }
    random_eigen[rep] = descending_eigenvalues(pearson_correlation(sim).r);
  });

  out.reference_mean.resize(p);
  out.reference_p95.resize(p);
  for (Eigen::Index rank = 0; rank < p; ++rank) {
    std::vector<double> at_rank(reps);
    for (std::size_t rep = 0; rep < reps; ++rep) at_rank[rep] = random_eigen[rep](rank);
    out.reference_mean(rank) = std::accumulate(at_rank.begin(), at_rank.end(), 0.0) / static_cast<double>(reps);
    out.reference_p95(rank) = quantile(std::move(at_rank), 0.95);
  }

  const VectorXd& reference = out.reference();
  while (out.retained_k < p && out.observed(out.retained_k) > reference(out.retained_k)) ++out.retained_k;
  return out;
}

// ---------------------------------------------------------------------------
// Principal axis factoring

PafResult principal_axis_factoring(const MatrixXd& r, int k, const EfaConfig& cfg) {
  const auto p = r.rows();
  if (r.cols() != p) throw Error(ErrorCode::InvalidInput, "correlation matrix must be square");
  if (k < 1 || k >= p) throw Error(ErrorCode::InvalidInput, fmt::format("factor count {} outside 1..{}", k, p - 1));

  PafResult out;
  VectorXd h(p);
  Eigen::LLT<MatrixXd> llt(r);
  bool singular = llt.info() != Eigen::Success;
  if (!singular) {
    const MatrixXd inv = llt.solve(MatrixXd::Identity(p, p));
    singular = !inv.allFinite() || (inv.diagonal().array() <= 0.0).any() || inv.diagonal().maxCoeff() > 1e12;
    if (!singular) h = (1.0 - inv.diagonal().array().inverse()).matrix();
  }
  if (singular) {
    out.smc_fallback = true;
    for (Eigen::Index i = 0; i < p; ++i) {
      double best = 0.0;
      for (Eigen::Index j = 0; j < p; ++j) {
        if (j != i) best = std::max(best, std::abs(r(i, j)));
      }
      h(i) = best;
    }
  }
  h = h.cwiseMax(0.0).cwiseMin(1.0);

  MatrixXd reduced = r;
  for (int iter = 1; iter <= cfg.paf_max_iter; ++iter) {
    reduced.diagonal() = h;
    Eigen::SelfAdjointEigenSolver<MatrixXd> solver(reduced);
    const VectorXd values = solver.eigenvalues().tail(k).reverse();
    const MatrixXd vectors = solver.eigenvectors().rightCols(k).rowwise().reverse();
    out.loadings = vectors * values.cwiseMax(0.0).cwiseSqrt().asDiagonal();

    VectorXd next = out.loadings.rowwise().squaredNorm();
    if ((next.array() > 1.0).any()) out.heywood = true;
    next = next.cwiseMin(1.0);
    const double change = (next - h).cwiseAbs().maxCoeff();
    h = next;
    out.iterations = iter;
    if (change < cfg.paf_tol) {
      out.converged = true;
      break;
    }
  }
  align_signs(out.loadings, nullptr, nullptr);
  out.communalities = h;
  return out;
}

// ---------------------------------------------------------------------------
// Rotation

std::pair<MatrixXd, MatrixXd> varimax(const MatrixXd& loadings, int max_iter, double eps) {
  const auto p = loadings.rows();
  const auto k = loadings.cols();
  if (k < 2) return {loadings, MatrixXd::Identity(k, k)};

  const VectorXd scale = loadings.rowwise().norm().cwiseMax(1e-12);
  const MatrixXd x = scale.cwiseInverse().asDiagonal() * loadings;

  MatrixXd rotation = MatrixXd::Identity(k, k);
  double criterion = 0.0;
  for (int iter = 0; iter < max_iter; ++iter) {
    const MatrixXd z = x * rotation;
    const MatrixXd cubed = z.array().cube().matrix();
    const VectorXd col_ss = z.colwise().squaredNorm().transpose() / static_cast<double>(p);
    const MatrixXd b = x.transpose() * (cubed - z * col_ss.asDiagonal());
    Eigen::JacobiSVD<MatrixXd> svd(b, Eigen::ComputeFullU | Eigen::ComputeFullV);
    rotation = svd.matrixU() * svd.matrixV().transpose();
    const double previous = criterion;
    criterion = svd.singularValues().sum();
    if (criterion < previous * (1.0 + eps)) break;
  }
  MatrixXd rotated = scale.asDiagonal() * (x * rotation);
  return {std::move(rotated), std::move(rotation)};
}

PromaxResult promax_rotate(const MatrixXd& loadings, int kappa) {
  const auto k = loadings.cols();
  if (k < 1) throw Error(ErrorCode::InvalidInput, "promax needs at least one factor");
  if (kappa < 1) throw Error(ErrorCode::InvalidInput, "promax kappa must be >= 1");
  PromaxResult out;
  if (k == 1) {
    out.pattern = loadings;
    out.phi = MatrixXd::Identity(1, 1);
    out.structure = loadings;
    out.rotation = MatrixXd::Identity(1, 1);
    return out;
  }

  auto [orthogonal, varimax_rotation] = varimax(loadings);
  const MatrixXd target =
      (orthogonal.array() * orthogonal.array().abs().pow(static_cast<double>(kappa - 1))).matrix();

  const MatrixXd gram = orthogonal.transpose() * orthogonal;
  Eigen::LLT<MatrixXd> gram_llt(gram);
  if (gram_llt.info() != Eigen::Success) throw Error(ErrorCode::DegenerateTarget, "varimax loadings are rank deficient");
  MatrixXd transform = gram_llt.solve(orthogonal.transpose() * target);

  const MatrixXd utu = transform.transpose() * transform;
  Eigen::FullPivLU<MatrixXd> lu(utu);
  if (!lu.isInvertible()) throw Error(ErrorCode::DegenerateTarget, "promax transform is singular");
  const VectorXd d = lu.inverse().diagonal();
  if ((d.array() <= 0.0).any()) throw Error(ErrorCode::DegenerateTarget, "promax column scaling is not positive");
  transform = transform * d.cwiseSqrt().asDiagonal();

  out.pattern = orthogonal * transform;
  out.rotation = varimax_rotation * transform;
  Eigen::FullPivLU<MatrixXd> lu_t(transform);
  if (!lu_t.isInvertible()) throw Error(ErrorCode::DegenerateTarget, "promax transform is singular");
  const MatrixXd inv = lu_t.inverse();
  out.phi = inv * inv.transpose();
  out.phi = 0.5 * (out.phi + out.phi.transpose());
  out.phi.diagonal().setOnes();
  align_signs(out.pattern, &out.phi, &out.rotation);
  out.structure = out.pattern * out.phi;
  return out;
}

EfaResult run_efa(const MatrixXd& data, const EfaConfig& cfg) {
  EfaResult out;
  out.pa = parallel_analysis(data, cfg);
  const int p = static_cast<int>(data.cols());
  out.retained_k = std::clamp(out.pa.retained_k, 1, p - 1);
  out.paf = principal_axis_factoring(pearson_correlation(data).r, out.retained_k, cfg);
  out.rotated = promax_rotate(out.paf.loadings, cfg.promax_kappa);
  out.communalities = out.paf.communalities;
  return out;
}

// ---------------------------------------------------------------------------
// CFA model

void validate(const CfaSpec& spec) {
  if (spec.n_factors < 1) throw Error(ErrorCode::InvalidInput, "CFA spec needs at least one factor");
  std::vector<int> counts(static_cast<std::size_t>(spec.n_factors), 0);
  for (int f : spec.item_factor) {
    if (f < 0 || f >= spec.n_factors) throw Error(ErrorCode::InvalidInput, "item assigned to unknown factor");
    ++counts[static_cast<std::size_t>(f)];
  }
  for (std::size_t f = 0; f < counts.size(); ++f) {
    if (counts[f] < 2) throw Error(ErrorCode::InvalidInput, fmt::format("factor {} has fewer than 2 items", f));
  }
}

CfaModel::CfaModel(CfaSpec spec, double uniqueness_floor) : spec_(std::move(spec)), floor_(uniqueness_floor) {
  validate(spec_);
}

int CfaModel::n_params() const {
  const int k = n_factors();
  return 2 * n_items() + k * (k - 1) / 2;
}

MatrixXd CfaModel::cholesky_factor(const VectorXd& theta) const {
  const int p = n_items();
  const int k = n_factors();
  MatrixXd l = MatrixXd::Zero(k, k);
  int offset = 2 * p;
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < i; ++j) l(i, j) = theta(offset++);
    l(i, i) = 1.0;
    l.row(i) /= l.row(i).norm();
  }
  return l;
}

MatrixXd CfaModel::loadings(const VectorXd& theta) const {
  MatrixXd out = MatrixXd::Zero(n_items(), n_factors());
  for (int i = 0; i < n_items(); ++i) out(i, spec_.item_factor[static_cast<std::size_t>(i)]) = theta(i);
  return out;
}

VectorXd CfaModel::uniquenesses(const VectorXd& theta) const {
  return (theta.segment(n_items(), n_items()).array().exp() + floor_).matrix();
}

MatrixXd CfaModel::phi(const VectorXd& theta) const {
  const MatrixXd l = cholesky_factor(theta);
  MatrixXd out = l * l.transpose();
  out.diagonal().setOnes();
  return out;
}

MatrixXd CfaModel::implied(const VectorXd& theta) const {
  const MatrixXd lambda = loadings(theta);
  MatrixXd sigma = lambda * phi(theta) * lambda.transpose();
  sigma.diagonal() += uniquenesses(theta);
  return sigma;
}

VectorXd CfaModel::encode(const VectorXd& lambda, const VectorXd& uniqueness, const MatrixXd& phi_in) const {
  const int p = n_items();
  const int k = n_factors();
  VectorXd theta(n_params());
  theta.head(p) = lambda;
  for (int i = 0; i < p; ++i) theta(p + i) = std::log(std::max(uniqueness(i) - floor_, 1e-300));
  Eigen::LLT<MatrixXd> llt(phi_in);
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::InvalidInput, "factor correlation matrix is not PD");
  const MatrixXd l = llt.matrixL();
  int offset = 2 * p;
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < i; ++j) theta(offset++) = l(i, j) / l(i, i);
  }
  return theta;
}

VectorXd CfaModel::start_values(const MatrixXd& s) const {
  const int p = n_items();
  const int k = n_factors();
  const VectorXd sd = s.diagonal().cwiseSqrt();
  const MatrixXd r = sd.cwiseInverse().asDiagonal() * s * sd.cwiseInverse().asDiagonal();

  // Standardized loading guess: root of the mean same-factor correlation.
  VectorXd standardized(p);
  for (int i = 0; i < p; ++i) {
    double sum = 0.0;
    int count = 0;
    for (int j = 0; j < p; ++j) {
      if (j != i && spec_.item_factor[static_cast<std::size_t>(j)] == spec_.item_factor[static_cast<std::size_t>(i)]) {
        sum += r(i, j);
        ++count;
      }
    }
    standardized(i) = std::sqrt(std::clamp(sum / count, 0.05, 0.9));
  }

  // Factor correlation guess: mean cross-factor correlation, disattenuated.
  MatrixXd phi_start = MatrixXd::Identity(k, k);
  for (int f = 0; f < k; ++f) {
    for (int g = 0; g < f; ++g) {
      double sum = 0.0;
      int count = 0;
      for (int i = 0; i < p; ++i) {
        for (int j = 0; j < p; ++j) {
          if (spec_.item_factor[static_cast<std::size_t>(i)] == f && spec_.item_factor[static_cast<std::size_t>(j)] == g) {
            sum += r(i, j) / (standardized(i) * standardized(j));
            ++count;
          }
        }
      }
      phi_start(f, g) = phi_start(g, f) = std::clamp(sum / count, -0.8, 0.8);
    }
  }
  if (Eigen::LLT<MatrixXd>(phi_start).info() != Eigen::Success ||
      descending_eigenvalues(phi_start).minCoeff() < 0.05) {
    phi_start = MatrixXd::Identity(k, k);
  }

  const VectorXd lambda = standardized.cwiseProduct(sd);
  const VectorXd uniqueness =
      (s.diagonal().array() * (1.0 - standardized.array().square())).max(2.0 * floor_).matrix();
  return encode(lambda, uniqueness, phi_start);
}

// ---------------------------------------------------------------------------
// Objective

double ml_discrepancy(const MatrixXd& s, const MatrixXd& sigma) {
  Eigen::LLT<MatrixXd> sigma_llt(sigma);
  Eigen::LLT<MatrixXd> s_llt(s);
  if (sigma_llt.info() != Eigen::Success || s_llt.info() != Eigen::Success) return kInf;
  const MatrixXd ls = sigma_llt.matrixL();
  const MatrixXd lss = s_llt.matrixL();
  const double logdet_sigma = 2.0 * ls.diagonal().array().log().sum();
  const double logdet_s = 2.0 * lss.diagonal().array().log().sum();
  const double trace = sigma_llt.solve(s).trace();
  return logdet_sigma + trace - logdet_s - static_cast<double>(s.rows());
}

Objective cfa_objective(const CfaModel& model, const MatrixXd& s, const VectorXd& theta) {
  const int p = model.n_items();
  const int k = model.n_factors();
  Objective out;
  out.gradient = VectorXd::Zero(model.n_params());

  const MatrixXd sigma = model.implied(theta);
  Eigen::LLT<MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success || !sigma.allFinite()) {
    out.value = kInf;
    return out;
  }
  const MatrixXd sigma_inv = llt.solve(MatrixXd::Identity(p, p));
  out.value = ml_discrepancy(s, sigma);
  if (!std::isfinite(out.value)) return out;

  const MatrixXd g = sigma_inv - sigma_inv * s * sigma_inv;
  const MatrixXd lambda = model.loadings(theta);
  const MatrixXd phi = model.phi(theta);

  const MatrixXd d_lambda = 2.0 * g * lambda * phi;
  for (int i = 0; i < p; ++i) out.gradient(i) = d_lambda(i, model.spec().item_factor[static_cast<std::size_t>(i)]);

  const VectorXd above_floor = theta.segment(p, p).array().exp();
  for (int i = 0; i < p; ++i) out.gradient(p + i) = g(i, i) * above_floor(i);

  // Phi = L L^T with row-normalized L; chain rule through the normalization of each row.
  if (k > 1) {
    MatrixXd a = MatrixXd::Zero(k, k);
    int offset = 2 * p;
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < i; ++j) a(i, j) = theta(offset++);
      a(i, i) = 1.0;
    }
    MatrixXd l = a;
    VectorXd norms(k);
    for (int i = 0; i < k; ++i) {
      norms(i) = a.row(i).norm();
      l.row(i) /= norms(i);
    }
    const MatrixXd m = lambda.transpose() * g * lambda;
    const MatrixXd d_l = 2.0 * m * l;
    offset = 2 * p;
    for (int i = 0; i < k; ++i) {
      const double proj = d_l.row(i).head(i + 1).dot(l.row(i).head(i + 1));
      for (int j = 0; j < i; ++j) out.gradient(offset++) = (d_l(i, j) - proj * l(i, j)) / norms(i);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fit indices

double srmr(const MatrixXd& s, const MatrixXd& sigma_hat) {
  const auto p = s.rows();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double resid = (s(i, j) - sigma_hat(i, j)) / std::sqrt(s(i, i) * s(j, j));
      sum += resid * resid;
    }
  }
  return std::sqrt(sum / static_cast<double>(p * (p + 1) / 2));
}

FitIndices fit_indices(double chi2_model, int df_model, double chi2_baseline, int df_baseline, std::size_t n,
                       const MatrixXd& s, const MatrixXd& sigma_hat) {
  if (df_model < 1 || df_baseline < 1 || n <= 1) {
    throw Error(ErrorCode::InvalidDegreesOfFreedom,
                fmt::format("df_model={}, df_baseline={}, n={}", df_model, df_baseline, n));
  }
  FitIndices out;
  const double excess_model = std::max(chi2_model - df_model, 0.0);
  const double denom = std::max({chi2_baseline - df_baseline, chi2_model - df_model, 0.0});
  out.cfi = denom > 0.0 ? 1.0 - excess_model / denom : 1.0;

  const double ratio_baseline = chi2_baseline / df_baseline;
  out.tli = (ratio_baseline - chi2_model / df_model) / (ratio_baseline - 1.0);

  out.rmsea = std::sqrt(excess_model / (static_cast<double>(df_model) * static_cast<double>(n)));
  out.srmr = srmr(s, sigma_hat);
  return out;
}

// ---------------------------------------------------------------------------
// Estimation

CfaResult fit_cfa(const MatrixXd& s, std::size_t n, const CfaSpec& spec, const CfaOptions& options) {
  const CfaModel model(spec, options.uniqueness_floor);
  const int p = model.n_items();
  if (s.rows() != p || s.cols() != p) {
    throw Error(ErrorCode::InvalidInput, fmt::format("covariance is {}x{}, spec has {} items", s.rows(), s.cols(), p));
  }
  if (n <= static_cast<std::size_t>(p)) {
    throw Error(ErrorCode::NonPositiveDefiniteInput, fmt::format("n = {} must exceed p = {}", n, p));
  }
  if (Eigen::LLT<MatrixXd>(s).info() != Eigen::Success) {
    throw Error(ErrorCode::NonPositiveDefiniteInput, "sample covariance is not positive definite");
  }

  CfaResult out;
  out.n = n;

  // BFGS on the inverse Hessian with Armijo backtracking; every accepted step lowers F.
  VectorXd theta = model.start_values(s);
  Objective current = cfa_objective(model, s, theta);
  if (!std::isfinite(current.value)) throw Error(ErrorCode::NonPositiveDefiniteInput, "start values not feasible");
  const auto dim = model.n_params();
  MatrixXd h_inv = MatrixXd::Identity(dim, dim);
  out.trace.push_back(current.value);

  int iter = 0;
  for (; iter < options.max_iter; ++iter) {
    if (current.gradient.lpNorm<Eigen::Infinity>() < options.grad_tol) {
      out.converged = true;
      break;
    }
    VectorXd direction = -h_inv * current.gradient;
    double slope = current.gradient.dot(direction);
    if (!(slope < 0.0)) {
      h_inv.setIdentity();
      direction = -current.gradient;
      slope = -current.gradient.squaredNorm();
    }

    double step = 1.0;
    Objective trial;
    VectorXd candidate;
    bool accepted = false;
    for (int halving = 0; halving < 60; ++halving, step *= 0.5) {
      candidate = theta + step * direction;
      trial = cfa_objective(model, s, candidate);
      if (std::isfinite(trial.value) && trial.value <= current.value + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      out.warnings.push_back("line search failed to decrease F_ML");
      break;
    }

    const VectorXd delta = candidate - theta;
    const VectorXd change = trial.gradient - current.gradient;
    const double curvature = delta.dot(change);
    if (curvature > 1e-12 * delta.norm() * change.norm()) {
      if (iter == 0) h_inv *= curvature / change.squaredNorm();
      const double rho = 1.0 / curvature;
      const MatrixXd left = MatrixXd::Identity(dim, dim) - rho * delta * change.transpose();
      h_inv = left * h_inv * left.transpose() + rho * delta * delta.transpose();
    }
    theta = candidate;
    current = std::move(trial);
    out.trace.push_back(current.value);
  }
  if (!out.converged && current.gradient.lpNorm<Eigen::Infinity>() < options.grad_tol) out.converged = true;
  out.iterations = iter;
  out.gradient_norm = current.gradient.lpNorm<Eigen::Infinity>();
  if (!out.converged) {
    out.warnings.push_back(fmt::format("NonConvergence: gradient norm {:.3g} after {} iterations", out.gradient_norm, iter));
  }

  MatrixXd lambda = model.loadings(theta);
  out.phi = model.phi(theta);
  align_signs(lambda, &out.phi, nullptr);
  out.loadings = lambda.rowwise().sum();
  out.uniquenesses = model.uniquenesses(theta);
  out.implied = model.implied(theta);
  out.standardized_loadings = out.loadings.cwiseQuotient(out.implied.diagonal().cwiseSqrt());
  for (int i = 0; i < p; ++i) {
    if (out.uniquenesses(i) < 2.0 * options.uniqueness_floor) {
      out.heywood_items.push_back(i);
      out.warnings.push_back(fmt::format("HeywoodCase: uniqueness of item {} pinned at the lower bound", i + 1));
    }
  }

  out.f_ml = current.value;
  out.chi2 = static_cast<double>(n - 1) * out.f_ml;
  out.df = p * (p + 1) / 2 - model.n_params();
  const double f_baseline = s.diagonal().array().log().sum() - 2.0 * MatrixXd(Eigen::LLT<MatrixXd>(s).matrixL()).diagonal().array().log().sum();
  out.chi2_baseline = static_cast<double>(n - 1) * f_baseline;
  out.df_baseline = p * (p - 1) / 2;
  out.fit = fit_indices(out.chi2, out.df, out.chi2_baseline, out.df_baseline, n, s, out.implied);
  return out;
}

CfaSpec ams_cfa_spec() {
  CfaSpec spec;
  spec.n_factors = scale::kSubscaleCount;
  for (auto s : scale::kSubscales) spec.factor_names.emplace_back(scale::to_string(s));
  for (int i = 0; i < scale::kItemCount; ++i) {
    spec.item_factor.push_back(static_cast<int>(scale::kAmsItemMap[static_cast<std::size_t>(i)]));
    spec.item_names.push_back(fmt::format("AMS_Q{}", i + 1));
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Serialization

nlohmann::json to_json(const EfaResult& efa) {
  return {{"retained_k", efa.retained_k},
          {"parallel_analysis_k", efa.pa.retained_k},
          {"pa_criterion", efa.pa.criterion == PaCriterion::Mean ? "mean" : "p95"},
          {"pa_replicates", efa.pa.replicates},
          {"observed_eigenvalues", to_json(efa.pa.observed)},
          {"reference_eigenvalues", to_json(efa.pa.reference())},
          {"reference_mean", to_json(efa.pa.reference_mean)},
          {"reference_p95", to_json(efa.pa.reference_p95)},
          {"pattern", to_json(efa.rotated.pattern)},
          {"structure", to_json(efa.rotated.structure)},
          {"factor_corr", to_json(efa.rotated.phi)},
          {"communalities", to_json(efa.communalities)},
          {"unrotated_loadings", to_json(efa.paf.loadings)},
          {"paf_iterations", efa.paf.iterations},
          {"paf_converged", efa.paf.converged},
          {"smc_fallback", efa.paf.smc_fallback},
          {"heywood", efa.paf.heywood}};
}

nlohmann::json to_json(const CfaResult& cfa, const CfaSpec& spec) {
  auto items = nlohmann::json::array();
  for (std::size_t i = 0; i < spec.item_factor.size(); ++i) {
    const auto f = static_cast<std::size_t>(spec.item_factor[i]);
    items.push_back({{"item", i < spec.item_names.size() ? spec.item_names[i] : std::to_string(i + 1)},
                     {"factor", f < spec.factor_names.size() ? spec.factor_names[f] : std::to_string(f)},
                     {"loading", cfa.loadings(static_cast<Eigen::Index>(i))},
                     {"standardized_loading", cfa.standardized_loadings(static_cast<Eigen::Index>(i))},
                     {"uniqueness", cfa.uniquenesses(static_cast<Eigen::Index>(i))}});
  }
  return {{"items", items},
          {"factors", spec.factor_names},
          {"factor_corr", to_json(cfa.phi)},
          {"f_ml", cfa.f_ml},
          {"chi2", cfa.chi2},
          {"df", cfa.df},
          {"chi2_baseline", cfa.chi2_baseline},
          {"df_baseline", cfa.df_baseline},
          {"cfi", cfa.fit.cfi},
          {"tli", cfa.fit.tli},
          {"rmsea", cfa.fit.rmsea},
          {"srmr", cfa.fit.srmr},
          {"converged", cfa.converged},
          {"iterations", cfa.iterations},
          {"gradient_norm", cfa.gradient_norm},
          {"heywood_items", cfa.heywood_items},
          {"warnings", cfa.warnings},
          {"n", cfa.n}};
}

}  // namespace synthpsych::factor
