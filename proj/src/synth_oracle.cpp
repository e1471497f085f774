#include "synthpsych/synth_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <boost/math/quadrature/gauss.hpp>
#include <fmt/format.h>

#include "synthpsych/errors.hpp"
#include "synthpsych/parallel.hpp"
#include "synthpsych/random.hpp"

namespace synthpsych::oracle {

namespace {

constexpr std::size_t kBlockRows = 256;

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

int categorize(double latent, const std::vector<double>& thresholds) {
  return 1 + static_cast<int>(std::lower_bound(thresholds.begin(), thresholds.end(), latent) - thresholds.begin());
}

// E[c(X) c(Y)] for standard normals with correlation rho, c = 1 + #{t < value}.
double cross_moment(double rho, const std::vector<double>& thresholds) {
  constexpr double kTail = 8.5;
  rho = std::clamp(rho, -1.0 + 1e-12, 1.0 - 1e-12);
  const double s = std::sqrt(1.0 - rho * rho);
  auto inner = [&](double z) {
    double expected = 1.0;
    for (double t : thresholds) expected += normal_cdf((rho * z - t) / s);
    return expected;
  };

  std::vector<double> breaks = {-kTail, kTail};
  for (double t : thresholds) {
    breaks.push_back(t);
    if (rho != 0.0) breaks.push_back(t / rho);
  }
  std::sort(breaks.begin(), breaks.end());
  breaks.erase(std::remove_if(breaks.begin(), breaks.end(), [&](double b) { return b < -kTail || b > kTail; }),
               breaks.end());
  breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());

  double total = 0.0;
  for (std::size_t i = 0; i + 1 < breaks.size(); ++i) {
    const double a = breaks[i];
    const double b = breaks[i + 1];
    const double code = static_cast<double>(categorize(0.5 * (a + b), thresholds));
    total += code * boost::math::quadrature::gauss<double, 30>::integrate(
                        [&](double z) { return normal_pdf(z) * inner(z); }, a, b);
  }
  return total;
}

}  // namespace

void validate(const PlantedModel& model) {
  const auto p = model.loadings.rows();
  const auto k = model.loadings.cols();
  if (p < 1 || k < 1) throw Error(ErrorCode::InvalidInput, "planted model needs items and factors");
  if (model.phi.rows() != k || model.phi.cols() != k || model.psi.size() != p) {
    throw Error(ErrorCode::InvalidInput, "planted model dimensions disagree");
  }
  if ((model.phi.diagonal().array() - 1.0).abs().maxCoeff() > 1e-12 ||
      Eigen::LLT<MatrixXd>(model.phi).info() != Eigen::Success) {
    throw Error(ErrorCode::InvalidInput, "factor correlation matrix must be PD with unit diagonal");
  }
  if ((model.psi.array() <= 0.0).any()) throw Error(ErrorCode::InvalidInput, "uniquenesses must be positive");
  const VectorXd total = (model.loadings * model.phi * model.loadings.transpose()).diagonal() + model.psi;
  if ((total.array() - 1.0).abs().maxCoeff() > 1e-10) {
    throw Error(ErrorCode::InvalidInput, "latent item variances must equal 1");
  }
  if (model.thresholds.empty() ||
      std::adjacent_find(model.thresholds.begin(), model.thresholds.end(),
                         [](double a, double b) { return !(a < b); }) != model.thresholds.end()) {
    throw Error(ErrorCode::InvalidInput, "thresholds must be strictly ascending");
  }
}

PlantedModel make_model(MatrixXd loadings, MatrixXd phi, std::vector<double> thresholds) {
  PlantedModel model;
  model.psi = (1.0 - (loadings * phi * loadings.transpose()).diagonal().array()).matrix();
  model.loadings = std::move(loadings);
  model.phi = std::move(phi);
  model.thresholds = std::move(thresholds);
  validate(model);
  return model;
}

PlantedModel ams_model(double own_loading, double factor_corr) {
  const int p = scale::kItemCount;
  const int k = scale::kSubscaleCount;
  MatrixXd loadings = MatrixXd::Zero(p, k);
  for (int i = 0; i < p; ++i) loadings(i, static_cast<int>(scale::kAmsItemMap[static_cast<std::size_t>(i)])) = own_loading;
  MatrixXd phi = MatrixXd::Constant(k, k, factor_corr);
  phi.diagonal().setOnes();
  return make_model(std::move(loadings), std::move(phi));
}

PlantedModel single_factor_model(int items, double loading) {
  return make_model(MatrixXd::Constant(items, 1, loading), MatrixXd::Identity(1, 1));
}

MatrixXd population_covariance(const PlantedModel& model) {
  MatrixXd sigma = model.loadings * model.phi * model.loadings.transpose();
  sigma.diagonal() += model.psi;
  return 0.5 * (sigma + sigma.transpose());
}

MatrixXd discretized_population_correlation(const PlantedModel& model) {
  validate(model);
  const MatrixXd sigma = population_covariance(model);
  const auto p = sigma.rows();
  const auto& t = model.thresholds;

  double mean = 0.0;
  double second = 0.0;
  double lower = -INFINITY;
  for (std::size_t c = 0; c <= t.size(); ++c) {
    const double upper = c < t.size() ? t[c] : INFINITY;
    const double mass = normal_cdf(upper) - normal_cdf(lower);
    mean += static_cast<double>(c + 1) * mass;
    second += static_cast<double>((c + 1) * (c + 1)) * mass;
    lower = upper;
  }
  const double variance = second - mean * mean;

  MatrixXd out = MatrixXd::Identity(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = 0; j < i; ++j) {
      out(i, j) = out(j, i) = (cross_moment(sigma(i, j), t) - mean * mean) / variance;
    }
  }
  return out;
}

PersonaProfile intrinsic_dominant(double shift) {
  VectorXd offsets(scale::kSubscaleCount);
  offsets << shift, shift, shift, 0.0, 0.0, -shift, -shift;
  return {"intrinsic-dominant", offsets};
}

PersonaProfile external_dominant(double shift) {
  VectorXd offsets(scale::kSubscaleCount);
  offsets << -shift, -shift, -shift, 0.0, 0.0, shift, 0.0;
  return {"external-dominant", offsets};
}

Sample sample(const PlantedModel& model, std::size_t n, const ProfileMix& mix, std::uint64_t seed) {
  validate(model);
  if (n < 1) throw Error(ErrorCode::InvalidInput, "sample size must be >= 1");
  const auto p = model.loadings.rows();
  const auto k = model.loadings.cols();
  double total_weight = 0.0;
  for (const auto& share : mix) {
    if (share.profile.factor_offsets.size() != k || !share.profile.factor_offsets.allFinite() || !(share.weight > 0.0)) {
      throw Error(ErrorCode::InvalidInput, "profile offsets must be finite, one per factor, with positive weight");
    }
    total_weight += share.weight;
  }

  const MatrixXd chol = Eigen::LLT<MatrixXd>(model.phi).matrixL();
  const VectorXd noise_sd = model.psi.cwiseSqrt();

  Sample out;
  out.categories.resize(static_cast<Eigen::Index>(n), p);
  out.profile.assign(n, 0);
  const std::size_t blocks = (n + kBlockRows - 1) / kBlockRows;
  parallel_for(blocks, default_workers(), [&](std::size_t block) {
    Rng rng(derive_seed(seed, block));
    VectorXd z(k);
    VectorXd latent(p);
    const std::size_t end = std::min(n, (block + 1) * kBlockRows);
    for (std::size_t row = block * kBlockRows; row < end; ++row) {
      VectorXd offset = VectorXd::Zero(k);
      if (!mix.empty()) {
        double pick = rng.uniform() * total_weight;
        std::size_t chosen = 0;
        while (chosen + 1 < mix.size() && pick >= mix[chosen].weight) pick -= mix[chosen++].weight;
        out.profile[row] = static_cast<int>(chosen);
        offset = mix[chosen].profile.factor_offsets;
      }
      for (Eigen::Index f = 0; f < k; ++f) z(f) = rng.normal();
      const VectorXd factors = offset + chol * z;
      latent = model.loadings * factors;
      for (Eigen::Index i = 0; i < p; ++i) {
        latent(i) += noise_sd(i) * rng.normal();
        out.categories(static_cast<Eigen::Index>(row), i) = categorize(latent(i), model.thresholds);
      }
    }
  });
  return out;
}

Respondents sample_respondents(const PlantedModel& model, std::size_t n, const ProfileMix& mix, std::uint64_t seed) {
  if (model.loadings.rows() != scale::kItemCount || model.thresholds.size() != scale::kScalePoints - 1) {
    throw Error(ErrorCode::InvalidInput, "respondent simulation needs 28 items and 6 thresholds");
  }
  Sample s = sample(model, n, mix, seed);
  Respondents out;
  out.profile = std::move(s.profile);
  out.matrix.rows.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    out.matrix.rows[r].persona_id = static_cast<int>(r + 1);
    for (int i = 0; i < scale::kItemCount; ++i) {
      out.matrix.rows[r].values[static_cast<std::size_t>(i)] = static_cast<int>(s.categories(static_cast<Eigen::Index>(r), i));
    }
  }
  return out;
}

nlohmann::json to_json(const PlantedModel& model) {
  auto rows = [](const MatrixXd& m) {
    auto out = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      std::vector<double> row(static_cast<std::size_t>(m.cols()));
      for (Eigen::Index j = 0; j < m.cols(); ++j) row[static_cast<std::size_t>(j)] = m(i, j);
      out.push_back(row);
    }
    return out;
  };
  return {{"loadings", rows(model.loadings)},
          {"phi", rows(model.phi)},
          {"psi", std::vector<double>(model.psi.data(), model.psi.data() + model.psi.size())},
          {"thresholds", model.thresholds}};
}

}  // namespace synthpsych::oracle
