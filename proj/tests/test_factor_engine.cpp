#include <doctest.h>

#include "synthpsych/factor_engine.hpp"
#include "synthpsych/random.hpp"
#include "synthpsych/synth_oracle.hpp"
#include "test_util.hpp"

using namespace synthpsych;
using namespace synthpsych::factor;
using testutil::error_code_of;

namespace {

MatrixXd from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& row : rows) {
    Eigen::Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

// Values from tests/oracles/derive.py.
const MatrixXd kTwoFactor = from_rows(
    {{0.8, 0.3}, {0.7, 0.4}, {0.75, 0.25}, {0.3, 0.7}, {0.2, 0.8}, {0.35, 0.65}});

MatrixXd random_normal(Eigen::Index n, Eigen::Index p, std::uint64_t seed) {
  Rng rng(seed);
  MatrixXd m(n, p);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < p; ++j) m(i, j) = rng.normal();
  return m;
}

void check_close(const MatrixXd& a, const MatrixXd& b, double tol) {
  REQUIRE(a.rows() == b.rows());
  REQUIRE(a.cols() == b.cols());
  CHECK((a - b).cwiseAbs().maxCoeff() < tol);
}

}  // namespace

TEST_CASE("correlation matrix properties") {
  const MatrixXd data = random_normal(200, 6, 3);
  const auto r = pearson_correlation(data);
  CHECK(r.n == 200);
  CHECK((r.r - r.r.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((r.r.diagonal().array() - 1.0).abs().maxCoeff() == 0.0);
  CHECK(r.r.cwiseAbs().maxCoeff() <= 1.0);
  CHECK(descending_eigenvalues(r.r).sum() == doctest::Approx(6.0).epsilon(1e-10));

  MatrixXd flat = data;
  flat.col(2).setConstant(4.0);
  CHECK(error_code_of([&] { pearson_correlation(flat); }) == ErrorCode::ZeroVarianceColumn);
}

TEST_CASE("eigenvalues of any correlation matrix sum to p") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto p = static_cast<Eigen::Index>(3 + seed);
    const auto r = pearson_correlation(random_normal(50, p, seed));
    const VectorXd ev = descending_eigenvalues(r.r);
    CHECK(std::abs(ev.sum() - static_cast<double>(p)) < 1e-8);
    for (Eigen::Index i = 1; i < ev.size(); ++i) CHECK(ev(i) <= ev(i - 1));
  }
}

TEST_CASE("PAF recovers a single factor with r = 0.64") {
  MatrixXd r = MatrixXd::Constant(5, 5, 0.64);
  r.diagonal().setOnes();
  EfaConfig cfg;
  cfg.paf_tol = 1e-12;
  cfg.paf_max_iter = 1000;
  const auto paf = principal_axis_factoring(r, 1, cfg);
  CHECK(paf.converged);
  CHECK((paf.loadings.array() - 0.8).abs().maxCoeff() < 1e-6);
  CHECK((paf.communalities.array() - 0.64).abs().maxCoeff() < 1e-6);
}

TEST_CASE("PAF matches the reference iteration") {
  const MatrixXd r = from_rows({{1.00, 0.56, 0.60, 0.24, 0.16, 0.28},
                                {0.56, 1.00, 0.53, 0.29, 0.22, 0.31},
                                {0.60, 0.53, 1.00, 0.20, 0.14, 0.26},
                                {0.24, 0.29, 0.20, 1.00, 0.60, 0.52},
                                {0.16, 0.22, 0.14, 0.60, 1.00, 0.56},
                                {0.28, 0.31, 0.26, 0.52, 0.56, 1.00}});
  EfaConfig cfg;
  cfg.paf_tol = 1e-12;
  cfg.paf_max_iter = 1000;
  const auto paf = principal_axis_factoring(r, 2, cfg);
  const VectorXd h2 = (VectorXd(6) << 0.6310694641582553, 0.5083079114031894, 0.5701382593511409,
                       0.5500891061692483, 0.6739858922340474, 0.49996858592927906)
                          .finished();
  const MatrixXd abs_loadings = from_rows({{0.6525613750184913, 0.45302661731098226},
                                           {0.6384301747831839, 0.3173559883309321},
                                           {0.6074715874423712, 0.4484601763829053},
                                           {0.6325438361220811, 0.3872691590524736},
                                           {0.6199043862555335, 0.538241994027963},
                                           {0.6403305712509395, 0.29990889525108205}});
  CHECK(paf.converged);
  CHECK_FALSE(paf.smc_fallback);
  CHECK((paf.communalities - h2).cwiseAbs().maxCoeff() < 1e-8);
  check_close(paf.loadings.cwiseAbs(), abs_loadings, 1e-8);
  CHECK(paf.loadings.col(0).sum() > 0.0);
  CHECK(paf.loadings.col(1).sum() > 0.0);
}

TEST_CASE("PAF on a singular matrix falls back to max |r| starts") {
  MatrixXd r = MatrixXd::Identity(4, 4);
  r(0, 1) = r(1, 0) = 1.0;
  r(2, 3) = r(3, 2) = 0.5;
  const auto paf = principal_axis_factoring(r, 1, EfaConfig{});
  CHECK(paf.smc_fallback);
  CHECK(paf.loadings.allFinite());
  CHECK((paf.communalities.array() >= 0.0).all());
}

TEST_CASE("PAF reconstruction error shrinks with planted noise") {
  double previous = 1.0;
  for (double loading : {0.5, 0.7, 0.9}) {
    const auto model = oracle::single_factor_model(8, loading);
    const MatrixXd r = oracle::population_covariance(model);
    const auto paf = principal_axis_factoring(r, 1, EfaConfig{});
    MatrixXd resid = r - paf.loadings * paf.loadings.transpose();
    resid.diagonal().setZero();
    CHECK(resid.cwiseAbs().maxCoeff() < 1e-3);

    const auto sample = oracle::sample(model, 3000, {}, 11);
    const auto rs = pearson_correlation(sample.categories).r;
    const auto fit = principal_axis_factoring(rs, 1, EfaConfig{});
    MatrixXd err = rs - fit.loadings * fit.loadings.transpose();
    err.diagonal().setZero();
    const double rms = std::sqrt(err.squaredNorm() / (8.0 * 7.0));
    CHECK(rms < previous);
    previous = rms;
  }
}

TEST_CASE("varimax matches the reference implementation") {
  const auto [rotated, rotation] = varimax(kTwoFactor);
  const MatrixXd expected = from_rows({{0.8026389181355056, 0.29286646631914903},
                                       {0.7035330863521061, 0.39375270971496845},
                                       {0.7521957964375959, 0.2433135504274493},
                                       {0.3062195534122979, 0.6973016457086364},
                                       {0.20711372162889835, 0.7981878891044559},
                                       {0.35577246930399764, 0.6468585240107269}});
  check_close(rotated, expected, 1e-6);
  check_close(rotation.transpose() * rotation, MatrixXd::Identity(2, 2), 1e-12);
  check_close(kTwoFactor * rotation, rotated, 1e-12);
}

TEST_CASE("promax matches the reference implementation") {
  const auto pm = promax_rotate(kTwoFactor, 4);
  const MatrixXd pattern = from_rows({{0.8741371244736735, -0.02990752894769576},
                                      {0.701586522652514, 0.14542116269113825},
                                      {0.8338861590263306, -0.06703609259764019},
                                      {0.05740845083111192, 0.7219430197771125},
                                      {-0.11514215099004786, 0.8972717114159466},
                                      {0.14368375174169165, 0.6342786739576957}});
  check_close(pm.pattern, pattern, 1e-6);
  CHECK(pm.phi(0, 1) == doctest::Approx(0.6695826012846321).epsilon(1e-6));
  check_close(pm.structure, pm.pattern * pm.phi, 1e-12);
  check_close(pm.phi, pm.phi.transpose(), 1e-12);
  CHECK((pm.phi.diagonal().array() - 1.0).abs().maxCoeff() < 1e-12);
  check_close(kTwoFactor * pm.rotation, pm.pattern, 1e-10);
}

TEST_CASE("promax with kappa 1 keeps every item's dominant factor") {
  MatrixXd simple = MatrixXd::Zero(9, 3);
  for (int i = 0; i < 9; ++i) {
    simple(i, i % 3) = 0.7 + 0.02 * i;
    simple(i, (i + 1) % 3) = 0.1;
  }
  const auto [vm, rot] = varimax(simple);
  const auto pm = promax_rotate(vm, 1);
  for (Eigen::Index i = 0; i < 9; ++i) {
    Eigen::Index a = 0, b = 0;
    vm.row(i).cwiseAbs().maxCoeff(&a);
    pm.pattern.row(i).cwiseAbs().maxCoeff(&b);
    CHECK(a == b);
  }
}

TEST_CASE("promax with a single factor is the identity") {
  const MatrixXd one = kTwoFactor.col(0);
  const auto pm = promax_rotate(one, 4);
  check_close(pm.pattern, one, 1e-12);
  CHECK(pm.phi(0, 0) == 1.0);
}

TEST_CASE("ML discrepancy and SRMR match hand computation") {
  const MatrixXd s = from_rows({{2.0, 0.6, 0.3}, {0.6, 1.5, 0.4}, {0.3, 0.4, 1.2}});
  const MatrixXd sigma = from_rows({{1.8, 0.5, 0.35}, {0.5, 1.6, 0.3}, {0.35, 0.3, 1.1}});
  CHECK(ml_discrepancy(s, sigma) == doctest::Approx(0.03094997572777114).epsilon(1e-12));
  CHECK(srmr(s, sigma) == doctest::Approx(0.0722489266868886).epsilon(1e-12));
  CHECK(std::abs(ml_discrepancy(s, s)) < 1e-14);
  MatrixXd not_pd = sigma;
  not_pd(0, 1) = not_pd(1, 0) = 5.0;
  CHECK(std::isinf(ml_discrepancy(s, not_pd)));
}

TEST_CASE("F_ML is non-negative") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const MatrixXd a = random_normal(30, 4, seed);
    const MatrixXd b = random_normal(30, 4, seed + 100);
    CHECK(ml_discrepancy(sample_covariance(a), sample_covariance(b)) >= 0.0);
  }
}

TEST_CASE("fit index arithmetic") {
  const MatrixXd id = MatrixXd::Identity(3, 3);
  const auto fit = fit_indices(50.0, 40, 1000.0, 378, 2000, id, id);
  CHECK(fit.cfi == doctest::Approx(0.9839228295819936).epsilon(1e-12));
  CHECK(fit.tli == doctest::Approx(0.8480707395498392).epsilon(1e-12));
  CHECK(fit.rmsea == doctest::Approx(0.01118033988749895).epsilon(1e-12));
  CHECK(fit.srmr == 0.0);

  SUBCASE("chi2 below df is a perfect fit") {
    const auto good = fit_indices(30.0, 40, 1000.0, 378, 2000, id, id);
    CHECK(good.rmsea == 0.0);
    CHECK(good.cfi == 1.0);
    CHECK(good.tli > 1.0);  // uncapped
  }
  SUBCASE("degenerate degrees of freedom") {
    CHECK(error_code_of([&] { fit_indices(10.0, 0, 100.0, 10, 100, id, id); }) ==
          ErrorCode::InvalidDegreesOfFreedom);
    CHECK(error_code_of([&] { fit_indices(10.0, 5, 100.0, 0, 100, id, id); }) ==
          ErrorCode::InvalidDegreesOfFreedom);
  }
}

TEST_CASE("CFA gradient agrees with central differences") {
  const CfaModel model(ams_cfa_spec());
  const auto planted = oracle::ams_model(0.8, 0.3);
  const MatrixXd s = oracle::population_covariance(planted) * 1.3;
  Rng rng(99);
  for (int point = 0; point < 5; ++point) {
    VectorXd theta = model.start_values(s);
    for (Eigen::Index i = 0; i < theta.size(); ++i) theta(i) += 0.2 * rng.normal();
    const auto obj = cfa_objective(model, s, theta);
    REQUIRE(std::isfinite(obj.value));
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      VectorXd up = theta, down = theta;
      up(i) += 1e-6;
      down(i) -= 1e-6;
      const double fd = (cfa_objective(model, s, up).value - cfa_objective(model, s, down).value) / 2e-6;
      CHECK(std::abs(fd - obj.gradient(i)) <= 1e-4 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("CFA parameter encoding round trips") {
  const CfaModel model(ams_cfa_spec());
  CHECK(model.n_params() == 77);
  const auto planted = oracle::ams_model(0.7, 0.4);
  VectorXd lambda(28), psi(28);
  for (int i = 0; i < 28; ++i) {
    lambda(i) = planted.loadings.row(i).maxCoeff();
    psi(i) = planted.psi(i);
  }
  const VectorXd theta = model.encode(lambda, psi, planted.phi);
  check_close(model.implied(theta), oracle::population_covariance(planted), 1e-12);
  check_close(model.phi(theta), planted.phi, 1e-12);
}

TEST_CASE("CFA fit on sampled data") {
  const auto planted = oracle::ams_model(0.8, 0.3);
  const auto sample = oracle::sample(planted, 600, {}, 5);
  const MatrixXd s = sample_covariance(sample.categories);
  const auto fit = fit_cfa(s, 600, ams_cfa_spec());
  CHECK(fit.converged);
  CHECK(fit.df == 329);
  CHECK(fit.df_baseline == 378);
  CHECK(fit.gradient_norm <= 1e-6);
  CHECK((fit.uniquenesses.array() > 0.0).all());
  CHECK(Eigen::LLT<MatrixXd>(fit.phi).info() == Eigen::Success);
  CHECK(fit.chi2 == doctest::Approx(599.0 * fit.f_ml).epsilon(1e-12));
  for (std::size_t i = 1; i < fit.trace.size(); ++i) CHECK(fit.trace[i] <= fit.trace[i - 1]);
  CHECK(fit.fit.cfi > 0.98);
}

TEST_CASE("CFA input checks") {
  const auto spec = ams_cfa_spec();
  const MatrixXd s = MatrixXd::Identity(28, 28);
  CHECK(error_code_of([&] { fit_cfa(s, 28, spec); }) == ErrorCode::NonPositiveDefiniteInput);
  MatrixXd singular = MatrixXd::Ones(28, 28);
  CHECK(error_code_of([&] { fit_cfa(singular, 500, spec); }) == ErrorCode::NonPositiveDefiniteInput);

  CfaSpec bad = spec;
  bad.item_factor[1] = 6;  // IMTK left with three items, AMOT with five
  CHECK_NOTHROW(validate(bad));
  bad.item_factor = {0, 0, 0, 1};
  bad.n_factors = 2;
  bad.factor_names = {"A", "B"};
  bad.item_names = {"a", "b", "c", "d"};
  CHECK(error_code_of([&] { validate(bad); }) == ErrorCode::InvalidInput);
}

TEST_CASE("parallel analysis is seed-deterministic and reports both criteria") {
  const auto sample = oracle::sample(oracle::ams_model(0.8, 0.3), 400, {}, 2);
  EfaConfig cfg;
  cfg.pa_replicates = 20;
  const auto a = parallel_analysis(sample.categories, cfg);
  const auto b = parallel_analysis(sample.categories, cfg);
  CHECK(a.reference_mean == b.reference_mean);
  CHECK(a.retained_k == b.retained_k);
  CHECK((a.reference_p95.array() >= a.reference_mean.array() - 1e-12).all());
  cfg.pa_criterion = PaCriterion::P95;
  const auto c = parallel_analysis(sample.categories, cfg);
  CHECK(c.retained_k <= a.retained_k);
  CHECK(c.reference_mean == a.reference_mean);
}
