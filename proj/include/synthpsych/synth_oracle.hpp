#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "synthpsych/scale_admin.hpp"

namespace synthpsych::oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Standardized latent factor model discretized into ordered categories 1..thresholds+1.
struct PlantedModel {
  MatrixXd loadings;  // p x k
  MatrixXd phi;       // k x k, unit diagonal, PD
  VectorXd psi;       // p uniquenesses
  std::vector<double> thresholds = {-1.5, -0.9, -0.3, 0.3, 0.9, 1.5};
};

// Throws InvalidInput unless diag(L Phi L^T) + psi == 1 (1e-10), psi > 0, Phi PD with unit
// diagonal and thresholds strictly ascending.
void validate(const PlantedModel& model);

// Seven-factor AMS layout (item -> factor per the canonical map), equal own-loadings.
PlantedModel ams_model(double own_loading = 0.8, double factor_corr = 0.3);
PlantedModel single_factor_model(int items = 28, double loading = 0.9);
// Builds psi from the standardization constraint.
PlantedModel make_model(MatrixXd loadings, MatrixXd phi, std::vector<double> thresholds = {-1.5, -0.9, -0.3, 0.3, 0.9, 1.5});

MatrixXd population_covariance(const PlantedModel& model);

// Pearson correlation of the discretized items when the latent responses are exactly
// standard normal with correlation population_covariance(model). Computed by quadrature.
MatrixXd discretized_population_correlation(const PlantedModel& model);

struct PersonaProfile {
  std::string name;
  VectorXd factor_offsets;  // k
};

struct ProfileShare {
  PersonaProfile profile;
  double weight = 1.0;
};

using ProfileMix = std::vector<ProfileShare>;

// Positive offsets on the intrinsic factors (IMTK, IMTA, IMES), negative on EMEX/AMOT; the
// external profile mirrors it.
PersonaProfile intrinsic_dominant(double shift = 1.0);
PersonaProfile external_dominant(double shift = 1.0);

struct Sample {
  MatrixXd categories;       // n x p category codes
  std::vector<int> profile;  // profile index per row (0 when the mix is empty)
};

// Draws f ~ N(offset, Phi), x = L f + e with e ~ N(0, psi), then discretizes through the
// thresholds. Rows are generated in fixed blocks with derived seeds.
Sample sample(const PlantedModel& model, std::size_t n, const ProfileMix& mix, std::uint64_t seed);

struct Respondents {
  scale::ResponseMatrix matrix;  // persona ids 1..n
  std::vector<int> profile;
};

// As sample(), for 28-item models with six thresholds (categories 1..7).
Respondents sample_respondents(const PlantedModel& model, std::size_t n, const ProfileMix& mix, std::uint64_t seed);

nlohmann::json to_json(const PlantedModel& model);

}  // namespace synthpsych::oracle
