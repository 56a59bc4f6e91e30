#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cesn/panel.hpp"
#include "cesn/reservoir.hpp"

namespace cesn {

/// Generator settings. Only the fields of the chosen dgp are read.
struct SimulationSpec {
  std::string dgp = "hier-nb-esn";  // hier-poisson-esn | hier-nb-esn | ingarch | iid-poisson
  int n_states = 2;
  int schools_per_state = 5;
  int n_years = 50;
  int first_year = 1972;
  std::uint64_t seed = 1;

  // iid-poisson: school means lambda * exp(lambda_spread * z), z ~ N(0, 1)
  double lambda = 5.0;
  double lambda_spread = 0.0;

  // ingarch
  double beta0 = 2.0;
  double alpha1 = 0.3;
  double beta1 = 0.5;

  // hierarchical ESN generators
  ReservoirSpec reservoir;  // its seed is replaced by one derived from `seed`
  double sigma_eta = 1.0;
  double sigma_delta = 0.3;
  double mu_delta = 2.5;
  /// Adds feedback * u / ||u||^2 to every eta_s, u the U_Y row, so that the
  /// linear predictor carries roughly feedback * ln(y_{t-1} + 1).
  double feedback = 0.2;
  double dispersion = 2.0;  // r for hier-nb-esn
  double alpha = 1000.0;    // MLG shape for hier-poisson-esn

  void validate() const;
};

/// Parameters the panel was generated from.
struct SimulationTruth {
  std::string dgp;
  std::vector<double> school_lambda;  // iid-poisson
  double beta0 = 0.0, alpha1 = 0.0, beta1 = 0.0;  // ingarch
  std::optional<ReservoirWeights> weights;        // ESN generators
  Eigen::VectorXd eta_tilde;                      // (eta_1..eta_ns, delta)
  double sigma_eta = 0.0;
  double sigma_delta = 0.0;
  double feedback_applied = 0.0;
  std::vector<double> dispersion;  // per school (hier-nb-esn)
};

struct SimulationResult {
  PanelSeries panel;
  SimulationTruth truth;
};

/// Deterministic given spec.seed. The panel carries default covariates
/// (intercept and scaled trend); states are labelled S01, S02, ...
SimulationResult simulate_panel(const SimulationSpec& spec);

}  // namespace cesn
