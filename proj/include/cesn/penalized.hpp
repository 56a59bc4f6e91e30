#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <vector>

#include "cesn/panel.hpp"
#include "cesn/reservoir.hpp"

namespace cesn {

struct PenalizedOptions {
  double tol = 1e-8;       // objective-change tolerance
  int max_iter = 10000;
  /// Tolerance on the soft-threshold optimality conditions at the iterate,
  /// scaled by max(1, sum y).
  double grad_tol = 1e-9;
};

/// LASSO-penalized Poisson log-linear fit for one series.
struct PenalizedFit {
  Eigen::VectorXd eta;
  double tau = 0.0;
  /// Penalized log-likelihood after each accepted iterate (starts at eta = 0).
  std::vector<double> objective_trace;
  bool converged = false;
  int iterations = 0;
};

/// sum_t [y_t theta_t - exp(theta_t)] - tau * ||eta||_1 with theta = H eta.
double penalized_poisson_objective(const Eigen::MatrixXd& H, std::span<const std::int64_t> y,
                                   const Eigen::VectorXd& eta, double tau);

/// Largest violation of the soft-threshold optimality conditions at eta.
double lasso_kkt_violation(const Eigen::MatrixXd& H, std::span<const std::int64_t> y,
                           const Eigen::VectorXd& eta, double tau);

/// Monotone accelerated proximal-gradient ascent with backtracking and
/// momentum restarts. Throws NumericalError if the objective becomes
/// non-finite at the start point; a fit that hits the iteration cap is
/// returned with converged = false.
PenalizedFit fit_penalized_poisson(const Eigen::MatrixXd& H, std::span<const std::int64_t> y,
                                   double tau, const PenalizedOptions& options = {});

/// One reservoir shared by every school, with an independent penalized fit per school.
struct SingleEsnFit {
  ReservoirWeights weights;
  std::vector<PenalizedFit> schools;

  /// exp(h' eta_i) for school i at the given hidden state.
  double mean(int i, const Eigen::VectorXd& h) const;
};

SingleEsnFit fit_single_esn(const PanelSeries& panel, const ReservoirSpec& spec, double tau,
                            const PenalizedOptions& options = {}, int workers = 1);

struct EnsembleFit {
  std::vector<SingleEsnFit> members;

  int size() const noexcept { return static_cast<int>(members.size()); }
};

/// Members use reservoir seeds base_seed, base_seed + 1, ..., base_seed + M - 1.
EnsembleFit fit_ensemble_esn(const PanelSeries& panel, const ReservoirSpec& spec, double tau,
                             int M, std::uint64_t base_seed, const PenalizedOptions& options = {},
                             int workers = 1);
/// Explicit seed list, one member per entry (duplicates allowed).
EnsembleFit fit_ensemble_esn(const PanelSeries& panel, const ReservoirSpec& spec, double tau,
                             std::span<const std::uint64_t> seeds,
                             const PenalizedOptions& options = {}, int workers = 1);

}  // namespace cesn
