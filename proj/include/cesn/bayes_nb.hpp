#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <vector>

#include "cesn/dists.hpp"
#include "cesn/panel.hpp"
#include "cesn/reservoir.hpp"

namespace cesn {

/// sum_t [lnG(y+r) - lnG(r) - lnG(y+1) + y psi - (y+r) ln(1+e^psi)]. Throws for r <= 0.
double nb_loglik_school(std::span<const std::int64_t> y, std::span<const double> psi, double r);

/// Log prior density of r (up to a constant) when 1/r ~ Half-Cauchy(0, 1):
/// -ln(1 + r^2), the Jacobian of r -> 1/r included.
double log_prior_r(double r);

struct NBOptions {
  int n_iter = 3000;
  int burn_in = 1000;
  int thin = 2;
  int pg_truncation = kDefaultPgTruncation;
  double ig_shape = 0.001;
  double ig_rate = 0.001;
  double r_cap = 10.0;  // uniform window half-width min(r_cap, r)
  double r_init = 1.0;
  double sigma2_init = 1.0;
  bool fix_sigmas = false;
  bool fix_r = false;

  void validate() const;
  int saved() const { return (n_iter - burn_in) / thin; }
};

/// Current state of the augmented sampler.
struct NBState {
  Eigen::VectorXd eta_tilde;  // (eta_1, ..., eta_ns, delta)
  double sigma_eta2 = 1.0;
  double sigma_delta2 = 1.0;
  Eigen::VectorXd r;          // one dispersion per school
  Eigen::VectorXd omega;      // one Polya-Gamma variable per design row
};

struct NBChain {
  int n_h = 0;
  int n_states = 0;
  int burn_in = 0;
  int thin = 0;
  int n_iter = 0;
  Eigen::MatrixXd eta_tilde_draws;  // saved x (n_h + 1) n_s
  Eigen::VectorXd sigma_eta2_chain;
  Eigen::VectorXd sigma_delta2_chain;
  Eigen::MatrixXd r_draws;          // saved x N
  Eigen::VectorXd r_accept;         // per-school MH acceptance fraction
  NBState last;

  Eigen::VectorXd posterior_mean() const { return eta_tilde_draws.colwise().mean(); }
};

/// Start values: eta = 0, delta_s = ln(mean count of state s / r_init) (floored),
/// r_i = r_init, both variances sigma2_init.
NBState initial_nb_state(const PanelSeries& panel, const MergedDesign& design, const NBOptions& options);

/// One sweep: omega | rest, every state block | omega (Gaussian), the two
/// variances | blocks (inverse gamma), then each r_i by Metropolis-Hastings on
/// the negative binomial likelihood (omega integrated out; omega is redrawn
/// at the start of the next sweep).
void gibbs_sweep_nb(NBState& state, const PanelSeries& panel, const MergedDesign& design,
                    const NBOptions& options, Rng& rng, std::vector<long>* r_accepted = nullptr);

NBChain fit_hier_nb(const PanelSeries& panel, const HiddenStateMatrix& states,
                    const NBOptions& options, Rng& rng);

/// Gaussian conditional of one state block given omega: precision
/// sum omega h h' + diag(1/sigma2) and linear term sum kappa h, kappa = (y - r)/2.
struct NBBlockConditional {
  Eigen::MatrixXd precision;
  Eigen::VectorXd linear;
  Eigen::VectorXd mean() const;
};

NBBlockConditional nb_block_conditional(const NBState& state, const PanelSeries& panel,
                                        const MergedDesign& design, int s);

}  // namespace cesn
