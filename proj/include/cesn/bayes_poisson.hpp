#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cesn/dists.hpp"
#include "cesn/panel.hpp"
#include "cesn/reservoir.hpp"

namespace cesn {

/// How coefficient blocks are drawn from their conditional MLG.
///  - kExact: independence Metropolis-Hastings with a Laplace (Gaussian) proposal,
///    which targets the conditional MLG density itself.
///  - kProjection: w ~ MLG(0, I, xi, psi) followed by (L'L)^{-1} L' w.
enum class CmlgMethod { kExact, kProjection };

std::string to_string(CmlgMethod m);
CmlgMethod parse_cmlg_method(const std::string& name);

struct BayesPoissonOptions {
  int n_draws = 1000;
  double sigma_eta = 0.1;
  double alpha = kDefaultMlgAlpha;
  CmlgMethod method = CmlgMethod::kExact;
  /// Independence-chain steps between saved draws of the exact method.
  int thin = 1;
};

struct PoissonPosterior {
  Eigen::MatrixXd draws;  // n_draws x n_h
  double sigma_eta = 0.1;
  double acceptance_rate = 1.0;
};

/// L = [H; alpha^{-1/2} / sigma I], xi = (y, alpha 1), psi = (1, alpha 1).
CMLGParams poisson_cmlg_params(const Eigen::MatrixXd& H, std::span<const std::int64_t> y,
                               double sigma, double alpha);

PoissonPosterior fit_bayes_poisson_school(const Eigen::MatrixXd& H, std::span<const std::int64_t> y,
                                          const BayesPoissonOptions& options, Rng& rng);

/// Independent conjugate fits for every school over one shared reservoir.
struct BayesPoissonFit {
  ReservoirWeights weights;
  std::vector<PoissonPosterior> schools;
};

/// School i uses the generator seeded derive_seed(seed, "bayes-poisson", i).
BayesPoissonFit fit_bayes_poisson(const PanelSeries& panel, const ReservoirSpec& spec,
                                  const BayesPoissonOptions& options, std::uint64_t seed,
                                  int workers = 1);

struct HierPoissonOptions {
  int n_iter = 2500;
  int burn_in = 500;
  int thin = 2;
  double alpha = kDefaultMlgAlpha;
  double upsilon = 100.0;        // half-Cauchy scale for both sigmas
  double proposal_cap = 0.5;     // uniform window half-width min(cap, sigma)
  double sigma_eta_init = 0.5;
  double sigma_delta_init = 0.5;
  bool fix_sigmas = false;
  CmlgMethod method = CmlgMethod::kExact;

  void validate() const;
  int saved() const { return (n_iter - burn_in) / thin; }
};

struct HierPoissonState {
  Eigen::VectorXd eta_tilde;  // (eta_1, ..., eta_ns, delta)
  double sigma_eta = 0.5;
  double sigma_delta = 0.5;
};

struct HierPoissonChain {
  int n_h = 0;
  int n_states = 0;
  int burn_in = 0;
  int thin = 0;
  int n_iter = 0;
  Eigen::MatrixXd eta_tilde_draws;  // saved x (n_h + 1) n_s
  Eigen::VectorXd sigma_eta_chain;
  Eigen::VectorXd sigma_delta_chain;
  double accept_sigma_eta = 0.0;
  double accept_sigma_delta = 0.0;
  double accept_eta = 0.0;  // block acceptance of the exact cMLG steps

  Eigen::VectorXd posterior_mean() const { return eta_tilde_draws.colwise().mean(); }
};

/// Log full conditional of a prior scale sigma for a coefficient block, up to a constant:
/// -ln(1 + (sigma/upsilon)^2) - d ln sigma + alpha^{1/2}/sigma 1'block
///   - alpha 1' exp(alpha^{-1/2}/sigma block).  Returns -inf for sigma <= 0.
double log_fc_sigma(double sigma, const Eigen::VectorXd& block, double upsilon,
                    double alpha = kDefaultMlgAlpha);
/// Same density over the stacked eta_1..eta_ns part of eta~.
double log_fc_sigma_eta(double sigma, const Eigen::VectorXd& eta_tilde, int n_h, int n_states,
                        double upsilon, double alpha = kDefaultMlgAlpha);
/// Same density over the delta part of eta~.
double log_fc_sigma_delta(double sigma, const Eigen::VectorXd& eta_tilde, int n_h, int n_states,
                          double upsilon, double alpha = kDefaultMlgAlpha);

/// Uniform random-walk MH step on a positive scale with window half-width
/// min(cap, current), including the Hastings ratio for the state-dependent window.
template <class LogTarget>
double positive_window_mh_step(double current, double cap, LogTarget&& log_target, Rng& rng,
                               bool* accepted);

struct SweepCounters {
  long eta_accepted = 0;
  long eta_proposed = 0;
  long sigma_eta_accepted = 0;
  long sigma_delta_accepted = 0;
  long sweeps = 0;
};

/// One Gibbs sweep: every state block [eta_s; delta_s] from its conditional MLG,
/// then sigma_eta and sigma_delta by Metropolis-Hastings (unless fixed).
void gibbs_sweep_hier_poisson(HierPoissonState& state, const MergedDesign& design,
                              std::span<const std::int64_t> row_counts,
                              const HierPoissonOptions& options, Rng& rng,
                              SweepCounters* counters = nullptr);

HierPoissonChain fit_hier_poisson(const PanelSeries& panel, const HiddenStateMatrix& states,
                                  const HierPoissonOptions& options, Rng& rng);

/// Counts in MergedDesign row order (school-major).
std::vector<std::int64_t> row_counts(const PanelSeries& panel);

// ---------------------------------------------------------------------------

template <class LogTarget>
double positive_window_mh_step(double current, double cap, LogTarget&& log_target, Rng& rng,
                               bool* accepted) {
  const double width = std::min(cap, current);
  const double proposal = current + width * (2.0 * uniform01(rng) - 1.0);
  bool accept = false;
  if (proposal > 0.0) {
    const double back_width = std::min(cap, proposal);
    if (std::abs(current - proposal) <= back_width) {
      const double log_ratio = log_target(proposal) - log_target(current) + std::log(width) -
                               std::log(back_width);
      accept = std::log(uniform_open01(rng)) < log_ratio;
    }
  }
  if (accepted) *accepted = accept;
  return accept ? proposal : current;
}

}  // namespace cesn
