#include "cesn/bayes_nb.hpp"

#include <cmath>
#include <limits>

#include "cesn/error.hpp"

namespace cesn {

double nb_loglik_school(std::span<const std::int64_t> y, std::span<const double> psi, double r) {
  if (!(r > 0.0)) throw ConfigError("negative binomial r must be positive");
  if (y.size() != psi.size()) throw ConfigError("counts and predictors differ in length");
  const double lg_r = std::lgamma(r);
  double out = 0.0;
  for (std::size_t t = 0; t < y.size(); ++t) {
    const double yt = static_cast<double>(y[t]);
    const double p = psi[t];
    // ln(1 + e^p) without overflow
    const double softplus = p > 0 ? p + std::log1p(std::exp(-p)) : std::log1p(std::exp(p));
    out += std::lgamma(yt + r) - lg_r - std::lgamma(yt + 1.0) + yt * p - (yt + r) * softplus;
  }
  return out;
}

double log_prior_r(double r) {
  if (!(r > 0.0)) return -std::numeric_limits<double>::infinity();
  return -std::log1p(r * r);
}

void NBOptions::validate() const {
  if (n_iter <= burn_in) throw ConfigError("n_iter must exceed burn_in");
  if (burn_in < 0 || thin < 1) throw ConfigError("burn_in must be >= 0 and thin >= 1");
  if (pg_truncation < 1) throw ConfigError("pg_truncation must be at least 1");
  if (!(ig_shape > 0.0) || !(ig_rate > 0.0)) throw ConfigError("inverse-gamma hyperparameters must be positive");
  if (!(r_cap > 0.0) || !(r_init > 0.0) || !(sigma2_init > 0.0))
    throw ConfigError("r_cap, r_init and sigma2_init must be positive");
}

Eigen::VectorXd NBBlockConditional::mean() const { return precision.llt().solve(linear); }

NBState initial_nb_state(const PanelSeries& panel, const MergedDesign& design, const NBOptions& options) {
  const int n_h = design.n_h();
  const int n_s = design.n_states();
  NBState st;
  st.eta_tilde = Eigen::VectorXd::Zero(design.width());
  std::vector<double> sum(static_cast<std::size_t>(n_s), 0.0);
  std::vector<double> cnt(static_cast<std::size_t>(n_s), 0.0);
  for (int i = 0; i < panel.n_schools(); ++i)
    for (auto v : panel.series(i)) {
      sum[static_cast<std::size_t>(panel.state_of(i))] += static_cast<double>(v);
      cnt[static_cast<std::size_t>(panel.state_of(i))] += 1.0;
    }
  for (int s = 0; s < n_s; ++s) {
    const double m = std::max(sum[static_cast<std::size_t>(s)] / cnt[static_cast<std::size_t>(s)], 0.1);
    st.eta_tilde(static_cast<Eigen::Index>(n_h) * n_s + s) = std::log(m / options.r_init);
  }
  st.sigma_eta2 = options.sigma2_init;
  st.sigma_delta2 = options.sigma2_init;
  st.r = Eigen::VectorXd::Constant(panel.n_schools(), options.r_init);
  st.omega = Eigen::VectorXd::Zero(design.n_rows());
  return st;
}

NBBlockConditional nb_block_conditional(const NBState& state, const PanelSeries& panel,
                                        const MergedDesign& design, int s) {
  const int n_h = design.n_h();
  const int T = panel.n_years();
  const Eigen::MatrixXd& local = design.state_design(s);
  const auto& rows = design.state_rows(s);
  NBBlockConditional c;
  Eigen::VectorXd w(static_cast<Eigen::Index>(rows.size()));
  Eigen::VectorXd kappa(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const int row = rows[k];
    const int i = row / T;
    const double y = static_cast<double>(panel.count(i, row % T));
    w(static_cast<Eigen::Index>(k)) = state.omega(row);
    kappa(static_cast<Eigen::Index>(k)) = 0.5 * (y - state.r(i));
  }
  c.precision = local.transpose() * w.asDiagonal() * local;
  c.precision.diagonal().head(n_h).array() += 1.0 / state.sigma_eta2;
  c.precision(n_h, n_h) += 1.0 / state.sigma_delta2;
  c.linear = local.transpose() * kappa;
  return c;
}

void gibbs_sweep_nb(NBState& state, const PanelSeries& panel, const MergedDesign& design,
                    const NBOptions& options, Rng& rng, std::vector<long>* r_accepted) {
  const int n_h = design.n_h();
  const int n_s = design.n_states();
  const int N = panel.n_schools();
  const int T = panel.n_years();

  // (1) Polya-Gamma variables
  {
    const Eigen::VectorXd psi = design.predictor(state.eta_tilde);
    for (int row = 0; row < design.n_rows(); ++row) {
      const int i = row / T;
      const double b = static_cast<double>(panel.count(i, row % T)) + state.r(i);
      state.omega(row) = sample_pg(b, psi(row), rng, options.pg_truncation);
    }
  }

  // (2) coefficient blocks
  for (int s = 0; s < n_s; ++s) {
    NBBlockConditional c = nb_block_conditional(state, panel, design, s);
    Eigen::LLT<Eigen::MatrixXd> llt(c.precision);
    if (llt.info() != Eigen::Success) {
      c.precision.diagonal().array() += 1e-10;
      llt.compute(c.precision);
      if (llt.info() != Eigen::Success)
        throw NumericalError("Cholesky of the block precision failed for state " + std::to_string(s));
    }
    const Eigen::VectorXd mean = llt.solve(c.linear);
    Eigen::VectorXd z(mean.size());
    for (Eigen::Index j = 0; j < z.size(); ++j) z(j) = sample_normal(rng);
    const Eigen::VectorXd block = mean + llt.matrixU().solve(z);
    set_state_block(state.eta_tilde, s, n_h, n_s, block);
  }

  // (3) variances
  if (!options.fix_sigmas) {
    const Eigen::Index d_eta = static_cast<Eigen::Index>(n_h) * n_s;
    state.sigma_eta2 = sample_inv_gamma(options.ig_shape + 0.5 * static_cast<double>(d_eta),
                                        options.ig_rate + 0.5 * state.eta_tilde.head(d_eta).squaredNorm(), rng);
    state.sigma_delta2 = sample_inv_gamma(options.ig_shape + 0.5 * n_s,
                                          options.ig_rate + 0.5 * state.eta_tilde.tail(n_s).squaredNorm(), rng);
  }

  // (4) dispersions
  if (!options.fix_r) {
    const Eigen::VectorXd psi = design.predictor(state.eta_tilde);
    for (int i = 0; i < N; ++i) {
      const std::span<const double> psi_i(psi.data() + static_cast<std::ptrdiff_t>(i) * T, static_cast<std::size_t>(T));
      const auto y_i = panel.series(i);
      auto log_target = [&](double r) { return nb_loglik_school(y_i, psi_i, r) + log_prior_r(r); };
      const double current = state.r(i);
      const double width = std::min(options.r_cap, current);
      const double proposal = current + width * (2.0 * uniform01(rng) - 1.0);
      bool accept = false;
      if (proposal > 0.0) {
        const double back_width = std::min(options.r_cap, proposal);
        if (std::abs(current - proposal) <= back_width) {
          const double log_ratio =
              log_target(proposal) - log_target(current) + std::log(width) - std::log(back_width);
          accept = std::log(uniform_open01(rng)) < log_ratio;
        }
      }
      if (accept) state.r(i) = proposal;
      if (r_accepted && accept) ++(*r_accepted)[static_cast<std::size_t>(i)];
    }
  }
}

NBChain fit_hier_nb(const PanelSeries& panel, const HiddenStateMatrix& states, const NBOptions& options,
                    Rng& rng) {
  options.validate();
  const MergedDesign design(states, panel);
  NBState state = initial_nb_state(panel, design, options);

  NBChain chain;
  chain.n_h = design.n_h();
  chain.n_states = design.n_states();
  chain.burn_in = options.burn_in;
  chain.thin = options.thin;
  chain.n_iter = options.n_iter;
  const int saved = options.saved();
  chain.eta_tilde_draws.resize(saved, design.width());
  chain.sigma_eta2_chain.resize(saved);
  chain.sigma_delta2_chain.resize(saved);
  chain.r_draws.resize(saved, panel.n_schools());

  std::vector<long> accepted(static_cast<std::size_t>(panel.n_schools()), 0);
  int k = 0;
  for (int iter = 1; iter <= options.n_iter; ++iter) {
    try {
      gibbs_sweep_nb(state, panel, design, options, rng, &accepted);
    } catch (const NumericalError& e) {
      throw NumericalError("negative binomial sweep " + std::to_string(iter) + ": " + e.what());
    }
    if (iter > options.burn_in && (iter - options.burn_in) % options.thin == 0 && k < saved) {
      chain.eta_tilde_draws.row(k) = state.eta_tilde.transpose();
      chain.sigma_eta2_chain(k) = state.sigma_eta2;
      chain.sigma_delta2_chain(k) = state.sigma_delta2;
      chain.r_draws.row(k) = state.r.transpose();
      ++k;
    }
  }
  chain.r_accept.resize(panel.n_schools());
  for (int i = 0; i < panel.n_schools(); ++i)
    chain.r_accept(i) = options.fix_r ? 0.0 : static_cast<double>(accepted[static_cast<std::size_t>(i)]) / options.n_iter;
  chain.last = std::move(state);
  return chain;
}

}  // namespace cesn
