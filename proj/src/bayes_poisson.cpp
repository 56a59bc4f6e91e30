#include "cesn/bayes_poisson.hpp"

#include <cmath>
#include <limits>

#include "cesn/error.hpp"
#include "cesn/parallel.hpp"

namespace cesn {

std::string to_string(CmlgMethod m) { return m == CmlgMethod::kExact ? "exact" : "projection"; }

CmlgMethod parse_cmlg_method(const std::string& name) {
  if (name == "exact") return CmlgMethod::kExact;
  if (name == "projection") return CmlgMethod::kProjection;
  throw ConfigError("unknown cmlg method '" + name + "' (expected exact or projection)");
}

CMLGParams poisson_cmlg_params(const Eigen::MatrixXd& H, std::span<const std::int64_t> y,
                               double sigma, double alpha) {
  if (static_cast<std::size_t>(H.rows()) != y.size()) throw ConfigError("design rows and counts differ");
  if (!(sigma > 0.0) || !(alpha > 0.0)) throw ConfigError("sigma and alpha must be positive");
  const auto T = H.rows();
  const auto k = H.cols();
  CMLGParams p;
  p.L.resize(T + k, k);
  p.L.topRows(T) = H;
  p.L.bottomRows(k) = Eigen::MatrixXd::Identity(k, k) / (std::sqrt(alpha) * sigma);
  p.xi.resize(T + k);
  p.psi.resize(T + k);
  for (Eigen::Index t = 0; t < T; ++t) {
    p.xi(t) = static_cast<double>(y[static_cast<std::size_t>(t)]);
    p.psi(t) = 1.0;
  }
  p.xi.tail(k).setConstant(alpha);
  p.psi.tail(k).setConstant(alpha);
  return p;
}

PoissonPosterior fit_bayes_poisson_school(const Eigen::MatrixXd& H, std::span<const std::int64_t> y,
                                          const BayesPoissonOptions& options, Rng& rng) {
  if (options.n_draws < 1) throw ConfigError("n_draws must be at least 1");
  if (options.thin < 1) throw ConfigError("thin must be at least 1");
  const CMLGParams params = poisson_cmlg_params(H, y, options.sigma_eta, options.alpha);
  params.validate();
  PoissonPosterior out;
  out.sigma_eta = options.sigma_eta;
  out.draws.resize(options.n_draws, params.dim());
  if (options.method == CmlgMethod::kProjection) {
    for (int d = 0; d < options.n_draws; ++d) out.draws.row(d) = sample_cmlg(params, rng).transpose();
    return out;
  }
  const CmlgLaplace laplace = cmlg_laplace(params, Eigen::VectorXd::Zero(params.dim()));
  Eigen::VectorXd current = laplace.mode;
  long accepted = 0;
  long proposed = 0;
  for (int d = 0; d < options.n_draws; ++d) {
    for (int s = 0; s < options.thin; ++s) {
      bool acc = false;
      current = cmlg_independence_step(params, laplace, current, rng, &acc);
      accepted += acc;
      ++proposed;
    }
    out.draws.row(d) = current.transpose();
  }
  out.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(proposed);
  return out;
}

BayesPoissonFit fit_bayes_poisson(const PanelSeries& panel, const ReservoirSpec& spec,
                                  const BayesPoissonOptions& options, std::uint64_t seed,
                                  int workers) {
  BayesPoissonFit out;
  out.weights = gen_weights(spec);
  const HiddenStateMatrix states = run_states(panel, out.weights, spec.nu);
  out.schools.resize(static_cast<std::size_t>(panel.n_schools()));
  parallel_for(panel.n_schools(), workers, [&](int i) {
    Rng rng(derive_seed(seed, "bayes-poisson", static_cast<std::uint64_t>(i)));
    const Eigen::MatrixXd H = states.school_design(i);
    out.schools[static_cast<std::size_t>(i)] = fit_bayes_poisson_school(H, panel.series(i), options, rng);
  });
  return out;
}

void HierPoissonOptions::validate() const {
  if (n_iter <= burn_in) throw ConfigError("n_iter must exceed burn_in");
  if (burn_in < 0 || thin < 1) throw ConfigError("burn_in must be >= 0 and thin >= 1");
  if (!(alpha > 0.0) || !(upsilon > 0.0) || !(proposal_cap > 0.0))
    throw ConfigError("alpha, upsilon and proposal cap must be positive");
  if (!(sigma_eta_init > 0.0) || !(sigma_delta_init > 0.0))
    throw ConfigError("initial sigmas must be positive");
}

double log_fc_sigma(double sigma, const Eigen::VectorXd& block, double upsilon, double alpha) {
  if (!(sigma > 0.0)) return -std::numeric_limits<double>::infinity();
  const double ratio = sigma / upsilon;
  const double scale = 1.0 / (std::sqrt(alpha) * sigma);
  const auto d = static_cast<double>(block.size());
  return -std::log1p(ratio * ratio) - d * std::log(sigma) + std::sqrt(alpha) / sigma * block.sum() -
         alpha * (scale * block.array()).exp().sum();
}

double log_fc_sigma_eta(double sigma, const Eigen::VectorXd& eta_tilde, int n_h, int n_states,
                        double upsilon, double alpha) {
  return log_fc_sigma(sigma, eta_tilde.head(static_cast<Eigen::Index>(n_h) * n_states), upsilon, alpha);
}

double log_fc_sigma_delta(double sigma, const Eigen::VectorXd& eta_tilde, int /*n_h*/, int n_states,
                          double upsilon, double alpha) {
  return log_fc_sigma(sigma, eta_tilde.tail(n_states), upsilon, alpha);
}

std::vector<std::int64_t> row_counts(const PanelSeries& panel) {
  std::vector<std::int64_t> out;
  out.reserve(static_cast<std::size_t>(panel.n_schools()) * static_cast<std::size_t>(panel.n_years()));
  for (int i = 0; i < panel.n_schools(); ++i)
    for (auto v : panel.series(i)) out.push_back(v);
  return out;
}

namespace {

CMLGParams state_block_params(const MergedDesign& design, int s, std::span<const std::int64_t> counts,
                              double sigma_eta, double sigma_delta, double alpha) {
  const Eigen::MatrixXd& local = design.state_design(s);
  const auto& rows = design.state_rows(s);
  const auto n = local.rows();
  const auto k = local.cols();
  CMLGParams p;
  p.L = Eigen::MatrixXd::Zero(n + k, k);
  p.L.topRows(n) = local;
  const double root = std::sqrt(alpha);
  for (Eigen::Index j = 0; j + 1 < k; ++j) p.L(n + j, j) = 1.0 / (root * sigma_eta);
  p.L(n + k - 1, k - 1) = 1.0 / (root * sigma_delta);
  p.xi.resize(n + k);
  p.psi.resize(n + k);
  for (Eigen::Index r = 0; r < n; ++r) {
    p.xi(r) = static_cast<double>(counts[static_cast<std::size_t>(rows[static_cast<std::size_t>(r)])]);
    p.psi(r) = 1.0;
  }
  p.xi.tail(k).setConstant(alpha);
  p.psi.tail(k).setConstant(alpha);
  return p;
}

}  // namespace

void gibbs_sweep_hier_poisson(HierPoissonState& state, const MergedDesign& design,
                              std::span<const std::int64_t> counts, const HierPoissonOptions& options,
                              Rng& rng, SweepCounters* counters) {
  const int n_h = design.n_h();
  const int n_s = design.n_states();
  if (state.eta_tilde.size() != design.width()) throw ConfigError("eta~ has the wrong width");
  if (counts.size() != static_cast<std::size_t>(design.n_rows())) throw ConfigError("counts and design rows differ");

  for (int s = 0; s < n_s; ++s) {
    const CMLGParams params =
        state_block_params(design, s, counts, state.sigma_eta, state.sigma_delta, options.alpha);
    Eigen::VectorXd block;
    if (options.method == CmlgMethod::kProjection) {
      block = sample_cmlg(params, rng);
    } else {
      const Eigen::VectorXd current = state_block(state.eta_tilde, s, n_h, n_s);
      const CmlgLaplace laplace = cmlg_laplace(params, current);
      bool acc = false;
      block = cmlg_independence_step(params, laplace, current, rng, &acc);
      if (counters) {
        counters->eta_accepted += acc;
        ++counters->eta_proposed;
      }
    }
    if (!block.allFinite()) throw NumericalError("non-finite coefficient draw for state block " + std::to_string(s));
    set_state_block(state.eta_tilde, s, n_h, n_s, block);
  }

  if (!options.fix_sigmas) {
    bool acc = false;
    state.sigma_eta = positive_window_mh_step(
        state.sigma_eta, options.proposal_cap,
        [&](double v) { return log_fc_sigma_eta(v, state.eta_tilde, n_h, n_s, options.upsilon, options.alpha); },
        rng, &acc);
    if (counters) counters->sigma_eta_accepted += acc;
    state.sigma_delta = positive_window_mh_step(
        state.sigma_delta, options.proposal_cap,
        [&](double v) { return log_fc_sigma_delta(v, state.eta_tilde, n_h, n_s, options.upsilon, options.alpha); },
        rng, &acc);
    if (counters) counters->sigma_delta_accepted += acc;
    if (!std::isfinite(log_fc_sigma_eta(state.sigma_eta, state.eta_tilde, n_h, n_s, options.upsilon, options.alpha)) ||
        !std::isfinite(log_fc_sigma_delta(state.sigma_delta, state.eta_tilde, n_h, n_s, options.upsilon, options.alpha)))
      throw NumericalError("non-finite sigma full conditional (sigma_eta=" + std::to_string(state.sigma_eta) +
                           ", sigma_delta=" + std::to_string(state.sigma_delta) + ")");
  }
  if (counters) ++counters->sweeps;
}

HierPoissonChain fit_hier_poisson(const PanelSeries& panel, const HiddenStateMatrix& states,
                                  const HierPoissonOptions& options, Rng& rng) {
  options.validate();
  const MergedDesign design(states, panel);
  const std::vector<std::int64_t> counts = row_counts(panel);

  HierPoissonState state;
  state.eta_tilde = Eigen::VectorXd::Zero(design.width());
  state.sigma_eta = options.sigma_eta_init;
  state.sigma_delta = options.sigma_delta_init;

  HierPoissonChain chain;
  chain.n_h = design.n_h();
  chain.n_states = design.n_states();
  chain.burn_in = options.burn_in;
  chain.thin = options.thin;
  chain.n_iter = options.n_iter;
  const int saved = options.saved();
  chain.eta_tilde_draws.resize(saved, design.width());
  chain.sigma_eta_chain.resize(saved);
  chain.sigma_delta_chain.resize(saved);

  SweepCounters counters;
  int k = 0;
  for (int iter = 1; iter <= options.n_iter; ++iter) {
    try {
      gibbs_sweep_hier_poisson(state, design, counts, options, rng, &counters);
    } catch (const NumericalError& e) {
      throw NumericalError("hierarchical Poisson sweep " + std::to_string(iter) + ": " + e.what());
    }
    if (iter > options.burn_in && (iter - options.burn_in) % options.thin == 0 && k < saved) {
      chain.eta_tilde_draws.row(k) = state.eta_tilde.transpose();
      chain.sigma_eta_chain(k) = state.sigma_eta;
      chain.sigma_delta_chain(k) = state.sigma_delta;
      ++k;
    }
  }
  const double sweeps = static_cast<double>(counters.sweeps);
  chain.accept_sigma_eta = options.fix_sigmas ? 0.0 : counters.sigma_eta_accepted / sweeps;
  chain.accept_sigma_delta = options.fix_sigmas ? 0.0 : counters.sigma_delta_accepted / sweeps;
  chain.accept_eta = counters.eta_proposed ? static_cast<double>(counters.eta_accepted) / counters.eta_proposed : 1.0;
  return chain;
}

}  // namespace cesn
