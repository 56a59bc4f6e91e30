#include "cesn/reservoir.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

#include "cesn/error.hpp"
#include "cesn/rng.hpp"

namespace cesn {

std::string to_string(Activation a) {
  return a == Activation::kTanh ? "tanh" : "logistic";
}

Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::kTanh;
  if (name == "logistic" || name == "sigmoid") return Activation::kLogistic;
  throw ConfigError("unknown activation '" + name + "'");
}

void ReservoirSpec::validate() const {
  if (n_h < 1) throw ConfigError("reservoir needs n_h >= 1");
  if (p != 1) throw ConfigError("only autoregressive order p = 1 is supported");
  if (r < 0) throw ConfigError("covariate dimension must be non-negative");
  if (!(nu > 0.0 && nu <= 1.0)) throw ConfigError("nu must lie in (0, 1]");
  for (double a : {a_w, a_uy, a_ux}) {
    if (!(a >= 0.0)) throw ConfigError("slab half-widths must be non-negative");
  }
  for (double pi : {pi_w, pi_uy, pi_ux}) {
    if (!(pi >= 0.0 && pi <= 1.0)) throw ConfigError("inclusion probabilities must lie in [0, 1]");
  }
}

namespace {

Eigen::MatrixXd spike_and_slab(int rows, int cols, double half_width, double pi, Rng& rng) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      const bool slab = uniform01(rng) < pi;
      const double u = uniform01(rng);
      if (slab) m(i, j) = half_width * (2.0 * u - 1.0);
    }
  }
  return m;
}

}  // namespace

ReservoirWeights gen_weights(const ReservoirSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  ReservoirWeights w;
  w.spec = spec;
  w.W = spike_and_slab(spec.n_h, spec.n_h, spec.a_w, spec.pi_w, rng);
  w.U_Y = spike_and_slab(spec.p, spec.n_h, spec.a_uy, spec.pi_uy, rng);
  w.U_X = spike_and_slab(spec.r, spec.n_h, spec.a_ux, spec.pi_ux, rng);
  w.lambda_W = spectral_radius(w.W);
  return w;
}

double spectral_radius(const Eigen::MatrixXd& W) {
  if (W.rows() != W.cols()) throw ConfigError("spectral radius needs a square matrix");
  if (W.size() == 0) return 0.0;
  if (!W.allFinite()) throw NumericalError("spectral radius of a non-finite matrix");
  if (W.isZero(0.0)) return 0.0;
  Eigen::EigenSolver<Eigen::MatrixXd> real_solver(W, false);
  if (real_solver.info() == Eigen::Success) return real_solver.eigenvalues().cwiseAbs().maxCoeff();
  // Real Schur iteration did not converge; retry on the complex Schur form.
  Eigen::ComplexEigenSolver<Eigen::MatrixXcd> complex_solver(W.cast<std::complex<double>>(), false);
  if (complex_solver.info() != Eigen::Success)
    throw NumericalError("eigenvalue iteration failed to converge");
  return complex_solver.eigenvalues().cwiseAbs().maxCoeff();
}

double activate(Activation a, double v) noexcept {
  if (a == Activation::kTanh) return std::tanh(v);
  return 1.0 / (1.0 + std::exp(-v));
}

namespace {

void check_covariates(std::span<const double> x, const ReservoirWeights& w) {
  if (static_cast<Eigen::Index>(x.size()) != w.U_X.rows()) {
    throw ConfigError("covariate length " + std::to_string(x.size()) +
                      " does not match reservoir r = " + std::to_string(w.U_X.rows()));
  }
}

}  // namespace

Eigen::VectorXd initial_state(std::span<const double> x_1, const ReservoirWeights& w) {
  check_covariates(x_1, w);
  Eigen::Map<const Eigen::VectorXd> x(x_1.data(), static_cast<Eigen::Index>(x_1.size()));
  Eigen::VectorXd z = w.U_X.transpose() * x;
  return z.unaryExpr([&](double v) { return activate(w.spec.activation, v); });
}

Eigen::VectorXd advance(const Eigen::VectorXd& h_prev, std::int64_t y_prev,
                        std::span<const double> x_t, const ReservoirWeights& w, double nu) {
  check_covariates(x_t, w);
  if (h_prev.size() != w.n_h()) throw ConfigError("hidden state length does not match n_h");
  if (y_prev < 0) throw DataError("negative lagged count");
  Eigen::Map<const Eigen::VectorXd> x(x_t.data(), static_cast<Eigen::Index>(x_t.size()));
  Eigen::VectorXd z = std::log1p(static_cast<double>(y_prev)) * w.U_Y.row(0).transpose() +
                      w.U_X.transpose() * x;
  if (w.lambda_W > 0.0) z.noalias() += (nu / w.lambda_W) * (w.W.transpose() * h_prev);
  return z.unaryExpr([&](double v) { return activate(w.spec.activation, v); });
}

HiddenStateMatrix::HiddenStateMatrix(int n_schools, int n_years, Storage rows)
    : n_schools_(n_schools), n_years_(n_years), rows_(std::move(rows)) {
  if (rows_.rows() != static_cast<Eigen::Index>(n_schools) * n_years)
    throw ConfigError("hidden state storage does not match N x T");
}

HiddenStateMatrix run_states(const PanelSeries& panel, const ReservoirWeights& w, double nu) {
  const int n = panel.n_schools();
  const int t_len = panel.n_years();
  if (panel.n_covariates() != w.U_X.rows()) {
    throw ConfigError("panel has " + std::to_string(panel.n_covariates()) +
                      " covariates but the reservoir expects " + std::to_string(w.U_X.rows()));
  }
  HiddenStateMatrix::Storage rows(static_cast<Eigen::Index>(n) * t_len, w.n_h());
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd h = initial_state(panel.covariate(i, 0), w);
    rows.row(static_cast<Eigen::Index>(i) * t_len) = h.transpose();
    for (int t = 1; t < t_len; ++t) {
      h = advance(h, panel.count(i, t - 1), panel.covariate(i, t), w, nu);
      rows.row(static_cast<Eigen::Index>(i) * t_len + t) = h.transpose();
    }
  }
  return HiddenStateMatrix(n, t_len, std::move(rows));
}

Eigen::VectorXd next_state(const PanelSeries& panel, const HiddenStateMatrix& states, int i,
                           std::span<const double> x_next, const ReservoirWeights& w, double nu) {
  const int last = panel.n_years() - 1;
  Eigen::VectorXd h = states.state(i, last).transpose();
  return advance(h, panel.count(i, last), x_next, w, nu);
}

MergedDesign::MergedDesign(const HiddenStateMatrix& states, const PanelSeries& panel)
    : n_h_(states.n_h()), n_states_(panel.n_states()) {
  if (states.n_schools() != panel.n_schools() || states.n_years() != panel.n_years())
    throw ConfigError("hidden states do not match the panel");
  const int t_len = panel.n_years();
  row_state_.resize(static_cast<std::size_t>(panel.n_schools()) * static_cast<std::size_t>(t_len));
  state_rows_.assign(static_cast<std::size_t>(n_states_), {});
  for (int i = 0; i < panel.n_schools(); ++i) {
    const int s = panel.state_of(i);
    for (int t = 0; t < t_len; ++t) {
      const int row = i * t_len + t;
      row_state_[static_cast<std::size_t>(row)] = s;
      state_rows_[static_cast<std::size_t>(s)].push_back(row);
    }
  }
  state_design_.reserve(static_cast<std::size_t>(n_states_));
  for (int s = 0; s < n_states_; ++s) {
    const auto& rows = state_rows_[static_cast<std::size_t>(s)];
    Eigen::MatrixXd local(static_cast<Eigen::Index>(rows.size()), n_h_ + 1);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      local.row(static_cast<Eigen::Index>(k)).head(n_h_) = states.rows().row(rows[k]);
      local(static_cast<Eigen::Index>(k), n_h_) = 1.0;
    }
    state_design_.push_back(std::move(local));
  }
}

std::vector<int> MergedDesign::block_columns(int s) const {
  std::vector<int> cols;
  cols.reserve(static_cast<std::size_t>(n_h_ + 1));
  for (int j = 0; j < n_h_; ++j) cols.push_back(s * n_h_ + j);
  cols.push_back(n_h_ * n_states_ + s);
  return cols;
}

Eigen::VectorXd MergedDesign::predictor(const Eigen::VectorXd& eta_tilde) const {
  if (eta_tilde.size() != width()) throw ConfigError("coefficient vector has the wrong width");
  Eigen::VectorXd out(n_rows());
  for (int s = 0; s < n_states_; ++s) {
    const Eigen::VectorXd local = state_design(s) * state_block(eta_tilde, s, n_h_, n_states_);
    const auto& rows = state_rows(s);
    for (std::size_t k = 0; k < rows.size(); ++k) out(rows[k]) = local(static_cast<Eigen::Index>(k));
  }
  return out;
}

Eigen::SparseMatrix<double> MergedDesign::to_sparse() const {
  std::vector<Eigen::Triplet<double>> triplets;
  for (int s = 0; s < n_states_; ++s) {
    const auto cols = block_columns(s);
    const auto& rows = state_rows(s);
    const auto& local = state_design(s);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      for (int j = 0; j <= n_h_; ++j) {
        const double v = local(static_cast<Eigen::Index>(k), j);
        if (v != 0.0) triplets.emplace_back(rows[k], cols[static_cast<std::size_t>(j)], v);
      }
    }
  }
  Eigen::SparseMatrix<double> m(n_rows(), width());
  m.setFromTriplets(triplets.begin(), triplets.end());
  return m;
}

Eigen::VectorXd state_block(const Eigen::VectorXd& eta_tilde, int s, int n_h, int n_states) {
  Eigen::VectorXd b(n_h + 1);
  b.head(n_h) = eta_tilde.segment(static_cast<Eigen::Index>(s) * n_h, n_h);
  b(n_h) = eta_tilde(static_cast<Eigen::Index>(n_h) * n_states + s);
  return b;
}

void set_state_block(Eigen::VectorXd& eta_tilde, int s, int n_h, int n_states,
                     const Eigen::VectorXd& block) {
  eta_tilde.segment(static_cast<Eigen::Index>(s) * n_h, n_h) = block.head(n_h);
  eta_tilde(static_cast<Eigen::Index>(n_h) * n_states + s) = block(n_h);
}

}  // namespace cesn
