#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cesn/panel.hpp"

namespace cesn {

enum class Activation { kTanh, kLogistic };

std::string to_string(Activation a);
Activation parse_activation(const std::string& name);

/// Hyperparameters of the fixed random recurrent layer. Defaults follow the
/// cross-validated choices used for the enrollment panel.
struct ReservoirSpec {
  int n_h = 30;
  int p = 1;
  int r = 2;
  double nu = 0.9;
  double a_w = 0.01;
  double a_uy = 0.01;
  double a_ux = 0.01;
  double pi_w = 0.1;
  double pi_uy = 0.1;
  double pi_ux = 0.1;
  Activation activation = Activation::kTanh;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Frozen reservoir matrices. W is n_h x n_h, U_Y is p x n_h, U_X is r x n_h.
struct ReservoirWeights {
  ReservoirSpec spec;
  Eigen::MatrixXd W;
  Eigen::MatrixXd U_Y;
  Eigen::MatrixXd U_X;
  double lambda_W = 0.0;

  int n_h() const noexcept { return static_cast<int>(W.rows()); }
};

/// Spike-and-slab draw of every entry: zero with probability 1 - pi, else
/// Uniform(-a, a). Pure function of the spec (seed included).
ReservoirWeights gen_weights(const ReservoirSpec& spec);

/// Largest eigenvalue modulus of a square matrix.
double spectral_radius(const Eigen::MatrixXd& W);

double activate(Activation a, double v) noexcept;

/// h_1 = g(U_X' x_1).
Eigen::VectorXd initial_state(std::span<const double> x_1, const ReservoirWeights& w);

/// One recurrence step: g((nu / lambda_W) W' h_prev + ln(y_prev + 1) U_Y' + U_X' x_t).
/// The W term is dropped when lambda_W == 0.
Eigen::VectorXd advance(const Eigen::VectorXd& h_prev, std::int64_t y_prev,
                        std::span<const double> x_t, const ReservoirWeights& w, double nu);

/// Hidden states h_{i,t} for every school and year, stored as an (N*T) x n_h
/// row-major matrix with row i*T + t.
class HiddenStateMatrix {
 public:
  using Storage = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  HiddenStateMatrix(int n_schools, int n_years, Storage rows);

  int n_schools() const noexcept { return n_schools_; }
  int n_years() const noexcept { return n_years_; }
  int n_h() const noexcept { return static_cast<int>(rows_.cols()); }

  auto state(int i, int t) const { return rows_.row(static_cast<Eigen::Index>(i) * n_years_ + t); }
  /// T x n_h design block for school i.
  auto school_design(int i) const {
    return rows_.middleRows(static_cast<Eigen::Index>(i) * n_years_, n_years_);
  }
  const Storage& rows() const noexcept { return rows_; }

 private:
  int n_schools_;
  int n_years_;
  Storage rows_;
};

HiddenStateMatrix run_states(const PanelSeries& panel, const ReservoirWeights& w, double nu);

/// State reached one step past the end of the panel (the forecast-origin state
/// for year T+1), given the covariates of that year.
Eigen::VectorXd next_state(const PanelSeries& panel, const HiddenStateMatrix& states, int i,
                           std::span<const double> x_next, const ReservoirWeights& w, double nu);

/// Merged hierarchical design. Row (i, t) holds h_{i,t} in the column block of
/// state s(i) and a one in the state-indicator column n_h * n_s + s(i). Stored
/// block-sparse: each row keeps only its state index and its hidden state.
class MergedDesign {
 public:
  MergedDesign(const HiddenStateMatrix& states, const PanelSeries& panel);

  int n_rows() const noexcept { return static_cast<int>(row_state_.size()); }
  int n_h() const noexcept { return n_h_; }
  int n_states() const noexcept { return n_states_; }
  int width() const noexcept { return n_h_ * n_states_ + n_states_; }
  int block_width() const noexcept { return n_h_ + 1; }

  int row_state(int row) const { return row_state_[static_cast<std::size_t>(row)]; }

  /// Rows (i*T + t indices) belonging to schools of state s.
  const std::vector<int>& state_rows(int s) const { return state_rows_[static_cast<std::size_t>(s)]; }
  /// |state_rows(s)| x (n_h + 1) dense local design [h_{i,t}' 1].
  const Eigen::MatrixXd& state_design(int s) const { return state_design_[static_cast<std::size_t>(s)]; }

  /// Column indices in the full width for the local block of state s.
  std::vector<int> block_columns(int s) const;

  /// Linear predictor h~' eta~ for every row.
  Eigen::VectorXd predictor(const Eigen::VectorXd& eta_tilde) const;

  Eigen::SparseMatrix<double> to_sparse() const;

 private:
  int n_h_;
  int n_states_;
  std::vector<int> row_state_;
  std::vector<std::vector<int>> state_rows_;
  std::vector<Eigen::MatrixXd> state_design_;
};

/// Coefficients of state s extracted from the stacked (eta_1..eta_ns, delta) vector
/// as the local (n_h + 1) block [eta_s; delta_s].
Eigen::VectorXd state_block(const Eigen::VectorXd& eta_tilde, int s, int n_h, int n_states);
void set_state_block(Eigen::VectorXd& eta_tilde, int s, int n_h, int n_states,
                     const Eigen::VectorXd& block);

}  // namespace cesn
