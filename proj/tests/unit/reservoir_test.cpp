#include <gtest/gtest.h>

#include <armadillo>
#include <cmath>
#include <vector>

#include "cesn/error.hpp"
#include "cesn/reservoir.hpp"
#include "cesn/simulate.hpp"

using namespace cesn;

namespace {

ReservoirWeights hand_weights(Eigen::MatrixXd W, Eigen::MatrixXd U_Y, Eigen::MatrixXd U_X) {
  ReservoirWeights w;
  w.spec.n_h = static_cast<int>(W.rows());
  w.spec.r = static_cast<int>(U_X.rows());
  w.lambda_W = spectral_radius(W);
  w.W = std::move(W);
  w.U_Y = std::move(U_Y);
  w.U_X = std::move(U_X);
  return w;
}

PanelSeries small_panel() {
  SimulationSpec spec;
  spec.dgp = "iid-poisson";
  spec.n_states = 2;
  spec.schools_per_state = 3;
  spec.n_years = 12;
  spec.lambda = 20.0;
  spec.lambda_spread = 0.8;
  return simulate_panel(spec).panel;
}

}  // namespace

TEST(Reservoir, SpikeAndSlabExtremes) {
  ReservoirSpec spec;
  spec.pi_w = 0.0;
  EXPECT_TRUE(gen_weights(spec).W.isZero(0.0));
  spec.pi_w = 1.0;
  spec.a_w = 0.0;
  const auto w = gen_weights(spec);
  EXPECT_TRUE(w.W.isZero(0.0));
  EXPECT_EQ(w.lambda_W, 0.0);
}

TEST(Reservoir, NonzeroCountAndRange) {
  ReservoirSpec spec;
  spec.seed = 99;
  const auto w = gen_weights(spec);
  const auto nonzero = (w.W.array() != 0.0).count();
  EXPECT_GE(nonzero, 45);
  EXPECT_LE(nonzero, 135);
  EXPECT_LE(w.W.cwiseAbs().maxCoeff(), spec.a_w);
  EXPECT_EQ(w.U_Y.rows(), 1);
  EXPECT_EQ(w.U_X.rows(), spec.r);
  EXPECT_EQ(w.U_X.cols(), spec.n_h);
}

TEST(Reservoir, GenerationIsPure) {
  ReservoirSpec spec;
  spec.seed = 5;
  const auto a = gen_weights(spec);
  const auto b = gen_weights(spec);
  EXPECT_EQ(a.W, b.W);
  EXPECT_EQ(a.U_Y, b.U_Y);
  EXPECT_EQ(a.U_X, b.U_X);
  EXPECT_EQ(a.lambda_W, b.lambda_W);
  spec.seed = 6;
  EXPECT_NE(gen_weights(spec).W, a.W);
}

TEST(Reservoir, SpectralRadiusSmallCases) {
  EXPECT_NEAR(spectral_radius(Eigen::MatrixXd::Identity(4, 4)), 1.0, 1e-12);
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(2, 2);
  d(0, 0) = 2.0;
  d(1, 1) = -3.0;
  EXPECT_NEAR(spectral_radius(d), 3.0, 1e-12);
  Eigen::MatrixXd rotation(2, 2);
  rotation << 0.0, -2.0, 2.0, 0.0;  // eigenvalues +-2i
  EXPECT_NEAR(spectral_radius(rotation), 2.0, 1e-12);
}

TEST(Reservoir, SpectralRadiusMatchesArmadilloOracle) {
  for (std::uint64_t seed : {1u, 2u, 3u, 17u}) {
    ReservoirSpec spec;
    spec.seed = seed;
    spec.pi_w = 0.5;
    const auto w = gen_weights(spec);
    arma::mat A(w.W.data(), w.W.rows(), w.W.cols());
    const arma::cx_vec eig = arma::eig_gen(A);
    EXPECT_NEAR(w.lambda_W, arma::max(arma::abs(eig)), 1e-6 * std::max(1.0, w.lambda_W)) << seed;
  }
}

TEST(Reservoir, AdvanceHandExample) {
  const auto w = hand_weights(Eigen::MatrixXd::Zero(1, 1), Eigen::MatrixXd::Constant(1, 1, 0.5),
                              Eigen::MatrixXd::Zero(1, 1));
  const std::vector<double> x = {1.0};
  const auto h = advance(Eigen::VectorXd::Zero(1), 1, x, w, 0.9);
  EXPECT_NEAR(h(0), std::tanh(0.5 * std::log(2.0)), 1e-15);
  // tanh(ln(2) / 2) = (2 - 1) / (2 + 1)
  EXPECT_NEAR(h(0), 1.0 / 3.0, 1e-15);

  const auto zero = hand_weights(Eigen::MatrixXd::Zero(3, 3), Eigen::MatrixXd::Zero(1, 3),
                                 Eigen::MatrixXd::Zero(1, 3));
  EXPECT_TRUE(advance(Eigen::VectorXd::Ones(3), 40, x, zero, 0.9).isZero(0.0));
}

TEST(Reservoir, ThreeStepHandRollout) {
  Eigen::MatrixXd W(2, 2), U_Y(1, 2), U_X(1, 2);
  W << 0.0, 0.5, -0.25, 0.0;  // eigenvalues +-i sqrt(0.125)
  U_Y << 0.3, -0.2;
  U_X << 0.1, 0.4;
  const auto w = hand_weights(W, U_Y, U_X);
  const double lambda = std::sqrt(0.125);
  ASSERT_NEAR(w.lambda_W, lambda, 1e-12);
  PanelSeries panel({"a"}, {"S"}, {2000, 2001, 2002}, {2, 5, 1}, {1.0, 1.0, 1.0}, 1);
  const double nu = 0.9;
  const auto states = run_states(panel, w, nu);

  const double s = nu / lambda;
  const double h1a = std::tanh(0.1), h1b = std::tanh(0.4);
  // W'h: component j = sum_k W(k, j) h_k
  const double h2a = std::tanh(s * (-0.25 * h1b) + 0.3 * std::log(3.0) + 0.1);
  const double h2b = std::tanh(s * (0.5 * h1a) - 0.2 * std::log(3.0) + 0.4);
  const double h3a = std::tanh(s * (-0.25 * h2b) + 0.3 * std::log(6.0) + 0.1);
  const double h3b = std::tanh(s * (0.5 * h2a) - 0.2 * std::log(6.0) + 0.4);
  EXPECT_NEAR(states.state(0, 0)(0), h1a, 1e-15);
  EXPECT_NEAR(states.state(0, 0)(1), h1b, 1e-15);
  EXPECT_NEAR(states.state(0, 1)(0), h2a, 1e-15);
  EXPECT_NEAR(states.state(0, 1)(1), h2b, 1e-15);
  EXPECT_NEAR(states.state(0, 2)(0), h3a, 1e-15);
  EXPECT_NEAR(states.state(0, 2)(1), h3b, 1e-15);
}

TEST(Reservoir, ZeroInputWeightsGiveZeroFirstState) {
  ReservoirSpec spec;
  spec.pi_ux = 0.0;
  const auto panel = small_panel();
  const auto states = run_states(panel, gen_weights(spec), spec.nu);
  for (int i = 0; i < panel.n_schools(); ++i) EXPECT_TRUE(states.state(i, 0).isZero(0.0));
}

TEST(Reservoir, StatesStayInsideActivationRange) {
  ReservoirSpec spec;
  spec.a_w = spec.a_uy = spec.a_ux = 3.0;
  spec.pi_w = spec.pi_uy = spec.pi_ux = 1.0;
  const auto panel = small_panel();
  const auto states = run_states(panel, gen_weights(spec), spec.nu);
  EXPECT_LT(states.rows().cwiseAbs().maxCoeff(), 1.0);
}

TEST(Reservoir, ScalingWLeavesStatesUnchanged) {
  ReservoirSpec spec;
  spec.seed = 12;
  spec.pi_w = 0.4;
  spec.a_w = 0.8;
  auto w = gen_weights(spec);
  const auto panel = small_panel();
  const auto before = run_states(panel, w, spec.nu);
  for (double c : {0.001, 7.5, 1e4}) {
    auto scaled = w;
    scaled.W *= c;
    scaled.lambda_W = spectral_radius(scaled.W);
    const auto after = run_states(panel, scaled, spec.nu);
    EXPECT_LT((after.rows() - before.rows()).cwiseAbs().maxCoeff(), 1e-12) << c;
  }
}

TEST(Reservoir, StatesAreCausal) {
  ReservoirSpec spec;
  spec.seed = 3;
  const auto w = gen_weights(spec);
  const auto panel = small_panel();
  const auto full = run_states(panel, w, spec.nu);
  for (int t : {1, 5, 11}) {
    const auto part = run_states(panel.truncated(t), w, spec.nu);
    for (int i = 0; i < panel.n_schools(); ++i)
      for (int k = 0; k < t; ++k) EXPECT_EQ(part.state(i, k), full.state(i, k));
  }
  // next_state from a truncated panel is the full run's state one year later.
  const auto part = panel.truncated(7);
  const auto states = run_states(part, w, spec.nu);
  const auto next = next_state(part, states, 2, panel.covariate(2, 7), w, spec.nu);
  EXPECT_LT((next.transpose() - full.state(2, 7)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Reservoir, SchoolPermutationPermutesRows) {
  ReservoirSpec spec;
  const auto w = gen_weights(spec);
  const auto panel = small_panel();
  const std::vector<int> order = {4, 0, 5, 2, 1, 3};
  const auto a = run_states(panel, w, spec.nu);
  const auto b = run_states(panel.permuted(order), w, spec.nu);
  for (int k = 0; k < 6; ++k)
    for (int t = 0; t < panel.n_years(); ++t) EXPECT_EQ(b.state(k, t), a.state(order[k], t));
}

TEST(Reservoir, MergedDesignLayout) {
  // Two states with one school each, n_h = 2, T = 3: width 2*2 + 2 = 6.
  Eigen::MatrixXd W(2, 2), U_Y(1, 2), U_X(1, 2);
  W << 0.1, 0.2, -0.3, 0.05;
  U_Y << 0.3, -0.2;
  U_X << 0.1, 0.4;
  const auto w = hand_weights(W, U_Y, U_X);
  PanelSeries panel({"a", "b"}, {"S1", "S2"}, {2000, 2001, 2002}, {2, 5, 1, 7, 0, 3},
                    std::vector<double>(6, 1.0), 1);
  const auto states = run_states(panel, w, 0.9);
  const MergedDesign design(states, panel);
  ASSERT_EQ(design.width(), 6);
  ASSERT_EQ(design.n_rows(), 6);

  Eigen::MatrixXd expected = Eigen::MatrixXd::Zero(6, 6);
  for (int t = 0; t < 3; ++t) {
    expected.block(t, 0, 1, 2) = states.state(0, t);
    expected(t, 4) = 1.0;
    expected.block(3 + t, 2, 1, 2) = states.state(1, t);
    expected(3 + t, 5) = 1.0;
  }
  const Eigen::MatrixXd dense = design.to_sparse();
  EXPECT_EQ(dense, expected);

  const Eigen::VectorXd eta = Eigen::VectorXd::LinSpaced(6, -0.5, 0.7);
  EXPECT_LT((design.predictor(eta) - expected * eta).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(design.block_columns(1), (std::vector<int>{2, 3, 5}));
  EXPECT_EQ(state_block(eta, 1, 2, 2), (Eigen::VectorXd(3) << eta(2), eta(3), eta(5)).finished());
}

TEST(Reservoir, MergedDesignSingleStateAndRowSupport) {
  ReservoirSpec spec;
  spec.n_h = 4;
  spec.pi_w = spec.pi_uy = spec.pi_ux = 1.0;
  const auto panel = small_panel();
  const auto states = run_states(panel, gen_weights(spec), spec.nu);
  const MergedDesign design(states, panel);
  const Eigen::MatrixXd dense = design.to_sparse();
  EXPECT_EQ(dense.cols(), 4 * 2 + 2);
  for (Eigen::Index r = 0; r < dense.rows(); ++r) EXPECT_LE((dense.row(r).array() != 0.0).count(), 5);

  PanelSeries one_state({"a", "b"}, {"S", "S"}, {2000, 2001, 2002}, {2, 5, 1, 7, 0, 3});
  const auto single = default_covariates(one_state);
  const auto s1 = run_states(single, gen_weights(spec), spec.nu);
  const Eigen::MatrixXd merged = MergedDesign(s1, single).to_sparse();
  Eigen::MatrixXd expected(6, 5);
  expected << s1.rows(), Eigen::VectorXd::Ones(6);
  EXPECT_EQ(merged, expected);
}
