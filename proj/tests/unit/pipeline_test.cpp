#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "cesn/csv.hpp"
#include "cesn/error.hpp"
#include "cesn/models.hpp"
#include "cesn/run.hpp"

using namespace cesn;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string first_line(const fs::path& path) {
  const auto text = slurp(path);
  return text.substr(0, text.find('\n'));
}

/// Scratch directory removed on scope exit.
class Workdir {
 public:
  explicit Workdir(const std::string& name) : path_(fs::temp_directory_path() / ("cesn_test_" + name)) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~Workdir() { fs::remove_all(path_); }
  Workdir(const Workdir&) = delete;
  Workdir& operator=(const Workdir&) = delete;
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

const char* kSmallConfig = R"({
  "seed": 3,
  "out": "out",
  "data": {"simulate": {"dgp": "hier-nb-esn", "n_states": 2, "schools_per_state": 3, "n_years": 16}},
  "split": {"horizon": 2},
  "models": [
    "intercept",
    "ingarch11",
    {"name": "single-poisson-esn", "reservoir": {"n_h": 8}},
    {"name": "ensemble-poisson-esn", "reservoir": {"n_h": 8}, "ensemble_size": 3, "ensemble_draws": 20},
    {"name": "bayes-poisson-esn", "reservoir": {"n_h": 8}, "bayes_poisson": {"n_draws": 50}},
    {"name": "hier-poisson-esn", "reservoir": {"n_h": 8}, "hier_poisson": {"n_iter": 120, "burn_in": 20, "thin": 2}},
    {"name": "hier-nb-esn", "reservoir": {"n_h": 8}, "nb": {"n_iter": 120, "burn_in": 20, "thin": 2}}
  ]
})";

fs::path write_config(const fs::path& dir, const std::string& text) {
  const fs::path path = dir / "run.json";
  std::ofstream(path) << text;
  return path;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + CESN_CLI_PATH + "\" " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void full_pipeline(const RunConfig& config) {
  cmd_simulate(config);
  cmd_fit(config);
  cmd_forecast(config);
  cmd_score(config);
  cmd_report(config);
}

PanelSeries nb_panel(int years) {
  SimulationSpec sim;
  sim.n_states = 2;
  sim.schools_per_state = 2;
  sim.n_years = years;
  return simulate_panel(sim).panel;
}

ModelConfig small_model(const std::string& name) {
  ModelConfig m;
  m.name = name;
  m.reservoir.n_h = 6;
  m.ensemble_size = 2;
  m.ensemble_draws = 20;
  m.bayes_poisson.n_draws = 40;
  m.hier_poisson.n_iter = 60;
  m.hier_poisson.burn_in = 10;
  m.nb.n_iter = 60;
  m.nb.burn_in = 10;
  m.n_samples = 100;
  return m;
}

}  // namespace

TEST(Pipeline, SimulateIsByteIdentical) {
  Workdir a("sim_a"), b("sim_b");
  const auto ca = load_run_config(write_config(a.path(), kSmallConfig));
  const auto cb = load_run_config(write_config(b.path(), kSmallConfig));
  cmd_simulate(ca);
  cmd_simulate(cb);
  EXPECT_EQ(slurp(panel_artifact(ca)), slurp(panel_artifact(cb)));
  EXPECT_EQ(slurp(ca.out / "truth.json"), slurp(cb.out / "truth.json"));
  EXPECT_NO_THROW(load_panel(panel_artifact(ca)));
}

TEST(Pipeline, FullRunIsDeterministicAndMatchesReportSchema) {
  Workdir a("full_a"), b("full_b");
  const auto ca = load_run_config(write_config(a.path(), kSmallConfig));
  const auto cb = load_run_config(write_config(b.path(), kSmallConfig));
  full_pipeline(ca);
  full_pipeline(cb);
  EXPECT_EQ(slurp(ca.out / "scores.csv"), slurp(cb.out / "scores.csv"));
  EXPECT_EQ(slurp(ca.out / "scores.json"), slurp(cb.out / "scores.json"));
  for (const auto& model : kModelNames)
    EXPECT_EQ(slurp(forecast_csv(ca, model)), slurp(forecast_csv(cb, model))) << model;

  const auto panel = run_panel(ca);
  const int y1 = panel.years()[14], y2 = panel.years()[15];
  const auto report = report_dir(ca);
  for (const char* table : {"mspe", "mslpe", "is", "icr"}) {
    const auto rows = detail::parse_csv(slurp(report / (std::string("table_") + table + ".csv")));
    ASSERT_EQ(rows.size(), kModelNames.size() + 1) << table;
    EXPECT_EQ(rows[0], (std::vector<std::string>{"model", std::to_string(y1), std::to_string(y2), "average"}));
    for (std::size_t k = 0; k < kModelNames.size(); ++k) EXPECT_EQ(rows[k + 1][0], kModelNames[k]);
  }
  // point-only models carry NA interval scores
  const auto is_rows = detail::parse_csv(slurp(report / "table_is.csv"));
  EXPECT_EQ(is_rows[1][1], "NA");
  EXPECT_NE(is_rows[2][1], "NA");
  EXPECT_EQ(first_line(report / "dispersion.csv"), "model,school_id,state,residual_variance,excluded");
  EXPECT_EQ(first_line(report / "residuals.csv"), "model,school_id,year,residual");
  EXPECT_EQ(first_line(report / "acf.csv"), "model,school_id,lag,acf");
  EXPECT_EQ(first_line(ca.out / "scores.csv"), "model,year,mspe,mslpe,is,icr");
  EXPECT_EQ(first_line(forecast_csv(ca, "intercept")), "model,school_id,state,year,point,lower,upper,actual");
  EXPECT_EQ(detail::parse_csv(slurp(report / "dispersion.csv")).size(), 1 + kModelNames.size() * 6);
  EXPECT_TRUE(fs::exists(report / "dispersion.svg"));
  EXPECT_TRUE(fs::exists(report / "summary.json"));
}

TEST(Pipeline, StagesRequireEarlierArtifacts) {
  Workdir w("staged");
  const auto config = load_run_config(write_config(w.path(), kSmallConfig));
  EXPECT_THROW(cmd_fit(config), DataError);  // no simulated panel yet
  cmd_simulate(config);
  try {
    cmd_forecast(config);
    FAIL() << "forecast ran without fits";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("fit"), std::string::npos) << e.what();
  }
  EXPECT_THROW(cmd_score(config), DataError);
}

TEST(Pipeline, ChangedConfigRejectsStaleFits) {
  Workdir w("mismatch");
  auto config = load_run_config(write_config(w.path(), kSmallConfig));
  filter_models(config, {"intercept", "single-poisson-esn"});
  cmd_simulate(config);
  cmd_fit(config);
  EXPECT_NO_THROW(cmd_forecast(config));
  auto reseeded = config;
  reseeded.seed = 4;
  EXPECT_THROW(cmd_forecast(reseeded), ConfigError);
  auto retuned = config;
  retuned.models[1].tau = 2.0;
  EXPECT_THROW(cmd_forecast(retuned), ConfigError);
}

TEST(Pipeline, InterceptForecastIsTrainingMeanAtEachOrigin) {
  const auto panel = nb_panel(20);
  const auto set = rolling_forecast(panel, small_model("intercept"), SplitPlan{17, 3}, 1);
  ASSERT_EQ(set.rows.size(), 12u);
  for (const auto& f : set.rows) {
    const int target = f.year - panel.years().front();
    double mean = 0.0;
    for (int t = 0; t < target; ++t) mean += static_cast<double>(panel.count(f.school, t));
    EXPECT_NEAR(f.point, mean / target, 1e-12);
    EXPECT_EQ(*f.actual, panel.count(f.school, target));
  }
  EXPECT_EQ(set.years(), (std::vector<int>{panel.years()[17], panel.years()[18], panel.years()[19]}));
}

TEST(Pipeline, ForecastsDoNotSeeTheFuture) {
  const auto panel = nb_panel(14);
  const int target = 11;
  for (const auto& name : kModelNames) {
    const auto config = small_model(std::string(name));
    const auto model = fit_model(config, training_panel(panel, target), 5, fit_seed_for(5, name, target));
    const auto base = forecast_origin(*model, panel, target, 5);
    for (int later : {target, target + 2}) {
      const auto perturbed = panel.with_count(1, later, panel.count(1, later) + 500);
      const auto refit =
          fit_model(config, training_panel(perturbed, target), 5, fit_seed_for(5, name, target));
      const auto moved = forecast_origin(*refit, perturbed, target, 5);
      for (std::size_t i = 0; i < base.size(); ++i) {
        EXPECT_EQ(moved[i].point, base[i].point) << name << " school " << i;
        EXPECT_EQ(moved[i].interval, base[i].interval) << name << " school " << i;
      }
    }
  }
}

TEST(Pipeline, BayesPoissonPredictiveMeanMatchesQuadrature) {
  // One school with a one-node reservoir: the posterior of eta is one-dimensional,
  // so the predictive mean E[exp(h_{T+1} eta) | y] has a quadrature oracle.
  SimulationSpec sim;
  sim.n_states = 1;
  sim.schools_per_state = 1;
  sim.n_years = 25;
  const auto panel = simulate_panel(sim).panel;
  ModelConfig config = small_model("bayes-poisson-esn");
  config.reservoir.n_h = 1;
  config.reservoir.a_uy = config.reservoir.a_ux = 1.0;
  config.reservoir.pi_uy = config.reservoir.pi_ux = 1.0;
  config.bayes_poisson.n_draws = 4000;
  config.bayes_poisson.sigma_eta = 1.0;
  config.n_samples = 4000;
  const int target = 24;
  const auto train = training_panel(panel, target);
  const auto model = fit_model(config, train, 21, fit_seed_for(21, config.name, target));
  const auto forecast = forecast_origin(*model, panel, target, 21);

  const auto weights = gen_weights(resolved_reservoir(config, 21));
  const auto states = run_states(train, weights, config.reservoir.nu);
  const auto x_next = target_covariates(panel, target);
  const double h_next = next_state(train, states, 0, x_next, weights, config.reservoir.nu)(0);
  const auto params = poisson_cmlg_params(states.school_design(0), train.series(0), 1.0, config.bayes_poisson.alpha);
  const int n = 200001;
  const double lo = -8.0, hi = 8.0, h = (hi - lo) / (n - 1);
  double peak = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < n; ++k) peak = std::max(peak, cmlg_log_kernel(params, Eigen::VectorXd::Constant(1, lo + k * h)));
  double z = 0.0, m = 0.0;
  for (int k = 0; k < n; ++k) {
    const double eta = lo + k * h;
    const double w = std::exp(cmlg_log_kernel(params, Eigen::VectorXd::Constant(1, eta)) - peak);
    z += w;
    m += w * std::exp(h_next * eta);
  }
  const auto& samples = forecast[0].samples;
  ASSERT_EQ(samples.size(), 4000u);
  double s2 = 0.0;
  for (double v : samples) s2 += (v - forecast[0].point) * (v - forecast[0].point);
  const double se = std::sqrt(s2 / (samples.size() - 1) / samples.size());
  EXPECT_NEAR(forecast[0].point, m / z, 3.0 * se);
}

TEST(Pipeline, FitArtifactsRoundTrip) {
  Workdir w("roundtrip");
  const auto panel = nb_panel(12);
  for (const auto& name : kModelNames) {
    const auto config = small_model(std::string(name));
    const auto model = fit_model(config, panel, 2, 9);
    const auto dir = w.path() / std::string(name);
    model->save(dir);
    const auto loaded = load_model(config, dir);
    Rng a(4), b(4);
    const auto x = target_covariates(nb_panel(13), 12);
    const auto fa = model->forecast(panel, x, a);
    const auto fb = loaded->forecast(panel, x, b);
    ASSERT_EQ(fa.size(), fb.size());
    for (std::size_t i = 0; i < fa.size(); ++i) {
      EXPECT_EQ(fa[i].point, fb[i].point) << name;
      EXPECT_EQ(fa[i].interval, fb[i].interval) << name;
    }
  }
  EXPECT_THROW(load_model(small_model("intercept"), w.path() / "hier-nb-esn"), DataError);
  EXPECT_THROW(load_model(small_model("intercept"), w.path() / "nothing-here"), DataError);
}

TEST(Cli, ExitCodes) {
  Workdir w("cli");
  const auto good = write_config(w.path(), kSmallConfig);
  EXPECT_EQ(run_cli("simulate --config \"" + good.string() + "\""), 0);
  EXPECT_EQ(run_cli("forecast --config \"" + good.string() + "\""), 3);  // fit stage missing

  std::string bad = kSmallConfig;
  bad.replace(bad.find("hier-nb-esn"), 11, "no-such-dgp");
  const fs::path bad_dir = w.path() / "bad";
  fs::create_directories(bad_dir);
  EXPECT_EQ(run_cli("simulate --config \"" + write_config(bad_dir, bad).string() + "\""), 2);

  const fs::path unseeded = w.path() / "unseeded";
  fs::create_directories(unseeded);
  std::string no_seed = kSmallConfig;
  no_seed.replace(no_seed.find("\"seed\": 3,"), 10, "");
  EXPECT_EQ(run_cli("simulate --config \"" + write_config(unseeded, no_seed).string() + "\""), 2);
  EXPECT_EQ(run_cli("simulate --config \"" + good.string() + "\" --models nope"), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
}

TEST(Cli, RunSubcommandWritesReport) {
  Workdir w("cli_run");
  const auto config = write_config(w.path(), kSmallConfig);
  ASSERT_EQ(run_cli("simulate --config \"" + config.string() + "\""), 0);
  ASSERT_EQ(run_cli("run --config \"" + config.string() + "\" --models intercept,hier-nb-esn --workers 2"), 0);
  const auto rows = detail::parse_csv(slurp(w.path() / "out" / "report" / "table_mspe.csv"));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[1][0], "intercept");
  EXPECT_EQ(rows[2][0], "hier-nb-esn");
}
