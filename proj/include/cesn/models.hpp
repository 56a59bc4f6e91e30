#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cesn/bayes_nb.hpp"
#include "cesn/bayes_poisson.hpp"
#include "cesn/panel.hpp"
#include "cesn/penalized.hpp"
#include "cesn/reservoir.hpp"
#include "cesn/scoring.hpp"

namespace cesn {

inline constexpr std::array<std::string_view, 7> kModelNames = {
    "intercept",         "ingarch11",        "single-poisson-esn", "ensemble-poisson-esn",
    "bayes-poisson-esn", "hier-poisson-esn", "hier-nb-esn"};

bool is_model_name(std::string_view name);
/// True for the models that run a reservoir.
bool uses_reservoir(std::string_view name);

/// Everything needed to fit one model. Unused sections are ignored.
struct ModelConfig {
  std::string name;
  ReservoirSpec reservoir;
  /// Explicit reservoir seed; otherwise derived from the master seed.
  std::optional<std::uint64_t> reservoir_seed;
  double tau = 1.0;
  /// When non-empty, tau is chosen from this grid by one-step cross-validation
  /// over the last cv_holdout training years (smallest MSPE, first on ties).
  std::vector<double> tau_grid;
  int cv_holdout = 3;
  PenalizedOptions optimizer;
  int ensemble_size = 100;
  int ensemble_draws = 10;  // Poisson draws per member for the pooled interval
  BayesPoissonOptions bayes_poisson;
  HierPoissonOptions hier_poisson;
  NBOptions nb;
  double level = 0.95;
  int n_samples = kPredictiveSamples;

  void validate() const;
};

/// A model fitted on one training panel.
class FittedModel {
 public:
  virtual ~FittedModel() = default;
  virtual std::string name() const = 0;
  /// One-step forecasts for the year after `train`. `next_covariates` holds
  /// x_{i,T+1} for every school (N x r, school-major). Actual counts are left empty.
  virtual std::vector<Forecast> forecast(const PanelSeries& train, std::span<const double> next_covariates,
                                         Rng& rng) const = 0;
  /// In-sample E[Y_{i,t} | past] and Var[Y_{i,t} | past] on the training panel,
  /// with plug-in (posterior-mean) parameters for the Bayesian models.
  virtual ConditionalMoments conditional_moments(const PanelSeries& train) const = 0;
  /// Writes fit.json plus any binary matrices into dir (created if needed).
  virtual void save(const std::filesystem::path& dir) const = 0;
};

/// Seeds: reservoir from derive_seed(master, "reservoir", 0) unless set
/// explicitly; chains and ensemble members from `fit_seed`.
std::unique_ptr<FittedModel> fit_model(const ModelConfig& config, const PanelSeries& train,
                                       std::uint64_t master_seed, std::uint64_t fit_seed, int workers = 1);

/// Throws DataError if dir holds no fit, or a fit of a different model.
std::unique_ptr<FittedModel> load_model(const ModelConfig& config, const std::filesystem::path& dir);

/// Rolling one-step MSPE of the single Poisson ESN for each tau, on the
/// last `holdout` years of `train`; returns the minimiser.
double select_tau(const PanelSeries& train, const ReservoirSpec& spec, std::span<const double> grid, int holdout,
                  const PenalizedOptions& options, int workers = 1);

/// Reservoir spec with the seed the master seed implies.
ReservoirSpec resolved_reservoir(const ModelConfig& config, std::uint64_t master_seed);

/// Training panel for forecasting year index `target`: years [0, target).
PanelSeries training_panel(const PanelSeries& panel, int target);
/// x_{i,target} for every school, school-major.
std::vector<double> target_covariates(const PanelSeries& panel, int target);

std::uint64_t fit_seed_for(std::uint64_t master, std::string_view model, int target);
std::uint64_t forecast_seed_for(std::uint64_t master, std::string_view model, int target);

/// Forecasts for one origin with the realised counts attached.
std::vector<Forecast> forecast_origin(const FittedModel& model, const PanelSeries& panel, int target,
                                      std::uint64_t master_seed);

/// For each target year of the plan: refit on data through the preceding year
/// and emit one-step forecasts for every school.
ForecastSet rolling_forecast(const PanelSeries& panel, const ModelConfig& config, const SplitPlan& plan,
                             std::uint64_t master_seed, int workers = 1);

}  // namespace cesn
