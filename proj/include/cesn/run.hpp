#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cesn/models.hpp"
#include "cesn/panel.hpp"
#include "cesn/scoring.hpp"
#include "cesn/serialize.hpp"
#include "cesn/simulate.hpp"

namespace cesn {

/// Declarative description of one run; see docs/formats.md for the file layout.
struct RunConfig {
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> data_path;
  std::optional<SimulationSpec> simulation;
  bool simulation_seed_given = false;
  std::string covariates = "auto";  // auto | default | file
  int horizon = 5;
  std::optional<int> first_target_year;
  double level = 0.95;
  std::vector<ModelConfig> models;
  std::filesystem::path out = "out";
  int workers = 1;

  void validate() const;
  /// Model entry by name; ConfigError if absent.
  const ModelConfig& model(std::string_view name) const;
};

/// Relative paths in the config resolve against `base_dir`.
RunConfig parse_run_config(const Json& j, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

/// Keeps only the listed models, in the listed order.
void filter_models(RunConfig& config, const std::vector<std::string>& names);

/// Panel the run works on: the data file, or the panel written by `simulate`.
PanelSeries run_panel(const RunConfig& config);
SplitPlan run_plan(const RunConfig& config, const PanelSeries& panel);

// Output locations below config.out.
std::filesystem::path panel_artifact(const RunConfig& config);
std::filesystem::path fit_dir(const RunConfig& config, std::string_view model);
std::filesystem::path origin_dir(const RunConfig& config, std::string_view model, int year);
std::filesystem::path forecast_csv(const RunConfig& config, std::string_view model);
std::filesystem::path report_dir(const RunConfig& config);

/// Long CSV `model,school_id,state,year,point,lower,upper,actual`.
std::string format_forecast_csv(const ForecastSet& set, const PanelSeries& panel);
ForecastSet parse_forecast_csv(std::string_view text, const PanelSeries& panel, double level);

/// `model,<year>...,average` with one row per model; `column` picks the score.
std::string format_score_table(const std::vector<std::vector<ScoreRow>>& per_model, std::string_view column);

/// Box plots of per-school values, one box per group.
std::string format_boxplot_svg(const std::vector<std::pair<std::string, std::vector<double>>>& groups,
                               std::string_view title);

// Pipeline stages. Each reads the artifacts of the stage before it and
// throws DataError naming the missing stage when they are absent.
void cmd_simulate(const RunConfig& config);
void cmd_fit(const RunConfig& config);
void cmd_forecast(const RunConfig& config);
void cmd_score(const RunConfig& config);
void cmd_report(const RunConfig& config);

}  // namespace cesn
