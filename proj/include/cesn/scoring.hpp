#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cesn/panel.hpp"

namespace cesn {

inline constexpr int kPredictiveSamples = 1000;

/// One-step forecast for one school and target year.
struct Forecast {
  int school = 0;
  int year = 0;
  double point = 0.0;
  std::vector<double> samples;  // empty when the model has no predictive draws
  std::optional<std::pair<double, double>> interval;
  std::optional<std::int64_t> actual;
};

/// Forecasts of one model, possibly spanning several target years.
struct ForecastSet {
  std::string model;
  double level = 0.95;
  int n_schools = 0;  // schools expected per target year
  std::vector<Forecast> rows;

  std::vector<int> years() const;
  /// Rows for one target year ordered by school; throws DataError if any school
  /// is missing or duplicated, or if an actual count is absent.
  std::vector<const Forecast*> year_rows(int year) const;
  bool has_intervals() const;
};

/// Empirical quantile with linear interpolation between order statistics
/// (position q (n - 1) in the sorted sample).
double empirical_quantile(std::span<const double> sorted, double q);
std::pair<double, double> percentile_interval(std::vector<double> samples, double level);

double mspe(std::span<const double> predicted, std::span<const double> actual);
double mslpe(std::span<const double> predicted, std::span<const double> actual);
/// Mean of (u - l) + (2/alpha)(l - y)1[y < l] + (2/alpha)(y - u)1[y > u].
double interval_score(std::span<const std::pair<double, double>> intervals,
                      std::span<const double> actual, double alpha);
/// Fraction with l < y < u.
double icr(std::span<const std::pair<double, double>> intervals, std::span<const double> actual);

double mspe(const ForecastSet& set, int year);
double mslpe(const ForecastSet& set, int year);
double interval_score(const ForecastSet& set, int year, double alpha);
double icr(const ForecastSet& set, int year);

struct ScoreRow {
  std::string model;
  std::string year;  // calendar year or "average"
  double mspe = 0.0;
  double mslpe = 0.0;
  std::optional<double> is;
  std::optional<double> icr;
};

/// One row per target year plus an "average" row (mean over years).
std::vector<ScoreRow> score_forecasts(const ForecastSet& set);

/// Header `model,year,mspe,mslpe,is,icr`; absent scores are written as NA.
std::string format_score_csv(std::span<const ScoreRow> rows);

/// In-sample conditional moments E[Y_t | past] and Var[Y_t | past], N x T.
struct ConditionalMoments {
  Eigen::MatrixXd mean;
  Eigen::MatrixXd variance;
};

struct PearsonResult {
  /// N x (T - 1): residuals for years 2..T; NaN where the variance was zero.
  Eigen::MatrixXd residuals;
  /// Per-school sample variance (n - 1 denominator) of the finite residuals;
  /// NaN when fewer than two residuals remain.
  Eigen::VectorXd school_variance;
  /// (school, year index) pairs excluded for zero or non-finite variance.
  std::vector<std::pair<int, int>> excluded;
};

PearsonResult pearson_residuals(const PanelSeries& panel, const ConditionalMoments& moments);

/// Per-school sample autocorrelation of the residual rows at lags 1..max_lag
/// (NaN cells skipped; lag-0 normaliser over the finite cells).
Eigen::MatrixXd residual_acf(const Eigen::MatrixXd& residuals, int max_lag);

double median(std::vector<double> values);

}  // namespace cesn
