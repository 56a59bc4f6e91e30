#include "cesn/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "cesn/csv.hpp"
#include "cesn/error.hpp"

namespace cesn {

std::vector<int> ForecastSet::years() const {
  std::set<int> ys;
  for (const auto& r : rows) ys.insert(r.year);
  return {ys.begin(), ys.end()};
}

std::vector<const Forecast*> ForecastSet::year_rows(int year) const {
  std::vector<const Forecast*> out(static_cast<std::size_t>(n_schools), nullptr);
  for (const auto& r : rows) {
    if (r.year != year) continue;
    if (r.school < 0 || r.school >= n_schools)
      throw DataError(model + ": forecast for unknown school index " + std::to_string(r.school));
    auto& slot = out[static_cast<std::size_t>(r.school)];
    if (slot) throw DataError(model + ": duplicate forecast for school " + std::to_string(r.school));
    if (!r.actual) throw DataError(model + ": no realised count for school " + std::to_string(r.school));
    slot = &r;
  }
  for (int i = 0; i < n_schools; ++i)
    if (!out[static_cast<std::size_t>(i)])
      throw DataError(model + ": missing forecast for school " + std::to_string(i) + " in " + std::to_string(year));
  return out;
}

bool ForecastSet::has_intervals() const {
  return !rows.empty() && std::all_of(rows.begin(), rows.end(), [](const Forecast& f) { return f.interval.has_value(); });
}

double empirical_quantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw ConfigError("quantile of an empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::pair<double, double> percentile_interval(std::vector<double> samples, double level) {
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("interval level must lie in (0, 1)");
  std::sort(samples.begin(), samples.end());
  return {empirical_quantile(samples, 0.5 * (1.0 - level)), empirical_quantile(samples, 0.5 * (1.0 + level))};
}

namespace {

void check_lengths(std::size_t a, std::size_t b) {
  if (a != b) throw ConfigError("forecast and actual lengths differ");
  if (a == 0) throw ConfigError("no forecasts to score");
}

}  // namespace

double mspe(std::span<const double> predicted, std::span<const double> actual) {
  check_lengths(predicted.size(), actual.size());
  double s = 0.0;
  for (std::size_t k = 0; k < actual.size(); ++k) s += (predicted[k] - actual[k]) * (predicted[k] - actual[k]);
  return s / static_cast<double>(actual.size());
}

double mslpe(std::span<const double> predicted, std::span<const double> actual) {
  check_lengths(predicted.size(), actual.size());
  double s = 0.0;
  for (std::size_t k = 0; k < actual.size(); ++k) {
    const double d = std::log1p(predicted[k]) - std::log1p(actual[k]);
    s += d * d;
  }
  return s / static_cast<double>(actual.size());
}

double interval_score(std::span<const std::pair<double, double>> intervals, std::span<const double> actual,
                      double alpha) {
  check_lengths(intervals.size(), actual.size());
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  double s = 0.0;
  for (std::size_t k = 0; k < actual.size(); ++k) {
    const auto [l, u] = intervals[k];
    const double y = actual[k];
    s += (u - l);
    if (y < l) s += 2.0 / alpha * (l - y);
    if (y > u) s += 2.0 / alpha * (y - u);
  }
  return s / static_cast<double>(actual.size());
}

double icr(std::span<const std::pair<double, double>> intervals, std::span<const double> actual) {
  check_lengths(intervals.size(), actual.size());
  std::size_t inside = 0;
  for (std::size_t k = 0; k < actual.size(); ++k)
    if (intervals[k].first < actual[k] && actual[k] < intervals[k].second) ++inside;
  return static_cast<double>(inside) / static_cast<double>(actual.size());
}

namespace {

struct YearData {
  std::vector<double> point;
  std::vector<double> actual;
  std::vector<std::pair<double, double>> intervals;
};

YearData collect(const ForecastSet& set, int year, bool need_intervals) {
  YearData d;
  for (const Forecast* f : set.year_rows(year)) {
    d.point.push_back(f->point);
    d.actual.push_back(static_cast<double>(*f->actual));
    if (need_intervals) {
      if (!f->interval) throw DataError(set.model + ": forecast has no interval");
      d.intervals.push_back(*f->interval);
    }
  }
  return d;
}

}  // namespace

double mspe(const ForecastSet& set, int year) {
  const YearData d = collect(set, year, false);
  return mspe(d.point, d.actual);
}

double mslpe(const ForecastSet& set, int year) {
  const YearData d = collect(set, year, false);
  return mslpe(d.point, d.actual);
}

double interval_score(const ForecastSet& set, int year, double alpha) {
  const YearData d = collect(set, year, true);
  return interval_score(d.intervals, d.actual, alpha);
}

double icr(const ForecastSet& set, int year) {
  const YearData d = collect(set, year, true);
  return icr(d.intervals, d.actual);
}

std::vector<ScoreRow> score_forecasts(const ForecastSet& set) {
  std::vector<ScoreRow> rows;
  const bool with_intervals = set.has_intervals();
  const double alpha = 1.0 - set.level;
  ScoreRow avg{set.model, "average", 0.0, 0.0, std::nullopt, std::nullopt};
  if (with_intervals) {
    avg.is = 0.0;
    avg.icr = 0.0;
  }
  const auto years = set.years();
  for (int y : years) {
    ScoreRow r{set.model, std::to_string(y), mspe(set, y), mslpe(set, y), std::nullopt, std::nullopt};
    if (with_intervals) {
      r.is = interval_score(set, y, alpha);
      r.icr = icr(set, y);
      *avg.is += *r.is;
      *avg.icr += *r.icr;
    }
    avg.mspe += r.mspe;
    avg.mslpe += r.mslpe;
    rows.push_back(std::move(r));
  }
  if (!years.empty()) {
    const auto n = static_cast<double>(years.size());
    avg.mspe /= n;
    avg.mslpe /= n;
    if (with_intervals) {
      *avg.is /= n;
      *avg.icr /= n;
    }
    rows.push_back(std::move(avg));
  }
  return rows;
}

std::string format_score_csv(std::span<const ScoreRow> rows) {
  std::ostringstream os;
  os << "model,year,mspe,mslpe,is,icr\n";
  auto opt = [](const std::optional<double>& v) { return v ? detail::format_double(*v) : std::string("NA"); };
  for (const auto& r : rows)
    os << detail::csv_escape(r.model) << ',' << r.year << ',' << detail::format_double(r.mspe) << ','
       << detail::format_double(r.mslpe) << ',' << opt(r.is) << ',' << opt(r.icr) << '\n';
  return os.str();
}

PearsonResult pearson_residuals(const PanelSeries& panel, const ConditionalMoments& moments) {
  const int N = panel.n_schools();
  const int T = panel.n_years();
  if (T < 2) throw ConfigError("Pearson residuals need at least two years");
  if (moments.mean.rows() != N || moments.mean.cols() != T || moments.variance.rows() != N ||
      moments.variance.cols() != T)
    throw ConfigError("conditional moments do not match the panel");
  PearsonResult out;
  out.residuals = Eigen::MatrixXd::Constant(N, T - 1, std::numeric_limits<double>::quiet_NaN());
  out.school_variance = Eigen::VectorXd::Constant(N, std::numeric_limits<double>::quiet_NaN());
  for (int i = 0; i < N; ++i) {
    std::vector<double> kept;
    for (int t = 1; t < T; ++t) {
      const double v = moments.variance(i, t);
      if (!(v > 0.0) || !std::isfinite(v) || !std::isfinite(moments.mean(i, t))) {
        out.excluded.emplace_back(i, t);
        continue;
      }
      const double r = (static_cast<double>(panel.count(i, t)) - moments.mean(i, t)) / std::sqrt(v);
      out.residuals(i, t - 1) = r;
      kept.push_back(r);
    }
    if (kept.size() >= 2) {
      double m = 0.0;
      for (double r : kept) m += r;
      m /= static_cast<double>(kept.size());
      double ss = 0.0;
      for (double r : kept) ss += (r - m) * (r - m);
      out.school_variance(i) = ss / static_cast<double>(kept.size() - 1);
    }
  }
  return out;
}

Eigen::MatrixXd residual_acf(const Eigen::MatrixXd& residuals, int max_lag) {
  if (max_lag < 1) throw ConfigError("ACF needs max_lag >= 1");
  const auto n = residuals.cols();
  Eigen::MatrixXd out = Eigen::MatrixXd::Constant(residuals.rows(), max_lag, std::numeric_limits<double>::quiet_NaN());
  for (Eigen::Index i = 0; i < residuals.rows(); ++i) {
    double m = 0.0;
    int count = 0;
    for (Eigen::Index t = 0; t < n; ++t)
      if (std::isfinite(residuals(i, t))) {
        m += residuals(i, t);
        ++count;
      }
    if (count < 2) continue;
    m /= count;
    double c0 = 0.0;
    for (Eigen::Index t = 0; t < n; ++t)
      if (std::isfinite(residuals(i, t))) c0 += (residuals(i, t) - m) * (residuals(i, t) - m);
    if (!(c0 > 0.0)) continue;
    for (int lag = 1; lag <= max_lag && lag < n; ++lag) {
      double c = 0.0;
      for (Eigen::Index t = lag; t < n; ++t)
        if (std::isfinite(residuals(i, t)) && std::isfinite(residuals(i, t - lag)))
          c += (residuals(i, t) - m) * (residuals(i, t - lag) - m);
      out(i, lag - 1) = c / c0;
    }
  }
  return out;
}

double median(std::vector<double> values) {
  std::erase_if(values, [](double v) { return !std::isfinite(v); });
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  return empirical_quantile(values, 0.5);
}

}  // namespace cesn
