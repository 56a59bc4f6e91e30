#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "cesn/dists.hpp"
#include "cesn/error.hpp"
#include "cesn/scoring.hpp"

using namespace cesn;

namespace {

using Interval = std::pair<double, double>;

ForecastSet two_year_set() {
  ForecastSet set;
  set.model = "m";
  set.n_schools = 2;
  for (int year : {2020, 2021})
    for (int i = 0; i < 2; ++i) {
      Forecast f;
      f.school = i;
      f.year = year;
      f.point = 1.0 + i + (year - 2020);
      f.interval = Interval{f.point - 1.0, f.point + 1.0};
      f.actual = 2 * (i + 1);
      set.rows.push_back(f);
    }
  return set;
}

}  // namespace

TEST(Scores, HandArithmetic) {
  const std::vector<double> pred = {1.0, 2.0}, actual = {2.0, 4.0};
  EXPECT_NEAR(mspe(pred, actual), 2.5, 1e-12);
  EXPECT_NEAR(mspe(actual, actual), 0.0, 1e-12);
  EXPECT_NEAR(mslpe(std::vector<double>{std::numbers::e - 1.0}, std::vector<double>{0.0}), 1.0, 1e-12);
  EXPECT_NEAR(mslpe(actual, actual), 0.0, 1e-12);

  const std::vector<Interval> iv = {{1.0, 3.0}};
  EXPECT_NEAR(interval_score(iv, std::vector<double>{2.0}, 0.05), 2.0, 1e-12);
  EXPECT_NEAR(interval_score(iv, std::vector<double>{4.0}, 0.05), 42.0, 1e-12);
  EXPECT_NEAR(interval_score(iv, std::vector<double>{0.0}, 0.05), 42.0, 1e-12);

  const std::vector<Interval> two = {{1.0, 3.0}, {0.0, 10.0}};
  EXPECT_NEAR(icr(two, std::vector<double>{2.0, 5.0}), 1.0, 1e-12);
  EXPECT_NEAR(icr(two, std::vector<double>{7.0, 11.0}), 0.0, 1e-12);
  EXPECT_NEAR(icr(two, std::vector<double>{3.0, 0.0}), 0.0, 1e-12);  // strict at both ends
}

TEST(Scores, PropertyChecks) {
  Rng rng(1);
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<double> pred(5), actual(5);
    std::vector<Interval> iv(5), wider(5);
    for (int k = 0; k < 5; ++k) {
      actual[k] = std::floor(20.0 * uniform01(rng));
      pred[k] = 20.0 * uniform01(rng);
      const double l = 15.0 * uniform01(rng);
      iv[k] = {l, l + 10.0 * uniform01(rng)};
      wider[k] = {iv[k].first - uniform01(rng), iv[k].second + uniform01(rng)};
    }
    EXPECT_GE(mspe(pred, actual), 0.0);
    EXPECT_GE(mslpe(pred, actual), 0.0);
    EXPECT_GE(icr(wider, actual), icr(iv, actual));
    const double r = icr(iv, actual);
    EXPECT_GE(r, 0.0);
    EXPECT_LE(r, 1.0);
    double width = 0.0;
    bool all_inside = true;
    for (int k = 0; k < 5; ++k) {
      width += iv[k].second - iv[k].first;
      all_inside = all_inside && actual[k] >= iv[k].first && actual[k] <= iv[k].second;
    }
    if (all_inside) EXPECT_NEAR(interval_score(iv, actual, 0.05), width / 5.0, 1e-12);
    EXPECT_GE(interval_score(iv, actual, 0.05), width / 5.0 - 1e-12);
  }
}

TEST(Scores, QuantilesInterpolate) {
  const std::vector<double> sorted = {1.0, 2.0, 3.0, 4.0, 5.0};
  EXPECT_DOUBLE_EQ(empirical_quantile(sorted, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(empirical_quantile(sorted, 1.0), 5.0);
  EXPECT_DOUBLE_EQ(empirical_quantile(sorted, 0.5), 3.0);
  EXPECT_DOUBLE_EQ(empirical_quantile(sorted, 0.1), 1.4);
  std::vector<double> samples(1000);
  for (int k = 0; k < 1000; ++k) samples[k] = 999.0 - k;
  const auto [l, u] = percentile_interval(samples, 0.95);
  EXPECT_NEAR(l, 0.025 * 999.0, 1e-9);
  EXPECT_NEAR(u, 0.975 * 999.0, 1e-9);
  EXPECT_DOUBLE_EQ(median({4.0, 1.0, 3.0, 2.0}), 2.5);
}

TEST(Scores, ForecastSetRowsAndAverages) {
  const auto set = two_year_set();
  EXPECT_EQ(set.years(), (std::vector<int>{2020, 2021}));
  EXPECT_TRUE(set.has_intervals());
  // 2020: points (1, 2) vs actual (2, 4) -> MSPE 2.5; 2021: points (2, 3) -> (0 + 1)/2
  EXPECT_NEAR(mspe(set, 2020), 2.5, 1e-12);
  EXPECT_NEAR(mspe(set, 2021), 0.5, 1e-12);
  const auto rows = score_forecasts(set);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows.back().year, "average");
  EXPECT_NEAR(rows.back().mspe, 1.5, 1e-12);
  ASSERT_TRUE(rows.back().icr.has_value());
  // 2020 intervals (0,2) and (1,3) vs (2, 4): none strictly inside; 2021 (1,3),(2,4): 2 inside, 4 not
  EXPECT_NEAR(*rows[0].icr, 0.0, 1e-12);
  EXPECT_NEAR(*rows[1].icr, 0.5, 1e-12);
  EXPECT_NEAR(*rows.back().icr, 0.25, 1e-12);

  const auto csv = format_score_csv(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "model,year,mspe,mslpe,is,icr");
}

TEST(Scores, MissingSchoolOrActualIsAnError) {
  auto set = two_year_set();
  set.rows.pop_back();
  EXPECT_THROW(mspe(set, 2021), DataError);
  auto no_actual = two_year_set();
  no_actual.rows[0].actual.reset();
  EXPECT_THROW(mspe(no_actual, 2020), DataError);
}

TEST(Scores, PointOnlyModelsHaveNoIntervalScores) {
  auto set = two_year_set();
  for (auto& r : set.rows) r.interval.reset();
  const auto rows = score_forecasts(set);
  EXPECT_FALSE(rows.back().is.has_value());
  EXPECT_FALSE(rows.back().icr.has_value());
  const auto csv = format_score_csv(rows);
  EXPECT_NE(csv.find("NA"), std::string::npos);
}

TEST(Pearson, HandResidualsAndExclusions) {
  PanelSeries panel({"a", "b"}, {"S", "S"}, {2000, 2001, 2002}, {5, 4, 9, 1, 2, 3});
  ConditionalMoments m;
  m.mean = Eigen::MatrixXd::Constant(2, 3, 4.0);
  m.variance = Eigen::MatrixXd::Constant(2, 3, 4.0);
  m.variance(1, 2) = 0.0;
  const auto result = pearson_residuals(panel, m);
  ASSERT_EQ(result.residuals.rows(), 2);
  ASSERT_EQ(result.residuals.cols(), 2);
  EXPECT_DOUBLE_EQ(result.residuals(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(result.residuals(0, 1), 2.5);
  EXPECT_NEAR(result.school_variance(0), 3.125, 1e-12);
  EXPECT_TRUE(std::isnan(result.residuals(1, 1)));
  ASSERT_EQ(result.excluded.size(), 1u);
  EXPECT_EQ(result.excluded[0], (std::pair<int, int>{1, 2}));
  EXPECT_TRUE(std::isnan(result.school_variance(1)));
}
