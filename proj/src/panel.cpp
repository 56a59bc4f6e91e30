#include "cesn/panel.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include "cesn/error.hpp"
#include "cesn/csv.hpp"

namespace cesn {

PanelSeries::PanelSeries(std::vector<std::string> school_ids,
                         std::vector<std::string> school_states, std::vector<int> years,
                         std::vector<std::int64_t> counts, std::vector<double> covariates,
                         int n_covariates)
    : school_ids_(std::move(school_ids)),
      school_states_(std::move(school_states)),
      years_(std::move(years)),
      counts_(std::move(counts)),
      covariates_(std::move(covariates)),
      n_covariates_(n_covariates) {
  const std::size_t n = school_ids_.size();
  const std::size_t t = years_.size();
  if (n == 0 || t == 0) throw DataError("panel must contain at least one school and one year");
  if (school_states_.size() != n) throw DataError("one state label is required per school");
  if (counts_.size() != n * t) throw DataError("count matrix does not match N x T");
  if (n_covariates_ < 0 || covariates_.size() != n * t * static_cast<std::size_t>(n_covariates_))
    throw DataError("covariate array does not match N x T x r");
  for (std::size_t k = 1; k < t; ++k) {
    if (years_[k] != years_[k - 1] + 1)
      throw DataError("years must be strictly increasing consecutive integers");
  }
  std::set<std::string> seen;
  for (const auto& id : school_ids_) {
    if (!seen.insert(id).second) throw DataError("duplicate school id '" + id + "'");
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < t; ++k) {
      if (counts_[i * t + k] < 0) {
        throw DataError("negative count at (" + school_ids_[i] + ", " +
                        std::to_string(years_[k]) + ")");
      }
    }
  }
  std::set<std::string> labels(school_states_.begin(), school_states_.end());
  state_labels_.assign(labels.begin(), labels.end());
  state_of_.reserve(n);
  for (const auto& s : school_states_) {
    auto it = std::lower_bound(state_labels_.begin(), state_labels_.end(), s);
    state_of_.push_back(static_cast<int>(it - state_labels_.begin()));
  }
}

PanelSeries PanelSeries::truncated(int n_years) const {
  if (n_years < 1 || n_years > this->n_years())
    throw ConfigError("truncation length out of range");
  const auto tn = static_cast<std::size_t>(n_years);
  const auto t_full = static_cast<std::size_t>(this->n_years());
  const auto r = static_cast<std::size_t>(n_covariates_);
  std::vector<std::int64_t> counts;
  std::vector<double> cov;
  counts.reserve(school_ids_.size() * tn);
  cov.reserve(school_ids_.size() * tn * r);
  for (std::size_t i = 0; i < school_ids_.size(); ++i) {
    auto row = counts_.begin() + static_cast<std::ptrdiff_t>(i * t_full);
    counts.insert(counts.end(), row, row + static_cast<std::ptrdiff_t>(tn));
    auto crow = covariates_.begin() + static_cast<std::ptrdiff_t>(i * t_full * r);
    cov.insert(cov.end(), crow, crow + static_cast<std::ptrdiff_t>(tn * r));
  }
  std::vector<int> years(years_.begin(), years_.begin() + n_years);
  return PanelSeries(school_ids_, school_states_, std::move(years), std::move(counts),
                     std::move(cov), n_covariates_);
}

PanelSeries PanelSeries::with_count(int i, int t, std::int64_t value) const {
  auto counts = counts_;
  counts.at(index(i, t)) = value;
  return PanelSeries(school_ids_, school_states_, years_, std::move(counts), covariates_,
                     n_covariates_);
}

PanelSeries PanelSeries::with_covariates(std::vector<double> covariates, int n_covariates) const {
  return PanelSeries(school_ids_, school_states_, years_, counts_, std::move(covariates),
                     n_covariates);
}

PanelSeries PanelSeries::permuted(std::span<const int> order) const {
  if (order.size() != school_ids_.size()) throw ConfigError("permutation has wrong length");
  const auto t = static_cast<std::size_t>(n_years());
  const auto r = static_cast<std::size_t>(n_covariates_);
  std::vector<std::string> ids, states;
  std::vector<std::int64_t> counts;
  std::vector<double> cov;
  for (int src : order) {
    const auto s = static_cast<std::size_t>(src);
    ids.push_back(school_ids_.at(s));
    states.push_back(school_states_.at(s));
    counts.insert(counts.end(), counts_.begin() + static_cast<std::ptrdiff_t>(s * t),
                  counts_.begin() + static_cast<std::ptrdiff_t>((s + 1) * t));
    cov.insert(cov.end(), covariates_.begin() + static_cast<std::ptrdiff_t>(s * t * r),
               covariates_.begin() + static_cast<std::ptrdiff_t>((s + 1) * t * r));
  }
  return PanelSeries(std::move(ids), std::move(states), years_, std::move(counts),
                     std::move(cov), n_covariates_);
}

void SplitPlan::validate(int n_years) const {
  if (train_end_index < 1 || train_end_index >= n_years)
    throw ConfigError("split plan requires 1 <= train_end_index < T");
  if (horizon < 1 || train_end_index + horizon > n_years)
    throw ConfigError("split plan horizon runs past the end of the data");
}

std::vector<int> SplitPlan::target_indices() const {
  std::vector<int> out;
  for (int h = 0; h < horizon; ++h) out.push_back(train_end_index + h);
  return out;
}

namespace {

template <typename T>
T parse_number(const std::string& field, const char* what, std::size_t line) {
  T value{};
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw DataError("line " + std::to_string(line) + ": cannot parse " + what + " '" + field +
                    "'");
  }
  return value;
}

}  // namespace

PanelSeries parse_panel_csv(std::string_view text) {
  auto rows = detail::parse_csv(text);
  if (rows.empty()) throw DataError("panel CSV is empty");
  const auto& header = rows.front();
  const std::vector<std::string> required = {"school_id", "state", "year", "count"};
  if (header.size() < required.size() ||
      !std::equal(required.begin(), required.end(), header.begin())) {
    throw DataError("panel CSV header must start with school_id,state,year,count");
  }
  const std::size_t r = header.size() - required.size();

  struct SchoolRows {
    std::string state;
    std::map<int, std::pair<std::int64_t, std::vector<double>>> by_year;
  };
  std::vector<std::string> order;
  std::unordered_map<std::string, SchoolRows> schools;

  for (std::size_t k = 1; k < rows.size(); ++k) {
    const auto& row = rows[k];
    const std::size_t line = k + 1;
    if (row.size() == 1 && row[0].empty()) continue;
    if (row.size() != header.size()) {
      throw DataError("line " + std::to_string(line) + ": expected " +
                      std::to_string(header.size()) + " fields, found " +
                      std::to_string(row.size()));
    }
    const std::string& id = row[0];
    if (id.empty()) throw DataError("line " + std::to_string(line) + ": empty school_id");
    const int year = parse_number<int>(row[2], "year", line);
    const auto count = parse_number<std::int64_t>(row[3], "count", line);
    if (count < 0) {
      throw DataError("negative count at (" + id + ", " + std::to_string(year) + ")");
    }
    std::vector<double> x(r);
    for (std::size_t j = 0; j < r; ++j) x[j] = parse_number<double>(row[4 + j], "covariate", line);

    auto [it, inserted] = schools.try_emplace(id);
    if (inserted) {
      order.push_back(id);
      it->second.state = row[1];
    } else if (it->second.state != row[1]) {
      throw DataError("school '" + id + "' is assigned to more than one state");
    }
    if (!it->second.by_year.emplace(year, std::make_pair(count, std::move(x))).second) {
      throw DataError("duplicate (school, year) at (" + id + ", " + std::to_string(year) + ")");
    }
  }
  if (order.empty()) throw DataError("panel CSV has no data rows");

  int first_year = std::numeric_limits<int>::max();
  int last_year = std::numeric_limits<int>::min();
  for (const auto& [id, s] : schools) {
    first_year = std::min(first_year, s.by_year.begin()->first);
    last_year = std::max(last_year, s.by_year.rbegin()->first);
  }
  const int t = last_year - first_year + 1;
  std::vector<std::string> ragged;
  for (const auto& id : order) {
    const auto& s = schools.at(id);
    if (static_cast<int>(s.by_year.size()) != t || s.by_year.begin()->first != first_year) {
      ragged.push_back(id);
    }
  }
  if (!ragged.empty()) {
    std::string msg = "ragged year coverage (expected every year " + std::to_string(first_year) +
                      "-" + std::to_string(last_year) + ") for schools:";
    for (const auto& id : ragged) msg += " " + id;
    throw DataError(msg);
  }

  std::vector<std::string> states;
  std::vector<std::int64_t> counts;
  std::vector<double> cov;
  counts.reserve(order.size() * static_cast<std::size_t>(t));
  for (const auto& id : order) {
    const auto& s = schools.at(id);
    states.push_back(s.state);
    for (const auto& [year, entry] : s.by_year) {
      counts.push_back(entry.first);
      cov.insert(cov.end(), entry.second.begin(), entry.second.end());
    }
  }
  std::vector<int> years(static_cast<std::size_t>(t));
  for (int k = 0; k < t; ++k) years[static_cast<std::size_t>(k)] = first_year + k;
  return PanelSeries(order, std::move(states), std::move(years), std::move(counts),
                     std::move(cov), static_cast<int>(r));
}

PanelSeries load_panel(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open panel file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_panel_csv(buffer.str());
}

std::string format_panel_csv(const PanelSeries& panel) {
  std::string out = "school_id,state,year,count";
  for (int j = 0; j < panel.n_covariates(); ++j) out += ",x" + std::to_string(j + 1);
  out += '\n';
  for (int i = 0; i < panel.n_schools(); ++i) {
    const std::string id = detail::csv_escape(panel.school_ids()[static_cast<std::size_t>(i)]);
    const std::string state = detail::csv_escape(panel.state_label_of(i));
    for (int t = 0; t < panel.n_years(); ++t) {
      out += id;
      out += ',';
      out += state;
      out += ',';
      out += std::to_string(panel.years()[static_cast<std::size_t>(t)]);
      out += ',';
      out += std::to_string(panel.count(i, t));
      for (double x : panel.covariate(i, t)) {
        out += ',';
        out += detail::format_double(x);
      }
      out += '\n';
    }
  }
  return out;
}

void save_panel(const PanelSeries& panel, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write panel file " + path.string());
  out << format_panel_csv(panel);
}

PanelSeries default_covariates(const PanelSeries& panel) {
  const int t = panel.n_years();
  if (t < 2) throw DataError("default covariates need at least two years (trend undefined)");
  const double first = panel.years().front();
  const double span = panel.years().back() - first;
  std::vector<double> cov;
  cov.reserve(static_cast<std::size_t>(panel.n_schools() * t * 2));
  for (int i = 0; i < panel.n_schools(); ++i) {
    for (int k = 0; k < t; ++k) {
      cov.push_back(1.0);
      cov.push_back((panel.years()[static_cast<std::size_t>(k)] - first) / span);
    }
  }
  return panel.with_covariates(std::move(cov), 2);
}

OverdispersionSummary overdispersion_summary(const PanelSeries& panel) {
  const int t = panel.n_years();
  if (t < 2) throw DataError("overdispersion summary needs T >= 2");
  double sum_means = 0.0;
  double sum_vars = 0.0;
  for (int i = 0; i < panel.n_schools(); ++i) {
    const auto y = panel.series(i);
    double mean = 0.0;
    for (auto v : y) mean += static_cast<double>(v);
    mean /= t;
    double ss = 0.0;
    for (auto v : y) ss += (static_cast<double>(v) - mean) * (static_cast<double>(v) - mean);
    sum_means += mean;
    sum_vars += ss / (t - 1);
  }
  return {sum_means / panel.n_schools(), sum_vars / panel.n_schools()};
}

}  // namespace cesn
