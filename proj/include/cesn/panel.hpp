#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace cesn {

/// Rectangular panel of annual counts for N schools over T consecutive years,
/// with a geographic-state label per school and an N x T x r covariate array.
///
/// Immutable after construction; every constructor path validates the
/// invariants (non-negative counts, consecutive years, one state per school).
class PanelSeries {
 public:
  PanelSeries(std::vector<std::string> school_ids, std::vector<std::string> school_states,
              std::vector<int> years, std::vector<std::int64_t> counts,
              std::vector<double> covariates = {}, int n_covariates = 0);

  int n_schools() const noexcept { return static_cast<int>(school_ids_.size()); }
  int n_years() const noexcept { return static_cast<int>(years_.size()); }
  int n_states() const noexcept { return static_cast<int>(state_labels_.size()); }
  int n_covariates() const noexcept { return n_covariates_; }

  const std::vector<std::string>& school_ids() const noexcept { return school_ids_; }
  const std::vector<std::string>& state_labels() const noexcept { return state_labels_; }
  const std::vector<int>& years() const noexcept { return years_; }

  /// State index in [0, n_states) of school i.
  int state_of(int i) const { return state_of_.at(static_cast<std::size_t>(i)); }
  const std::string& state_label_of(int i) const { return state_labels_.at(state_of(i)); }

  std::int64_t count(int i, int t) const { return counts_[index(i, t)]; }
  std::span<const std::int64_t> series(int i) const {
    return {counts_.data() + index(i, 0), static_cast<std::size_t>(n_years())};
  }
  /// Covariate vector x_{i,t} (length n_covariates()).
  std::span<const double> covariate(int i, int t) const {
    return {covariates_.data() + index(i, t) * static_cast<std::size_t>(n_covariates_),
            static_cast<std::size_t>(n_covariates_)};
  }
  const std::vector<double>& covariates() const noexcept { return covariates_; }

  /// Panel restricted to the first n_years years (covariates kept as-is).
  PanelSeries truncated(int n_years) const;
  /// Copy with one count replaced.
  PanelSeries with_count(int i, int t, std::int64_t value) const;
  /// Copy with a new covariate array (N x T x r, row-major by school then year).
  PanelSeries with_covariates(std::vector<double> covariates, int n_covariates) const;
  /// Copy with schools reordered: result school k is this panel's school order[k].
  PanelSeries permuted(std::span<const int> order) const;

 private:
  std::size_t index(int i, int t) const {
    return static_cast<std::size_t>(i) * static_cast<std::size_t>(n_years()) +
           static_cast<std::size_t>(t);
  }

  std::vector<std::string> school_ids_;
  std::vector<std::string> school_states_;
  std::vector<std::string> state_labels_;
  std::vector<int> state_of_;
  std::vector<int> years_;
  std::vector<std::int64_t> counts_;
  std::vector<double> covariates_;
  int n_covariates_ = 0;
};

/// Rolling-origin plan: the first forecast target is year index train_end_index
/// (so training initially covers [0, train_end_index)), followed by horizon-1
/// further one-step targets.
struct SplitPlan {
  int train_end_index = 0;
  int horizon = 1;

  void validate(int n_years) const;
  std::vector<int> target_indices() const;
};

/// Reads a long-format panel CSV with header `school_id,state,year,count[,x1,...]`.
PanelSeries load_panel(const std::filesystem::path& path);
PanelSeries parse_panel_csv(std::string_view text);
void save_panel(const PanelSeries& panel, const std::filesystem::path& path);
std::string format_panel_csv(const PanelSeries& panel);

/// Sets x_{i,t} = (1, (year_t - year_1) / (year_T - year_1)).
PanelSeries default_covariates(const PanelSeries& panel);

struct OverdispersionSummary {
  double mean_of_means = 0.0;
  double mean_of_variances = 0.0;
};

/// Cross-school averages of per-school sample means and (T-1)-denominator variances.
OverdispersionSummary overdispersion_summary(const PanelSeries& panel);

}  // namespace cesn
