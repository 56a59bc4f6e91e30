#include "cesn/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "cesn/baselines.hpp"
#include "cesn/error.hpp"
#include "cesn/matrix_io.hpp"
#include "cesn/parallel.hpp"
#include "cesn/serialize.hpp"

namespace cesn {

bool is_model_name(std::string_view name) {
  return std::find(kModelNames.begin(), kModelNames.end(), name) != kModelNames.end();
}

bool uses_reservoir(std::string_view name) { return is_model_name(name) && name != "intercept" && name != "ingarch11"; }

void ModelConfig::validate() const {
  if (!is_model_name(name)) throw ConfigError("unknown model '" + name + "'");
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("interval level must lie in (0, 1)");
  if (n_samples < 1) throw ConfigError("n_samples must be positive");
  if (uses_reservoir(name)) reservoir.validate();
  if (name == "single-poisson-esn" || name == "ensemble-poisson-esn") {
    if (!(tau >= 0.0)) throw ConfigError("tau must be non-negative");
    for (double t : tau_grid)
      if (!(t >= 0.0)) throw ConfigError("tau grid values must be non-negative");
    if (!tau_grid.empty() && cv_holdout < 1) throw ConfigError("cv_holdout must be positive");
  }
  if (name == "ensemble-poisson-esn" && (ensemble_size < 2 || ensemble_draws < 1))
    throw ConfigError("ensemble needs at least two members and one draw per member");
  if (name == "hier-poisson-esn") hier_poisson.validate();
  if (name == "hier-nb-esn") nb.validate();
}

ReservoirSpec resolved_reservoir(const ModelConfig& config, std::uint64_t master_seed) {
  ReservoirSpec spec = config.reservoir;
  spec.seed = config.reservoir_seed ? *config.reservoir_seed : derive_seed(master_seed, "reservoir", 0);
  return spec;
}

PanelSeries training_panel(const PanelSeries& panel, int target) {
  if (target < 1 || target > panel.n_years()) throw ConfigError("forecast target outside the panel");
  return panel.truncated(target);
}

std::vector<double> target_covariates(const PanelSeries& panel, int target) {
  if (target < 0 || target >= panel.n_years()) throw ConfigError("forecast target outside the panel");
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(panel.n_schools()) * static_cast<std::size_t>(panel.n_covariates()));
  for (int i = 0; i < panel.n_schools(); ++i) {
    const auto x = panel.covariate(i, target);
    out.insert(out.end(), x.begin(), x.end());
  }
  return out;
}

std::uint64_t fit_seed_for(std::uint64_t master, std::string_view model, int target) {
  return derive_seed(master, "fit/" + std::string(model), static_cast<std::uint64_t>(target));
}

std::uint64_t forecast_seed_for(std::uint64_t master, std::string_view model, int target) {
  return derive_seed(master, "forecast/" + std::string(model), static_cast<std::uint64_t>(target));
}

namespace {

constexpr double kMaxPredictiveMean = 1e15;

double checked_mean(double m) {
  if (!std::isfinite(m) || m > kMaxPredictiveMean) throw NumericalError("predictive mean overflowed");
  return m;
}

std::span<const double> school_covariates(std::span<const double> all, int i, int r) {
  if (all.size() < static_cast<std::size_t>(i + 1) * static_cast<std::size_t>(r))
    throw ConfigError("next-year covariates are too short");
  return all.subspan(static_cast<std::size_t>(i) * static_cast<std::size_t>(r), static_cast<std::size_t>(r));
}

int next_year(const PanelSeries& train) { return train.years().back() + 1; }

Forecast from_samples(int school, int year, std::vector<double> samples, double level) {
  Forecast f;
  f.school = school;
  f.year = year;
  double s = 0.0;
  for (double v : samples) s += v;
  f.point = s / static_cast<double>(samples.size());
  f.interval = percentile_interval(samples, level);
  f.samples = std::move(samples);
  return f;
}

// ---- persistence helpers ------------------------------------------------

void write_json(const std::filesystem::path& path, const Json& j) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

Json read_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("missing fit artifact " + path.string() + " (run the fit stage first)");
  try {
    return Json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt fit artifact " + path.string() + ": " + e.what());
  }
}

Json fit_header(const std::string& name, int n_schools) { return Json{{"model", name}, {"n_schools", n_schools}}; }

void write_reservoir(const std::filesystem::path& dir, const ReservoirWeights& w) {
  write_json(dir / "reservoir.json", Json{{"spec", w.spec}, {"lambda_W", w.lambda_W}});
  write_matrix(dir / "W.bin", w.W);
  write_matrix(dir / "U_Y.bin", w.U_Y);
  write_matrix(dir / "U_X.bin", w.U_X);
}

ReservoirWeights read_reservoir(const std::filesystem::path& dir) {
  const Json j = read_json(dir / "reservoir.json");
  ReservoirWeights w;
  w.spec = j.at("spec").get<ReservoirSpec>();
  w.lambda_W = j.at("lambda_W").get<double>();
  w.W = read_matrix(dir / "W.bin");
  w.U_Y = read_matrix(dir / "U_Y.bin");
  w.U_X = read_matrix(dir / "U_X.bin");
  return w;
}

std::vector<std::string> eta_tilde_columns(int n_h, int n_states) {
  std::vector<std::string> cols;
  for (int s = 0; s < n_states; ++s)
    for (int j = 0; j < n_h; ++j) cols.push_back("eta_" + std::to_string(s) + "_" + std::to_string(j));
  for (int s = 0; s < n_states; ++s) cols.push_back("delta_" + std::to_string(s));
  return cols;
}

// ---- intercept ----------------------------------------------------------

class InterceptModel final : public FittedModel {
 public:
  explicit InterceptModel(std::vector<double> means) : means_(std::move(means)) {}

  static std::unique_ptr<FittedModel> fit(const PanelSeries& train) {
    std::vector<double> means;
    for (int i = 0; i < train.n_schools(); ++i) means.push_back(fit_intercept(train.series(i)));
    return std::make_unique<InterceptModel>(std::move(means));
  }

  static std::unique_ptr<FittedModel> load(const std::filesystem::path& dir) {
    return std::make_unique<InterceptModel>(read_json(dir / "fit.json").at("means").get<std::vector<double>>());
  }

  std::string name() const override { return "intercept"; }

  std::vector<Forecast> forecast(const PanelSeries& train, std::span<const double>, Rng&) const override {
    std::vector<Forecast> out;
    for (int i = 0; i < train.n_schools(); ++i) {
      Forecast f;
      f.school = i;
      f.year = next_year(train);
      f.point = means_.at(static_cast<std::size_t>(i));
      out.push_back(std::move(f));
    }
    return out;
  }

  ConditionalMoments conditional_moments(const PanelSeries& train) const override {
    ConditionalMoments m;
    m.mean.resize(train.n_schools(), train.n_years());
    for (int i = 0; i < train.n_schools(); ++i) m.mean.row(i).setConstant(means_.at(static_cast<std::size_t>(i)));
    m.variance = m.mean;
    return m;
  }

  void save(const std::filesystem::path& dir) const override {
    std::filesystem::create_directories(dir);
    Json j = fit_header(name(), static_cast<int>(means_.size()));
    j["means"] = means_;
    write_json(dir / "fit.json", j);
  }

 private:
  std::vector<double> means_;
};

// ---- INGARCH(1,1) -------------------------------------------------------

class IngarchModel final : public FittedModel {
 public:
  IngarchModel(std::vector<IngarchFit> fits, double level) : fits_(std::move(fits)), level_(level) {}

  static std::unique_ptr<FittedModel> fit(const PanelSeries& train, double level, int workers) {
    std::vector<IngarchFit> fits(static_cast<std::size_t>(train.n_schools()));
    parallel_for(train.n_schools(), workers,
                 [&](int i) { fits[static_cast<std::size_t>(i)] = fit_ingarch11(train.series(i)); });
    return std::make_unique<IngarchModel>(std::move(fits), level);
  }

  static std::unique_ptr<FittedModel> load(const std::filesystem::path& dir, double level) {
    const Json j = read_json(dir / "fit.json");
    std::vector<IngarchFit> fits;
    for (const auto& s : j.at("schools")) {
      IngarchFit f;
      f.beta0 = s.at("beta0");
      f.alpha1 = s.at("alpha1");
      f.beta1 = s.at("beta1");
      f.loglik = s.at("loglik");
      f.converged = s.at("converged");
      f.intercept_fallback = s.at("intercept_fallback");
      f.at_boundary = s.at("at_boundary");
      f.lambda_last = s.at("lambda_last");
      f.y_last = s.at("y_last");
      fits.push_back(f);
    }
    return std::make_unique<IngarchModel>(std::move(fits), level);
  }

  std::string name() const override { return "ingarch11"; }

  std::vector<Forecast> forecast(const PanelSeries& train, std::span<const double>, Rng&) const override {
    std::vector<Forecast> out;
    for (int i = 0; i < train.n_schools(); ++i) {
      const IngarchFit& f = fits_.at(static_cast<std::size_t>(i));
      Forecast fc;
      fc.school = i;
      fc.year = next_year(train);
      fc.point = f.forecast();
      const auto [l, u] = ingarch_interval(fc.point, level_);
      fc.interval = std::make_pair(static_cast<double>(l), static_cast<double>(u));
      out.push_back(std::move(fc));
    }
    return out;
  }

  ConditionalMoments conditional_moments(const PanelSeries& train) const override {
    ConditionalMoments m;
    m.mean.resize(train.n_schools(), train.n_years());
    for (int i = 0; i < train.n_schools(); ++i) {
      const IngarchFit& f = fits_.at(static_cast<std::size_t>(i));
      const auto y = train.series(i);
      double lambda = fit_intercept(y);
      for (int t = 0; t < train.n_years(); ++t) {
        if (t > 0) lambda = f.beta0 + f.alpha1 * lambda + f.beta1 * static_cast<double>(y[static_cast<std::size_t>(t - 1)]);
        m.mean(i, t) = lambda;
      }
    }
    m.variance = m.mean;
    return m;
  }

  void save(const std::filesystem::path& dir) const override {
    std::filesystem::create_directories(dir);
    Json j = fit_header(name(), static_cast<int>(fits_.size()));
    Json schools = Json::array();
    for (const auto& f : fits_)
      schools.push_back(Json{{"beta0", f.beta0},
                             {"alpha1", f.alpha1},
                             {"beta1", f.beta1},
                             {"loglik", f.loglik},
                             {"converged", f.converged},
                             {"intercept_fallback", f.intercept_fallback},
                             {"at_boundary", f.at_boundary},
                             {"lambda_last", f.lambda_last},
                             {"y_last", f.y_last}});
    j["schools"] = std::move(schools);
    write_json(dir / "fit.json", j);
  }

 private:
  std::vector<IngarchFit> fits_;
  double level_;
};

// ---- reservoir-based models --------------------------------------------

/// Hidden states of the training panel and the forecast-origin states.
struct OriginStates {
  HiddenStateMatrix states;
  std::vector<Eigen::VectorXd> next;
};

OriginStates origin_states(const PanelSeries& train, std::span<const double> next_cov, const ReservoirWeights& w) {
  OriginStates o{run_states(train, w, w.spec.nu), {}};
  for (int i = 0; i < train.n_schools(); ++i)
    o.next.push_back(next_state(train, o.states, i, school_covariates(next_cov, i, train.n_covariates()), w, w.spec.nu));
  return o;
}

Json penalized_meta(const PenalizedFit& f) {
  return Json{{"tau", f.tau},
              {"converged", f.converged},
              {"iterations", f.iterations},
              {"objective", f.objective_trace.empty() ? 0.0 : f.objective_trace.back()}};
}

void save_single(const std::filesystem::path& dir, const SingleEsnFit& fit) {
  std::filesystem::create_directories(dir);
  write_reservoir(dir, fit.weights);
  Json schools = Json::array();
  for (const auto& f : fit.schools) {
    Json m = penalized_meta(f);
    m["eta"] = std::vector<double>(f.eta.data(), f.eta.data() + f.eta.size());
    schools.push_back(std::move(m));
  }
  write_json(dir / "schools.json", schools);
}

SingleEsnFit load_single(const std::filesystem::path& dir) {
  SingleEsnFit fit;
  fit.weights = read_reservoir(dir);
  for (const auto& m : read_json(dir / "schools.json")) {
    PenalizedFit f;
    const auto eta = m.at("eta").get<std::vector<double>>();
    if (static_cast<int>(eta.size()) != fit.weights.n_h()) throw DataError("coefficient length mismatch in " + dir.string());
    f.eta = Eigen::Map<const Eigen::VectorXd>(eta.data(), static_cast<Eigen::Index>(eta.size()));
    f.tau = m.at("tau");
    f.converged = m.at("converged");
    f.iterations = m.at("iterations");
    f.objective_trace.push_back(m.at("objective").get<double>());
    fit.schools.push_back(std::move(f));
  }
  return fit;
}

class SingleEsnModel final : public FittedModel {
 public:
  explicit SingleEsnModel(SingleEsnFit fit) : fit_(std::move(fit)) {}

  std::string name() const override { return "single-poisson-esn"; }

  std::vector<Forecast> forecast(const PanelSeries& train, std::span<const double> next_cov, Rng&) const override {
    const OriginStates o = origin_states(train, next_cov, fit_.weights);
    std::vector<Forecast> out;
    for (int i = 0; i < train.n_schools(); ++i) {
      Forecast f;
      f.school = i;
      f.year = next_year(train);
      f.point = checked_mean(fit_.mean(i, o.next[static_cast<std::size_t>(i)]));
      out.push_back(std::move(f));
    }
    return out;
  }

  ConditionalMoments conditional_moments(const PanelSeries& train) const override {
    const HiddenStateMatrix states = run_states(train, fit_.weights, fit_.weights.spec.nu);
    ConditionalMoments m;
    m.mean.resize(train.n_schools(), train.n_years());
    for (int i = 0; i < train.n_schools(); ++i)
      m.mean.row(i) = (states.school_design(i) * fit_.schools.at(static_cast<std::size_t>(i)).eta).array().exp().transpose();
    m.variance = m.mean;
    return m;
  }

  void save(const std::filesystem::path& dir) const override {
    save_single(dir, fit_);
    Json j = fit_header(name(), static_cast<int>(fit_.schools.size()));
    write_json(dir / "fit.json", j);
  }

 private:
  SingleEsnFit fit_;
};

class EnsembleEsnModel final : public FittedModel {
 public:
  EnsembleEsnModel(EnsembleFit fit, int draws, double level) : fit_(std::move(fit)), draws_(draws), level_(level) {}

  std::string name() const override { return "ensemble-poisson-esn"; }

  std::vector<Forecast> forecast(const PanelSeries& train, std::span<const double> next_cov, Rng& rng) const override {
    const int N = train.n_schools();
    // member means for each school
    std::vector<std::vector<double>> means(static_cast<std::size_t>(N));
    for (const auto& member : fit_.members) {
      const OriginStates o = origin_states(train, next_cov, member.weights);
      for (int i = 0; i < N; ++i)
        means[static_cast<std::size_t>(i)].push_back(checked_mean(member.mean(i, o.next[static_cast<std::size_t>(i)])));
    }
    std::vector<Forecast> out;
    for (int i = 0; i < N; ++i) {
      const auto& mi = means[static_cast<std::size_t>(i)];
      std::vector<double> pooled;
      pooled.reserve(mi.size() * static_cast<std::size_t>(draws_));
      for (double m : mi)
        for (int k = 0; k < draws_; ++k) pooled.push_back(static_cast<double>(sample_poisson(m, rng)));
      Forecast f = from_samples(i, next_year(train), std::move(pooled), level_);
      double s = 0.0;
      for (double m : mi) s += m;
      f.point = s / static_cast<double>(mi.size());
      out.push_back(std::move(f));
    }
    return out;
  }

  ConditionalMoments conditional_moments(const PanelSeries& train) const override {
    ConditionalMoments m;
    m.mean = Eigen::MatrixXd::Zero(train.n_schools(), train.n_years());
    for (const auto& member : fit_.members) {
      const HiddenStateMatrix states = run_states(train, member.weights, member.weights.spec.nu);
      for (int i = 0; i < train.n_schools(); ++i)
        m.mean.row(i) +=
            (states.school_design(i) * member.schools.at(static_cast<std::size_t>(i)).eta).array().exp().matrix().transpose();
    }
    m.mean /= static_cast<double>(fit_.size());
    m.variance = m.mean;
    return m;
  }

  void save(const std::filesystem::path& dir) const override {
    std::filesystem::create_directories(dir);
    for (int k = 0; k < fit_.size(); ++k) save_single(member_dir(dir, k), fit_.members[static_cast<std::size_t>(k)]);
    Json j = fit_header(name(), fit_.members.empty() ? 0 : static_cast<int>(fit_.members[0].schools.size()));
    j["members"] = fit_.size();
    j["draws_per_member"] = draws_;
    write_json(dir / "fit.json", j);
  }

  static std::filesystem::path member_dir(const std::filesystem::path& dir, int k) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "m%03d", k);
    return dir / "members" / buf;
  }

 private:
  EnsembleFit fit_;
  int draws_;
  double level_;
};

class BayesPoissonModel final : public FittedModel {
 public:
  BayesPoissonModel(BayesPoissonFit fit, int n_samples, double level)
      : fit_(std::move(fit)), n_samples_(n_samples), level_(level) {}

  std::string name() const override { return "bayes-poisson-esn"; }

  std::vector<Forecast> forecast(const PanelSeries& train, std::span<const double> next_cov, Rng& rng) const override {
    const OriginStates o = origin_states(train, next_cov, fit_.weights);
    std::vector<Forecast> out;
    for (int i = 0; i < train.n_schools(); ++i) {
      const Eigen::MatrixXd& draws = fit_.schools.at(static_cast<std::size_t>(i)).draws;
      const Eigen::VectorXd lin = draws * o.next[static_cast<std::size_t>(i)];
      std::vector<double> samples;
      samples.reserve(static_cast<std::size_t>(n_samples_));
      for (int k = 0; k < n_samples_; ++k) {
        const auto d = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(lin.size()));
        samples.push_back(static_cast<double>(sample_poisson(checked_mean(std::exp(lin(d))), rng)));
      }
      out.push_back(from_samples(i, next_year(train), std::move(samples), level_));
    }
    return out;
  }

  ConditionalMoments conditional_moments(const PanelSeries& train) const override {
    const HiddenStateMatrix states = run_states(train, fit_.weights, fit_.weights.spec.nu);
    ConditionalMoments m;
    m.mean.resize(train.n_schools(), train.n_years());
    for (int i = 0; i < train.n_schools(); ++i) {
      const Eigen::VectorXd eta = fit_.schools.at(static_cast<std::size_t>(i)).draws.colwise().mean().transpose();
      m.mean.row(i) = (states.school_design(i) * eta).array().exp().transpose();
    }
    m.variance = m.mean;
    return m;
  }

  void save(const std::filesystem::path& dir) const override {
    std::filesystem::create_directories(dir);
    write_reservoir(dir, fit_.weights);
    const Eigen::Index per = fit_.schools.empty() ? 0 : fit_.schools[0].draws.rows();
    Eigen::MatrixXd all(per * static_cast<Eigen::Index>(fit_.schools.size()), fit_.weights.n_h());
    Json acc = Json::array();
    for (std::size_t i = 0; i < fit_.schools.size(); ++i) {
      all.middleRows(static_cast<Eigen::Index>(i) * per, per) = fit_.schools[i].draws;
      acc.push_back(fit_.schools[i].acceptance_rate);
    }
    write_matrix(dir / "draws.bin", all);
    Json j = fit_header(name(), static_cast<int>(fit_.schools.size()));
    j["draws_per_school"] = per;
    j["sigma_eta"] = fit_.schools.empty() ? 0.0 : fit_.schools[0].sigma_eta;
    j["acceptance"] = acc;
    write_json(dir / "fit.json", j);
  }

  static std::unique_ptr<FittedModel> load(const std::filesystem::path& dir, int n_samples, double level) {
    const Json j = read_json(dir / "fit.json");
    BayesPoissonFit fit;
    fit.weights = read_reservoir(dir);
    const Eigen::MatrixXd all = read_matrix(dir / "draws.bin");
    const int N = j.at("n_schools");
    const Eigen::Index per = j.at("draws_per_school");
    if (all.rows() != per * N) throw DataError("inconsistent posterior draws in " + dir.string());
    for (int i = 0; i < N; ++i) {
      PoissonPosterior p;
      p.draws = all.middleRows(static_cast<Eigen::Index>(i) * per, per);
      p.sigma_eta = j.at("sigma_eta");
      p.acceptance_rate = j.at("acceptance").at(static_cast<std::size_t>(i));
      fit.schools.push_back(std::move(p));
    }
    return std::make_unique<BayesPoissonModel>(std::move(fit), n_samples, level);
  }

 private:
  BayesPoissonFit fit_;
  int n_samples_;
  double level_;
};

/// Linear predictor h' eta_s + delta_s from a stacked coefficient row.
double stacked_predictor(const Eigen::Ref<const Eigen::RowVectorXd>& eta_tilde, const Eigen::VectorXd& h, int s,
                         int n_h, int n_states) {
  return eta_tilde.segment(static_cast<Eigen::Index>(s) * n_h, n_h).dot(h.transpose()) +
         eta_tilde(static_cast<Eigen::Index>(n_h) * n_states + s);
}

class HierPoissonModel final : public FittedModel {
 public:
  HierPoissonModel(ReservoirWeights w, HierPoissonChain chain, int n_samples, double level)
      : weights_(std::move(w)), chain_(std::move(chain)), n_samples_(n_samples), level_(level) {}

  std::string name() const override { return "hier-poisson-esn"; }

  std::vector<Forecast> forecast(const PanelSeries& train, std::span<const double> next_cov, Rng& rng) const override {
    const OriginStates o = origin_states(train, next_cov, weights_);
    std::vector<Forecast> out;
    const auto n_draws = static_cast<std::uint64_t>(chain_.eta_tilde_draws.rows());
    for (int i = 0; i < train.n_schools(); ++i) {
      std::vector<double> samples;
      samples.reserve(static_cast<std::size_t>(n_samples_));
      for (int k = 0; k < n_samples_; ++k) {
        const auto d = static_cast<Eigen::Index>(rng() % n_draws);
        const double theta = stacked_predictor(chain_.eta_tilde_draws.row(d), o.next[static_cast<std::size_t>(i)],
                                               train.state_of(i), chain_.n_h, chain_.n_states);
        samples.push_back(static_cast<double>(sample_poisson(checked_mean(std::exp(theta)), rng)));
      }
      out.push_back(from_samples(i, next_year(train), std::move(samples), level_));
    }
    return out;
  }

  ConditionalMoments conditional_moments(const PanelSeries& train) const override {
    const HiddenStateMatrix states = run_states(train, weights_, weights_.spec.nu);
    const MergedDesign design(states, train);
    ConditionalMoments m;
    const Eigen::VectorXd lin = design.predictor(chain_.posterior_mean());
    m.mean = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
                 lin.data(), train.n_schools(), train.n_years())
                 .array()
                 .exp();
    m.variance = m.mean;
    return m;
  }

  void save(const std::filesystem::path& dir) const override {
    std::filesystem::create_directories(dir);
    write_reservoir(dir, weights_);
    write_matrix(dir / "eta_tilde.bin", chain_.eta_tilde_draws, eta_tilde_columns(chain_.n_h, chain_.n_states));
    Eigen::MatrixXd sig(chain_.sigma_eta_chain.size(), 2);
    sig << chain_.sigma_eta_chain, chain_.sigma_delta_chain;
    write_matrix(dir / "sigma.bin", sig, {"sigma_eta", "sigma_delta"});
    Json j{{"model", name()}};
    j["n_h"] = chain_.n_h;
    j["n_states"] = chain_.n_states;
    j["n_iter"] = chain_.n_iter;
    j["burn_in"] = chain_.burn_in;
    j["thin"] = chain_.thin;
    j["accept_sigma_eta"] = chain_.accept_sigma_eta;
    j["accept_sigma_delta"] = chain_.accept_sigma_delta;
    j["accept_eta"] = chain_.accept_eta;
    write_json(dir / "fit.json", j);
  }

  static std::unique_ptr<FittedModel> load(const std::filesystem::path& dir, int n_samples, double level) {
    const Json j = read_json(dir / "fit.json");
    HierPoissonChain c;
    c.n_h = j.at("n_h");
    c.n_states = j.at("n_states");
    c.n_iter = j.at("n_iter");
    c.burn_in = j.at("burn_in");
    c.thin = j.at("thin");
    c.accept_sigma_eta = j.at("accept_sigma_eta");
    c.accept_sigma_delta = j.at("accept_sigma_delta");
    c.accept_eta = j.at("accept_eta");
    c.eta_tilde_draws = read_matrix(dir / "eta_tilde.bin");
    const Eigen::MatrixXd sig = read_matrix(dir / "sigma.bin");
    c.sigma_eta_chain = sig.col(0);
    c.sigma_delta_chain = sig.col(1);
    return std::make_unique<HierPoissonModel>(read_reservoir(dir), std::move(c), n_samples, level);
  }

 private:
  ReservoirWeights weights_;
  HierPoissonChain chain_;
  int n_samples_;
  double level_;
};

class HierNbModel final : public FittedModel {
 public:
  HierNbModel(ReservoirWeights w, NBChain chain, int n_samples, double level)
      : weights_(std::move(w)), chain_(std::move(chain)), n_samples_(n_samples), level_(level) {}

  std::string name() const override { return "hier-nb-esn"; }

  std::vector<Forecast> forecast(const PanelSeries& train, std::span<const double> next_cov, Rng& rng) const override {
    if (chain_.r_draws.cols() != train.n_schools()) throw DataError("fit and panel disagree on the number of schools");
    const OriginStates o = origin_states(train, next_cov, weights_);
    std::vector<Forecast> out;
    const auto n_draws = static_cast<std::uint64_t>(chain_.eta_tilde_draws.rows());
    for (int i = 0; i < train.n_schools(); ++i) {
      std::vector<double> samples;
      samples.reserve(static_cast<std::size_t>(n_samples_));
      for (int k = 0; k < n_samples_; ++k) {
        const auto d = static_cast<Eigen::Index>(rng() % n_draws);
        const double psi = stacked_predictor(chain_.eta_tilde_draws.row(d), o.next[static_cast<std::size_t>(i)],
                                             train.state_of(i), chain_.n_h, chain_.n_states);
        const double r = chain_.r_draws(d, i);
        checked_mean(r * std::exp(psi));
        samples.push_back(static_cast<double>(sample_negative_binomial(r, psi, rng)));
      }
      out.push_back(from_samples(i, next_year(train), std::move(samples), level_));
    }
    return out;
  }

  ConditionalMoments conditional_moments(const PanelSeries& train) const override {
    const HiddenStateMatrix states = run_states(train, weights_, weights_.spec.nu);
    const MergedDesign design(states, train);
    const Eigen::VectorXd lin = design.predictor(chain_.posterior_mean());
    const Eigen::VectorXd r = chain_.r_draws.colwise().mean().transpose();
    ConditionalMoments m;
    m.mean.resize(train.n_schools(), train.n_years());
    m.variance.resize(train.n_schools(), train.n_years());
    for (int i = 0; i < train.n_schools(); ++i)
      for (int t = 0; t < train.n_years(); ++t) {
        const double e = std::exp(lin(static_cast<Eigen::Index>(i) * train.n_years() + t));
        m.mean(i, t) = r(i) * e;
        m.variance(i, t) = r(i) * e * (1.0 + e);
      }
    return m;
  }

  void save(const std::filesystem::path& dir) const override {
    std::filesystem::create_directories(dir);
    write_reservoir(dir, weights_);
    write_matrix(dir / "eta_tilde.bin", chain_.eta_tilde_draws, eta_tilde_columns(chain_.n_h, chain_.n_states));
    Eigen::MatrixXd sig(chain_.sigma_eta2_chain.size(), 2);
    sig << chain_.sigma_eta2_chain, chain_.sigma_delta2_chain;
    write_matrix(dir / "sigma2.bin", sig, {"sigma_eta2", "sigma_delta2"});
    std::vector<std::string> rcols;
    for (Eigen::Index i = 0; i < chain_.r_draws.cols(); ++i) rcols.push_back("r_" + std::to_string(i));
    write_matrix(dir / "r.bin", chain_.r_draws, rcols);
    Json j = fit_header(name(), static_cast<int>(chain_.r_draws.cols()));
    j["n_h"] = chain_.n_h;
    j["n_states"] = chain_.n_states;
    j["n_iter"] = chain_.n_iter;
    j["burn_in"] = chain_.burn_in;
    j["thin"] = chain_.thin;
    j["r_accept"] = std::vector<double>(chain_.r_accept.data(), chain_.r_accept.data() + chain_.r_accept.size());
    write_json(dir / "fit.json", j);
  }

  static std::unique_ptr<FittedModel> load(const std::filesystem::path& dir, int n_samples, double level) {
    const Json j = read_json(dir / "fit.json");
    NBChain c;
    c.n_h = j.at("n_h");
    c.n_states = j.at("n_states");
    c.n_iter = j.at("n_iter");
    c.burn_in = j.at("burn_in");
    c.thin = j.at("thin");
    const auto acc = j.at("r_accept").get<std::vector<double>>();
    c.r_accept = Eigen::Map<const Eigen::VectorXd>(acc.data(), static_cast<Eigen::Index>(acc.size()));
    c.eta_tilde_draws = read_matrix(dir / "eta_tilde.bin");
    const Eigen::MatrixXd sig = read_matrix(dir / "sigma2.bin");
    c.sigma_eta2_chain = sig.col(0);
    c.sigma_delta2_chain = sig.col(1);
    c.r_draws = read_matrix(dir / "r.bin");
    return std::make_unique<HierNbModel>(read_reservoir(dir), std::move(c), n_samples, level);
  }

 private:
  ReservoirWeights weights_;
  NBChain chain_;
  int n_samples_;
  double level_;
};

}  // namespace

double select_tau(const PanelSeries& train, const ReservoirSpec& spec, std::span<const double> grid, int holdout,
                  const PenalizedOptions& options, int workers) {
  if (grid.empty()) throw ConfigError("empty tau grid");
  if (holdout < 1 || train.n_years() - holdout < 2)
    throw ConfigError("too few training years for " + std::to_string(holdout) + " cross-validation folds");
  const ReservoirWeights w = gen_weights(spec);
  double best_tau = grid.front();
  double best_err = std::numeric_limits<double>::infinity();
  for (double tau : grid) {
    double err = 0.0;
    for (int target = train.n_years() - holdout; target < train.n_years(); ++target) {
      const PanelSeries fold = train.truncated(target);
      const SingleEsnFit fit = fit_single_esn(fold, spec, tau, options, workers);
      const OriginStates o = origin_states(fold, target_covariates(train, target), w);
      for (int i = 0; i < train.n_schools(); ++i) {
        const double e = fit.mean(i, o.next[static_cast<std::size_t>(i)]) - static_cast<double>(train.count(i, target));
        err += e * e;
      }
    }
    if (err < best_err) {
      best_err = err;
      best_tau = tau;
    }
  }
  return best_tau;
}

std::unique_ptr<FittedModel> fit_model(const ModelConfig& config, const PanelSeries& train, std::uint64_t master_seed,
                                       std::uint64_t fit_seed, int workers) {
  config.validate();
  const std::string& name = config.name;
  if (name == "intercept") return InterceptModel::fit(train);
  if (name == "ingarch11") return IngarchModel::fit(train, config.level, workers);

  const ReservoirSpec spec = resolved_reservoir(config, master_seed);
  if (spec.r != train.n_covariates())
    throw ConfigError("reservoir covariate dimension r=" + std::to_string(spec.r) + " but the panel has " +
                      std::to_string(train.n_covariates()) + " covariates");
  const double tau = config.tau_grid.empty()
                         ? config.tau
                         : select_tau(train, spec, config.tau_grid, config.cv_holdout, config.optimizer, workers);
  if (name == "single-poisson-esn")
    return std::make_unique<SingleEsnModel>(fit_single_esn(train, spec, tau, config.optimizer, workers));
  if (name == "ensemble-poisson-esn") {
    const std::uint64_t base = derive_seed(fit_seed, "ensemble", 0);
    return std::make_unique<EnsembleEsnModel>(
        fit_ensemble_esn(train, spec, tau, config.ensemble_size, base, config.optimizer, workers),
        config.ensemble_draws, config.level);
  }
  if (name == "bayes-poisson-esn")
    return std::make_unique<BayesPoissonModel>(fit_bayes_poisson(train, spec, config.bayes_poisson, fit_seed, workers),
                                               config.n_samples, config.level);
  const ReservoirWeights w = gen_weights(spec);
  const HiddenStateMatrix states = run_states(train, w, spec.nu);
  Rng rng(fit_seed);
  if (name == "hier-poisson-esn")
    return std::make_unique<HierPoissonModel>(w, fit_hier_poisson(train, states, config.hier_poisson, rng),
                                              config.n_samples, config.level);
  return std::make_unique<HierNbModel>(w, fit_hier_nb(train, states, config.nb, rng), config.n_samples, config.level);
}

std::unique_ptr<FittedModel> load_model(const ModelConfig& config, const std::filesystem::path& dir) {
  const Json header = read_json(dir / "fit.json");
  const std::string stored = header.value("model", "");
  if (stored != config.name)
    throw DataError("fit in " + dir.string() + " is for model '" + stored + "', expected '" + config.name + "'");
  const std::string& name = config.name;
  if (name == "intercept") return InterceptModel::load(dir);
  if (name == "ingarch11") return IngarchModel::load(dir, config.level);
  if (name == "single-poisson-esn") return std::make_unique<SingleEsnModel>(load_single(dir));
  if (name == "ensemble-poisson-esn") {
    EnsembleFit fit;
    const int M = header.at("members");
    for (int k = 0; k < M; ++k) fit.members.push_back(load_single(EnsembleEsnModel::member_dir(dir, k)));
    return std::make_unique<EnsembleEsnModel>(std::move(fit), header.at("draws_per_member").get<int>(), config.level);
  }
  if (name == "bayes-poisson-esn") return BayesPoissonModel::load(dir, config.n_samples, config.level);
  if (name == "hier-poisson-esn") return HierPoissonModel::load(dir, config.n_samples, config.level);
  return HierNbModel::load(dir, config.n_samples, config.level);
}

std::vector<Forecast> forecast_origin(const FittedModel& model, const PanelSeries& panel, int target,
                                      std::uint64_t master_seed) {
  const PanelSeries train = training_panel(panel, target);
  const std::vector<double> cov = target_covariates(panel, target);
  Rng rng(forecast_seed_for(master_seed, model.name(), target));
  std::vector<Forecast> out = model.forecast(train, cov, rng);
  for (auto& f : out) f.actual = panel.count(f.school, target);
  return out;
}

ForecastSet rolling_forecast(const PanelSeries& panel, const ModelConfig& config, const SplitPlan& plan,
                             std::uint64_t master_seed, int workers) {
  plan.validate(panel.n_years());
  ForecastSet set;
  set.model = config.name;
  set.level = config.level;
  set.n_schools = panel.n_schools();
  for (int target : plan.target_indices()) {
    const PanelSeries train = training_panel(panel, target);
    const auto model = fit_model(config, train, master_seed, fit_seed_for(master_seed, config.name, target), workers);
    auto rows = forecast_origin(*model, panel, target, master_seed);
    set.rows.insert(set.rows.end(), std::make_move_iterator(rows.begin()), std::make_move_iterator(rows.end()));
  }
  return set;
}

}  // namespace cesn
