#include "cesn/run.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "cesn/csv.hpp"
#include "cesn/error.hpp"
#include "cesn/matrix_io.hpp"

namespace cesn {

namespace {

namespace fs = std::filesystem;

std::string read_text(const fs::path& path, const char* stage) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("missing " + path.string() + " (run `" + stage + "` first)");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
  if (!os) throw DataError("failed writing " + path.string());
}

Json parse_json_text(const std::string& text, const fs::path& path) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

template <class T>
void read_key(const Json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

std::string fmt(double x) { return std::isfinite(x) ? detail::format_double(x) : "NA"; }
std::string fmt(const std::optional<double>& x) { return x ? fmt(*x) : "NA"; }

std::string panel_fingerprint(const PanelSeries& panel) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(format_panel_csv(panel))));
  return buf;
}

/// What a fit directory was produced from; compared before reuse.
Json fit_manifest(const RunConfig& config, const ModelConfig& model, const PanelSeries& panel, const SplitPlan& plan) {
  std::vector<int> targets;
  for (int t : plan.target_indices()) targets.push_back(panel.years().at(static_cast<std::size_t>(t)));
  return Json{{"model", model}, {"seed", config.seed}, {"level", config.level},
              {"targets", targets}, {"panel", panel_fingerprint(panel)}};
}

void check_manifest(const RunConfig& config, const ModelConfig& model, const PanelSeries& panel,
                    const SplitPlan& plan) {
  const fs::path path = fit_dir(config, model.name) / "manifest.json";
  const Json stored = parse_json_text(read_text(path, "fit"), path);
  const Json current = fit_manifest(config, model, panel, plan);
  if (stored != current)
    throw ConfigError("fits for " + model.name + " in " + fit_dir(config, model.name).string() +
                      " were made with a different configuration, seed or panel (rerun `fit`)");
}

std::vector<ScoreRow> scores_for(const RunConfig& config, const ModelConfig& model, const PanelSeries& panel) {
  const ForecastSet set =
      parse_forecast_csv(read_text(forecast_csv(config, model.name), "forecast"), panel, config.level);
  if (set.model != model.name) throw DataError("forecast file for " + model.name + " holds " + set.model);
  return score_forecasts(set);
}

}  // namespace

void RunConfig::validate() const {
  if (data_path.has_value() == simulation.has_value())
    throw ConfigError("data must give exactly one of 'path' or 'simulate'");
  if (covariates != "auto" && covariates != "default" && covariates != "file")
    throw ConfigError("covariates must be auto, default or file");
  if (horizon < 1) throw ConfigError("split horizon must be positive");
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("level must lie in (0, 1)");
  if (models.empty()) throw ConfigError("no models configured");
  if (workers < 1) throw ConfigError("workers must be positive");
  std::set<std::string> seen;
  for (const auto& m : models) {
    if (!seen.insert(m.name).second) throw ConfigError("model '" + m.name + "' listed twice");
    m.validate();
  }
  if (simulation) simulation->validate();
}

const ModelConfig& RunConfig::model(std::string_view name) const {
  for (const auto& m : models)
    if (m.name == name) return m;
  throw ConfigError("model '" + std::string(name) + "' is not in the config");
}

RunConfig parse_run_config(const Json& j, const fs::path& base_dir) {
  require_known_keys(j, {"seed", "data", "split", "level", "models", "out", "workers"}, "run config");
  RunConfig c;
  if (!j.contains("seed")) throw ConfigError("run config needs a master 'seed'");
  read_key(j, "seed", c.seed);
  read_key(j, "level", c.level);
  read_key(j, "workers", c.workers);
  if (j.contains("out")) c.out = base_dir / j.at("out").get<std::string>();

  if (!j.contains("data")) throw ConfigError("run config needs a 'data' section");
  const Json& data = j.at("data");
  require_known_keys(data, {"path", "simulate", "covariates"}, "data");
  if (data.contains("path")) c.data_path = base_dir / data.at("path").get<std::string>();
  if (data.contains("simulate")) {
    SimulationSpec spec;
    read_key(data, "simulate", spec);
    c.simulation = spec;
    c.simulation_seed_given = data.at("simulate").contains("seed");
  }
  read_key(data, "covariates", c.covariates);

  if (j.contains("split")) {
    const Json& split = j.at("split");
    require_known_keys(split, {"horizon", "first_target_year"}, "split");
    read_key(split, "horizon", c.horizon);
    if (split.contains("first_target_year")) {
      int year = 0;
      read_key(split, "first_target_year", year);
      c.first_target_year = year;
    }
  }

  if (!j.contains("models") || !j.at("models").is_array()) throw ConfigError("run config needs a 'models' list");
  for (const auto& m : j.at("models")) {
    ModelConfig mc;
    from_json(m, mc);
    c.models.push_back(std::move(mc));
  }
  for (auto& m : c.models) m.level = c.level;
  c.validate();
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_run_config(parse_json_text(ss.str(), path), path.parent_path());
}

void filter_models(RunConfig& config, const std::vector<std::string>& names) {
  std::vector<ModelConfig> kept;
  for (const auto& n : names) {
    if (!is_model_name(n)) throw ConfigError("unknown model '" + n + "'");
    kept.push_back(config.model(n));
  }
  config.models = std::move(kept);
  config.validate();
}

fs::path panel_artifact(const RunConfig& config) { return config.out / "panel.csv"; }
fs::path fit_dir(const RunConfig& config, std::string_view model) { return config.out / "fits" / model; }
fs::path origin_dir(const RunConfig& config, std::string_view model, int year) {
  return fit_dir(config, model) / std::to_string(year);
}
fs::path forecast_csv(const RunConfig& config, std::string_view model) {
  return config.out / "forecasts" / (std::string(model) + ".csv");
}
fs::path report_dir(const RunConfig& config) { return config.out / "report"; }

PanelSeries run_panel(const RunConfig& config) {
  PanelSeries panel = config.data_path ? load_panel(*config.data_path) : [&] {
    if (!fs::exists(panel_artifact(config)))
      throw DataError("missing " + panel_artifact(config).string() + " (run `simulate` first)");
    return load_panel(panel_artifact(config));
  }();
  if (config.covariates == "default" || (config.covariates == "auto" && panel.n_covariates() == 0))
    return default_covariates(panel);
  if (panel.n_covariates() == 0) throw DataError("covariates = file but the panel has no covariate columns");
  return panel;
}

SplitPlan run_plan(const RunConfig& config, const PanelSeries& panel) {
  SplitPlan plan;
  plan.horizon = config.horizon;
  if (config.first_target_year) {
    const auto& years = panel.years();
    const auto it = std::find(years.begin(), years.end(), *config.first_target_year);
    if (it == years.end())
      throw ConfigError("first_target_year " + std::to_string(*config.first_target_year) + " is not in the panel");
    plan.train_end_index = static_cast<int>(it - years.begin());
  } else {
    plan.train_end_index = panel.n_years() - config.horizon;
  }
  try {
    plan.validate(panel.n_years());
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return plan;
}

std::string format_forecast_csv(const ForecastSet& set, const PanelSeries& panel) {
  std::string out = "model,school_id,state,year,point,lower,upper,actual\n";
  for (const auto& f : set.rows) {
    out += detail::csv_escape(set.model) + ',' + detail::csv_escape(panel.school_ids().at(static_cast<std::size_t>(f.school))) +
           ',' + detail::csv_escape(panel.state_label_of(f.school)) + ',' + std::to_string(f.year) + ',' +
           detail::format_double(f.point) + ',';
    if (f.interval) out += detail::format_double(f.interval->first) + ',' + detail::format_double(f.interval->second);
    else out += ',';
    out += ',';
    if (f.actual) out += std::to_string(*f.actual);
    out += '\n';
  }
  return out;
}

ForecastSet parse_forecast_csv(std::string_view text, const PanelSeries& panel, double level) {
  const auto rows = detail::parse_csv(text);
  const std::vector<std::string> header = {"model", "school_id", "state", "year", "point", "lower", "upper", "actual"};
  if (rows.empty() || rows.front() != header) throw DataError("forecast CSV header must be " + std::string("model,school_id,state,year,point,lower,upper,actual"));
  std::map<std::string, int> index;
  for (int i = 0; i < panel.n_schools(); ++i) index[panel.school_ids()[static_cast<std::size_t>(i)]] = i;
  ForecastSet set;
  set.level = level;
  set.n_schools = panel.n_schools();
  auto number = [](const std::string& s, std::size_t line) {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw DataError("forecast CSV line " + std::to_string(line) + ": bad number '" + s + "'");
    }
  };
  for (std::size_t k = 1; k < rows.size(); ++k) {
    const auto& r = rows[k];
    if (r.size() == 1 && r[0].empty()) continue;
    if (r.size() != header.size()) throw DataError("forecast CSV line " + std::to_string(k + 1) + ": wrong field count");
    if (set.model.empty()) set.model = r[0];
    if (r[0] != set.model) throw DataError("forecast CSV mixes models");
    const auto it = index.find(r[1]);
    if (it == index.end()) throw DataError("forecast CSV names unknown school '" + r[1] + "'");
    Forecast f;
    f.school = it->second;
    f.year = static_cast<int>(number(r[3], k + 1));
    f.point = number(r[4], k + 1);
    if (!r[5].empty() || !r[6].empty()) f.interval = std::make_pair(number(r[5], k + 1), number(r[6], k + 1));
    if (!r[7].empty()) f.actual = static_cast<std::int64_t>(number(r[7], k + 1));
    set.rows.push_back(std::move(f));
  }
  if (set.rows.empty()) throw DataError("forecast CSV has no rows");
  return set;
}

std::string format_score_table(const std::vector<std::vector<ScoreRow>>& per_model, std::string_view column) {
  std::vector<std::string> years;
  for (const auto& rows : per_model)
    for (const auto& r : rows)
      if (r.year != "average" && std::find(years.begin(), years.end(), r.year) == years.end()) years.push_back(r.year);
  std::sort(years.begin(), years.end());
  years.push_back("average");
  std::string out = "model";
  for (const auto& y : years) out += ',' + y;
  out += '\n';
  for (const auto& rows : per_model) {
    if (rows.empty()) continue;
    out += detail::csv_escape(rows.front().model);
    for (const auto& y : years) {
      const auto it = std::find_if(rows.begin(), rows.end(), [&](const ScoreRow& r) { return r.year == y; });
      std::optional<double> v;
      if (it != rows.end()) {
        if (column == "mspe") v = it->mspe;
        else if (column == "mslpe") v = it->mslpe;
        else if (column == "is") v = it->is;
        else if (column == "icr") v = it->icr;
        else throw ConfigError("unknown score column '" + std::string(column) + "'");
      }
      out += ',' + fmt(v);
    }
    out += '\n';
  }
  return out;
}

std::string format_boxplot_svg(const std::vector<std::pair<std::string, std::vector<double>>>& groups,
                               std::string_view title) {
  constexpr double kBox = 90.0, kLeft = 60.0, kTop = 40.0, kHeight = 300.0;
  double lo = 1.0, hi = 1.0;  // keep the reference line at 1 in range
  for (const auto& [_, v] : groups)
    for (double x : v)
      if (std::isfinite(x)) lo = std::min(lo, x), hi = std::max(hi, x);
  if (hi <= lo) hi = lo + 1.0;
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  const double width = kLeft + kBox * static_cast<double>(groups.size()) + 20.0;
  auto y = [&](double v) { return kTop + kHeight * (hi - v) / (hi - lo); };
  std::ostringstream os;
  os.precision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << kTop + kHeight + 60
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\">" << title << "</text>\n";
  os << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kTop + kHeight
     << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0;
    os << "<text x=\"" << kLeft - 5 << "\" y=\"" << y(v) + 4 << "\" text-anchor=\"end\">" << v << "</text>\n";
  }
  os << "<line x1=\"" << kLeft << "\" y1=\"" << y(1.0) << "\" x2=\"" << width - 20 << "\" y2=\"" << y(1.0)
     << "\" stroke=\"grey\" stroke-dasharray=\"4 3\"/>\n";
  for (std::size_t g = 0; g < groups.size(); ++g) {
    std::vector<double> v;
    for (double x : groups[g].second)
      if (std::isfinite(x)) v.push_back(x);
    const double cx = kLeft + kBox * (static_cast<double>(g) + 0.5);
    os << "<text x=\"" << cx << "\" y=\"" << kTop + kHeight + 20 << "\" text-anchor=\"middle\">" << groups[g].first
       << "</text>\n";
    if (v.empty()) continue;
    std::sort(v.begin(), v.end());
    const double q1 = empirical_quantile(v, 0.25), q2 = empirical_quantile(v, 0.5), q3 = empirical_quantile(v, 0.75);
    const double iqr = q3 - q1;
    const auto lo_it = std::lower_bound(v.begin(), v.end(), q1 - 1.5 * iqr);
    const auto hi_it = std::upper_bound(v.begin(), v.end(), q3 + 1.5 * iqr);
    const double wlo = *lo_it, whi = *(hi_it - 1);
    os << "<line x1=\"" << cx << "\" y1=\"" << y(wlo) << "\" x2=\"" << cx << "\" y2=\"" << y(whi)
       << "\" stroke=\"black\"/>\n";
    os << "<rect x=\"" << cx - 25 << "\" y=\"" << y(q3) << "\" width=\"50\" height=\"" << y(q1) - y(q3)
       << "\" fill=\"#cde\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << cx - 25 << "\" y1=\"" << y(q2) << "\" x2=\"" << cx + 25 << "\" y2=\"" << y(q2)
       << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
    for (auto it = v.begin(); it != lo_it; ++it)
      os << "<circle cx=\"" << cx << "\" cy=\"" << y(*it) << "\" r=\"2\" fill=\"none\" stroke=\"black\"/>\n";
    for (auto it = hi_it; it != v.end(); ++it)
      os << "<circle cx=\"" << cx << "\" cy=\"" << y(*it) << "\" r=\"2\" fill=\"none\" stroke=\"black\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void cmd_simulate(const RunConfig& config) {
  if (!config.simulation) throw ConfigError("`simulate` needs data.simulate in the config");
  SimulationSpec spec = *config.simulation;
  if (!config.simulation_seed_given) spec.seed = derive_seed(config.seed, "simulate", 0);
  const SimulationResult sim = simulate_panel(spec);
  fs::create_directories(config.out);
  save_panel(sim.panel, panel_artifact(config));
  Json truth = sim.truth;
  write_text(config.out / "truth.json", truth.dump(2) + '\n');
}

void cmd_fit(const RunConfig& config) {
  const PanelSeries panel = run_panel(config);
  const SplitPlan plan = run_plan(config, panel);
  for (const auto& model : config.models) {
    const fs::path dir = fit_dir(config, model.name);
    fs::remove_all(dir);
    for (int target : plan.target_indices()) {
      const PanelSeries train = training_panel(panel, target);
      const auto fitted =
          fit_model(model, train, config.seed, fit_seed_for(config.seed, model.name, target), config.workers);
      fitted->save(origin_dir(config, model.name, panel.years().at(static_cast<std::size_t>(target))));
    }
    // written last so an interrupted fit leaves no manifest behind
    write_text(dir / "manifest.json", fit_manifest(config, model, panel, plan).dump(2) + '\n');
  }
}

void cmd_forecast(const RunConfig& config) {
  const PanelSeries panel = run_panel(config);
  const SplitPlan plan = run_plan(config, panel);
  for (const auto& model : config.models) {
    check_manifest(config, model, panel, plan);
    ForecastSet set;
    set.model = model.name;
    set.level = config.level;
    set.n_schools = panel.n_schools();
    std::vector<std::vector<double>> samples;
    for (int target : plan.target_indices()) {
      const auto fitted = load_model(model, origin_dir(config, model.name, panel.years().at(static_cast<std::size_t>(target))));
      for (auto& f : forecast_origin(*fitted, panel, target, config.seed)) {
        samples.push_back(std::move(f.samples));
        f.samples.clear();
        set.rows.push_back(std::move(f));
      }
    }
    write_text(forecast_csv(config, model.name), format_forecast_csv(set, panel));
    const fs::path bin = fs::path(forecast_csv(config, model.name)).replace_extension(".samples.bin");
    if (!samples.front().empty()) {
      Eigen::MatrixXd m(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(samples.front().size()));
      for (std::size_t k = 0; k < samples.size(); ++k) {
        if (samples[k].size() != samples.front().size()) throw NumericalError("ragged predictive samples");
        m.row(static_cast<Eigen::Index>(k)) =
            Eigen::Map<const Eigen::RowVectorXd>(samples[k].data(), static_cast<Eigen::Index>(samples[k].size()));
      }
      write_matrix(bin, m);
    } else {
      fs::remove(bin);
      fs::remove(fs::path(bin) += ".columns.json");
    }
  }
}

void cmd_score(const RunConfig& config) {
  const PanelSeries panel = run_panel(config);
  std::vector<ScoreRow> all;
  for (const auto& model : config.models) {
    const auto rows = scores_for(config, model, panel);
    all.insert(all.end(), rows.begin(), rows.end());
  }
  write_text(config.out / "scores.csv", format_score_csv(all));
  Json rows = Json::array();
  for (const auto& r : all) {
    Json row{{"model", r.model}, {"year", r.year}, {"mspe", r.mspe}, {"mslpe", r.mslpe}};
    row["is"] = r.is ? Json(*r.is) : Json(nullptr);
    row["icr"] = r.icr ? Json(*r.icr) : Json(nullptr);
    rows.push_back(std::move(row));
  }
  write_text(config.out / "scores.json", Json{{"level", config.level}, {"rows", rows}}.dump(2) + '\n');
}

void cmd_report(const RunConfig& config) {
  const PanelSeries panel = run_panel(config);
  const SplitPlan plan = run_plan(config, panel);
  const fs::path dir = report_dir(config);
  fs::create_directories(dir);

  std::vector<std::vector<ScoreRow>> per_model;
  for (const auto& model : config.models) per_model.push_back(scores_for(config, model, panel));
  for (const char* column : {"mspe", "mslpe", "is", "icr"})
    write_text(dir / (std::string("table_") + column + ".csv"), format_score_table(per_model, column));

  // Residual diagnostics from the fits at the last forecast origin.
  const int last = plan.target_indices().back();
  const PanelSeries train = training_panel(panel, last);
  std::string dispersion = "model,school_id,state,residual_variance,excluded\n";
  std::string residuals = "model,school_id,year,residual\n";
  std::string acf = "model,school_id,lag,acf\n";
  const int max_lag = std::min(10, std::max(1, train.n_years() - 2));
  Json summary = Json::array();
  std::vector<std::pair<std::string, std::vector<double>>> boxes;
  for (const auto& model : config.models) {
    check_manifest(config, model, panel, plan);
    const auto fitted = load_model(model, origin_dir(config, model.name, panel.years().at(static_cast<std::size_t>(last))));
    const PearsonResult pr = pearson_residuals(train, fitted->conditional_moments(train));
    std::vector<int> excluded(static_cast<std::size_t>(train.n_schools()), 0);
    for (const auto& [i, t] : pr.excluded) ++excluded[static_cast<std::size_t>(i)];
    std::vector<double> variances;
    const Eigen::MatrixXd correlations = residual_acf(pr.residuals, max_lag);
    for (int i = 0; i < train.n_schools(); ++i) {
      const auto& id = train.school_ids()[static_cast<std::size_t>(i)];
      dispersion += detail::csv_escape(model.name) + ',' + detail::csv_escape(id) + ',' +
                    detail::csv_escape(train.state_label_of(i)) + ',' + fmt(pr.school_variance(i)) + ',' +
                    std::to_string(excluded[static_cast<std::size_t>(i)]) + '\n';
      variances.push_back(pr.school_variance(i));
      for (int t = 0; t < pr.residuals.cols(); ++t)
        residuals += detail::csv_escape(model.name) + ',' + detail::csv_escape(id) + ',' +
                     std::to_string(train.years()[static_cast<std::size_t>(t + 1)]) + ',' + fmt(pr.residuals(i, t)) + '\n';
      for (int lag = 1; lag <= max_lag; ++lag)
        acf += detail::csv_escape(model.name) + ',' + detail::csv_escape(id) + ',' + std::to_string(lag) + ',' +
               fmt(correlations(i, lag - 1)) + '\n';
    }
    summary.push_back(Json{{"model", model.name},
                           {"median_residual_variance", median(variances)},
                           {"excluded_cells", pr.excluded.size()}});
    boxes.emplace_back(model.name, std::move(variances));
  }
  write_text(dir / "dispersion.csv", dispersion);
  write_text(dir / "residuals.csv", residuals);
  write_text(dir / "acf.csv", acf);
  write_text(dir / "dispersion.svg", format_boxplot_svg(boxes, "Per-school Pearson residual variance"));
  const OverdispersionSummary od = overdispersion_summary(panel);
  write_text(dir / "summary.json",
             Json{{"residual_origin_year", panel.years().at(static_cast<std::size_t>(last))},
                  {"mean_of_school_means", od.mean_of_means},
                  {"mean_of_school_variances", od.mean_of_variances},
                  {"models", summary}}
                     .dump(2) + '\n');
}

}  // namespace cesn
