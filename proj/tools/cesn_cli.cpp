#include <CLI11.hpp>

#include <iostream>

#include "cesn/error.hpp"
#include "cesn/run.hpp"

namespace {

enum ExitCode : int { kOk = 0, kUnexpected = 1, kConfig = 2, kData = 3, kNumerical = 4 };

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  for (char c : s) {
    if (c == ',') {
      if (!item.empty()) out.push_back(item);
      item.clear();
    } else if (c != ' ') {
      item += c;
    }
  }
  if (!item.empty()) out.push_back(item);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Count echo state network forecasting for panels of annual counts"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> models;
  std::optional<int> workers;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"simulate", "Write a simulated panel and its ground truth"},
      {"fit", "Fit every configured model at every forecast origin"},
      {"forecast", "One-step forecasts from the saved fits"},
      {"score", "MSPE, MSLPE, interval score and coverage per model and year"},
      {"report", "Score tables, Pearson-residual dispersion data and plots"},
      {"run", "fit, forecast, score and report in sequence"}};
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "Run config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Master seed (overrides the config)");
    sub->add_option("--out", out, "Output directory (overrides the config)");
    sub->add_option("--models", models, "Comma-separated subset of the configured models");
    sub->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    cesn::RunConfig config = cesn::load_run_config(config_path);
    if (seed) config.seed = *seed;
    if (out) config.out = *out;
    if (workers) config.workers = *workers;
    if (models) cesn::filter_models(config, split_list(*models));

    const std::string command = app.get_subcommands().front()->get_name();
    if (command == "simulate") {
      cesn::cmd_simulate(config);
    } else if (command == "fit") {
      cesn::cmd_fit(config);
    } else if (command == "forecast") {
      cesn::cmd_forecast(config);
    } else if (command == "score") {
      cesn::cmd_score(config);
    } else if (command == "report") {
      cesn::cmd_report(config);
    } else {
      cesn::cmd_fit(config);
      cesn::cmd_forecast(config);
      cesn::cmd_score(config);
      cesn::cmd_report(config);
    }
  } catch (const cesn::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const cesn::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const cesn::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUnexpected;
  }
  return kOk;
}
