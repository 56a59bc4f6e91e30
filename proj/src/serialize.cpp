#include "cesn/serialize.hpp"

#include <algorithm>
#include <cstring>

#include "cesn/error.hpp"

namespace cesn {

void require_known_keys(const Json& j, std::initializer_list<const char*> allowed, const char* context) {
  if (!j.is_object()) throw ConfigError(std::string(context) + " must be a JSON object");
  for (const auto& item : j.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(),
                                   [&](const char* k) { return item.key() == k; });
    if (!known) throw ConfigError("unknown key '" + item.key() + "' in " + context);
  }
}

namespace {

template <class T>
void read(const Json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

void to_json(Json& j, const ReservoirSpec& s) {
  j = Json{{"n_h", s.n_h},     {"p", s.p},         {"r", s.r},         {"nu", s.nu},
           {"a_w", s.a_w},     {"a_uy", s.a_uy},   {"a_ux", s.a_ux},   {"pi_w", s.pi_w},
           {"pi_uy", s.pi_uy}, {"pi_ux", s.pi_ux}, {"activation", to_string(s.activation)},
           {"seed", s.seed}};
}

void from_json(const Json& j, ReservoirSpec& s) {
  require_known_keys(j, {"n_h", "p", "r", "nu", "a_w", "a_uy", "a_ux", "pi_w", "pi_uy", "pi_ux", "activation", "seed"},
                     "reservoir");
  read(j, "n_h", s.n_h);
  read(j, "p", s.p);
  read(j, "r", s.r);
  read(j, "nu", s.nu);
  read(j, "a_w", s.a_w);
  read(j, "a_uy", s.a_uy);
  read(j, "a_ux", s.a_ux);
  read(j, "pi_w", s.pi_w);
  read(j, "pi_uy", s.pi_uy);
  read(j, "pi_ux", s.pi_ux);
  read(j, "seed", s.seed);
  if (j.contains("activation")) s.activation = parse_activation(j.at("activation").get<std::string>());
}

void to_json(Json& j, const PenalizedOptions& o) {
  j = Json{{"tol", o.tol}, {"max_iter", o.max_iter}, {"grad_tol", o.grad_tol}};
}

void from_json(const Json& j, PenalizedOptions& o) {
  require_known_keys(j, {"tol", "max_iter", "grad_tol"}, "optimizer");
  read(j, "tol", o.tol);
  read(j, "max_iter", o.max_iter);
  read(j, "grad_tol", o.grad_tol);
}

void to_json(Json& j, const BayesPoissonOptions& o) {
  j = Json{{"n_draws", o.n_draws}, {"sigma_eta", o.sigma_eta}, {"alpha", o.alpha},
           {"cmlg_method", to_string(o.method)}, {"thin", o.thin}};
}

void from_json(const Json& j, BayesPoissonOptions& o) {
  require_known_keys(j, {"n_draws", "sigma_eta", "alpha", "cmlg_method", "thin"}, "bayes-poisson-esn");
  read(j, "n_draws", o.n_draws);
  read(j, "sigma_eta", o.sigma_eta);
  read(j, "alpha", o.alpha);
  read(j, "thin", o.thin);
  if (j.contains("cmlg_method")) o.method = parse_cmlg_method(j.at("cmlg_method").get<std::string>());
}

void to_json(Json& j, const HierPoissonOptions& o) {
  j = Json{{"n_iter", o.n_iter},
           {"burn_in", o.burn_in},
           {"thin", o.thin},
           {"alpha", o.alpha},
           {"upsilon", o.upsilon},
           {"proposal_cap", o.proposal_cap},
           {"sigma_eta_init", o.sigma_eta_init},
           {"sigma_delta_init", o.sigma_delta_init},
           {"fix_sigmas", o.fix_sigmas},
           {"cmlg_method", to_string(o.method)}};
}

void from_json(const Json& j, HierPoissonOptions& o) {
  require_known_keys(j, {"n_iter", "burn_in", "thin", "alpha", "upsilon", "proposal_cap", "sigma_eta_init",
                         "sigma_delta_init", "fix_sigmas", "cmlg_method"},
                     "hier-poisson-esn");
  read(j, "n_iter", o.n_iter);
  read(j, "burn_in", o.burn_in);
  read(j, "thin", o.thin);
  read(j, "alpha", o.alpha);
  read(j, "upsilon", o.upsilon);
  read(j, "proposal_cap", o.proposal_cap);
  read(j, "sigma_eta_init", o.sigma_eta_init);
  read(j, "sigma_delta_init", o.sigma_delta_init);
  read(j, "fix_sigmas", o.fix_sigmas);
  if (j.contains("cmlg_method")) o.method = parse_cmlg_method(j.at("cmlg_method").get<std::string>());
}

void to_json(Json& j, const NBOptions& o) {
  j = Json{{"n_iter", o.n_iter},         {"burn_in", o.burn_in},   {"thin", o.thin},
           {"pg_truncation", o.pg_truncation}, {"ig_shape", o.ig_shape}, {"ig_rate", o.ig_rate},
           {"r_cap", o.r_cap},           {"r_init", o.r_init},     {"sigma2_init", o.sigma2_init},
           {"fix_sigmas", o.fix_sigmas}, {"fix_r", o.fix_r}};
}

void from_json(const Json& j, NBOptions& o) {
  require_known_keys(j, {"n_iter", "burn_in", "thin", "pg_truncation", "ig_shape", "ig_rate", "r_cap", "r_init",
                         "sigma2_init", "fix_sigmas", "fix_r"},
                     "hier-nb-esn");
  read(j, "n_iter", o.n_iter);
  read(j, "burn_in", o.burn_in);
  read(j, "thin", o.thin);
  read(j, "pg_truncation", o.pg_truncation);
  read(j, "ig_shape", o.ig_shape);
  read(j, "ig_rate", o.ig_rate);
  read(j, "r_cap", o.r_cap);
  read(j, "r_init", o.r_init);
  read(j, "sigma2_init", o.sigma2_init);
  read(j, "fix_sigmas", o.fix_sigmas);
  read(j, "fix_r", o.fix_r);
}

void to_json(Json& j, const SimulationSpec& s) {
  j = Json{{"dgp", s.dgp},
           {"n_states", s.n_states},
           {"schools_per_state", s.schools_per_state},
           {"n_years", s.n_years},
           {"first_year", s.first_year},
           {"seed", s.seed},
           {"lambda", s.lambda},
           {"lambda_spread", s.lambda_spread},
           {"beta0", s.beta0},
           {"alpha1", s.alpha1},
           {"beta1", s.beta1},
           {"reservoir", s.reservoir},
           {"sigma_eta", s.sigma_eta},
           {"sigma_delta", s.sigma_delta},
           {"mu_delta", s.mu_delta},
           {"feedback", s.feedback},
           {"dispersion", s.dispersion},
           {"alpha", s.alpha}};
}

void from_json(const Json& j, SimulationSpec& s) {
  require_known_keys(j, {"dgp", "n_states", "schools_per_state", "n_years", "first_year", "seed", "lambda",
                         "lambda_spread", "beta0", "alpha1", "beta1", "reservoir", "sigma_eta", "sigma_delta",
                         "mu_delta", "feedback", "dispersion", "alpha"},
                     "simulate");
  read(j, "dgp", s.dgp);
  read(j, "n_states", s.n_states);
  read(j, "schools_per_state", s.schools_per_state);
  read(j, "n_years", s.n_years);
  read(j, "first_year", s.first_year);
  read(j, "seed", s.seed);
  read(j, "lambda", s.lambda);
  read(j, "lambda_spread", s.lambda_spread);
  read(j, "beta0", s.beta0);
  read(j, "alpha1", s.alpha1);
  read(j, "beta1", s.beta1);
  if (j.contains("reservoir")) s.reservoir = j.at("reservoir").get<ReservoirSpec>();
  read(j, "sigma_eta", s.sigma_eta);
  read(j, "sigma_delta", s.sigma_delta);
  read(j, "mu_delta", s.mu_delta);
  read(j, "feedback", s.feedback);
  read(j, "dispersion", s.dispersion);
  read(j, "alpha", s.alpha);
}

void to_json(Json& j, const SimulationTruth& t) {
  j = Json{{"dgp", t.dgp}};
  if (t.dgp == "iid-poisson") j["school_lambda"] = t.school_lambda;
  if (t.dgp == "ingarch") j["ingarch"] = Json{{"beta0", t.beta0}, {"alpha1", t.alpha1}, {"beta1", t.beta1}};
  if (t.weights) {
    j["reservoir"] = t.weights->spec;
    j["lambda_W"] = t.weights->lambda_W;
    j["eta_tilde"] = std::vector<double>(t.eta_tilde.data(), t.eta_tilde.data() + t.eta_tilde.size());
    j["sigma_eta"] = t.sigma_eta;
    j["sigma_delta"] = t.sigma_delta;
    j["feedback_applied"] = t.feedback_applied;
  }
  if (t.dgp == "hier-nb-esn") j["dispersion"] = t.dispersion;
}

void to_json(Json& j, const ModelConfig& c) {
  j = Json{{"name", c.name}};
  if (uses_reservoir(c.name)) {
    j["reservoir"] = c.reservoir;
    if (c.reservoir_seed) j["reservoir_seed"] = *c.reservoir_seed;
  }
  if (c.name == "single-poisson-esn" || c.name == "ensemble-poisson-esn") {
    j["tau"] = c.tau;
    if (!c.tau_grid.empty()) {
      j["tau_grid"] = c.tau_grid;
      j["cv_holdout"] = c.cv_holdout;
    }
    j["optimizer"] = c.optimizer;
  }
  if (c.name == "ensemble-poisson-esn") {
    j["ensemble_size"] = c.ensemble_size;
    j["ensemble_draws"] = c.ensemble_draws;
  }
  if (c.name == "bayes-poisson-esn") j["bayes_poisson"] = c.bayes_poisson;
  if (c.name == "hier-poisson-esn") j["hier_poisson"] = c.hier_poisson;
  if (c.name == "hier-nb-esn") j["nb"] = c.nb;
  if (c.name == "bayes-poisson-esn" || c.name == "hier-poisson-esn" || c.name == "hier-nb-esn")
    j["n_samples"] = c.n_samples;
}

void from_json(const Json& j, ModelConfig& c) {
  if (j.is_string()) {
    c.name = j.get<std::string>();
  } else {
    require_known_keys(j,
                       {"name", "reservoir", "reservoir_seed", "tau", "tau_grid", "cv_holdout", "optimizer",
                        "ensemble_size", "ensemble_draws", "bayes_poisson", "hier_poisson", "nb", "n_samples"},
                       "model");
    if (!j.contains("name")) throw ConfigError("model entry without a name");
    read(j, "name", c.name);
    read(j, "reservoir", c.reservoir);
    if (j.contains("reservoir_seed")) {
      std::uint64_t seed = 0;
      read(j, "reservoir_seed", seed);
      c.reservoir_seed = seed;
    }
    read(j, "tau", c.tau);
    read(j, "tau_grid", c.tau_grid);
    read(j, "cv_holdout", c.cv_holdout);
    read(j, "optimizer", c.optimizer);
    read(j, "ensemble_size", c.ensemble_size);
    read(j, "ensemble_draws", c.ensemble_draws);
    read(j, "bayes_poisson", c.bayes_poisson);
    read(j, "hier_poisson", c.hier_poisson);
    read(j, "nb", c.nb);
    read(j, "n_samples", c.n_samples);
  }
  if (!is_model_name(c.name)) throw ConfigError("unknown model '" + c.name + "'");
}

}  // namespace cesn
