#pragma once

#include <json.hpp>

#include "cesn/bayes_nb.hpp"
#include "cesn/bayes_poisson.hpp"
#include "cesn/models.hpp"
#include "cesn/penalized.hpp"
#include "cesn/reservoir.hpp"
#include "cesn/simulate.hpp"

namespace cesn {

using Json = nlohmann::ordered_json;

// Readers reject unknown keys (ConfigError) so that typos in a config file
// are not silently ignored; missing keys keep their defaults.
void to_json(Json& j, const ReservoirSpec& s);
void from_json(const Json& j, ReservoirSpec& s);
void to_json(Json& j, const PenalizedOptions& o);
void from_json(const Json& j, PenalizedOptions& o);
void to_json(Json& j, const BayesPoissonOptions& o);
void from_json(const Json& j, BayesPoissonOptions& o);
void to_json(Json& j, const HierPoissonOptions& o);
void from_json(const Json& j, HierPoissonOptions& o);
void to_json(Json& j, const NBOptions& o);
void from_json(const Json& j, NBOptions& o);
void to_json(Json& j, const SimulationSpec& s);
void from_json(const Json& j, SimulationSpec& s);
void to_json(Json& j, const SimulationTruth& t);
/// A bare string is accepted as shorthand for {"name": ...}. The interval
/// level is a run-wide setting and is not part of the model object.
void to_json(Json& j, const ModelConfig& c);
void from_json(const Json& j, ModelConfig& c);

/// Throws ConfigError naming the first key of j not in `allowed`.
void require_known_keys(const Json& j, std::initializer_list<const char*> allowed, const char* context);

}  // namespace cesn
