#pragma once

#include "dftuq/bnn.hpp"
#include "dftuq/gpr.hpp"
#include "dftuq/knn.hpp"
#include "dftuq/mlp.hpp"
#include "dftuq/model.hpp"
#include "dftuq/svr.hpp"
#include "dftuq/trees.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace dftuq {

enum class Family { knn, svr, tree, forest, gbm, xgb, mlp, gpr, bnn_head, bnn_ensemble };

Family parse_family(std::string_view name);
std::string_view to_string(Family family);
/// True for the point-estimate families compared in the Table-1 style report.
bool is_deterministic(Family family);
std::vector<Family> deterministic_families();

/// One hyperparameter assignment, e.g. {"n_neighbors": 6, "metric": "euclidean"}.
using ParamSet = nlohmann::json;

/// Named parameter axes; the candidates are their cartesian product, with the
/// last axis varying fastest.
struct HyperGrid {
  Family family = Family::knn;
  std::vector<std::pair<std::string, std::vector<nlohmann::json>>> axes;

  std::size_t size() const;
  std::vector<ParamSet> candidates() const;

  /// {"n_neighbors": [3, 6], "metric": ["euclidean"]}; scalars become
  /// single-value axes. Axis order follows the document.
  static HyperGrid from_json(Family family, const nlohmann::json& doc);
  nlohmann::json to_json() const;
};

/// The tuned hyperparameters reported for each family, as a one-candidate grid.
HyperGrid tuned_grid(Family family);

/// Builds an unfitted model. Stochastic families draw from `seed` unless the
/// parameter set carries its own "random_state". Unknown parameter names or
/// invalid values throw ConfigError.
std::unique_ptr<Regressor> make_regressor(Family family, const ParamSet& params, std::uint64_t seed);

KnnConfig knn_config(const ParamSet& params);
SvrConfig svr_config(const ParamSet& params);
TreeConfig tree_config(const ParamSet& params);
ForestConfig forest_config(const ParamSet& params, std::uint64_t seed);
GbtConfig gbt_config(const ParamSet& params, std::uint64_t seed);
MlpConfig mlp_config(const ParamSet& params, std::uint64_t seed);
GprConfig gpr_config(const ParamSet& params);
HeadModelConfig head_model_config(const ParamSet& params, std::uint64_t seed);
EnsembleModelConfig ensemble_model_config(const ParamSet& params, std::uint64_t seed);

}  // namespace dftuq
