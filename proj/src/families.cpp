#include "dftuq/families.hpp"

#include "dftuq/errors.hpp"

#include <fmt/format.h>

#include <array>
#include <set>

namespace dftuq {

namespace {

constexpr std::array<std::pair<Family, std::string_view>, 10> kFamilyNames = {{
    {Family::knn, "knn"},
    {Family::svr, "svr"},
    {Family::tree, "tree"},
    {Family::forest, "forest"},
    {Family::gbm, "gbm"},
    {Family::xgb, "xgb"},
    {Family::mlp, "mlp"},
    {Family::gpr, "gpr"},
    {Family::bnn_head, "bnn_head"},
    {Family::bnn_ensemble, "bnn_ensemble"},
}};

// Reads typed values out of a parameter object and rejects leftovers.
class ParamReader {
 public:
  ParamReader(const ParamSet& params, std::string_view who) : params_(params), who_(who) {
    if (!params_.is_null() && !params_.is_object()) {
      throw ConfigError(fmt::format("{}: parameters must be a JSON object", who_));
    }
  }

  bool has(const char* key) const { return params_.is_object() && params_.contains(key); }

  const nlohmann::json* raw(const char* key) {
    if (!has(key)) return nullptr;
    seen_.insert(key);
    return &params_.at(key);
  }

  template <typename T>
  void read(const char* key, T& out) {
    if (const auto* v = raw(key)) out = convert<T>(*v, key);
  }

  template <typename T>
  void read(const char* key, std::optional<T>& out) {
    if (const auto* v = raw(key)) {
      if (v->is_null()) {
        out.reset();
      } else {
        out = convert<T>(*v, key);
      }
    }
  }

  void read_sizes(const char* key, std::vector<int>& out) {
    const auto* v = raw(key);
    if (!v) return;
    if (v->is_number_integer()) {
      out = {v->get<int>()};
      return;
    }
    if (!v->is_array() || v->empty()) throw bad(key, "a nonempty list of layer sizes");
    out.clear();
    for (const auto& item : *v) out.push_back(convert<int>(item, key));
  }

  std::string choice(const char* key, std::initializer_list<std::string_view> allowed, std::string fallback) {
    const auto* v = raw(key);
    if (!v) return fallback;
    if (!v->is_string()) throw bad(key, "a string");
    const auto s = v->get<std::string>();
    for (auto a : allowed) {
      if (s == a) return s;
    }
    throw ConfigError(fmt::format("{}: unsupported {} '{}'", who_, key, s));
  }

  void finish() const {
    if (!params_.is_object()) return;
    for (const auto& item : params_.items()) {
      if (!seen_.count(item.key())) throw ConfigError(fmt::format("{}: unknown parameter '{}'", who_, item.key()));
    }
  }

 private:
  ConfigError bad(const char* key, const char* expected) const {
    return ConfigError(fmt::format("{}: parameter '{}' must be {}", who_, key, expected));
  }

  template <typename T>
  T convert(const nlohmann::json& v, const char* key) const {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw bad(key, "a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (v.is_number_integer()) return v.get<T>();
      if (v.is_number_float() && v.get<double>() == static_cast<double>(static_cast<T>(v.get<double>()))) {
        return static_cast<T>(v.get<double>());
      }
      throw bad(key, "an integer");
    } else {
      if (!v.is_number()) throw bad(key, "a number");
      return v.get<T>();
    }
  }

  const ParamSet& params_;
  std::string who_;
  std::set<std::string> seen_;
};

std::uint64_t random_state(ParamReader& r, std::uint64_t seed) {
  std::uint64_t out = seed;
  r.read("random_state", out);
  return out;
}

}  // namespace

Family parse_family(std::string_view name) {
  for (const auto& [family, text] : kFamilyNames) {
    if (text == name) return family;
  }
  throw ConfigError(fmt::format("unknown model family '{}'", name));
}

std::string_view to_string(Family family) {
  for (const auto& [f, text] : kFamilyNames) {
    if (f == family) return text;
  }
  return "unknown";
}

bool is_deterministic(Family family) {
  switch (family) {
    case Family::gpr:
    case Family::bnn_head:
    case Family::bnn_ensemble:
      return false;
    default:
      return true;
  }
}

std::vector<Family> deterministic_families() {
  return {Family::knn, Family::svr, Family::tree, Family::forest, Family::gbm, Family::xgb, Family::mlp};
}

std::size_t HyperGrid::size() const {
  std::size_t n = 1;
  for (const auto& axis : axes) n *= axis.second.size();
  return n;
}

std::vector<ParamSet> HyperGrid::candidates() const {
  std::vector<ParamSet> out;
  const std::size_t total = size();
  out.reserve(total);
  for (std::size_t c = 0; c < total; ++c) {
    ParamSet p = nlohmann::json::object();
    std::size_t rest = c;
    for (std::size_t a = axes.size(); a-- > 0;) {
      const auto& values = axes[a].second;
      p[axes[a].first] = values[rest % values.size()];
      rest /= values.size();
    }
    out.push_back(std::move(p));
  }
  return out;
}

HyperGrid HyperGrid::from_json(Family family, const nlohmann::json& doc) {
  HyperGrid grid;
  grid.family = family;
  if (doc.is_null()) return grid;
  if (!doc.is_object()) throw ConfigError("grid must be a JSON object of parameter axes");
  for (const auto& item : doc.items()) {
    std::vector<nlohmann::json> values;
    if (item.value().is_array() && item.key() != "hidden_layer_sizes") {
      values.assign(item.value().begin(), item.value().end());
    } else if (item.key() == "hidden_layer_sizes" && item.value().is_array() && !item.value().empty() &&
               item.value().front().is_array()) {
      // a list of architectures
      values.assign(item.value().begin(), item.value().end());
    } else {
      values.push_back(item.value());
    }
    if (values.empty()) throw ConfigError(fmt::format("grid axis '{}' is empty", item.key()));
    grid.axes.emplace_back(item.key(), std::move(values));
  }
  return grid;
}

nlohmann::json HyperGrid::to_json() const {
  nlohmann::json doc = nlohmann::json::object();
  for (const auto& [name, values] : axes) doc[name] = values;
  return doc;
}

HyperGrid tuned_grid(Family family) {
  using nlohmann::json;
  json doc;
  switch (family) {
    case Family::knn:
      doc = {{"metric", "euclidean"}, {"n_neighbors", 6}};
      break;
    case Family::svr:
      doc = {{"epsilon", 0.03}, {"gamma", "scale"}, {"kernel", "rbf"}};
      break;
    case Family::tree:
      doc = {{"max_depth", 20}, {"min_samples_leaf", 5}, {"criterion", "absolute_error"}};
      break;
    case Family::forest:
      doc = {{"bootstrap", true}, {"max_features", 3}, {"min_samples_leaf", 3}, {"n_estimators", 300}};
      break;
    case Family::gbm:
      doc = {{"learning_rate", 0.3}, {"loss", "squared_error"}, {"max_leaf_nodes", 30}, {"n_estimators", 120}};
      break;
    case Family::xgb:
      doc = {{"learning_rate", 0.1}, {"max_depth", 5}, {"n_estimators", 100}, {"subsample", 0.9}};
      break;
    case Family::mlp:
      doc = {{"activation", "tanh"},
             {"hidden_layer_sizes", json::array({json::array({16, 8, 4})})},
             {"learning_rate", "constant"},
             {"max_iter", 5000},
             {"solver", "lbfgs"}};
      break;
    case Family::gpr:
      doc = {{"length_scale", 1.0}, {"noise_level", 1.0}, {"n_restarts_optimizer", 50}, {"random_state", 2022}};
      break;
    case Family::bnn_head:
      doc = {{"hidden_layer_sizes", json::array({json::array({24, 16, 8})})}, {"learning_rate", 0.001}};
      break;
    case Family::bnn_ensemble:
      doc = {{"units", 8}, {"learning_rate", 0.001}};
      break;
  }
  return HyperGrid::from_json(family, doc);
}

KnnConfig knn_config(const ParamSet& params) {
  ParamReader r(params, "knn");
  KnnConfig c;
  r.read("n_neighbors", c.k);
  c.metric = r.choice("metric", {"euclidean", "manhattan"}, "euclidean") == "manhattan" ? DistanceMetric::manhattan
                                                                                      : DistanceMetric::euclidean;
  r.finish();
  return c;
}

SvrConfig svr_config(const ParamSet& params) {
  ParamReader r(params, "svr");
  SvrConfig c;
  r.read("epsilon", c.epsilon);
  r.read("C", c.c);
  r.read("tol", c.tolerance);
  r.read("max_iter", c.max_iterations);
  r.choice("kernel", {"rbf"}, "rbf");
  if (const auto* g = r.raw("gamma")) {
    if (g->is_string()) {
      if (g->get<std::string>() != "scale") throw ConfigError("svr: gamma must be 'scale' or a positive number");
    } else if (g->is_number() && g->get<double>() > 0.0) {
      c.gamma = g->get<double>();
    } else {
      throw ConfigError("svr: gamma must be 'scale' or a positive number");
    }
  }
  r.finish();
  return c;
}

TreeConfig tree_config(const ParamSet& params) {
  ParamReader r(params, "tree");
  TreeConfig c;
  r.read("max_depth", c.max_depth);
  r.read("min_samples_leaf", c.min_samples_leaf);
  c.criterion = r.choice("criterion", {"squared_error", "absolute_error"}, "squared_error") == "absolute_error"
                    ? SplitCriterion::absolute_error
                    : SplitCriterion::squared_error;
  r.finish();
  return c;
}

ForestConfig forest_config(const ParamSet& params, std::uint64_t seed) {
  ParamReader r(params, "forest");
  ForestConfig c;
  r.read("n_estimators", c.n_estimators);
  r.read("max_features", c.max_features);
  r.read("min_samples_leaf", c.min_samples_leaf);
  r.read("max_depth", c.max_depth);
  r.read("bootstrap", c.bootstrap);
  c.seed = random_state(r, seed);
  r.finish();
  return c;
}

GbtConfig gbt_config(const ParamSet& params, std::uint64_t seed) {
  ParamReader r(params, "gbt");
  GbtConfig c;
  r.read("learning_rate", c.learning_rate);
  r.read("n_estimators", c.n_estimators);
  r.read("subsample", c.subsample);
  r.read("min_samples_leaf", c.min_samples_leaf);
  r.choice("loss", {"squared_error"}, "squared_error");
  const bool depth_given = r.has("max_depth");
  r.read("max_depth", c.max_depth);
  r.read("max_leaf_nodes", c.max_leaf_nodes);
  // leaf-limited growth replaces the default depth limit unless both are given
  if (c.max_leaf_nodes && !depth_given) c.max_depth.reset();
  c.seed = random_state(r, seed);
  r.finish();
  return c;
}

MlpConfig mlp_config(const ParamSet& params, std::uint64_t seed) {
  ParamReader r(params, "mlp");
  MlpConfig c;
  r.read_sizes("hidden_layer_sizes", c.hidden_sizes);
  c.activation = r.choice("activation", {"tanh", "relu"}, "relu") == "tanh" ? Activation::tanh : Activation::relu;
  c.solver = r.choice("solver", {"lbfgs", "adam"}, "adam") == "lbfgs" ? MlpSolver::lbfgs : MlpSolver::adam;
  r.choice("learning_rate", {"constant"}, "constant");
  r.read("learning_rate_init", c.learning_rate);
  r.read("max_iter", c.max_iter);
  r.read("alpha", c.l2_penalty);
  c.seed = random_state(r, seed);
  r.finish();
  return c;
}

GprConfig gpr_config(const ParamSet& params) {
  ParamReader r(params, "gpr");
  GprConfig c;
  r.read("constant_value", c.init.amplitude);
  r.read("length_scale", c.init.length_scale);
  r.read("noise_level", c.init.noise_level);
  r.read("n_restarts_optimizer", c.n_restarts);
  r.read("optimize", c.optimize);
  r.read("random_state", c.seed);
  if (const auto* nu = r.raw("nu")) {
    if (!nu->is_number() || nu->get<double>() != 1.5) throw ConfigError("gpr: only nu = 1.5 is supported");
  }
  r.finish();
  return c;
}

HeadModelConfig head_model_config(const ParamSet& params, std::uint64_t seed) {
  ParamReader r(params, "bnn_head");
  HeadModelConfig c;
  r.read_sizes("hidden_layer_sizes", c.hidden_sizes);
  r.read("epochs", c.epochs);
  r.read("learning_rate", c.learning_rate);
  r.read("batch_size", c.batch_size);
  r.read("kl_weight", c.kl_weight);
  r.read("output_regularizer", c.output_regularizer);
  c.seed = random_state(r, seed);
  r.finish();
  return c;
}

EnsembleModelConfig ensemble_model_config(const ParamSet& params, std::uint64_t seed) {
  ParamReader r(params, "bnn_ensemble");
  EnsembleModelConfig c;
  r.read("units", c.hidden_units);
  r.read("epochs", c.epochs);
  r.read("learning_rate", c.learning_rate);
  r.read("batch_size", c.batch_size);
  r.read("kl_weight", c.kl_weight);
  r.read("prior_stddev", c.prior_stddev);
  r.read("draws", c.predict_draws);
  c.seed = random_state(r, seed);
  r.finish();
  return c;
}

std::unique_ptr<Regressor> make_regressor(Family family, const ParamSet& params, std::uint64_t seed) {
  switch (family) {
    case Family::knn:
      return std::make_unique<KnnRegressor>(knn_config(params));
    case Family::svr:
      return std::make_unique<SvrRegressor>(svr_config(params));
    case Family::tree:
      return std::make_unique<TreeRegressor>(tree_config(params));
    case Family::forest:
      return std::make_unique<ForestRegressor>(forest_config(params, seed));
    case Family::gbm:
    case Family::xgb:
      return std::make_unique<GbtRegressor>(gbt_config(params, seed));
    case Family::mlp:
      return std::make_unique<MlpRegressor>(mlp_config(params, seed));
    case Family::gpr:
      return std::make_unique<GprRegressor>(gpr_config(params));
    case Family::bnn_head:
      return std::make_unique<HeadModel>(head_model_config(params, seed));
    case Family::bnn_ensemble:
      return std::make_unique<EnsembleModel>(ensemble_model_config(params, seed));
  }
  throw ConfigError("unknown model family");
}

}  // namespace dftuq
