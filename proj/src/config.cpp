#include "dftuq/config.hpp"

#include "dftuq/errors.hpp"

#include <fmt/format.h>

#include <fstream>
#include <set>

namespace dftuq {

namespace {

void check_keys(const nlohmann::json& doc, std::string_view where, std::initializer_list<const char*> allowed) {
  if (!doc.is_object()) throw ConfigError(fmt::format("{} must be a JSON object", where));
  for (const auto& item : doc.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || item.key() == a;
    if (!ok) throw ConfigError(fmt::format("{}: unknown key '{}'", where, item.key()));
  }
}

template <typename T>
T get(const nlohmann::json& doc, const char* key, std::string_view where) {
  try {
    return doc.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(fmt::format("{}: '{}' has the wrong type", where, key));
  }
}

template <typename T>
void read(const nlohmann::json& doc, const char* key, T& out, std::string_view where) {
  if (doc.contains(key)) out = get<T>(doc, key, where);
}

Fractions parse_fractions(const nlohmann::json& doc) {
  check_keys(doc, "protocol.fractions", {"train", "test", "holdout"});
  Fractions f{0.8, 0.2, 0.0};
  read(doc, "train", f.train, "protocol.fractions");
  read(doc, "test", f.test, "protocol.fractions");
  read(doc, "holdout", f.holdout, "protocol.fractions");
  f.validate();
  return f;
}

ParamSet merged_params(Family family, const nlohmann::json& overrides, std::string_view where) {
  ParamSet params = tuned_grid(family).candidates().front();
  if (overrides.is_null()) return params;
  if (!overrides.is_object()) throw ConfigError(fmt::format("{} must be a JSON object", where));
  for (const auto& item : overrides.items()) params[item.key()] = item.value();
  return params;
}

FamilyEntry parse_family_entry(const nlohmann::json& item) {
  if (item.is_string()) {
    const auto family = parse_family(item.get<std::string>());
    return {item.get<std::string>(), tuned_grid(family)};
  }
  check_keys(item, "families[]", {"name", "family", "grid", "tuned_defaults"});
  if (!item.contains("family")) throw ConfigError("families[]: missing 'family'");
  const auto family = parse_family(get<std::string>(item, "family", "families[]"));
  FamilyEntry entry;
  entry.name = item.value("name", std::string(to_string(family)));
  const bool defaults = item.value("tuned_defaults", true);
  entry.grid = defaults ? tuned_grid(family) : HyperGrid{family, {}};
  if (item.contains("grid")) {
    const auto extra = HyperGrid::from_json(family, item.at("grid"));
    for (auto& [name, values] : extra.axes) {
      bool replaced = false;
      for (auto& axis : entry.grid.axes) {
        if (axis.first == name) {
          axis.second = values;
          replaced = true;
        }
      }
      if (!replaced) entry.grid.axes.emplace_back(name, values);
    }
  }
  // every candidate must build
  for (const auto& params : entry.grid.candidates()) (void)make_regressor(family, params, 0);
  return entry;
}

}  // namespace

const ParamSet& UqSpec::params(Family family) const {
  switch (family) {
    case Family::gpr:
      return gpr;
    case Family::bnn_head:
      return bnn_head;
    case Family::bnn_ensemble:
      return bnn_ensemble;
    default:
      throw ConfigError(fmt::format("{} is not a probabilistic family", to_string(family)));
  }
}

RunConfig RunConfig::from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
  check_keys(doc, "config",
             {"data", "schema", "synthetic", "scaler", "seed", "workers", "protocol", "families", "sweep", "uq",
              "description"});
  RunConfig cfg;
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
  };
  if (doc.contains("data")) cfg.data = resolve(get<std::string>(doc, "data", "config"));
  if (doc.contains("schema")) cfg.schema = resolve(get<std::string>(doc, "schema", "config"));
  if (doc.contains("synthetic")) {
    const auto& s = doc.at("synthetic");
    check_keys(s, "synthetic", {"rows", "noise", "seed"});
    SyntheticSpec spec;
    read(s, "rows", spec.rows, "synthetic");
    read(s, "noise", spec.noise, "synthetic");
    read(s, "seed", spec.seed, "synthetic");
    if (spec.rows == 0 || !(spec.noise >= 0.0)) throw ConfigError("synthetic: rows must be >= 1 and noise >= 0");
    cfg.synthetic = spec;
  }
  if (cfg.data && cfg.synthetic) throw ConfigError("config: give either 'data' or 'synthetic', not both");
  if (doc.contains("scaler")) cfg.scaler = parse_scaler_method(get<std::string>(doc, "scaler", "config"));
  read(doc, "seed", cfg.seed, "config");
  read(doc, "workers", cfg.workers, "config");

  Protocol& p = cfg.protocol;
  if (doc.contains("protocol")) {
    const auto& pd = doc.at("protocol");
    check_keys(pd, "protocol", {"outer_iterations", "inner_iterations", "folds", "fractions", "fast_tuning"});
    read(pd, "outer_iterations", p.outer_iterations, "protocol");
    read(pd, "inner_iterations", p.inner_iterations, "protocol");
    read(pd, "folds", p.folds, "protocol");
    read(pd, "fast_tuning", p.fast_tuning, "protocol");
    if (pd.contains("fractions")) p.fractions = parse_fractions(pd.at("fractions"));
  }
  p.seed = cfg.seed;
  p.scaler = cfg.scaler;
  p.workers = cfg.workers;
  p.validate();

  if (doc.contains("families")) {
    const auto& fams = doc.at("families");
    if (!fams.is_array()) throw ConfigError("families must be a list");
    std::set<std::string> names;
    for (const auto& item : fams) {
      auto entry = parse_family_entry(item);
      if (!names.insert(entry.name).second) throw ConfigError(fmt::format("duplicate family name '{}'", entry.name));
      cfg.families.push_back(std::move(entry));
    }
  }

  if (doc.contains("sweep")) {
    const auto& sd = doc.at("sweep");
    check_keys(sd, "sweep", {"families", "fractions"});
    read(sd, "families", cfg.sweep.families, "sweep");
    read(sd, "fractions", cfg.sweep.fractions, "sweep");
    for (const auto& name : cfg.sweep.families) {
      bool found = false;
      for (const auto& e : cfg.families) found = found || e.name == name;
      if (!found) throw ConfigError(fmt::format("sweep: family '{}' is not listed under families", name));
    }
    for (std::size_t i = 0; i < cfg.sweep.fractions.size(); ++i) {
      const double f = cfg.sweep.fractions[i];
      if (!(f > 0.0 && f < 1.0)) throw ConfigError(fmt::format("sweep: fraction {} outside (0, 1)", f));
      if (i > 0 && !(f > cfg.sweep.fractions[i - 1])) throw ConfigError("sweep: fractions must be strictly increasing");
    }
  }

  UqSpec& uq = cfg.uq;
  nlohmann::json uqd = doc.value("uq", nlohmann::json::object());
  check_keys(uqd, "uq", {"fractions", "seeds", "draws", "trend", "split", "models", "gpr", "bnn_head", "bnn_ensemble"});
  read(uqd, "fractions", uq.fractions, "uq");
  read(uqd, "seeds", uq.seeds, "uq");
  read(uqd, "draws", uq.draws, "uq");
  read(uqd, "trend", uq.trend, "uq");
  if (uqd.contains("split")) uq.split = parse_fractions(uqd.at("split"));
  if (uqd.contains("models")) {
    uq.models.clear();
    for (const auto& m : get<std::vector<std::string>>(uqd, "models", "uq")) {
      const auto family = parse_family(m);
      if (is_deterministic(family)) throw ConfigError(fmt::format("uq: {} is not a probabilistic family", m));
      uq.models.push_back(family);
    }
  }
  if (uq.draws < 2) throw ConfigError(fmt::format("uq: draws must be >= 2 (got {})", uq.draws));
  if (uq.seeds.empty()) throw ConfigError("uq: seeds must be nonempty");
  for (double f : uq.fractions) {
    if (!(f > 0.0 && f < 1.0)) throw ConfigError(fmt::format("uq: fraction {} outside (0, 1)", f));
  }
  uq.gpr = merged_params(Family::gpr, uqd.value("gpr", nlohmann::json()), "uq.gpr");
  uq.bnn_head = merged_params(Family::bnn_head, uqd.value("bnn_head", nlohmann::json()), "uq.bnn_head");
  uq.bnn_ensemble = merged_params(Family::bnn_ensemble, uqd.value("bnn_ensemble", nlohmann::json()), "uq.bnn_ensemble");
  (void)gpr_config(uq.gpr);
  (void)head_model_config(uq.bnn_head, 0);
  (void)ensemble_model_config(uq.bnn_ensemble, 0);
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config {}", path.string()));
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return from_json(doc, path.parent_path());
}

void RunConfig::apply_preset(std::string_view preset) {
  if (preset == "full") {
    protocol.outer_iterations = 3;
    protocol.inner_iterations = 50;
  } else if (preset == "ci") {
    protocol.outer_iterations = 1;
    protocol.inner_iterations = 5;
  } else {
    throw ConfigError(fmt::format("unknown preset '{}' (expected full or ci)", preset));
  }
}

void RunConfig::set_seed(std::uint64_t value) {
  seed = value;
  protocol.seed = value;
}

void RunConfig::set_workers(int value) {
  if (value < 1) throw ConfigError("workers must be >= 1");
  workers = value;
  protocol.workers = value;
}

DataSchema RunConfig::load_schema() const { return schema ? DataSchema::load(*schema) : DataSchema::default_schema(); }

RecordTable RunConfig::load_table() const {
  if (data) return load_csv(*data, load_schema());
  if (synthetic) return generate_synthetic(synthetic->rows, synthetic->noise, synthetic->seed);
  throw ConfigError("config: no 'data' path or 'synthetic' section");
}

}  // namespace dftuq
