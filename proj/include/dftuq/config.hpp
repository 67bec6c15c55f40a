#pragma once

#include "dftuq/harness.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dftuq {

struct SyntheticSpec {
  std::size_t rows = 600;
  double noise = 0.05;  // mm
  std::uint64_t seed = 7;
};

struct FamilyEntry {
  std::string name;
  HyperGrid grid;
};

struct SweepSpec {
  std::vector<std::string> families;  // entry names; empty means every entry
  std::vector<double> fractions = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
};

struct UqSpec {
  std::vector<double> fractions = {0.1, 0.5, 0.8, 0.9, 0.99};
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  int draws = 200;
  bool trend = true;
  Fractions split{0.8, 0.2, 0.0};
  std::vector<Family> models = {Family::gpr, Family::bnn_head, Family::bnn_ensemble};
  ParamSet gpr;
  ParamSet bnn_head;
  ParamSet bnn_ensemble;

  const ParamSet& params(Family family) const;
};

/// The run configuration document shared by every CLI command.
///
///   {
///     "data": "measurements.csv", "schema": "schema.json",   (or "synthetic": {...})
///     "scaler": "zscore", "seed": 0, "workers": 1,
///     "protocol": {"outer_iterations": 3, "inner_iterations": 50, "folds": 5,
///                  "fractions": {"train": 0.8, "test": 0.2, "holdout": 0}, "fast_tuning": false},
///     "families": ["knn", {"name": "svr", "family": "svr", "grid": {"C": [0.5, 1, 2]}}],
///     "sweep": {"families": ["svr"], "fractions": [0.1, 0.5, 0.9]},
///     "uq": {"fractions": [...], "seeds": [...], "draws": 200, "models": ["gpr", ...],
///            "gpr": {...}, "bnn_head": {...}, "bnn_ensemble": {...}}
///   }
///
/// Family grids start from the tuned values of tuned_grid() and each "grid"
/// axis replaces the axis of the same name ("tuned_defaults": false starts empty).
struct RunConfig {
  std::optional<std::filesystem::path> data;
  std::optional<std::filesystem::path> schema;
  std::optional<SyntheticSpec> synthetic;
  ScalerMethod scaler = ScalerMethod::zscore;
  std::uint64_t seed = 0;
  int workers = 1;
  Protocol protocol;
  std::vector<FamilyEntry> families;
  SweepSpec sweep;
  UqSpec uq;

  /// Relative paths resolve against base_dir. Throws ConfigError.
  static RunConfig from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
  static RunConfig load(const std::filesystem::path& path);

  /// "full": 3 outer x 50 inner iterations; "ci": 1 x 5.
  void apply_preset(std::string_view preset);
  void set_seed(std::uint64_t value);
  void set_workers(int value);

  DataSchema load_schema() const;
  /// Reads and encodes the CSV, or generates the synthetic table.
  RecordTable load_table() const;
};

}  // namespace dftuq
