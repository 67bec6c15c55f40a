#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace dftuq {

enum class ColumnKind { continuous, categorical };
enum class ColumnRole { manufacturing_parameter, feature_descriptor, target, ignored };

struct ColumnSpec {
  std::string name;
  ColumnKind kind = ColumnKind::continuous;
  ColumnRole role = ColumnRole::manufacturing_parameter;
  std::vector<std::string> levels;  // categorical only, in encoding order
  // Unknown levels encountered while loading are appended instead of rejected.
  bool open_levels = false;

  std::optional<std::size_t> level_index(std::string_view value) const;
};

/// Ordered column declarations plus the subset of columns used as model inputs.
/// The constructor validates every invariant and throws SchemaError.
class DataSchema {
 public:
  DataSchema(std::vector<ColumnSpec> columns, std::vector<std::string> selected_inputs);

  /// Mirrors the dataset's thirteen inputs and DFT target. The default input
  /// selection is hardware set, material, layout, x/y/R coordinates, feature
  /// class and feature category, which encodes to 16 columns.
  static DataSchema default_schema();

  static DataSchema from_json(const nlohmann::json& doc);
  static DataSchema load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  const std::vector<ColumnSpec>& columns() const noexcept { return columns_; }
  const std::vector<std::string>& selected_inputs() const noexcept { return selected_; }
  const ColumnSpec& target() const { return columns_[target_index_]; }
  std::size_t target_index() const noexcept { return target_index_; }

  std::optional<std::size_t> find(std::string_view name) const;
  const ColumnSpec& column(std::string_view name) const;

  /// Continuous inputs count one column, categoricals one per level.
  std::size_t encoded_width() const;

  /// Used by the loader when an open column gains a level.
  void append_level(std::size_t column, std::string level);

 private:
  void validate(bool allow_sparse_open_levels) const;

  std::vector<ColumnSpec> columns_;
  std::vector<std::string> selected_;
  std::size_t target_index_ = 0;
};

/// Raw typed rows, stored column-wise. Categorical cells hold level indices
/// into the (possibly extended) schema carried by the table.
class RecordTable {
 public:
  using Column = std::variant<std::vector<double>, std::vector<std::size_t>>;

  RecordTable(DataSchema schema, std::vector<Column> columns);

  const DataSchema& schema() const noexcept { return schema_; }
  std::size_t rows() const noexcept { return rows_; }

  const std::vector<double>& continuous(std::string_view name) const;
  const std::vector<std::size_t>& categorical(std::string_view name) const;
  std::string_view level(std::string_view name, std::size_t row) const;
  std::vector<double> targets() const;

  /// Rows reordered/subset by index (used for permutation properties).
  RecordTable select_rows(std::span<const std::size_t> rows) const;

 private:
  DataSchema schema_;
  std::vector<Column> columns_;
  std::size_t rows_ = 0;
};

/// Numeric design matrix built by one-hot encoding. Targets stay in mm.
struct DesignMatrix {
  Eigen::MatrixXd features;
  Eigen::VectorXd targets;
  std::vector<std::string> column_labels;
  std::vector<ColumnKind> column_kinds;

  Eigen::Index rows() const noexcept { return features.rows(); }
  Eigen::Index width() const noexcept { return features.cols(); }

  DesignMatrix select_rows(std::span<const std::size_t> rows) const;
};

RecordTable load_csv(const std::filesystem::path& path, const DataSchema& schema);
RecordTable parse_csv(std::istream& in, const DataSchema& schema);

/// Continuous columns verbatim, categoricals expanded to one indicator per
/// level in declared order; labels are "<col>" or "<col>=<level>".
DesignMatrix encode(const RecordTable& table);

enum class ScalerMethod { zscore, minmax, none };

ScalerMethod parse_scaler_method(std::string_view name);
std::string_view to_string(ScalerMethod method);

/// Per-column statistics for continuous columns. Indicator columns are
/// passed through untouched.
struct ScalerState {
  ScalerMethod method = ScalerMethod::zscore;
  std::vector<std::string> column_labels;  // layout the state was fitted on
  std::vector<std::size_t> scaled_columns;
  std::vector<double> center;  // mean or min
  std::vector<double> scale;   // stddev or (max - min); 1 for constant columns
  std::vector<bool> constant;
};

ScalerState fit_scaler(const DesignMatrix& matrix, ScalerMethod method);
/// Fits using only the listed rows.
ScalerState fit_scaler(const DesignMatrix& matrix, std::span<const std::size_t> rows,
                       ScalerMethod method);
DesignMatrix apply_scaler(const ScalerState& state, const DesignMatrix& matrix);
Eigen::MatrixXd apply_scaler(const ScalerState& state, const Eigen::MatrixXd& features);
DesignMatrix invert_scaler(const ScalerState& state, const DesignMatrix& matrix);

nlohmann::json to_json(const ScalerState& state);
ScalerState scaler_from_json(const nlohmann::json& doc);

/// Synthetic records drawn from the default schema. Targets are
/// synthetic_ground_truth(encode(table)) plus N(0, noise_sigma^2) noise.
RecordTable generate_synthetic(std::size_t n, double noise_sigma, std::uint64_t seed);

/// The noise-free response used by generate_synthetic, evaluated on an
/// unscaled default-schema design matrix.
Eigen::VectorXd synthetic_ground_truth(const DesignMatrix& matrix);

}  // namespace dftuq
