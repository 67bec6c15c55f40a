#include "dftuq/tabular.hpp"

#include "dftuq/errors.hpp"
#include "dftuq/random.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

namespace dftuq {

namespace {

std::string_view kind_name(ColumnKind kind) {
  return kind == ColumnKind::continuous ? "continuous" : "categorical";
}

std::string_view role_name(ColumnRole role) {
  switch (role) {
    case ColumnRole::manufacturing_parameter: return "manufacturing_parameter";
    case ColumnRole::feature_descriptor: return "feature_descriptor";
    case ColumnRole::target: return "target";
    case ColumnRole::ignored: return "ignored";
  }
  return "ignored";
}

ColumnKind parse_kind(const std::string& s) {
  if (s == "continuous") return ColumnKind::continuous;
  if (s == "categorical") return ColumnKind::categorical;
  throw SchemaError(fmt::format("unknown column kind '{}'", s));
}

ColumnRole parse_role(const std::string& s) {
  if (s == "manufacturing_parameter") return ColumnRole::manufacturing_parameter;
  if (s == "feature_descriptor") return ColumnRole::feature_descriptor;
  if (s == "target") return ColumnRole::target;
  if (s == "ignored") return ColumnRole::ignored;
  throw SchemaError(fmt::format("unknown column role '{}'", s));
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

// RFC 4180 style: quoted fields may contain commas and doubled quotes.
std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string current;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          current.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        current.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back(trim(current));
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  fields.emplace_back(trim(current));
  return fields;
}

}  // namespace

std::optional<std::size_t> ColumnSpec::level_index(std::string_view value) const {
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (levels[i] == value) return i;
  }
  return std::nullopt;
}

DataSchema::DataSchema(std::vector<ColumnSpec> columns, std::vector<std::string> selected_inputs)
    : columns_(std::move(columns)), selected_(std::move(selected_inputs)) {
  validate(true);
  for (std::size_t i = 0; i < columns_.size(); ++i) {
    if (columns_[i].role == ColumnRole::target) target_index_ = i;
  }
}

void DataSchema::validate(bool allow_sparse_open_levels) const {
  std::set<std::string> names;
  std::size_t targets = 0;
  for (std::size_t i = 0; i < columns_.size(); ++i) {
    const auto& c = columns_[i];
    if (c.name.empty()) throw SchemaError("column with empty name");
    if (!names.insert(c.name).second) throw SchemaError(fmt::format("duplicate column '{}'", c.name));
    if (c.kind == ColumnKind::continuous && !c.levels.empty()) {
      throw SchemaError(fmt::format("continuous column '{}' declares levels", c.name));
    }
    if (c.kind == ColumnKind::categorical) {
      std::set<std::string> distinct(c.levels.begin(), c.levels.end());
      if (distinct.size() != c.levels.size()) {
        throw SchemaError(fmt::format("column '{}' has repeated levels", c.name));
      }
      if (c.levels.size() < 2 && !(allow_sparse_open_levels && c.open_levels)) {
        throw SchemaError(fmt::format("categorical column '{}' needs at least 2 levels", c.name));
      }
    }
    if (c.role == ColumnRole::target) {
      if (c.kind != ColumnKind::continuous) {
        throw SchemaError(fmt::format("target column '{}' must be continuous", c.name));
      }
      ++targets;
    }
  }
  if (targets != 1) throw SchemaError(fmt::format("schema needs exactly one target, found {}", targets));
  if (selected_.empty()) throw SchemaError("no selected inputs");
  std::set<std::string> seen;
  for (const auto& s : selected_) {
    auto idx = find(s);
    if (!idx) throw SchemaError(fmt::format("selected input '{}' is not a schema column", s));
    const auto role = columns_[*idx].role;
    if (role == ColumnRole::target || role == ColumnRole::ignored) {
      throw SchemaError(fmt::format("selected input '{}' is a target or ignored column", s));
    }
    if (!seen.insert(s).second) throw SchemaError(fmt::format("input '{}' selected twice", s));
  }
}

std::optional<std::size_t> DataSchema::find(std::string_view name) const {
  for (std::size_t i = 0; i < columns_.size(); ++i) {
    if (columns_[i].name == name) return i;
  }
  return std::nullopt;
}

const ColumnSpec& DataSchema::column(std::string_view name) const {
  auto idx = find(name);
  if (!idx) throw SchemaError(fmt::format("unknown column '{}'", name));
  return columns_[*idx];
}

std::size_t DataSchema::encoded_width() const {
  std::size_t width = 0;
  for (const auto& name : selected_) {
    const auto& c = column(name);
    width += c.kind == ColumnKind::continuous ? 1 : c.levels.size();
  }
  return width;
}

void DataSchema::append_level(std::size_t column, std::string level) {
  columns_.at(column).levels.push_back(std::move(level));
}

DataSchema DataSchema::default_schema() {
  using K = ColumnKind;
  using R = ColumnRole;
  std::vector<ColumnSpec> cols = {
      {"hardware_set", K::categorical, R::manufacturing_parameter, {"1", "2"}},
      {"material", K::categorical, R::manufacturing_parameter, {"UMA", "RPU", "EPX"}},
      {"thermal_cure", K::categorical, R::manufacturing_parameter, {"cure_uma", "cure_rpu", "cure_epx"}, true},
      {"layout", K::categorical, R::manufacturing_parameter, {"A", "B"}},
      {"x_mm", K::continuous, R::manufacturing_parameter, {}},
      {"y_mm", K::continuous, R::manufacturing_parameter, {}},
      {"r_mm", K::continuous, R::manufacturing_parameter, {}},
      {"build_id", K::categorical, R::ignored, {"1", "2", "3", "4", "5", "6", "7", "8", "9"}, true},
      {"part_design", K::categorical, R::feature_descriptor, {"clip", "plug", "bracket"}},
      {"nominal_dim_mm", K::continuous, R::feature_descriptor, {}},
      {"feature_class", K::categorical, R::feature_descriptor, {"thickness", "length", "diameter", "height"}},
      {"feature_category", K::categorical, R::feature_descriptor, {"inner", "outer"}},
      {"feature_id", K::categorical, R::ignored, {}, true},
      {"dft_mm", K::continuous, R::target, {}},
  };
  return DataSchema(std::move(cols), {"hardware_set", "material", "layout", "x_mm", "y_mm", "r_mm",
                                      "feature_class", "feature_category"});
}

DataSchema DataSchema::from_json(const nlohmann::json& doc) {
  try {
    std::vector<ColumnSpec> cols;
    for (const auto& c : doc.at("columns")) {
      ColumnSpec spec;
      spec.name = c.at("name").get<std::string>();
      spec.kind = parse_kind(c.at("kind").get<std::string>());
      spec.role = parse_role(c.value("role", std::string("manufacturing_parameter")));
      if (c.contains("levels")) {
        for (const auto& level : c.at("levels")) {
          spec.levels.push_back(level.is_string() ? level.get<std::string>() : level.dump());
        }
      }
      spec.open_levels = c.value("open_levels", false);
      cols.push_back(std::move(spec));
    }
    return DataSchema(std::move(cols), doc.at("selected_inputs").get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(fmt::format("malformed schema document: {}", e.what()));
  }
}

DataSchema DataSchema::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError(fmt::format("cannot open schema file '{}'", path.string()));
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(fmt::format("schema '{}' is not valid JSON: {}", path.string(), e.what()));
  }
  return from_json(doc);
}

nlohmann::json DataSchema::to_json() const {
  nlohmann::json cols = nlohmann::json::array();
  for (const auto& c : columns_) {
    nlohmann::json entry = {{"name", c.name}, {"kind", kind_name(c.kind)}, {"role", role_name(c.role)}};
    if (c.kind == ColumnKind::categorical) {
      entry["levels"] = c.levels;
      entry["open_levels"] = c.open_levels;
    }
    cols.push_back(std::move(entry));
  }
  return {{"columns", cols}, {"selected_inputs", selected_}};
}

// ---------------------------------------------------------------------------

RecordTable::RecordTable(DataSchema schema, std::vector<Column> columns)
    : schema_(std::move(schema)), columns_(std::move(columns)) {
  if (columns_.size() != schema_.columns().size()) {
    throw SchemaError("record table column count does not match schema");
  }
  rows_ = std::visit([](const auto& v) { return v.size(); }, columns_.front());
  if (rows_ == 0) throw SchemaError("record table has no rows");
  for (std::size_t i = 0; i < columns_.size(); ++i) {
    const auto& spec = schema_.columns()[i];
    const std::size_t len = std::visit([](const auto& v) { return v.size(); }, columns_[i]);
    if (len != rows_) throw SchemaError(fmt::format("column '{}' has {} rows, expected {}", spec.name, len, rows_));
    if (spec.kind == ColumnKind::continuous) {
      const auto* values = std::get_if<std::vector<double>>(&columns_[i]);
      if (!values) throw SchemaError(fmt::format("column '{}' should hold reals", spec.name));
      for (double v : *values) {
        if (!std::isfinite(v)) throw SchemaError(fmt::format("column '{}' has a non-finite value", spec.name));
      }
    } else {
      const auto* codes = std::get_if<std::vector<std::size_t>>(&columns_[i]);
      if (!codes) throw SchemaError(fmt::format("column '{}' should hold level codes", spec.name));
      for (auto code : *codes) {
        if (code >= spec.levels.size()) {
          throw LevelError(fmt::format("column '{}' holds an undeclared level", spec.name));
        }
      }
    }
  }
}

const std::vector<double>& RecordTable::continuous(std::string_view name) const {
  auto idx = schema_.find(name);
  if (!idx) throw SchemaError(fmt::format("unknown column '{}'", name));
  const auto* v = std::get_if<std::vector<double>>(&columns_[*idx]);
  if (!v) throw SchemaError(fmt::format("column '{}' is not continuous", name));
  return *v;
}

const std::vector<std::size_t>& RecordTable::categorical(std::string_view name) const {
  auto idx = schema_.find(name);
  if (!idx) throw SchemaError(fmt::format("unknown column '{}'", name));
  const auto* v = std::get_if<std::vector<std::size_t>>(&columns_[*idx]);
  if (!v) throw SchemaError(fmt::format("column '{}' is not categorical", name));
  return *v;
}

std::string_view RecordTable::level(std::string_view name, std::size_t row) const {
  return schema_.column(name).levels.at(categorical(name).at(row));
}

std::vector<double> RecordTable::targets() const { return continuous(schema_.target().name); }

RecordTable RecordTable::select_rows(std::span<const std::size_t> rows) const {
  std::vector<Column> out;
  out.reserve(columns_.size());
  for (const auto& col : columns_) {
    out.push_back(std::visit(
        [&](const auto& v) -> Column {
          std::decay_t<decltype(v)> picked;
          picked.reserve(rows.size());
          for (auto r : rows) picked.push_back(v.at(r));
          return picked;
        },
        col));
  }
  return RecordTable(schema_, std::move(out));
}

DesignMatrix DesignMatrix::select_rows(std::span<const std::size_t> rows) const {
  DesignMatrix out;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
  out.targets.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(rows[i]);
    if (r >= features.rows()) throw std::out_of_range("design matrix row index out of range");
    out.features.row(static_cast<Eigen::Index>(i)) = features.row(r);
    out.targets(static_cast<Eigen::Index>(i)) = targets(r);
  }
  out.column_labels = column_labels;
  out.column_kinds = column_kinds;
  return out;
}

// ---------------------------------------------------------------------------

RecordTable parse_csv(std::istream& in, const DataSchema& schema_in) {
  DataSchema schema = schema_in;
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("CSV input is empty (header row required)");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF &&
      static_cast<unsigned char>(line[1]) == 0xBB && static_cast<unsigned char>(line[2]) == 0xBF) {
    line.erase(0, 3);
  }
  const auto header = split_csv_line(line);
  std::vector<std::size_t> source(schema.columns().size());
  for (std::size_t c = 0; c < schema.columns().size(); ++c) {
    const auto& name = schema.columns()[c].name;
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw SchemaError(fmt::format("CSV is missing schema column '{}'", name));
    source[c] = static_cast<std::size_t>(it - header.begin());
  }

  std::vector<RecordTable::Column> columns;
  for (const auto& spec : schema.columns()) {
    if (spec.kind == ColumnKind::continuous) {
      columns.emplace_back(std::vector<double>{});
    } else {
      columns.emplace_back(std::vector<std::size_t>{});
    }
  }

  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    const auto fields = split_csv_line(line);
    for (std::size_t c = 0; c < schema.columns().size(); ++c) {
      const auto& spec = schema.columns()[c];
      if (source[c] >= fields.size() || fields[source[c]].empty()) {
        throw ParseError(fmt::format("row {}, column '{}': missing value", row, spec.name), row, spec.name);
      }
      const std::string& cell = fields[source[c]];
      if (spec.kind == ColumnKind::continuous) {
        double value = 0.0;
        const char* first = cell.data();
        const char* last = cell.data() + cell.size();
        if (*first == '+') ++first;
        auto [ptr, ec] = std::from_chars(first, last, value);
        if (ec != std::errc{} || ptr != last || !std::isfinite(value)) {
          throw ParseError(fmt::format("row {}, column '{}': cannot parse '{}' as a number", row, spec.name, cell),
                           row, spec.name);
        }
        std::get<std::vector<double>>(columns[c]).push_back(value);
      } else {
        auto level = spec.level_index(cell);
        if (!level) {
          if (!spec.open_levels) {
            throw LevelError(fmt::format("row {}, column '{}': level '{}' is not declared", row, spec.name, cell));
          }
          schema.append_level(c, cell);
          level = schema.columns()[c].levels.size() - 1;
        }
        std::get<std::vector<std::size_t>>(columns[c]).push_back(*level);
      }
    }
  }
  if (row == 0) throw SchemaError("CSV has a header but no data rows");
  return RecordTable(std::move(schema), std::move(columns));
}

RecordTable load_csv(const std::filesystem::path& path, const DataSchema& schema) {
  std::ifstream in(path);
  if (!in) throw SchemaError(fmt::format("cannot open data file '{}'", path.string()));
  return parse_csv(in, schema);
}

DesignMatrix encode(const RecordTable& table) {
  const auto& schema = table.schema();
  const auto n = static_cast<Eigen::Index>(table.rows());
  DesignMatrix out;
  for (const auto& name : schema.selected_inputs()) {
    const auto& spec = schema.column(name);
    if (spec.kind == ColumnKind::continuous) {
      out.column_labels.push_back(name);
      out.column_kinds.push_back(ColumnKind::continuous);
    } else {
      if (spec.levels.empty()) throw SchemaError(fmt::format("selected column '{}' has no levels", name));
      for (const auto& level : spec.levels) {
        out.column_labels.push_back(name + "=" + level);
        out.column_kinds.push_back(ColumnKind::categorical);
      }
    }
  }
  out.features = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(out.column_labels.size()));
  Eigen::Index col = 0;
  for (const auto& name : schema.selected_inputs()) {
    const auto& spec = schema.column(name);
    if (spec.kind == ColumnKind::continuous) {
      const auto& values = table.continuous(name);
      for (Eigen::Index r = 0; r < n; ++r) out.features(r, col) = values[static_cast<std::size_t>(r)];
      ++col;
    } else {
      const auto& codes = table.categorical(name);
      for (Eigen::Index r = 0; r < n; ++r) {
        out.features(r, col + static_cast<Eigen::Index>(codes[static_cast<std::size_t>(r)])) = 1.0;
      }
      col += static_cast<Eigen::Index>(spec.levels.size());
    }
  }
  const auto targets = table.targets();
  out.targets = Eigen::Map<const Eigen::VectorXd>(targets.data(), n);
  return out;
}

// ---------------------------------------------------------------------------

ScalerMethod parse_scaler_method(std::string_view name) {
  if (name == "zscore") return ScalerMethod::zscore;
  if (name == "minmax") return ScalerMethod::minmax;
  if (name == "none") return ScalerMethod::none;
  throw ConfigError(fmt::format("unknown scaler method '{}'", name));
}

std::string_view to_string(ScalerMethod method) {
  switch (method) {
    case ScalerMethod::zscore: return "zscore";
    case ScalerMethod::minmax: return "minmax";
    case ScalerMethod::none: return "none";
  }
  return "none";
}

ScalerState fit_scaler(const DesignMatrix& matrix, ScalerMethod method) {
  std::vector<std::size_t> all(static_cast<std::size_t>(matrix.rows()));
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return fit_scaler(matrix, all, method);
}

ScalerState fit_scaler(const DesignMatrix& matrix, std::span<const std::size_t> rows, ScalerMethod method) {
  if (rows.empty()) throw ConfigError("cannot fit a scaler on zero rows");
  ScalerState state;
  state.method = method;
  state.column_labels = matrix.column_labels;
  if (method == ScalerMethod::none) return state;
  const double count = static_cast<double>(rows.size());
  for (std::size_t c = 0; c < matrix.column_kinds.size(); ++c) {
    if (matrix.column_kinds[c] != ColumnKind::continuous) continue;
    const auto col = static_cast<Eigen::Index>(c);
    double center = 0.0;
    double scale = 1.0;
    bool constant = false;
    if (method == ScalerMethod::zscore) {
      double sum = 0.0;
      for (auto r : rows) sum += matrix.features(static_cast<Eigen::Index>(r), col);
      center = sum / count;
      double ss = 0.0;
      for (auto r : rows) {
        const double d = matrix.features(static_cast<Eigen::Index>(r), col) - center;
        ss += d * d;
      }
      scale = std::sqrt(ss / count);
    } else {
      double lo = std::numeric_limits<double>::infinity();
      double hi = -lo;
      for (auto r : rows) {
        const double v = matrix.features(static_cast<Eigen::Index>(r), col);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      center = lo;
      scale = hi - lo;
    }
    if (!(scale > 0.0)) {
      scale = 1.0;
      constant = true;
    }
    state.scaled_columns.push_back(c);
    state.center.push_back(center);
    state.scale.push_back(scale);
    state.constant.push_back(constant);
  }
  return state;
}

namespace {

void check_layout(const ScalerState& state, const std::vector<std::string>& labels) {
  if (state.column_labels != labels) {
    throw LayoutError("scaler was fitted on a different column layout");
  }
}

}  // namespace

Eigen::MatrixXd apply_scaler(const ScalerState& state, const Eigen::MatrixXd& features) {
  if (static_cast<std::size_t>(features.cols()) != state.column_labels.size()) {
    throw LayoutError(fmt::format("scaler expects {} columns, matrix has {}", state.column_labels.size(),
                                  features.cols()));
  }
  Eigen::MatrixXd out = features;
  for (std::size_t i = 0; i < state.scaled_columns.size(); ++i) {
    auto col = out.col(static_cast<Eigen::Index>(state.scaled_columns[i]));
    col = ((col.array() - state.center[i]) / state.scale[i]).matrix();
  }
  return out;
}

DesignMatrix apply_scaler(const ScalerState& state, const DesignMatrix& matrix) {
  check_layout(state, matrix.column_labels);
  DesignMatrix out = matrix;
  out.features = apply_scaler(state, matrix.features);
  return out;
}

DesignMatrix invert_scaler(const ScalerState& state, const DesignMatrix& matrix) {
  check_layout(state, matrix.column_labels);
  DesignMatrix out = matrix;
  for (std::size_t i = 0; i < state.scaled_columns.size(); ++i) {
    auto col = out.features.col(static_cast<Eigen::Index>(state.scaled_columns[i]));
    col = (col.array() * state.scale[i] + state.center[i]).matrix();
  }
  return out;
}

nlohmann::json to_json(const ScalerState& state) {
  return {{"method", to_string(state.method)},
          {"column_labels", state.column_labels},
          {"scaled_columns", state.scaled_columns},
          {"center", state.center},
          {"scale", state.scale},
          {"constant", state.constant}};
}

ScalerState scaler_from_json(const nlohmann::json& doc) {
  ScalerState s;
  s.method = parse_scaler_method(doc.at("method").get<std::string>());
  s.column_labels = doc.at("column_labels").get<std::vector<std::string>>();
  s.scaled_columns = doc.at("scaled_columns").get<std::vector<std::size_t>>();
  s.center = doc.at("center").get<std::vector<double>>();
  s.scale = doc.at("scale").get<std::vector<double>>();
  s.constant = doc.at("constant").get<std::vector<bool>>();
  return s;
}

// ---------------------------------------------------------------------------
// Synthetic fixture. Parts sit on a 9 x 5 grid of build-plate slots
// (189 x 118 mm plate), five measured features per part.

namespace {

constexpr double kPlateCenterX = 94.5;
constexpr double kPlateCenterY = 59.0;

double column_value(const DesignMatrix& m, Eigen::Index row, std::string_view label) {
  auto it = std::find(m.column_labels.begin(), m.column_labels.end(), label);
  if (it == m.column_labels.end()) {
    throw SchemaError(fmt::format("synthetic response needs column '{}'", label));
  }
  return m.features(row, static_cast<Eigen::Index>(it - m.column_labels.begin()));
}

}  // namespace

Eigen::VectorXd synthetic_ground_truth(const DesignMatrix& m) {
  Eigen::VectorXd truth(m.rows());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto v = [&](std::string_view label) { return column_value(m, r, label); };
    const double epx = v("material=EPX");
    const double inner = v("feature_category=inner");
    const double diameter = v("feature_class=diameter");
    const double x = v("x_mm");
    const double y = v("y_mm");
    const double radius = v("r_mm");

    double f = 0.0;
    f += 0.05 * v("hardware_set=2");
    f += -0.12 * v("material=UMA") + 0.04 * v("material=RPU") + 0.14 * epx;
    f += 0.03 * v("layout=B");
    f += 0.10 * v("feature_class=thickness") - 0.18 * v("feature_class=length") - 0.04 * diameter +
         0.12 * v("feature_class=height");
    f += 0.06 * v("feature_category=outer") - 0.06 * inner;
    // inner diameters shrink more, and more so for epoxy
    f += -0.14 * inner * diameter * (1.0 + 0.6 * epx);
    f += 0.07 * std::tanh((x - kPlateCenterX) / 40.0);
    f += 0.05 * std::sin(y / 18.0);
    f += 0.10 * (1.0 + 0.5 * epx) * (radius / 110.0) * (radius / 110.0);
    truth(r) = f;
  }
  return truth;
}

RecordTable generate_synthetic(std::size_t n, double noise_sigma, std::uint64_t seed) {
  if (n == 0) throw ConfigError("synthetic table needs n >= 1");
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
  DataSchema schema = DataSchema::default_schema();
  Rng rng(seed);

  std::vector<std::size_t> hardware(n), material(n), cure(n), layout(n), build(n), design(n), fclass(n),
      category(n), feature_id(n);
  std::vector<double> xs(n), ys(n), rs(n), nominal(n), dft(n, 0.0);

  const auto feature_col = *schema.find("feature_id");
  std::unordered_map<std::string, std::size_t> feature_ids;
  const auto& designs = schema.column("part_design").levels;
  const auto& classes = schema.column("feature_class").levels;
  const auto& categories = schema.column("feature_category").levels;

  for (std::size_t i = 0; i < n; ++i) {
    build[i] = rng.below(9);
    hardware[i] = build[i] % 2;
    material[i] = (build[i] / 3) % 3;
    cure[i] = material[i];
    layout[i] = rng.below(2);
    const std::size_t slot_x = rng.below(9);
    const std::size_t slot_y = rng.below(5);
    xs[i] = 10.5 + 21.0 * static_cast<double>(slot_x);
    ys[i] = 11.8 + 23.6 * static_cast<double>(slot_y);
    rs[i] = std::hypot(xs[i] - kPlateCenterX, ys[i] - kPlateCenterY);
    // layout A: clips left, plugs centre, brackets right; layout B rotates the clusters
    const std::size_t segment = slot_x / 3;
    design[i] = layout[i] == 0 ? segment : (segment + 2) % 3;
    fclass[i] = rng.below(4);
    category[i] = rng.below(2);
    nominal[i] = std::round((2.0 + 8.0 * rng.uniform() + 10.0 * static_cast<double>(fclass[i])) * 100.0) / 100.0;
    const std::string id = designs[design[i]] + "_" + classes[fclass[i]] + "_" + categories[category[i]];
    auto it = feature_ids.find(id);
    if (it == feature_ids.end()) {
      schema.append_level(feature_col, id);
      it = feature_ids.emplace(id, feature_ids.size()).first;
    }
    feature_id[i] = it->second;
  }

  auto make_table = [&](const std::vector<double>& targets) {
    std::vector<RecordTable::Column> cols = {hardware, material, cure, layout, xs, ys, rs, build,
                                             design, nominal, fclass, category, feature_id, targets};
    return RecordTable(schema, std::move(cols));
  };

  const Eigen::VectorXd truth = synthetic_ground_truth(encode(make_table(dft)));
  for (std::size_t i = 0; i < n; ++i) {
    dft[i] = truth(static_cast<Eigen::Index>(i));
    if (noise_sigma > 0.0) dft[i] += noise_sigma * rng.normal();
  }
  return make_table(dft);
}

}  // namespace dftuq
