#include "dftuq/model.hpp"

#include "dftuq/errors.hpp"

#include <fmt/format.h>

#include <cmath>
#include <ostream>

namespace dftuq {

void PredictiveDistribution::validate() const {
  if (means.size() != stddevs.size()) throw NumericalError("predictive means and stddevs differ in length");
  if (!means.allFinite() || !stddevs.allFinite()) throw NumericalError("non-finite predictive distribution");
  if ((stddevs.array() < 0.0).any()) throw NumericalError("negative predictive stddev");
}

double rmse(const Eigen::VectorXd& predicted, const Eigen::VectorXd& actual) {
  if (predicted.size() != actual.size()) {
    throw ConfigError(fmt::format("rmse: length mismatch ({} vs {})", predicted.size(), actual.size()));
  }
  if (predicted.size() == 0) throw ConfigError("rmse: empty input");
  return std::sqrt((predicted - actual).squaredNorm() / static_cast<double>(predicted.size()));
}

double combined_noise_floor(double repeatability, double measurement_uncertainty) {
  if (repeatability < 0.0 || measurement_uncertainty < 0.0) {
    throw ConfigError("noise components must be non-negative");
  }
  return std::hypot(repeatability, measurement_uncertainty);
}

ParityTable parity_table(const Eigen::VectorXd& measured, const Eigen::VectorXd& predicted,
                         const std::optional<Eigen::VectorXd>& aleatoric,
                         const std::optional<Eigen::VectorXd>& epistemic) {
  const auto n = measured.size();
  if (predicted.size() != n || (aleatoric && aleatoric->size() != n) || (epistemic && epistemic->size() != n)) {
    throw ConfigError("parity table: columns have different lengths");
  }
  ParityTable table;
  table.rows.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    ParityRow row{measured(i), predicted(i), std::nullopt, std::nullopt};
    if (aleatoric) row.aleatoric = (*aleatoric)(i);
    if (epistemic) row.epistemic = (*epistemic)(i);
    if (!std::isfinite(row.measured) || !std::isfinite(row.predicted) ||
        (row.aleatoric && !std::isfinite(*row.aleatoric)) || (row.epistemic && !std::isfinite(*row.epistemic))) {
      throw NumericalError(fmt::format("parity table: non-finite value in row {}", i));
    }
    table.rows.push_back(row);
  }
  return table;
}

std::string format_number(double value) { return fmt::format("{}", value); }

void ParityTable::write_csv(std::ostream& out) const {
  // uncertainty columns appear only when some row carries them
  bool has_aleatoric = false, has_epistemic = false;
  for (const auto& r : rows) {
    has_aleatoric = has_aleatoric || r.aleatoric.has_value();
    has_epistemic = has_epistemic || r.epistemic.has_value();
  }
  out << "measured_mm,predicted_mm";
  if (has_aleatoric) out << ",aleatoric_mm";
  if (has_epistemic) out << ",epistemic_mm";
  out << '\n';
  for (const auto& r : rows) {
    out << format_number(r.measured) << ',' << format_number(r.predicted);
    if (has_aleatoric) out << ',' << (r.aleatoric ? format_number(*r.aleatoric) : "");
    if (has_epistemic) out << ',' << (r.epistemic ? format_number(*r.epistemic) : "");
    out << '\n';
  }
}

}  // namespace dftuq
