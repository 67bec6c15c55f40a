#pragma once

#include "dftuq/tabular.hpp"

#include <Eigen/Dense>

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace dftuq {

/// Per-query predictive mean and standard deviation, both in mm.
struct PredictiveDistribution {
  Eigen::VectorXd means;
  Eigen::VectorXd stddevs;

  /// Throws NumericalError when lengths differ, entries are non-finite or a
  /// stddev is negative.
  void validate() const;
};

/// Common contract for every model family. Inputs are already encoded and
/// scaled; models never own preprocessing.
class Regressor {
 public:
  virtual ~Regressor() = default;

  virtual void fit(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets) = 0;
  virtual Eigen::VectorXd predict(const Eigen::MatrixXd& features) const = 0;
  virtual std::string name() const = 0;

  void fit(const DesignMatrix& train) { fit(train.features, train.targets); }
};

class ProbabilisticRegressor : public Regressor {
 public:
  virtual PredictiveDistribution predict_dist(const Eigen::MatrixXd& features) const = 0;

  Eigen::VectorXd predict(const Eigen::MatrixXd& features) const override {
    return predict_dist(features).means;
  }
};

/// Root mean squared difference. Throws ConfigError on empty or mismatched input.
double rmse(const Eigen::VectorXd& predicted, const Eigen::VectorXd& actual);

/// sqrt(repeatability^2 + measurement_uncertainty^2): the RMSE floor an ideal
/// regressor can reach on noisy measurements.
double combined_noise_floor(double repeatability, double measurement_uncertainty);

struct ParityRow {
  double measured = 0.0;
  double predicted = 0.0;
  std::optional<double> aleatoric;
  std::optional<double> epistemic;
};

struct ParityTable {
  std::vector<ParityRow> rows;

  /// CSV with header measured_mm,predicted_mm,aleatoric_mm,epistemic_mm;
  /// absent uncertainty columns are left empty.
  void write_csv(std::ostream& out) const;
};

ParityTable parity_table(const Eigen::VectorXd& measured, const Eigen::VectorXd& predicted,
                         const std::optional<Eigen::VectorXd>& aleatoric = std::nullopt,
                         const std::optional<Eigen::VectorXd>& epistemic = std::nullopt);

/// Shortest round-trip decimal text for a double; used by every report writer.
std::string format_number(double value);

}  // namespace dftuq
