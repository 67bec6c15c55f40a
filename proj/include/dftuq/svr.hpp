#pragma once

#include "dftuq/model.hpp"

#include <optional>

namespace dftuq {

struct SvrConfig {
  double epsilon = 0.1;  // mm
  double c = 1.0;
  // gamma = 1 / (d * var(X)) over all feature values when unset ("scale")
  std::optional<double> gamma;
  double tolerance = 1e-3;
  long max_iterations = 10'000'000;
};

enum class SvrStatus { converged, max_iterations };

/// Epsilon-insensitive support vector regression with an RBF kernel, solved
/// in the dual by sequential minimal optimisation with second-order working
/// set selection over the 2n-variable formulation.
class SvrRegressor final : public Regressor {
 public:
  explicit SvrRegressor(SvrConfig config);

  void fit(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets) override;
  using Regressor::fit;
  Eigen::VectorXd predict(const Eigen::MatrixXd& features) const override;
  std::string name() const override { return "svr"; }

  SvrStatus status() const { return status_; }
  /// Final maximal KKT violation (m(alpha) - M(alpha)).
  double kkt_violation() const { return violation_; }
  long iterations() const { return iterations_; }
  double gamma() const { return gamma_; }
  double bias() const { return bias_; }
  /// alpha_i - alpha_i^* per training row.
  const Eigen::VectorXd& dual_coefficients() const { return coef_; }

 private:
  SvrConfig config_;
  Eigen::MatrixXd train_x_;
  Eigen::VectorXd coef_;
  double bias_ = 0.0;
  double gamma_ = 1.0;
  double violation_ = 0.0;
  long iterations_ = 0;
  SvrStatus status_ = SvrStatus::converged;
  bool fitted_ = false;
};

}  // namespace dftuq
