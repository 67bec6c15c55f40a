#pragma once

#include "dftuq/model.hpp"

#include <Eigen/Cholesky>

#include <array>
#include <cstdint>

namespace dftuq {

/// Matern(nu = 3/2) amplitude and length scale plus a White-noise variance.
/// Optimised in log space.
struct KernelParams {
  double amplitude = 1.0;
  double length_scale = 1.0;
  double noise_level = 1.0;

  std::array<double, 3> log_values() const;
  static KernelParams from_log(const Eigen::Vector3d& logs);
};

/// amplitude * (1 + sqrt(3) r / l) * exp(-sqrt(3) r / l)
double matern32(double r, double amplitude, double length_scale);

/// Matern covariance between two point sets; no noise term.
Eigen::MatrixXd cross_gram(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const KernelParams& params);
/// Covariance of a set with itself, White noise added on the diagonal.
Eigen::MatrixXd gram(const Eigen::MatrixXd& x, const KernelParams& params);

struct LmlResult {
  double value = 0.0;
  Eigen::Vector3d gradient = Eigen::Vector3d::Zero();  // wrt log(amplitude, length, noise)
  double jitter = 0.0;
};

/// -0.5 y^T alpha - sum(log diag L) - n/2 log(2 pi) with its analytic
/// gradient. Cholesky failures escalate the jitter 1e-10 -> 1e-8 -> 1e-6 and
/// then throw NumericalError.
LmlResult log_marginal_likelihood(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const KernelParams& params,
                                  bool with_gradient = true);

struct GprConfig {
  KernelParams init;
  int n_restarts = 0;
  bool optimize = true;
  std::uint64_t seed = 2022;
};

class GprRegressor final : public ProbabilisticRegressor {
 public:
  explicit GprRegressor(GprConfig config);

  void fit(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets) override;
  using Regressor::fit;
  /// Stddev includes the learned White-noise variance (observation noise).
  PredictiveDistribution predict_dist(const Eigen::MatrixXd& features) const override;
  /// Stddev of the latent function only.
  PredictiveDistribution predict_latent(const Eigen::MatrixXd& features) const;
  std::string name() const override { return "gpr"; }

  const KernelParams& kernel() const { return kernel_; }
  double log_marginal_likelihood() const { return lml_; }
  double jitter() const { return jitter_; }
  const Eigen::MatrixXd& cholesky_factor() const { return chol_; }
  const Eigen::VectorXd& alpha() const { return alpha_; }

 private:
  Eigen::VectorXd latent_variance(const Eigen::MatrixXd& cross) const;

  GprConfig config_;
  KernelParams kernel_;
  Eigen::MatrixXd train_x_;
  Eigen::MatrixXd chol_;  // lower triangular
  Eigen::VectorXd alpha_;
  double lml_ = 0.0;
  double jitter_ = 0.0;
  bool fitted_ = false;
};

}  // namespace dftuq
