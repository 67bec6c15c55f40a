#include "dftuq/gpr.hpp"

#include "dftuq/errors.hpp"
#include "dftuq/optim.hpp"
#include "dftuq/random.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>

namespace dftuq {

namespace {

const double kSqrt3 = std::sqrt(3.0);
constexpr std::array<double, 3> kJitterLadder = {1e-10, 1e-8, 1e-6};
const double kLogLowerBound = std::log(1e-5);
const double kLogUpperBound = std::log(1e5);
const double kRestartLow = std::log(1e-3);
const double kRestartHigh = std::log(1e3);

Eigen::MatrixXd pairwise_distances(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.cols() != b.cols()) throw ConfigError("gpr: feature dimension mismatch");
  const Eigen::VectorXd na = a.rowwise().squaredNorm();
  const Eigen::VectorXd nb = b.rowwise().squaredNorm();
  Eigen::MatrixXd d2 = (-2.0 * a * b.transpose()).colwise() + na;
  d2.rowwise() += nb.transpose();
  return d2.cwiseMax(0.0).cwiseSqrt();
}

Eigen::MatrixXd matern_from_distances(const Eigen::MatrixXd& dist, const KernelParams& p) {
  const Eigen::ArrayXXd s = dist.array() * (kSqrt3 / p.length_scale);
  return (p.amplitude * (1.0 + s) * (-s).exp()).matrix();
}

struct Factorization {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter = 0.0;
};

Factorization factorize(Eigen::MatrixXd k) {
  const Eigen::Index n = k.rows();
  double applied = 0.0;
  for (double jitter : kJitterLadder) {
    k.diagonal().array() += jitter - applied;
    applied = jitter;
    Factorization f;
    f.llt.compute(k);
    if (f.llt.info() == Eigen::Success && f.llt.matrixLLT().diagonal().minCoeff() > 0.0) {
      f.jitter = jitter;
      return f;
    }
  }
  throw NumericalError(fmt::format("gpr: covariance of {} points is not positive definite after jitter 1e-6", n));
}

}  // namespace

std::array<double, 3> KernelParams::log_values() const {
  return {std::log(amplitude), std::log(length_scale), std::log(noise_level)};
}

KernelParams KernelParams::from_log(const Eigen::Vector3d& logs) {
  return {std::exp(logs(0)), std::exp(logs(1)), std::exp(logs(2))};
}

double matern32(double r, double amplitude, double length_scale) {
  const double s = kSqrt3 * r / length_scale;
  return amplitude * (1.0 + s) * std::exp(-s);
}

Eigen::MatrixXd cross_gram(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const KernelParams& params) {
  return matern_from_distances(pairwise_distances(a, b), params);
}

Eigen::MatrixXd gram(const Eigen::MatrixXd& x, const KernelParams& params) {
  Eigen::MatrixXd k = cross_gram(x, x, params);
  k.diagonal().array() += params.noise_level;
  return k;
}

LmlResult log_marginal_likelihood(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const KernelParams& params,
                                  bool with_gradient) {
  if (x.rows() != y.size() || x.rows() == 0) throw ConfigError("gpr: empty or misaligned training data");
  const Eigen::MatrixXd dist = pairwise_distances(x, x);
  const Eigen::MatrixXd matern = matern_from_distances(dist, params);
  Eigen::MatrixXd k = matern;
  k.diagonal().array() += params.noise_level;
  const Factorization f = factorize(std::move(k));

  const Eigen::VectorXd alpha = f.llt.solve(y);
  const double n = static_cast<double>(y.size());
  LmlResult out;
  out.jitter = f.jitter;
  out.value = -0.5 * y.dot(alpha) - f.llt.matrixLLT().diagonal().array().log().sum() -
              0.5 * n * std::log(2.0 * M_PI);
  if (!with_gradient) return out;

  // d LML / d theta = 0.5 tr((alpha alpha^T - K^-1) dK/dtheta)
  Eigen::MatrixXd w = -f.llt.solve(Eigen::MatrixXd::Identity(y.size(), y.size()));
  w.noalias() += alpha * alpha.transpose();
  const Eigen::ArrayXXd s = dist.array() * (kSqrt3 / params.length_scale);
  const Eigen::ArrayXXd d_length = params.amplitude * s.square() * (-s).exp();
  out.gradient(0) = 0.5 * (w.array() * matern.array()).sum();
  out.gradient(1) = 0.5 * (w.array() * d_length).sum();
  out.gradient(2) = 0.5 * params.noise_level * w.trace();
  return out;
}

// ---------------------------------------------------------------------------

GprRegressor::GprRegressor(GprConfig config) : config_(config) {
  const auto& p = config_.init;
  if (!(p.amplitude > 0.0) || !(p.length_scale > 0.0) || !(p.noise_level > 0.0)) {
    throw ConfigError("gpr: kernel parameters must be positive");
  }
  if (config_.n_restarts < 0) throw ConfigError("gpr: n_restarts must be >= 0");
}

void GprRegressor::fit(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets) {
  if (features.rows() == 0 || features.rows() != targets.size()) {
    throw ConfigError("gpr: empty or misaligned training data");
  }
  KernelParams best = config_.init;
  if (config_.optimize) {
    const auto init_logs = config_.init.log_values();
    LbfgsOptions options;
    options.max_iterations = 200;
    options.min_improvement = 1e-9;
    options.gradient_tolerance = 1e-8;
    options.lower = Eigen::Vector3d::Constant(kLogLowerBound);
    options.upper = Eigen::Vector3d::Constant(kLogUpperBound);

    auto objective = [&](const Eigen::VectorXd& logs, Eigen::VectorXd& grad) {
      try {
        const auto r = dftuq::log_marginal_likelihood(features, targets, KernelParams::from_log(logs), true);
        grad = -r.gradient;
        return -r.value;
      } catch (const NumericalError&) {
        grad = Eigen::VectorXd::Zero(3);
        return std::numeric_limits<double>::infinity();
      }
    };

    Rng rng(config_.seed);
    double best_value = std::numeric_limits<double>::infinity();
    bool any = false;
    for (int restart = 0; restart <= config_.n_restarts; ++restart) {
      Eigen::VectorXd start(3);
      if (restart == 0) {
        start << init_logs[0], init_logs[1], init_logs[2];
      } else {
        for (int k = 0; k < 3; ++k) start(k) = rng.uniform(kRestartLow, kRestartHigh);
      }
      const auto result = minimize_lbfgs(objective, start, options);
      if (std::isfinite(result.value) && result.value < best_value) {
        best_value = result.value;
        best = KernelParams::from_log(result.x);
        any = true;
      }
    }
    if (!any) throw NumericalError("gpr: every optimizer restart failed to factorize the covariance");
  }

  kernel_ = best;
  train_x_ = features;
  const Factorization f = factorize(gram(features, kernel_));
  chol_ = f.llt.matrixL();
  jitter_ = f.jitter;
  alpha_ = f.llt.solve(targets);
  lml_ = -0.5 * targets.dot(alpha_) - chol_.diagonal().array().log().sum() -
         0.5 * static_cast<double>(targets.size()) * std::log(2.0 * M_PI);
  fitted_ = true;
}

Eigen::VectorXd GprRegressor::latent_variance(const Eigen::MatrixXd& cross) const {
  const Eigen::MatrixXd v = chol_.triangularView<Eigen::Lower>().solve(cross.transpose());
  Eigen::VectorXd var = kernel_.amplitude - v.colwise().squaredNorm().transpose().array();
  return var;
}

PredictiveDistribution GprRegressor::predict_latent(const Eigen::MatrixXd& features) const {
  if (!fitted_) throw ConfigError("gpr: predict before fit");
  const Eigen::MatrixXd cross = cross_gram(features, train_x_, kernel_);
  PredictiveDistribution out;
  out.means = cross * alpha_;
  out.stddevs = latent_variance(cross).cwiseMax(0.0).cwiseSqrt();
  return out;
}

PredictiveDistribution GprRegressor::predict_dist(const Eigen::MatrixXd& features) const {
  if (!fitted_) throw ConfigError("gpr: predict before fit");
  const Eigen::MatrixXd cross = cross_gram(features, train_x_, kernel_);
  PredictiveDistribution out;
  out.means = cross * alpha_;
  out.stddevs = (latent_variance(cross).array() + kernel_.noise_level).cwiseMax(0.0).sqrt();
  return out;
}

}  // namespace dftuq
