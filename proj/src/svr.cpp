#include "dftuq/svr.hpp"

#include "dftuq/errors.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace dftuq {

namespace {

constexpr double kTau = 1e-12;

Eigen::MatrixXd rbf_gram(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double gamma) {
  const Eigen::VectorXd na = a.rowwise().squaredNorm();
  const Eigen::VectorXd nb = b.rowwise().squaredNorm();
  Eigen::MatrixXd d2 = (-2.0 * a * b.transpose()).colwise() + na;
  d2.rowwise() += nb.transpose();
  return (-gamma * d2.cwiseMax(0.0)).array().exp().matrix();
}

}  // namespace

SvrRegressor::SvrRegressor(SvrConfig config) : config_(config) {
  if (!(config_.epsilon >= 0.0)) throw ConfigError("svr: epsilon must be >= 0");
  if (!(config_.c > 0.0)) throw ConfigError("svr: C must be > 0");
  if (config_.gamma && !(*config_.gamma > 0.0)) throw ConfigError("svr: gamma must be > 0");
  if (!(config_.tolerance > 0.0)) throw ConfigError("svr: tolerance must be > 0");
  if (config_.max_iterations < 1) throw ConfigError("svr: max_iterations must be >= 1");
}

void SvrRegressor::fit(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets) {
  const Eigen::Index n = features.rows();
  if (n == 0 || n != targets.size()) throw ConfigError("svr: empty or misaligned training data");
  train_x_ = features;

  if (config_.gamma) {
    gamma_ = *config_.gamma;
  } else {
    const double mean = features.mean();
    const double var = (features.array() - mean).square().mean();
    gamma_ = var > 0.0 ? 1.0 / (static_cast<double>(features.cols()) * var) : 1.0;
  }
  const Eigen::MatrixXd kernel = rbf_gram(features, features, gamma_);

  // Variables t < n are alpha_t (sign +1), t >= n are alpha*_{t-n} (sign -1).
  const Eigen::Index l = 2 * n;
  const double c = config_.c;
  std::vector<double> alpha(static_cast<std::size_t>(l), 0.0);
  std::vector<double> grad(static_cast<std::size_t>(l));
  std::vector<int> sign(static_cast<std::size_t>(l));
  for (Eigen::Index t = 0; t < n; ++t) {
    grad[static_cast<std::size_t>(t)] = config_.epsilon - targets(t);
    grad[static_cast<std::size_t>(t + n)] = config_.epsilon + targets(t);
    sign[static_cast<std::size_t>(t)] = 1;
    sign[static_cast<std::size_t>(t + n)] = -1;
  }
  auto q = [&](Eigen::Index i, Eigen::Index j) {
    return static_cast<double>(sign[static_cast<std::size_t>(i)] * sign[static_cast<std::size_t>(j)]) *
           kernel(i % n, j % n);
  };
  auto upper = [&](Eigen::Index t) { return alpha[static_cast<std::size_t>(t)] >= c; };
  auto lower = [&](Eigen::Index t) { return alpha[static_cast<std::size_t>(t)] <= 0.0; };

  status_ = SvrStatus::max_iterations;
  iterations_ = 0;
  violation_ = std::numeric_limits<double>::infinity();
  for (; iterations_ < config_.max_iterations; ++iterations_) {
    // i: maximal violating index from the "up" set
    double gmax = -std::numeric_limits<double>::infinity();
    Eigen::Index i = -1;
    for (Eigen::Index t = 0; t < l; ++t) {
      const auto ts = static_cast<std::size_t>(t);
      if (sign[ts] == 1) {
        if (!upper(t) && -grad[ts] >= gmax) {
          gmax = -grad[ts];
          i = t;
        }
      } else if (!lower(t) && grad[ts] >= gmax) {
        gmax = grad[ts];
        i = t;
      }
    }
    // j: second-order selection from the "low" set
    double gmax2 = -std::numeric_limits<double>::infinity();
    double best_obj = std::numeric_limits<double>::infinity();
    Eigen::Index j = -1;
    for (Eigen::Index t = 0; t < l; ++t) {
      const auto ts = static_cast<std::size_t>(t);
      if (sign[ts] == 1) {
        if (lower(t)) continue;
        gmax2 = std::max(gmax2, grad[ts]);
        const double diff = gmax + grad[ts];
        if (diff > 0.0 && i >= 0) {
          double quad = q(i, i) + q(t, t) - 2.0 * sign[static_cast<std::size_t>(i)] * q(i, t);
          const double obj = -diff * diff / (quad > 0.0 ? quad : kTau);
          if (obj <= best_obj) {
            best_obj = obj;
            j = t;
          }
        }
      } else {
        if (upper(t)) continue;
        gmax2 = std::max(gmax2, -grad[ts]);
        const double diff = gmax - grad[ts];
        if (diff > 0.0 && i >= 0) {
          double quad = q(i, i) + q(t, t) + 2.0 * sign[static_cast<std::size_t>(i)] * q(i, t);
          const double obj = -diff * diff / (quad > 0.0 ? quad : kTau);
          if (obj <= best_obj) {
            best_obj = obj;
            j = t;
          }
        }
      }
    }
    violation_ = (i < 0) ? 0.0 : gmax + gmax2;
    if (i < 0 || j < 0 || violation_ < config_.tolerance) {
      if (!std::isfinite(violation_)) violation_ = 0.0;
      status_ = SvrStatus::converged;
      break;
    }

    const auto is = static_cast<std::size_t>(i);
    const auto js = static_cast<std::size_t>(j);
    const double old_i = alpha[is];
    const double old_j = alpha[js];
    const double qij = q(i, j);
    if (sign[is] != sign[js]) {
      double quad = q(i, i) + q(j, j) + 2.0 * qij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (-grad[is] - grad[js]) / quad;
      const double diff = alpha[is] - alpha[js];
      alpha[is] += delta;
      alpha[js] += delta;
      if (diff > 0.0) {
        if (alpha[js] < 0.0) {
          alpha[js] = 0.0;
          alpha[is] = diff;
        }
      } else if (alpha[is] < 0.0) {
        alpha[is] = 0.0;
        alpha[js] = -diff;
      }
      if (diff > 0.0) {
        if (alpha[is] > c) {
          alpha[is] = c;
          alpha[js] = c - diff;
        }
      } else if (alpha[js] > c) {
        alpha[js] = c;
        alpha[is] = c + diff;
      }
    } else {
      double quad = q(i, i) + q(j, j) - 2.0 * qij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (grad[is] - grad[js]) / quad;
      const double sum = alpha[is] + alpha[js];
      alpha[is] -= delta;
      alpha[js] += delta;
      if (sum > c) {
        if (alpha[is] > c) {
          alpha[is] = c;
          alpha[js] = sum - c;
        }
      } else if (alpha[js] < 0.0) {
        alpha[js] = 0.0;
        alpha[is] = sum;
      }
      if (sum > c) {
        if (alpha[js] > c) {
          alpha[js] = c;
          alpha[is] = sum - c;
        }
      } else if (alpha[is] < 0.0) {
        alpha[is] = 0.0;
        alpha[js] = sum;
      }
    }
    const double di = alpha[is] - old_i;
    const double dj = alpha[js] - old_j;
    for (Eigen::Index t = 0; t < l; ++t) grad[static_cast<std::size_t>(t)] += q(t, i) * di + q(t, j) * dj;
  }

  // bias from free variables, or the midpoint of the feasible interval
  double ub = std::numeric_limits<double>::infinity();
  double lb = -std::numeric_limits<double>::infinity();
  double free_sum = 0.0;
  int free_count = 0;
  for (Eigen::Index t = 0; t < l; ++t) {
    const auto ts = static_cast<std::size_t>(t);
    const double yg = sign[ts] * grad[ts];
    if (upper(t)) {
      if (sign[ts] == -1) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else if (lower(t)) {
      if (sign[ts] == 1) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else {
      ++free_count;
      free_sum += yg;
    }
  }
  const double rho = free_count > 0 ? free_sum / free_count : 0.5 * (ub + lb);
  bias_ = -rho;

  coef_.resize(n);
  for (Eigen::Index t = 0; t < n; ++t) {
    coef_(t) = alpha[static_cast<std::size_t>(t)] - alpha[static_cast<std::size_t>(t + n)];
  }
  fitted_ = true;
}

Eigen::VectorXd SvrRegressor::predict(const Eigen::MatrixXd& features) const {
  if (!fitted_) throw ConfigError("svr: predict before fit");
  if (features.cols() != train_x_.cols()) throw ConfigError("svr: query dimension mismatch");
  return (rbf_gram(features, train_x_, gamma_) * coef_).array() + bias_;
}

}  // namespace dftuq
