#include "dftuq/mlp.hpp"

#include "dftuq/errors.hpp"
#include "dftuq/optim.hpp"
#include "dftuq/random.hpp"

#include <fmt/format.h>

#include <cmath>

namespace dftuq {

MlpRegressor::MlpRegressor(MlpConfig config) : config_(std::move(config)) {
  if (config_.hidden_sizes.empty()) throw ConfigError("mlp: hidden_sizes must be nonempty");
  for (int h : config_.hidden_sizes) {
    if (h < 1) throw ConfigError("mlp: hidden layer sizes must be >= 1");
  }
  if (config_.max_iter < 0) throw ConfigError("mlp: max_iter must be >= 0");
  if (!(config_.learning_rate > 0.0)) throw ConfigError("mlp: learning_rate must be > 0");
}

void MlpRegressor::initialize(Eigen::Index inputs) {
  layers_.clear();
  Eigen::Index offset = 0;
  Eigen::Index in = inputs;
  std::vector<Eigen::Index> sizes(config_.hidden_sizes.begin(), config_.hidden_sizes.end());
  sizes.push_back(1);
  for (auto out : sizes) {
    layers_.push_back({in, out, offset});
    offset += in * out + out;
    in = out;
  }
  params_ = Eigen::VectorXd::Zero(offset);
  Rng rng(config_.seed);
  for (const auto& layer : layers_) {
    const double bound = std::sqrt(6.0 / static_cast<double>(layer.in + layer.out));
    for (Eigen::Index k = 0; k < layer.in * layer.out; ++k) params_(layer.offset + k) = rng.uniform(-bound, bound);
  }
}

Eigen::VectorXd MlpRegressor::forward(const Eigen::VectorXd& params, const Eigen::MatrixXd& features) const {
  Eigen::MatrixXd a = features;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    Eigen::Map<const Eigen::MatrixXd> w(params.data() + layer.offset, layer.in, layer.out);
    Eigen::Map<const Eigen::RowVectorXd> b(params.data() + layer.offset + layer.in * layer.out, layer.out);
    Eigen::MatrixXd z = (a * w).rowwise() + b;
    if (l + 1 < layers_.size()) {
      a = config_.activation == Activation::tanh ? Eigen::MatrixXd(z.array().tanh()) : Eigen::MatrixXd(z.cwiseMax(0.0));
    } else {
      a = std::move(z);
    }
  }
  return a.col(0);
}

double MlpRegressor::loss_and_gradient(const Eigen::VectorXd& params, const Eigen::MatrixXd& features,
                                       const Eigen::VectorXd& targets, Eigen::VectorXd* grad) const {
  const double n = static_cast<double>(features.rows());
  std::vector<Eigen::MatrixXd> acts;
  acts.reserve(layers_.size() + 1);
  acts.push_back(features);
  double penalty = 0.0;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    Eigen::Map<const Eigen::MatrixXd> w(params.data() + layer.offset, layer.in, layer.out);
    Eigen::Map<const Eigen::RowVectorXd> b(params.data() + layer.offset + layer.in * layer.out, layer.out);
    penalty += w.squaredNorm();
    Eigen::MatrixXd z = (acts.back() * w).rowwise() + b;
    if (l + 1 < layers_.size()) {
      z = config_.activation == Activation::tanh ? Eigen::MatrixXd(z.array().tanh()) : Eigen::MatrixXd(z.cwiseMax(0.0));
    }
    acts.push_back(std::move(z));
  }
  const Eigen::VectorXd residual = acts.back().col(0) - targets;
  const double loss = 0.5 * residual.squaredNorm() / n + 0.5 * config_.l2_penalty * penalty / n;
  if (!grad) return loss;

  grad->setZero(params.size());
  Eigen::MatrixXd delta = residual / n;  // dL/dz at the output
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const auto& layer = layers_[l];
    Eigen::Map<const Eigen::MatrixXd> w(params.data() + layer.offset, layer.in, layer.out);
    Eigen::Map<Eigen::MatrixXd> gw(grad->data() + layer.offset, layer.in, layer.out);
    Eigen::Map<Eigen::RowVectorXd> gb(grad->data() + layer.offset + layer.in * layer.out, layer.out);
    gw = acts[l].transpose() * delta + (config_.l2_penalty / n) * w;
    gb = delta.colwise().sum();
    if (l == 0) break;
    Eigen::MatrixXd upstream = delta * w.transpose();
    const auto& a = acts[l];
    if (config_.activation == Activation::tanh) {
      delta = upstream.array() * (1.0 - a.array().square());
    } else {
      delta = upstream.array() * (a.array() > 0.0).cast<double>();
    }
  }
  return loss;
}

void MlpRegressor::fit(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets) {
  if (features.rows() == 0 || features.rows() != targets.size()) {
    throw ConfigError("mlp: empty or misaligned training data");
  }
  initialize(features.cols());
  loss_curve_.clear();
  iterations_ = 0;
  if (config_.max_iter == 0) return;

  if (config_.solver == MlpSolver::lbfgs) {
    LbfgsOptions options;
    options.max_iterations = config_.max_iter;
    options.min_improvement = 1e-8;
    int calls = 0;
    auto objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
      ++calls;
      return loss_and_gradient(x, features, targets, &g);
    };
    auto result = minimize_lbfgs(objective, params_, options);
    if (result.status == LbfgsStatus::non_finite || !std::isfinite(result.value)) {
      throw NumericalError(fmt::format("mlp: loss became non-finite at iteration {}", result.iterations));
    }
    params_ = std::move(result.x);
    iterations_ = result.iterations;
    loss_curve_.push_back(result.value);
    return;
  }

  Adam adam(params_.size(), config_.learning_rate);
  Eigen::VectorXd grad(params_.size());
  double previous = std::numeric_limits<double>::infinity();
  int stalled = 0;
  for (int it = 0; it < config_.max_iter; ++it) {
    const double loss = loss_and_gradient(params_, features, targets, &grad);
    if (!std::isfinite(loss) || !grad.allFinite()) {
      throw NumericalError(fmt::format("mlp: loss became non-finite at iteration {}", it));
    }
    loss_curve_.push_back(loss);
    iterations_ = it + 1;
    stalled = (previous - loss < 1e-8) ? stalled + 1 : 0;
    if (stalled >= 10) break;
    previous = loss;
    adam.step(params_, grad);
  }
}

Eigen::VectorXd MlpRegressor::predict(const Eigen::MatrixXd& features) const {
  if (layers_.empty()) throw ConfigError("mlp: predict before fit");
  if (features.cols() != layers_.front().in) throw ConfigError("mlp: query dimension mismatch");
  return forward(params_, features);
}

}  // namespace dftuq
