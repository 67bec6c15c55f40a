#pragma once

#include "dftuq/model.hpp"

#include <cstdint>
#include <vector>

namespace dftuq {

enum class Activation { tanh, relu };
enum class MlpSolver { lbfgs, adam };

struct MlpConfig {
  std::vector<int> hidden_sizes = {100};
  Activation activation = Activation::relu;
  MlpSolver solver = MlpSolver::adam;
  double learning_rate = 1e-3;  // adam only
  int max_iter = 200;
  double l2_penalty = 1e-4;
  std::uint64_t seed = 0;
};

/// Fully connected network with a linear scalar output trained full-batch on
/// 0.5 * mean squared error (+ 0.5 * l2_penalty * |W|^2 / n). Parameters live
/// in one flat vector: per layer the (in x out) weight block, column-major,
/// followed by the bias.
class MlpRegressor final : public Regressor {
 public:
  explicit MlpRegressor(MlpConfig config);

  void fit(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets) override;
  using Regressor::fit;
  Eigen::VectorXd predict(const Eigen::MatrixXd& features) const override;
  std::string name() const override { return "mlp"; }

  /// Allocates and initialises parameters for `inputs` features (Glorot
  /// uniform weights, zero biases) without training.
  void initialize(Eigen::Index inputs);

  double loss_and_gradient(const Eigen::VectorXd& params, const Eigen::MatrixXd& features,
                           const Eigen::VectorXd& targets, Eigen::VectorXd* grad) const;
  Eigen::VectorXd forward(const Eigen::VectorXd& params, const Eigen::MatrixXd& features) const;

  Eigen::VectorXd& parameters() { return params_; }
  const Eigen::VectorXd& parameters() const { return params_; }
  int iterations() const { return iterations_; }
  const std::vector<double>& loss_curve() const { return loss_curve_; }

 private:
  struct Layer {
    Eigen::Index in, out, offset;
  };

  MlpConfig config_;
  std::vector<Layer> layers_;
  Eigen::VectorXd params_;
  int iterations_ = 0;
  std::vector<double> loss_curve_;
};

}  // namespace dftuq
