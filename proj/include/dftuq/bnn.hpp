#pragma once

#include "dftuq/model.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

namespace dftuq {

/// Floor added to every softplus-derived standard deviation.
inline constexpr double kStddevFloor = 1e-6;

double softplus(double x);
double softplus_inverse(double y);

/// Mean over samples of 0.5 log(2 pi sigma^2) + (y - mu)^2 / (2 sigma^2).
double nll_loss(const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma, const Eigen::VectorXd& y);

struct HeadGradient {
  Eigen::VectorXd d_mean;
  Eigen::VectorXd d_raw_scale;
};

/// nll_loss for a Gaussian head with sigma = softplus(raw_scale) + floor,
/// plus its gradient with respect to (mu, raw_scale).
double head_nll(const Eigen::VectorXd& mu, const Eigen::VectorXd& raw_scale, const Eigen::VectorXd& y,
                HeadGradient* grad = nullptr);

/// Sum over parameters of KL(N(mu_q, sigma_q^2) || N(mu_p, sigma_p^2)), in nats.
double kl_diag_gaussians(const Eigen::VectorXd& mu_q, const Eigen::VectorXd& sigma_q, const Eigen::VectorXd& mu_p,
                         const Eigen::VectorXd& sigma_p);

struct EpochLoss {
  int epoch = 0;
  double nll = 0.0;
  double kl = 0.0;
  double total = 0.0;
};

/// CSV "epoch,nll,kl,total".
void write_loss_trace(std::ostream& out, const std::vector<EpochLoss>& trace);

struct LossParts {
  double nll = 0.0;
  double kl = 0.0;
  double total = 0.0;
};

// ---------------------------------------------------------------------------
// Model A: deterministic weights, Gaussian output head.

struct HeadModelConfig {
  std::vector<int> hidden_sizes = {24, 16, 8};
  int epochs = 500;
  double learning_rate = 1e-3;
  int batch_size = 32;  // 0 trains full-batch
  std::optional<double> kl_weight;  // 1 / n_train when unset
  bool output_regularizer = true;
  std::uint64_t seed = 0;
};

/// Dense -> ReLU -> batch norm per hidden layer, then a 2-unit dense layer
/// feeding the Gaussian head. Trained with Adam on the head NLL plus
/// kl_weight * mean KL(N(mu_i, sigma_i) || N(0, 1)) over the predicted
/// output distributions.
class HeadModel final : public ProbabilisticRegressor {
 public:
  explicit HeadModel(HeadModelConfig config);

  void fit(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets) override;
  using Regressor::fit;
  PredictiveDistribution predict_dist(const Eigen::MatrixXd& features) const override;
  std::string name() const override { return "bnn_head"; }

  void initialize(Eigen::Index inputs);
  /// Training-mode loss (batch statistics in batch norm) and its gradient.
  double loss_and_gradient(const Eigen::VectorXd& params, const Eigen::MatrixXd& features,
                           const Eigen::VectorXd& targets, double kl_weight, Eigen::VectorXd* grad,
                           LossParts* parts = nullptr) const;

  Eigen::VectorXd& parameters() { return params_; }
  const Eigen::VectorXd& parameters() const { return params_; }
  const std::vector<EpochLoss>& loss_trace() const { return trace_; }
  double kl_weight_used() const { return kl_weight_used_; }

 private:
  struct Layer {
    Eigen::Index in, out;
    Eigen::Index weight, bias, gamma, beta;  // offsets into params_
  };
  struct Forward;

  Forward run_forward(const Eigen::VectorXd& params, const Eigen::MatrixXd& features, bool training) const;

  HeadModelConfig config_;
  std::vector<Layer> layers_;
  Eigen::Index out_weight_ = 0;
  Eigen::Index out_bias_ = 0;
  Eigen::VectorXd params_;
  std::vector<Eigen::RowVectorXd> running_mean_;
  std::vector<Eigen::RowVectorXd> running_var_;
  std::vector<EpochLoss> trace_;
  double kl_weight_used_ = 0.0;
  bool fitted_ = false;
};

// ---------------------------------------------------------------------------
// Model B: mean-field variational hidden layer; an ensemble over weight draws.

struct EnsembleModelConfig {
  int hidden_units = 8;
  int epochs = 1000;
  double learning_rate = 1e-3;
  int batch_size = 32;  // 0 trains full-batch
  std::optional<double> kl_weight;  // 1 / n_train when unset
  double prior_stddev = 1.0;
  double init_mean_stddev = 0.1;
  double init_posterior_stddev = 0.05;
  int predict_draws = 200;  // used by predict_dist
  std::uint64_t seed = 0;
};

/// Standard-normal noise for one reparameterised draw of the variational layer.
struct WeightNoise {
  Eigen::MatrixXd weights;  // inputs x hidden_units
  Eigen::RowVectorXd bias;  // hidden_units
};

/// Per-draw head outputs; rows are draws, columns are query points.
struct EnsembleOutput {
  Eigen::MatrixXd means;
  Eigen::MatrixXd stddevs;
  std::uint64_t seed = 0;

  Eigen::Index draws() const { return means.rows(); }
  Eigen::Index queries() const { return means.cols(); }
  /// Mean of the Gaussian mixture: the average of the per-draw means.
  Eigen::VectorXd mixture_mean() const;
};

struct UncertaintyDecomposition {
  Eigen::VectorXd aleatoric;  // sqrt(mean_i sigma_i^2)
  Eigen::VectorXd epistemic;  // sample stddev (N - 1) of mu_i
  Eigen::VectorXd total;      // sqrt(aleatoric^2 + epistemic^2)
  double aggregate_aleatoric = 0.0;
  double aggregate_epistemic = 0.0;
  double aggregate_total = 0.0;
};

/// Input batch norm -> variational dense (sigmoid) -> dense(2) -> Gaussian
/// head, trained with RMSprop on NLL + kl_weight * KL(q || prior).
class EnsembleModel final : public ProbabilisticRegressor {
 public:
  explicit EnsembleModel(EnsembleModelConfig config);

  void fit(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets) override;
  using Regressor::fit;
  /// Mixture mean and total stddev over config.predict_draws draws seeded by config.seed.
  PredictiveDistribution predict_dist(const Eigen::MatrixXd& features) const override;
  std::string name() const override { return "bnn_ensemble"; }

  void initialize(Eigen::Index inputs);
  WeightNoise sample_noise(std::uint64_t seed) const;

  /// Single-sample ELBO loss NLL + kl_weight * KL with frozen noise, using
  /// batch statistics in the input batch norm.
  double elbo_and_gradient(const Eigen::VectorXd& params, const Eigen::MatrixXd& features,
                           const Eigen::VectorXd& targets, double kl_weight, const WeightNoise& noise,
                           Eigen::VectorXd* grad, LossParts* parts = nullptr) const;

  /// KL of the variational posterior from the prior for a parameter vector.
  double posterior_kl(const Eigen::VectorXd& params) const;

  /// Inference-mode head outputs (mu, sigma) for one weight draw.
  std::pair<Eigen::VectorXd, Eigen::VectorXd> forward_draw(const Eigen::MatrixXd& features,
                                                           const WeightNoise& noise) const;

  /// A copy whose posterior spread is exactly zero: every draw uses the means.
  EnsembleModel collapsed() const;

  Eigen::VectorXd& parameters() { return params_; }
  const Eigen::VectorXd& parameters() const { return params_; }
  const std::vector<EpochLoss>& loss_trace() const { return trace_; }
  const EnsembleModelConfig& config() const { return config_; }
  Eigen::Index inputs() const { return inputs_; }
  double kl_weight_used() const { return kl_weight_used_; }

  /// Variational means/stddevs of all hidden-layer weights and biases.
  Eigen::VectorXd posterior_means() const;
  Eigen::VectorXd posterior_stddevs() const;

  void save(std::ostream& out, const nlohmann::json& metadata = nlohmann::json::object()) const;
  static std::pair<EnsembleModel, nlohmann::json> load(std::istream& in);

 private:
  Eigen::Index units() const { return config_.hidden_units; }
  Eigen::Index variational_count() const { return inputs_ * units() + units(); }

  EnsembleModelConfig config_;
  Eigen::Index inputs_ = 0;
  // offsets
  Eigen::Index bn_gamma_ = 0, bn_beta_ = 0, mu_w_ = 0, rho_w_ = 0, mu_b_ = 0, rho_b_ = 0, out_w_ = 0, out_b_ = 0;
  Eigen::VectorXd params_;
  Eigen::RowVectorXd running_mean_;
  Eigen::RowVectorXd running_var_;
  std::vector<EpochLoss> trace_;
  double kl_weight_used_ = 0.0;
  bool collapsed_ = false;
  bool fitted_ = false;
};

/// n_draws independent forward passes, draw i sampling weights from the
/// stream derive_seed(seed, i). Requires n_draws >= 2.
EnsembleOutput ensemble_predict(const EnsembleModel& model, const Eigen::MatrixXd& features, int n_draws,
                                std::uint64_t seed);

/// Aleatoric = root mean of per-draw variances, epistemic = sample stddev of
/// per-draw means; aggregates are means over query points.
UncertaintyDecomposition decompose_uncertainty(const EnsembleOutput& ensemble);

}  // namespace dftuq
