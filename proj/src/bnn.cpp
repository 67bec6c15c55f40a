#include "dftuq/bnn.hpp"

#include "dftuq/errors.hpp"
#include "dftuq/optim.hpp"
#include "dftuq/random.hpp"

#include <fmt/format.h>

#include <array>
#include <cmath>
#include <cstring>
#include <istream>
#include <numeric>
#include <ostream>

namespace dftuq {

namespace {

constexpr double kBnEpsilon = 1e-3;
constexpr double kBnMomentum = 0.99;
const double kHalfLog2Pi = 0.5 * std::log(2.0 * M_PI);

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Eigen::ArrayXXd softplus_array(const Eigen::ArrayXXd& x) { return x.unaryExpr([](double v) { return softplus(v); }); }

Eigen::ArrayXXd sigmoid_array(const Eigen::ArrayXXd& x) { return x.unaryExpr([](double v) { return sigmoid(v); }); }

// Batch normalisation over rows with batch statistics.
struct BatchNormCache {
  Eigen::MatrixXd xhat;
  Eigen::RowVectorXd inv_std;
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd var;
};

Eigen::MatrixXd bn_train(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& gamma, const Eigen::RowVectorXd& beta,
                         BatchNormCache& cache) {
  cache.mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - cache.mean;
  cache.var = centered.colwise().squaredNorm() / static_cast<double>(x.rows());
  cache.inv_std = (cache.var.array() + kBnEpsilon).rsqrt();
  cache.xhat = centered.array().rowwise() * cache.inv_std.array();
  return (cache.xhat.array().rowwise() * gamma.array()).rowwise() + beta.array();
}

Eigen::MatrixXd bn_infer(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& gamma, const Eigen::RowVectorXd& beta,
                         const Eigen::RowVectorXd& running_mean, const Eigen::RowVectorXd& running_var) {
  const Eigen::RowVectorXd scale = gamma.array() * (running_var.array() + kBnEpsilon).rsqrt();
  return ((x.rowwise() - running_mean).array().rowwise() * scale.array()).rowwise() + beta.array();
}

// Returns d loss / d x and writes d gamma, d beta.
Eigen::MatrixXd bn_backward(const Eigen::MatrixXd& dout, const BatchNormCache& cache, const Eigen::RowVectorXd& gamma,
                            Eigen::Ref<Eigen::RowVectorXd> dgamma, Eigen::Ref<Eigen::RowVectorXd> dbeta) {
  const double m = static_cast<double>(dout.rows());
  dgamma = (dout.array() * cache.xhat.array()).colwise().sum();
  dbeta = dout.colwise().sum();
  const Eigen::ArrayXXd dxhat = dout.array().rowwise() * gamma.array();
  const Eigen::RowVectorXd sum_d = dxhat.colwise().sum();
  const Eigen::RowVectorXd sum_dx = (dxhat * cache.xhat.array()).colwise().sum();
  Eigen::ArrayXXd dx = (m * dxhat).rowwise() - sum_d.array();
  dx -= cache.xhat.array().rowwise() * sum_dx.array();
  return (dx.rowwise() * (cache.inv_std.array() / m)).matrix();
}

void update_running(Eigen::RowVectorXd& running_mean, Eigen::RowVectorXd& running_var, const BatchNormCache& cache) {
  running_mean = kBnMomentum * running_mean + (1.0 - kBnMomentum) * cache.mean;
  running_var = kBnMomentum * running_var + (1.0 - kBnMomentum) * cache.var;
}

// Mean over samples of KL(N(mu, sigma) || N(0, 1)) and its per-sample gradient.
double output_prior_kl(const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma, Eigen::VectorXd* d_mu,
                       Eigen::VectorXd* d_sigma) {
  const double n = static_cast<double>(mu.size());
  const Eigen::ArrayXd s = sigma.array();
  const double kl = (-s.log() + 0.5 * (s.square() + mu.array().square()) - 0.5).sum() / n;
  if (d_mu) *d_mu = mu / n;
  if (d_sigma) *d_sigma = ((s - 1.0 / s) / n).matrix();
  return kl;
}

std::vector<std::vector<Eigen::Index>> make_batches(Eigen::Index n, int batch_size, Rng& rng) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  if (batch_size <= 0 || batch_size >= n) return {order};
  rng.shuffle(order);
  std::vector<std::vector<Eigen::Index>> batches;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

void check_training_data(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const char* who) {
  if (x.rows() == 0 || x.rows() != y.size()) throw ConfigError(fmt::format("{}: empty or misaligned training data", who));
  if (!x.allFinite() || !y.allFinite()) throw NumericalError(fmt::format("{}: non-finite training data", who));
}

// Little-endian binary helpers for the snapshot format.
void put_u64(std::ostream& out, std::uint64_t v) {
  std::array<char, 8> bytes{};
  for (int i = 0; i < 8; ++i) bytes[static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(bytes.data(), 8);
}

void put_f64(std::ostream& out, double v) {
  std::uint64_t bits = 0;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

std::uint64_t get_u64(std::istream& in) {
  std::array<unsigned char, 8> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), 8);
  if (!in) throw ParseError("snapshot: truncated file", 0, "");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

double get_f64(std::istream& in) {
  const std::uint64_t bits = get_u64(in);
  double v = 0.0;
  std::memcpy(&v, &bits, 8);
  return v;
}

constexpr char kMagic[8] = {'D', 'F', 'T', 'U', 'Q', 'B', 'N', 'N'};
constexpr std::uint64_t kSnapshotVersion = 1;

}  // namespace

double softplus(double x) {
  if (x > 30.0) return x;
  return std::log1p(std::exp(x));
}

double softplus_inverse(double y) {
  if (!(y > 0.0)) throw ConfigError("softplus_inverse: argument must be > 0");
  if (y > 30.0) return y;
  return std::log(std::expm1(y));
}

double nll_loss(const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma, const Eigen::VectorXd& y) {
  if (mu.size() != y.size() || sigma.size() != y.size() || y.size() == 0) {
    throw ConfigError("nll_loss: size mismatch or empty input");
  }
  if (!mu.allFinite() || !sigma.allFinite() || !y.allFinite()) throw NumericalError("nll_loss: non-finite input");
  if (!(sigma.minCoeff() > 0.0)) throw NumericalError("nll_loss: stddev must be > 0");
  const Eigen::ArrayXd s = sigma.array();
  const Eigen::ArrayXd r = y.array() - mu.array();
  return (kHalfLog2Pi + s.log() + r.square() / (2.0 * s.square())).mean();
}

double head_nll(const Eigen::VectorXd& mu, const Eigen::VectorXd& raw_scale, const Eigen::VectorXd& y,
                HeadGradient* grad) {
  const Eigen::VectorXd sigma = (softplus_array(raw_scale.array()) + kStddevFloor).matrix();
  const double loss = nll_loss(mu, sigma, y);
  if (grad) {
    const double n = static_cast<double>(y.size());
    const Eigen::ArrayXd s = sigma.array();
    const Eigen::ArrayXd r = y.array() - mu.array();
    grad->d_mean = (-r / s.square() / n).matrix();
    const Eigen::ArrayXd d_sigma = (1.0 / s - r.square() / s.cube()) / n;
    grad->d_raw_scale = (d_sigma * sigmoid_array(raw_scale.array())).matrix();
  }
  return loss;
}

double kl_diag_gaussians(const Eigen::VectorXd& mu_q, const Eigen::VectorXd& sigma_q, const Eigen::VectorXd& mu_p,
                         const Eigen::VectorXd& sigma_p) {
  if (mu_q.size() != sigma_q.size() || mu_p.size() != mu_q.size() || sigma_p.size() != mu_q.size()) {
    throw ConfigError("kl_diag_gaussians: size mismatch");
  }
  const Eigen::ArrayXd sq = sigma_q.array();
  const Eigen::ArrayXd sp = sigma_p.array();
  const Eigen::ArrayXd d = mu_q.array() - mu_p.array();
  return ((sp / sq).log() + (sq.square() + d.square()) / (2.0 * sp.square()) - 0.5).sum();
}

void write_loss_trace(std::ostream& out, const std::vector<EpochLoss>& trace) {
  out << "epoch,nll,kl,total\n";
  for (const auto& e : trace) out << fmt::format("{},{},{},{}\n", e.epoch, e.nll, e.kl, e.total);
}

// ---------------------------------------------------------------------------
// Model A

struct HeadModel::Forward {
  std::vector<Eigen::MatrixXd> inputs;  // input of each hidden layer
  std::vector<Eigen::MatrixXd> pre;     // pre-activation of each hidden layer
  std::vector<BatchNormCache> bn;
  Eigen::MatrixXd last;                 // input of the output layer
  Eigen::VectorXd mu;
  Eigen::VectorXd raw;
};

HeadModel::HeadModel(HeadModelConfig config) : config_(std::move(config)) {
  if (config_.hidden_sizes.empty()) throw ConfigError("bnn_head: hidden_sizes must be nonempty");
  for (int h : config_.hidden_sizes) {
    if (h < 1) throw ConfigError("bnn_head: hidden layer sizes must be >= 1");
  }
  if (config_.epochs < 0) throw ConfigError("bnn_head: epochs must be >= 0");
  if (!(config_.learning_rate > 0.0)) throw ConfigError("bnn_head: learning_rate must be > 0");
  if (config_.kl_weight && *config_.kl_weight < 0.0) throw ConfigError("bnn_head: kl_weight must be >= 0");
}

void HeadModel::initialize(Eigen::Index inputs) {
  layers_.clear();
  Eigen::Index offset = 0;
  Eigen::Index in = inputs;
  for (int h : config_.hidden_sizes) {
    Layer layer{in, h, offset, offset + in * h, offset + in * h + h, offset + in * h + 2 * h};
    layers_.push_back(layer);
    offset += in * h + 3 * h;
    in = h;
  }
  out_weight_ = offset;
  out_bias_ = offset + in * 2;
  params_ = Eigen::VectorXd::Zero(out_bias_ + 2);

  Rng rng(derive_seed(config_.seed, 0));
  auto glorot = [&](Eigen::Index at, Eigen::Index fan_in, Eigen::Index fan_out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (Eigen::Index k = 0; k < fan_in * fan_out; ++k) params_(at + k) = rng.uniform(-bound, bound);
  };
  running_mean_.clear();
  running_var_.clear();
  for (const auto& layer : layers_) {
    glorot(layer.weight, layer.in, layer.out);
    params_.segment(layer.gamma, layer.out).setOnes();
    running_mean_.push_back(Eigen::RowVectorXd::Zero(layer.out));
    running_var_.push_back(Eigen::RowVectorXd::Ones(layer.out));
  }
  glorot(out_weight_, in, 2);
}

HeadModel::Forward HeadModel::run_forward(const Eigen::VectorXd& params, const Eigen::MatrixXd& features,
                                          bool training) const {
  Forward f;
  Eigen::MatrixXd a = features;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    Eigen::Map<const Eigen::MatrixXd> w(params.data() + layer.weight, layer.in, layer.out);
    Eigen::Map<const Eigen::RowVectorXd> b(params.data() + layer.bias, layer.out);
    Eigen::Map<const Eigen::RowVectorXd> gamma(params.data() + layer.gamma, layer.out);
    Eigen::Map<const Eigen::RowVectorXd> beta(params.data() + layer.beta, layer.out);
    Eigen::MatrixXd z = (a * w).rowwise() + b;
    const Eigen::MatrixXd r = z.cwiseMax(0.0);
    f.inputs.push_back(std::move(a));
    f.pre.push_back(std::move(z));
    if (training) {
      f.bn.emplace_back();
      a = bn_train(r, gamma, beta, f.bn.back());
    } else {
      a = bn_infer(r, gamma, beta, running_mean_[l], running_var_[l]);
    }
  }
  const Eigen::Index last = layers_.back().out;
  Eigen::Map<const Eigen::MatrixXd> w(params.data() + out_weight_, last, 2);
  Eigen::Map<const Eigen::RowVectorXd> b(params.data() + out_bias_, 2);
  const Eigen::MatrixXd o = (a * w).rowwise() + b;
  f.mu = o.col(0);
  f.raw = o.col(1);
  f.last = std::move(a);
  return f;
}

double HeadModel::loss_and_gradient(const Eigen::VectorXd& params, const Eigen::MatrixXd& features,
                                    const Eigen::VectorXd& targets, double kl_weight, Eigen::VectorXd* grad,
                                    LossParts* parts) const {
  if (layers_.empty()) throw ConfigError("bnn_head: model not initialized");
  const Forward f = run_forward(params, features, true);
  HeadGradient hg;
  const double nll = head_nll(f.mu, f.raw, targets, grad ? &hg : nullptr);
  double kl = 0.0;
  Eigen::VectorXd kl_dmu, kl_dsigma;
  const bool regularize = config_.output_regularizer && kl_weight != 0.0;
  if (regularize) {
    const Eigen::VectorXd sigma = (softplus_array(f.raw.array()) + kStddevFloor).matrix();
    kl = output_prior_kl(f.mu, sigma, grad ? &kl_dmu : nullptr, grad ? &kl_dsigma : nullptr);
  }
  const double total = nll + kl_weight * kl;
  if (parts) *parts = {nll, kl, total};
  if (!grad) return total;

  Eigen::MatrixXd d_out(features.rows(), 2);
  d_out.col(0) = hg.d_mean;
  d_out.col(1) = hg.d_raw_scale;
  if (regularize) {
    d_out.col(0) += kl_weight * kl_dmu;
    d_out.col(1) += kl_weight * (kl_dsigma.array() * sigmoid_array(f.raw.array())).matrix();
  }

  grad->setZero(params.size());
  const Eigen::Index last = layers_.back().out;
  Eigen::Map<const Eigen::MatrixXd> w_out(params.data() + out_weight_, last, 2);
  Eigen::Map<Eigen::MatrixXd>(grad->data() + out_weight_, last, 2) = f.last.transpose() * d_out;
  Eigen::Map<Eigen::RowVectorXd>(grad->data() + out_bias_, 2) = d_out.colwise().sum();
  Eigen::MatrixXd da = d_out * w_out.transpose();

  for (std::size_t l = layers_.size(); l-- > 0;) {
    const auto& layer = layers_[l];
    Eigen::Map<const Eigen::MatrixXd> w(params.data() + layer.weight, layer.in, layer.out);
    Eigen::Map<const Eigen::RowVectorXd> gamma(params.data() + layer.gamma, layer.out);
    Eigen::Map<Eigen::RowVectorXd> dgamma(grad->data() + layer.gamma, layer.out);
    Eigen::Map<Eigen::RowVectorXd> dbeta(grad->data() + layer.beta, layer.out);
    const Eigen::MatrixXd dr = bn_backward(da, f.bn[l], gamma, dgamma, dbeta);
    const Eigen::MatrixXd dz = dr.array() * (f.pre[l].array() > 0.0).cast<double>();
    Eigen::Map<Eigen::MatrixXd>(grad->data() + layer.weight, layer.in, layer.out) = f.inputs[l].transpose() * dz;
    Eigen::Map<Eigen::RowVectorXd>(grad->data() + layer.bias, layer.out) = dz.colwise().sum();
    if (l > 0) da = dz * w.transpose();
  }
  return total;
}

void HeadModel::fit(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets) {
  check_training_data(features, targets, "bnn_head");
  initialize(features.cols());
  trace_.clear();
  kl_weight_used_ = config_.kl_weight.value_or(1.0 / static_cast<double>(features.rows()));

  Adam adam(params_.size(), config_.learning_rate, 0.9, 0.999, 1e-7);
  Rng shuffle_rng(derive_seed(config_.seed, 1));
  Eigen::VectorXd grad(params_.size());
  for (int epoch = 0; epoch < config_.epochs; ++epoch) {
    EpochLoss record{epoch, 0.0, 0.0, 0.0};
    for (const auto& batch : make_batches(features.rows(), config_.batch_size, shuffle_rng)) {
      const bool whole = static_cast<Eigen::Index>(batch.size()) == features.rows();
      const Eigen::MatrixXd xb = whole ? features : Eigen::MatrixXd(features(batch, Eigen::all));
      const Eigen::VectorXd yb = whole ? targets : Eigen::VectorXd(targets(batch));
      LossParts parts;
      loss_and_gradient(params_, xb, yb, kl_weight_used_, &grad, &parts);
      if (!std::isfinite(parts.total) || !grad.allFinite()) {
        throw NumericalError(fmt::format("bnn_head: loss became non-finite at epoch {}", epoch));
      }
      // Running statistics follow the batch statistics seen during training.
      const Forward f = run_forward(params_, xb, true);
      for (std::size_t l = 0; l < layers_.size(); ++l) update_running(running_mean_[l], running_var_[l], f.bn[l]);
      adam.step(params_, grad);
      const double w = static_cast<double>(batch.size()) / static_cast<double>(features.rows());
      record.nll += w * parts.nll;
      record.kl += w * parts.kl;
      record.total += w * parts.total;
    }
    trace_.push_back(record);
  }
  // Freeze the running statistics at the full training set's batch statistics
  // under the final parameters, so inference does not lag the last updates.
  if (config_.epochs > 0) {
    const Forward f = run_forward(params_, features, true);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      running_mean_[l] = f.bn[l].mean;
      running_var_[l] = f.bn[l].var;
    }
  }
  fitted_ = true;
}

PredictiveDistribution HeadModel::predict_dist(const Eigen::MatrixXd& features) const {
  if (!fitted_) throw ConfigError("bnn_head: predict before fit");
  if (features.cols() != layers_.front().in) throw ConfigError("bnn_head: query dimension mismatch");
  const Forward f = run_forward(params_, features, false);
  PredictiveDistribution out;
  out.means = f.mu;
  out.stddevs = (softplus_array(f.raw.array()) + kStddevFloor).matrix();
  return out;
}

// ---------------------------------------------------------------------------
// Model B

EnsembleModel::EnsembleModel(EnsembleModelConfig config) : config_(config) {
  if (config_.hidden_units < 1) throw ConfigError("bnn_ensemble: hidden_units must be >= 1");
  if (config_.epochs < 0) throw ConfigError("bnn_ensemble: epochs must be >= 0");
  if (!(config_.learning_rate > 0.0)) throw ConfigError("bnn_ensemble: learning_rate must be > 0");
  if (config_.kl_weight && *config_.kl_weight < 0.0) throw ConfigError("bnn_ensemble: kl_weight must be >= 0");
  if (!(config_.prior_stddev > 0.0) || !(config_.init_posterior_stddev > 0.0) || config_.init_mean_stddev < 0.0) {
    throw ConfigError("bnn_ensemble: prior and initial stddevs must be > 0");
  }
  if (config_.predict_draws < 2) throw ConfigError("bnn_ensemble: predict_draws must be >= 2");
}

void EnsembleModel::initialize(Eigen::Index inputs) {
  inputs_ = inputs;
  const Eigen::Index h = units();
  bn_gamma_ = 0;
  bn_beta_ = inputs;
  mu_w_ = 2 * inputs;
  rho_w_ = mu_w_ + inputs * h;
  mu_b_ = rho_w_ + inputs * h;
  rho_b_ = mu_b_ + h;
  out_w_ = rho_b_ + h;
  out_b_ = out_w_ + 2 * h;
  params_ = Eigen::VectorXd::Zero(out_b_ + 2);

  Rng rng(derive_seed(config_.seed, 0));
  params_.segment(bn_gamma_, inputs).setOnes();
  for (Eigen::Index k = 0; k < inputs * h; ++k) params_(mu_w_ + k) = rng.normal(0.0, config_.init_mean_stddev);
  for (Eigen::Index k = 0; k < h; ++k) params_(mu_b_ + k) = rng.normal(0.0, config_.init_mean_stddev);
  const double rho0 = softplus_inverse(config_.init_posterior_stddev);
  params_.segment(rho_w_, inputs * h).setConstant(rho0);
  params_.segment(rho_b_, h).setConstant(rho0);
  const double bound = std::sqrt(6.0 / static_cast<double>(h + 2));
  for (Eigen::Index k = 0; k < 2 * h; ++k) params_(out_w_ + k) = rng.uniform(-bound, bound);

  running_mean_ = Eigen::RowVectorXd::Zero(inputs);
  running_var_ = Eigen::RowVectorXd::Ones(inputs);
  collapsed_ = false;
}

WeightNoise EnsembleModel::sample_noise(std::uint64_t seed) const {
  Rng rng(seed);
  WeightNoise noise{Eigen::MatrixXd(inputs_, units()), Eigen::RowVectorXd(units())};
  for (Eigen::Index k = 0; k < noise.weights.size(); ++k) noise.weights.data()[k] = rng.normal();
  for (Eigen::Index k = 0; k < units(); ++k) noise.bias(k) = rng.normal();
  return noise;
}

double EnsembleModel::posterior_kl(const Eigen::VectorXd& params) const {
  const Eigen::Index count = variational_count();
  Eigen::VectorXd mu(count), sigma(count);
  const Eigen::Index nw = inputs_ * units();
  mu << params.segment(mu_w_, nw), params.segment(mu_b_, units());
  Eigen::VectorXd rho(count);
  rho << params.segment(rho_w_, nw), params.segment(rho_b_, units());
  sigma = (softplus_array(rho.array()) + kStddevFloor).matrix();
  return kl_diag_gaussians(mu, sigma, Eigen::VectorXd::Zero(count), Eigen::VectorXd::Constant(count, config_.prior_stddev));
}

double EnsembleModel::elbo_and_gradient(const Eigen::VectorXd& params, const Eigen::MatrixXd& features,
                                        const Eigen::VectorXd& targets, double kl_weight, const WeightNoise& noise,
                                        Eigen::VectorXd* grad, LossParts* parts) const {
  if (inputs_ == 0) throw ConfigError("bnn_ensemble: model not initialized");
  if (features.cols() != inputs_) throw ConfigError("bnn_ensemble: feature dimension mismatch");
  const Eigen::Index d = inputs_;
  const Eigen::Index h = units();
  Eigen::Map<const Eigen::RowVectorXd> gamma(params.data() + bn_gamma_, d);
  Eigen::Map<const Eigen::RowVectorXd> beta(params.data() + bn_beta_, d);
  Eigen::Map<const Eigen::MatrixXd> mu_w(params.data() + mu_w_, d, h);
  Eigen::Map<const Eigen::MatrixXd> rho_w(params.data() + rho_w_, d, h);
  Eigen::Map<const Eigen::RowVectorXd> mu_b(params.data() + mu_b_, h);
  Eigen::Map<const Eigen::RowVectorXd> rho_b(params.data() + rho_b_, h);
  Eigen::Map<const Eigen::MatrixXd> w_out(params.data() + out_w_, h, 2);
  Eigen::Map<const Eigen::RowVectorXd> b_out(params.data() + out_b_, 2);

  const Eigen::ArrayXXd sigma_w = softplus_array(rho_w.array()) + kStddevFloor;
  const Eigen::ArrayXXd sigma_b = softplus_array(rho_b.array()) + kStddevFloor;
  const Eigen::MatrixXd w = (mu_w.array() + sigma_w * noise.weights.array()).matrix();
  const Eigen::RowVectorXd b = (mu_b.array() + sigma_b.row(0) * noise.bias.array()).matrix();

  BatchNormCache cache;
  const Eigen::MatrixXd xbn = bn_train(features, gamma, beta, cache);
  const Eigen::MatrixXd hidden = sigmoid_array(((xbn * w).rowwise() + b).array()).matrix();
  const Eigen::MatrixXd o = (hidden * w_out).rowwise() + b_out;
  HeadGradient hg;
  const double nll = head_nll(o.col(0), o.col(1), targets, grad ? &hg : nullptr);
  const double kl = posterior_kl(params);
  const double total = nll + kl_weight * kl;
  if (parts) *parts = {nll, kl, total};
  if (!grad) return total;

  grad->setZero(params.size());
  Eigen::MatrixXd d_out(features.rows(), 2);
  d_out.col(0) = hg.d_mean;
  d_out.col(1) = hg.d_raw_scale;
  Eigen::Map<Eigen::MatrixXd>(grad->data() + out_w_, h, 2) = hidden.transpose() * d_out;
  Eigen::Map<Eigen::RowVectorXd>(grad->data() + out_b_, 2) = d_out.colwise().sum();
  const Eigen::MatrixXd dz = (d_out * w_out.transpose()).array() * hidden.array() * (1.0 - hidden.array());
  const Eigen::MatrixXd dw = xbn.transpose() * dz;
  const Eigen::RowVectorXd db = dz.colwise().sum();

  // Reparameterisation w = mu + sigma * eps plus the analytic KL term.
  const double prior_var = config_.prior_stddev * config_.prior_stddev;
  const Eigen::ArrayXXd kl_dsigma_w = sigma_w / prior_var - 1.0 / sigma_w;
  const Eigen::ArrayXXd kl_dsigma_b = sigma_b / prior_var - 1.0 / sigma_b;
  Eigen::Map<Eigen::MatrixXd>(grad->data() + mu_w_, d, h) = dw + (kl_weight / prior_var) * mu_w;
  Eigen::Map<Eigen::RowVectorXd>(grad->data() + mu_b_, h) = db + (kl_weight / prior_var) * mu_b;
  Eigen::Map<Eigen::MatrixXd>(grad->data() + rho_w_, d, h) =
      ((dw.array() * noise.weights.array() + kl_weight * kl_dsigma_w) * sigmoid_array(rho_w.array())).matrix();
  Eigen::Map<Eigen::RowVectorXd>(grad->data() + rho_b_, h) =
      ((db.array() * noise.bias.array() + kl_weight * kl_dsigma_b.row(0)) * sigmoid_array(rho_b.array()).row(0))
          .matrix();

  Eigen::Map<Eigen::RowVectorXd> dgamma(grad->data() + bn_gamma_, d);
  Eigen::Map<Eigen::RowVectorXd> dbeta(grad->data() + bn_beta_, d);
  bn_backward(dz * w.transpose(), cache, gamma, dgamma, dbeta);
  return total;
}

void EnsembleModel::fit(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets) {
  check_training_data(features, targets, "bnn_ensemble");
  initialize(features.cols());
  trace_.clear();
  kl_weight_used_ = config_.kl_weight.value_or(1.0 / static_cast<double>(features.rows()));

  RmsProp rms(params_.size(), config_.learning_rate, 0.9, 1e-7);
  Rng shuffle_rng(derive_seed(config_.seed, 1));
  Eigen::VectorXd grad(params_.size());
  std::uint64_t step = 0;
  for (int epoch = 0; epoch < config_.epochs; ++epoch) {
    EpochLoss record{epoch, 0.0, 0.0, 0.0};
    for (const auto& batch : make_batches(features.rows(), config_.batch_size, shuffle_rng)) {
      const bool whole = static_cast<Eigen::Index>(batch.size()) == features.rows();
      const Eigen::MatrixXd xb = whole ? features : Eigen::MatrixXd(features(batch, Eigen::all));
      const Eigen::VectorXd yb = whole ? targets : Eigen::VectorXd(targets(batch));
      const WeightNoise noise = sample_noise(derive_seed(config_.seed, 2, step++));
      LossParts parts;
      elbo_and_gradient(params_, xb, yb, kl_weight_used_, noise, &grad, &parts);
      if (!std::isfinite(parts.total) || !grad.allFinite()) {
        throw NumericalError(fmt::format("bnn_ensemble: loss became non-finite at epoch {}", epoch));
      }
      Eigen::Map<const Eigen::RowVectorXd> gamma(params_.data() + bn_gamma_, inputs_);
      Eigen::Map<const Eigen::RowVectorXd> beta(params_.data() + bn_beta_, inputs_);
      BatchNormCache cache;
      bn_train(xb, gamma, beta, cache);
      update_running(running_mean_, running_var_, cache);
      rms.step(params_, grad);
      const double w = static_cast<double>(batch.size()) / static_cast<double>(features.rows());
      record.nll += w * parts.nll;
      record.kl += w * parts.kl;
      record.total += w * parts.total;
    }
    trace_.push_back(record);
  }
  if (config_.epochs > 0) {
    running_mean_ = features.colwise().mean();
    running_var_ = (features.rowwise() - running_mean_).colwise().squaredNorm() / static_cast<double>(features.rows());
  }
  fitted_ = true;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> EnsembleModel::forward_draw(const Eigen::MatrixXd& features,
                                                                        const WeightNoise& noise) const {
  if (!fitted_) throw ConfigError("bnn_ensemble: predict before fit");
  if (features.cols() != inputs_) throw ConfigError("bnn_ensemble: query dimension mismatch");
  const Eigen::Index d = inputs_;
  const Eigen::Index h = units();
  Eigen::Map<const Eigen::RowVectorXd> gamma(params_.data() + bn_gamma_, d);
  Eigen::Map<const Eigen::RowVectorXd> beta(params_.data() + bn_beta_, d);
  Eigen::Map<const Eigen::MatrixXd> mu_w(params_.data() + mu_w_, d, h);
  Eigen::Map<const Eigen::MatrixXd> rho_w(params_.data() + rho_w_, d, h);
  Eigen::Map<const Eigen::RowVectorXd> mu_b(params_.data() + mu_b_, h);
  Eigen::Map<const Eigen::RowVectorXd> rho_b(params_.data() + rho_b_, h);
  Eigen::Map<const Eigen::MatrixXd> w_out(params_.data() + out_w_, h, 2);
  Eigen::Map<const Eigen::RowVectorXd> b_out(params_.data() + out_b_, 2);

  Eigen::MatrixXd w = mu_w;
  Eigen::RowVectorXd b = mu_b;
  if (!collapsed_) {
    w.array() += (softplus_array(rho_w.array()) + kStddevFloor) * noise.weights.array();
    b.array() += (softplus_array(rho_b.array()).row(0) + kStddevFloor) * noise.bias.array();
  }
  const Eigen::MatrixXd xbn = bn_infer(features, gamma, beta, running_mean_, running_var_);
  const Eigen::MatrixXd hidden = sigmoid_array(((xbn * w).rowwise() + b).array()).matrix();
  const Eigen::MatrixXd o = (hidden * w_out).rowwise() + b_out;
  Eigen::VectorXd sigma = (softplus_array(o.col(1).array()) + kStddevFloor).matrix();
  return {o.col(0), std::move(sigma)};
}

EnsembleModel EnsembleModel::collapsed() const {
  EnsembleModel copy = *this;
  copy.collapsed_ = true;
  return copy;
}

Eigen::VectorXd EnsembleModel::posterior_means() const {
  Eigen::VectorXd mu(variational_count());
  mu << params_.segment(mu_w_, inputs_ * units()), params_.segment(mu_b_, units());
  return mu;
}

Eigen::VectorXd EnsembleModel::posterior_stddevs() const {
  if (collapsed_) return Eigen::VectorXd::Zero(variational_count());
  Eigen::VectorXd rho(variational_count());
  rho << params_.segment(rho_w_, inputs_ * units()), params_.segment(rho_b_, units());
  return (softplus_array(rho.array()) + kStddevFloor).matrix();
}

PredictiveDistribution EnsembleModel::predict_dist(const Eigen::MatrixXd& features) const {
  const auto ensemble = ensemble_predict(*this, features, config_.predict_draws, derive_seed(config_.seed, 3));
  const auto parts = decompose_uncertainty(ensemble);
  return {ensemble.mixture_mean(), parts.total};
}

void EnsembleModel::save(std::ostream& out, const nlohmann::json& metadata) const {
  if (!fitted_) throw ConfigError("bnn_ensemble: save before fit");
  out.write(kMagic, sizeof(kMagic));
  put_u64(out, kSnapshotVersion);
  put_u64(out, static_cast<std::uint64_t>(config_.hidden_units));
  put_u64(out, static_cast<std::uint64_t>(config_.epochs));
  put_u64(out, static_cast<std::uint64_t>(config_.batch_size));
  put_u64(out, static_cast<std::uint64_t>(config_.predict_draws));
  put_u64(out, config_.seed);
  put_f64(out, config_.learning_rate);
  put_f64(out, kl_weight_used_);
  put_f64(out, config_.prior_stddev);
  put_f64(out, config_.init_mean_stddev);
  put_f64(out, config_.init_posterior_stddev);
  put_u64(out, collapsed_ ? 1 : 0);
  put_u64(out, static_cast<std::uint64_t>(inputs_));
  put_u64(out, static_cast<std::uint64_t>(params_.size()));
  for (Eigen::Index k = 0; k < params_.size(); ++k) put_f64(out, params_(k));
  for (Eigen::Index k = 0; k < inputs_; ++k) put_f64(out, running_mean_(k));
  for (Eigen::Index k = 0; k < inputs_; ++k) put_f64(out, running_var_(k));
  const std::string meta = metadata.dump();
  put_u64(out, meta.size());
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  if (!out) throw Error("snapshot: write failed");
}

std::pair<EnsembleModel, nlohmann::json> EnsembleModel::load(std::istream& in) {
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw ParseError("snapshot: bad magic", 0, "");
  const auto version = get_u64(in);
  if (version != kSnapshotVersion) {
    throw ParseError(fmt::format("snapshot: unsupported version {}", version), 0, "");
  }
  EnsembleModelConfig config;
  config.hidden_units = static_cast<int>(get_u64(in));
  config.epochs = static_cast<int>(get_u64(in));
  config.batch_size = static_cast<int>(get_u64(in));
  config.predict_draws = static_cast<int>(get_u64(in));
  config.seed = get_u64(in);
  config.learning_rate = get_f64(in);
  const double kl_weight = get_f64(in);
  config.kl_weight = kl_weight;
  config.prior_stddev = get_f64(in);
  config.init_mean_stddev = get_f64(in);
  config.init_posterior_stddev = get_f64(in);
  const bool collapsed = get_u64(in) != 0;
  const auto inputs = static_cast<Eigen::Index>(get_u64(in));
  const auto count = static_cast<Eigen::Index>(get_u64(in));

  EnsembleModel model(config);
  model.initialize(inputs);
  if (count != model.params_.size()) throw ParseError("snapshot: parameter count does not match architecture", 0, "");
  for (Eigen::Index k = 0; k < count; ++k) model.params_(k) = get_f64(in);
  for (Eigen::Index k = 0; k < inputs; ++k) model.running_mean_(k) = get_f64(in);
  for (Eigen::Index k = 0; k < inputs; ++k) model.running_var_(k) = get_f64(in);
  const auto meta_size = get_u64(in);
  std::string meta(meta_size, '\0');
  in.read(meta.data(), static_cast<std::streamsize>(meta_size));
  if (!in) throw ParseError("snapshot: truncated metadata", 0, "");
  model.kl_weight_used_ = kl_weight;
  model.collapsed_ = collapsed;
  model.fitted_ = true;
  return {std::move(model), nlohmann::json::parse(meta)};
}

// ---------------------------------------------------------------------------

Eigen::VectorXd EnsembleOutput::mixture_mean() const { return means.colwise().mean().transpose(); }

EnsembleOutput ensemble_predict(const EnsembleModel& model, const Eigen::MatrixXd& features, int n_draws,
                                std::uint64_t seed) {
  if (n_draws < 2) throw ConfigError("ensemble_predict: n_draws must be >= 2");
  EnsembleOutput out;
  out.seed = seed;
  out.means.resize(n_draws, features.rows());
  out.stddevs.resize(n_draws, features.rows());
  for (int i = 0; i < n_draws; ++i) {
    const auto [mu, sigma] = model.forward_draw(features, model.sample_noise(derive_seed(seed, i)));
    out.means.row(i) = mu.transpose();
    out.stddevs.row(i) = sigma.transpose();
  }
  return out;
}

UncertaintyDecomposition decompose_uncertainty(const EnsembleOutput& ensemble) {
  const Eigen::Index n = ensemble.draws();
  if (n < 2) throw ConfigError("decompose_uncertainty: at least 2 draws are required");
  if (ensemble.stddevs.rows() != n || ensemble.stddevs.cols() != ensemble.queries()) {
    throw ConfigError("decompose_uncertainty: means and stddevs differ in shape");
  }
  UncertaintyDecomposition out;
  out.aleatoric = ensemble.stddevs.array().square().colwise().mean().sqrt().transpose();
  const Eigen::RowVectorXd centre = ensemble.means.colwise().mean();
  out.epistemic = ((ensemble.means.rowwise() - centre).colwise().squaredNorm() / static_cast<double>(n - 1))
                      .array()
                      .sqrt()
                      .transpose();
  out.total = (out.aleatoric.array().square() + out.epistemic.array().square()).sqrt();
  if (ensemble.queries() > 0) {
    out.aggregate_aleatoric = out.aleatoric.mean();
    out.aggregate_epistemic = out.epistemic.mean();
    out.aggregate_total = out.total.mean();
  }
  return out;
}

}  // namespace dftuq
