#include <doctest.h>

#include "dftuq/bnn.hpp"
#include "dftuq/errors.hpp"
#include "dftuq/random.hpp"

#include <cmath>
#include <map>
#include <numbers>
#include <sstream>

using namespace dftuq;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.normal();
  return m;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1e-8, std::abs(a) + std::abs(b)); }

// Scaled synthetic fixture with a smooth mean and homoscedastic noise.
std::pair<Eigen::MatrixXd, Eigen::VectorXd> known_noise(Eigen::Index n, double sigma, std::uint64_t seed) {
  const auto m = encode(generate_synthetic(static_cast<std::size_t>(n), sigma, seed));
  return {apply_scaler(fit_scaler(m, ScalerMethod::zscore), m.features), m.targets};
}

}  // namespace

TEST_CASE("softplus pair") {
  for (double y : {1e-6, 0.05, 1.0, 30.0}) CHECK(softplus(softplus_inverse(y)) == doctest::Approx(y).epsilon(1e-12));
  CHECK(softplus(800.0) == 800.0);
  CHECK(softplus(-800.0) >= 0.0);
}

TEST_CASE("gaussian nll") {
  const auto y = vec({0.3, -0.2, 1.0});
  CHECK(nll_loss(y, Eigen::VectorXd::Ones(3), y) == doctest::Approx(0.5 * std::log(2 * std::numbers::pi)).epsilon(1e-14));
  CHECK(nll_loss(y, Eigen::VectorXd::Ones(3), y) == doctest::Approx(0.91894).epsilon(1e-5));

  // for residual r the optimal sigma is |r|
  const auto mu = vec({0.0});
  const auto t = vec({0.4});
  const double at_opt = nll_loss(mu, vec({0.4}), t);
  CHECK(nll_loss(mu, vec({0.8}), t) > at_opt);
  CHECK(nll_loss(mu, vec({0.2}), t) > at_opt);

  SUBCASE("head gradient matches central differences") {
    const auto m = vec({0.1, -0.5, 0.7, 0.0});
    const auto raw = vec({-1.0, 0.3, 2.0, -4.0});
    const auto target = vec({0.2, -0.1, 0.5, 0.05});
    HeadGradient g;
    head_nll(m, raw, target, &g);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < 4; ++i) {
      Eigen::VectorXd a = m, b = m;
      a(i) += h;
      b(i) -= h;
      CHECK(rel_err((head_nll(a, raw, target) - head_nll(b, raw, target)) / (2 * h), g.d_mean(i)) < 1e-5);
      Eigen::VectorXd c = raw, d = raw;
      c(i) += h;
      d(i) -= h;
      CHECK(rel_err((head_nll(m, c, target) - head_nll(m, d, target)) / (2 * h), g.d_raw_scale(i)) < 1e-5);
    }
  }
}

TEST_CASE("kl between diagonal gaussians") {
  const auto zero = vec({0.0});
  const auto one = vec({1.0});
  CHECK(kl_diag_gaussians(zero, one, zero, one) == 0.0);
  CHECK(std::abs(kl_diag_gaussians(one, one, zero, one) - 0.5) <= 1e-12);
  const double expect = std::log(0.5) + 2.0 - 0.5;  // q = N(0, 4), i.e. sigma_q = 2
  CHECK(std::abs(kl_diag_gaussians(zero, vec({2.0}), zero, one) - expect) <= 1e-12);
  CHECK(std::abs(kl_diag_gaussians(zero, vec({2.0}), zero, one) - 0.80685) <= 1e-5);
  // summed over parameters
  CHECK(std::abs(kl_diag_gaussians(vec({1.0, 0.0}), vec({1.0, 2.0}), vec({0.0, 0.0}), vec({1.0, 1.0})) -
                 (0.5 + expect)) <= 1e-12);

  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::VectorXd mq(3), sq(3), mp(3), sp(3);
    for (int i = 0; i < 3; ++i) {
      mq(i) = rng.normal();
      mp(i) = rng.normal();
      sq(i) = std::exp(rng.normal());
      sp(i) = std::exp(rng.normal());
    }
    CHECK(kl_diag_gaussians(mq, sq, mp, sp) > 0.0);
    CHECK(kl_diag_gaussians(mq, sq, mq, sq) == 0.0);
  }
}

TEST_CASE("model A gradients match central differences") {
  Rng rng(11);
  const auto x = random_matrix(6, 3, rng);
  const Eigen::VectorXd y = random_matrix(6, 1, rng).col(0) * 0.3;
  HeadModelConfig cfg;
  cfg.hidden_sizes = {4, 3};
  cfg.seed = 5;
  HeadModel model(cfg);
  model.initialize(3);
  Eigen::VectorXd p = model.parameters();
  for (Eigen::Index i = 0; i < p.size(); ++i) p(i) += 0.1 * rng.normal();  // move gamma/beta off their init

  for (bool with_kl : {false, true}) {
    cfg.output_regularizer = with_kl;
    HeadModel m2(cfg);
    m2.initialize(3);
    Eigen::VectorXd g;
    m2.loss_and_gradient(p, x, y, 0.3, &g);
    const double h = 1e-6;
    double worst = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      Eigen::VectorXd a = p, b = p;
      a(i) += h;
      b(i) -= h;
      const double fd = (m2.loss_and_gradient(a, x, y, 0.3, nullptr) - m2.loss_and_gradient(b, x, y, 0.3, nullptr)) / (2 * h);
      if (std::abs(fd) + std::abs(g(i)) > 1e-7) worst = std::max(worst, rel_err(fd, g(i)));
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("model B objective") {
  Rng rng(12);
  const Eigen::Index d = 4, h = 3;
  const auto x = random_matrix(7, d, rng);
  const Eigen::VectorXd y = random_matrix(7, 1, rng).col(0) * 0.3;
  EnsembleModelConfig cfg;
  cfg.hidden_units = static_cast<int>(h);
  cfg.seed = 3;
  EnsembleModel model(cfg);
  model.initialize(d);
  const auto noise = model.sample_noise(99);

  SUBCASE("gradient per parameter class") {
    Eigen::VectorXd p = model.parameters();
    for (Eigen::Index i = 0; i < p.size(); ++i) p(i) += 0.1 * rng.normal();
    Eigen::VectorXd g;
    model.elbo_and_gradient(p, x, y, 0.2, noise, &g);
    // layout: bn gamma, bn beta, mu_w, rho_w, mu_b, rho_b, out_w, out_b
    const std::vector<std::pair<std::string, Eigen::Index>> blocks = {
        {"bn_gamma", d}, {"bn_beta", d}, {"mu_w", d * h}, {"rho_w", d * h},
        {"mu_b", h},     {"rho_b", h},   {"out_w", 2 * h}, {"out_b", 2}};
    Eigen::Index offset = 0;
    const double step = 1e-6;
    for (const auto& [name, size] : blocks) {
      double worst = 0.0;
      for (Eigen::Index i = offset; i < offset + size; ++i) {
        Eigen::VectorXd a = p, b = p;
        a(i) += step;
        b(i) -= step;
        const double fd = (model.elbo_and_gradient(a, x, y, 0.2, noise, nullptr) -
                           model.elbo_and_gradient(b, x, y, 0.2, noise, nullptr)) /
                          (2 * step);
        if (std::abs(fd) + std::abs(g(i)) > 1e-7) worst = std::max(worst, rel_err(fd, g(i)));
      }
      CHECK_MESSAGE(worst < 1e-4, name);
      offset += size;
    }
    CHECK(offset == p.size());
  }

  SUBCASE("kl weight zero reduces to the nll") {
    LossParts parts;
    const double total = model.elbo_and_gradient(model.parameters(), x, y, 0.0, noise, nullptr, &parts);
    CHECK(total == parts.nll);
    CHECK(parts.kl > 0.0);
  }

  SUBCASE("posterior pinned to the prior has zero kl") {
    Eigen::VectorXd p = model.parameters();
    const double rho = softplus_inverse(1.0 - kStddevFloor);
    p.segment(2 * d, d * h).setZero();
    p.segment(2 * d + d * h, d * h).setConstant(rho);
    p.segment(2 * d + 2 * d * h, h).setZero();
    p.segment(2 * d + 2 * d * h + h, h).setConstant(rho);
    CHECK(std::abs(model.posterior_kl(p)) < 1e-12);
  }
}

TEST_CASE("uncertainty decomposition") {
  EnsembleOutput e;
  e.means.resize(2, 1);
  e.stddevs.resize(2, 1);
  e.means << 0.0, 1.0;
  e.stddevs << 1.0, 2.0;
  const auto u = decompose_uncertainty(e);
  CHECK(std::abs(u.aleatoric(0) - std::sqrt(2.5)) <= 1e-12);
  CHECK(std::abs(u.aleatoric(0) - 1.58114) <= 1e-5);
  CHECK(std::abs(u.epistemic(0) - std::sqrt(0.5)) <= 1e-12);
  CHECK(std::abs(u.epistemic(0) - 0.70711) <= 1e-5);
  CHECK(std::abs(u.total(0) * u.total(0) - (2.5 + 0.5)) <= 1e-12);

  EnsembleOutput flat;
  flat.means = Eigen::MatrixXd::Constant(5, 3, 0.4);
  flat.stddevs = Eigen::MatrixXd::Constant(5, 3, 0.06);
  const auto f = decompose_uncertainty(flat);
  CHECK(f.epistemic.isZero(0.0));
  CHECK(f.aleatoric.isApproxToConstant(0.06, 1e-15));

  EnsembleOutput one;
  one.means = Eigen::MatrixXd::Zero(1, 2);
  one.stddevs = Eigen::MatrixXd::Ones(1, 2);
  CHECK_THROWS_AS(decompose_uncertainty(one), ConfigError);
}

TEST_CASE("model A recovers a known noise level") {
  const double sigma = 0.05;
  const auto [x, y] = known_noise(2000, sigma, 21);
  HeadModelConfig cfg;
  cfg.epochs = 1000;
  cfg.batch_size = 64;
  cfg.seed = 1;
  HeadModel model(cfg);
  model.fit(x, y);
  const auto dist = model.predict_dist(x);
  const double aleatoric = std::sqrt(dist.stddevs.array().square().mean());
  MESSAGE("model A aleatoric " << aleatoric);
  CHECK(aleatoric > 0.8 * sigma);
  CHECK(aleatoric < 1.2 * sigma);
  CHECK(model.loss_trace().size() == 1000);
}

TEST_CASE("model B") {
  const auto [x, y] = known_noise(600, 0.05, 22);
  EnsembleModelConfig cfg;
  cfg.epochs = 300;
  cfg.seed = 4;

  SUBCASE("same seed, same parameters") {
    EnsembleModel a(cfg), b(cfg);
    a.fit(x, y);
    b.fit(x, y);
    CHECK(a.parameters() == b.parameters());
  }

  SUBCASE("huge kl weight collapses onto the prior") {
    auto c = cfg;
    c.kl_weight = 1e6;
    EnsembleModel m(c);
    m.fit(x, y);
    CHECK(m.posterior_means().cwiseAbs().mean() < 0.1);
  }

  EnsembleModel model(cfg);
  model.fit(x, y);
  const Eigen::MatrixXd q = x.topRows(50);

  SUBCASE("ensemble draws") {
    const auto e = ensemble_predict(model, q, 200, 7);
    CHECK(e.draws() == 200);
    CHECK(e.queries() == 50);
    CHECK((e.mixture_mean() - e.means.colwise().mean().transpose()).cwiseAbs().maxCoeff() < 1e-15);
    const auto again = ensemble_predict(model, q, 200, 7);
    CHECK(e.means == again.means);

    const auto other = ensemble_predict(model, q, 200, 8);
    CHECK(e.means != other.means);
    const auto u1 = decompose_uncertainty(e);
    const auto u2 = decompose_uncertainty(other);
    CHECK(std::abs(u1.aggregate_aleatoric - u2.aggregate_aleatoric) < 0.1 * std::max(u1.aggregate_aleatoric, u2.aggregate_aleatoric));
    CHECK(std::abs(u1.aggregate_epistemic - u2.aggregate_epistemic) <
          0.1 * std::max(u1.aggregate_epistemic, u2.aggregate_epistemic));
  }

  SUBCASE("collapsed posterior has no epistemic spread") {
    const auto e = ensemble_predict(model.collapsed(), q, 20, 7);
    for (Eigen::Index i = 1; i < e.draws(); ++i) CHECK(e.means.row(i) == e.means.row(0));
    CHECK(decompose_uncertainty(e).epistemic.maxCoeff() < 1e-12);
  }

  SUBCASE("snapshot round trip") {
    std::stringstream buf;
    model.save(buf, {{"note", "fixture"}});
    auto [loaded, meta] = EnsembleModel::load(buf);
    CHECK(meta.at("note") == "fixture");
    CHECK(loaded.parameters() == model.parameters());
    CHECK(ensemble_predict(loaded, q, 30, 5).means == ensemble_predict(model, q, 30, 5).means);

    std::string bytes = buf.str();
    bytes[0] = 'X';
    std::istringstream bad(bytes);
    CHECK_THROWS(EnsembleModel::load(bad));
  }

  SUBCASE("loss trace csv") {
    std::ostringstream out;
    write_loss_trace(out, model.loss_trace());
    CHECK(out.str().rfind("epoch,nll,kl,total\n", 0) == 0);
  }
}
