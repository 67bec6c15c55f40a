#include <doctest.h>

#include "dftuq/errors.hpp"
#include "dftuq/model.hpp"
#include "dftuq/random.hpp"

#include <cmath>
#include <sstream>

using namespace dftuq;

TEST_CASE("rmse") {
  Eigen::VectorXd a(3);
  a << 0.1, -0.2, 0.3;
  CHECK(rmse(a, a) == 0.0);

  Eigen::VectorXd p = Eigen::VectorXd::Zero(2);
  Eigen::VectorXd y(2);
  y << 0.03, 0.04;
  CHECK(rmse(p, y) == doctest::Approx(std::sqrt((0.0009 + 0.0016) / 2.0)).epsilon(1e-14));
  CHECK(rmse(p, y) == doctest::Approx(0.035355).epsilon(1e-5));

  Rng rng(3);
  Eigen::VectorXd u(50), v(50);
  for (int i = 0; i < 50; ++i) {
    u(i) = rng.normal();
    v(i) = rng.normal();
  }
  const auto perm = shuffled_indices(50, 9);
  Eigen::VectorXd up(50), vp(50);
  for (int i = 0; i < 50; ++i) {
    up(i) = u(static_cast<Eigen::Index>(perm[i]));
    vp(i) = v(static_cast<Eigen::Index>(perm[i]));
  }
  CHECK(rmse(up, vp) == doctest::Approx(rmse(u, v)).epsilon(1e-14));

  CHECK_THROWS(rmse(Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(3)));
}

TEST_CASE("combined noise floor") {
  CHECK(combined_noise_floor(0.047, 0.015) == doctest::Approx(0.04934).epsilon(1e-4));
  CHECK(combined_noise_floor(0.0, 0.02) == 0.02);
  CHECK(combined_noise_floor(0.03, 0.04) == doctest::Approx(0.05).epsilon(1e-14));
}

TEST_CASE("parity table") {
  Eigen::VectorXd m(3), p(3), s(3);
  m << 0.1, 0.2, 0.3;
  p << 0.11, 0.19, 0.33;
  s << 0.05, 0.06, 0.07;
  const auto plain = parity_table(m, p);
  CHECK(plain.rows.size() == 3);
  CHECK_FALSE(plain.rows[0].aleatoric.has_value());

  const auto with = parity_table(m, p, s);
  CHECK(with.rows[2].aleatoric.value() == 0.07);
  CHECK_FALSE(with.rows[2].epistemic.has_value());

  std::ostringstream out;
  with.write_csv(out);
  const std::string text = out.str();
  CHECK(text.rfind("measured_mm,predicted_mm,aleatoric_mm", 0) == 0);
  CHECK(text.find("epistemic") == std::string::npos);

  CHECK_THROWS(parity_table(m, Eigen::VectorXd::Zero(2)));
}

TEST_CASE("predictive distribution validation") {
  PredictiveDistribution d{Eigen::VectorXd::Zero(2), Eigen::VectorXd::Ones(2)};
  CHECK_NOTHROW(d.validate());
  d.stddevs(1) = -1.0;
  CHECK_THROWS(d.validate());
}

TEST_CASE("derived seeds are stable and distinct") {
  CHECK(derive_seed(1, 2) == derive_seed(1, 2));
  CHECK(derive_seed(1, 2) != derive_seed(2, 1));
  CHECK(derive_seed(1, 2, 3) != derive_seed(1, 3, 2));
  const auto a = shuffled_indices(100, 4);
  const auto b = shuffled_indices(100, 4);
  CHECK(a == b);
  CHECK(a != shuffled_indices(100, 5));
}
