#include <doctest.h>

#include "dftuq/errors.hpp"
#include "dftuq/families.hpp"
#include "dftuq/knn.hpp"
#include "dftuq/mlp.hpp"
#include "dftuq/random.hpp"
#include "dftuq/svr.hpp"
#include "dftuq/trees.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <tuple>

using namespace dftuq;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(-2.0, 2.0);
  return m;
}

Eigen::VectorXd random_vector(Eigen::Index n, Rng& rng) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.normal();
  return v;
}

// Exhaustive kNN: sort all distances, ties by index, average the first k.
double knn_oracle(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::RowVectorXd& q, int k,
                  bool manhattan) {
  std::vector<std::pair<double, Eigen::Index>> d;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Eigen::RowVectorXd diff = x.row(i) - q;
    d.push_back({manhattan ? diff.cwiseAbs().sum() : diff.norm(), i});
  }
  std::sort(d.begin(), d.end());
  double s = 0.0;
  for (int i = 0; i < k; ++i) s += y(d[static_cast<std::size_t>(i)].second);
  return s / k;
}

// Independent recursive tree: tries every feature and every midpoint between
// distinct sorted values, computing child costs from scratch.
struct OracleTree {
  SplitCriterion criterion;
  std::optional<int> max_depth;
  int min_leaf;
  const Eigen::MatrixXd* x;
  const Eigen::VectorXd* y;

  static double center(std::vector<double> v, SplitCriterion c) {
    if (c == SplitCriterion::squared_error) return std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    std::sort(v.begin(), v.end());
    const auto m = v.size();
    return m % 2 ? v[m / 2] : 0.5 * (v[m / 2 - 1] + v[m / 2]);
  }

  double cost(const std::vector<Eigen::Index>& rows) const {
    std::vector<double> v;
    for (auto r : rows) v.push_back((*y)(r));
    const double c = center(v, criterion);
    double s = 0.0;
    for (double t : v) s += criterion == SplitCriterion::squared_error ? (t - c) * (t - c) : std::abs(t - c);
    return s;
  }

  // Every prediction an optimal tree can make for q; several when equal-cost
  // splits exist, since either is a correct choice.
  std::vector<double> predict(const std::vector<Eigen::Index>& rows, int depth, const Eigen::RowVectorXd& q) const {
    std::vector<double> v;
    for (auto r : rows) v.push_back((*y)(r));
    const double leaf = center(v, criterion);
    if ((max_depth && depth >= *max_depth) || rows.size() < 2 * static_cast<std::size_t>(min_leaf)) return {leaf};
    const double parent = cost(rows);
    if (parent <= 1e-14 * std::max<double>(1.0, rows.size())) return {leaf};

    std::vector<std::tuple<double, int, double>> splits;  // cost, feature, threshold
    for (int f = 0; f < x->cols(); ++f) {
      std::vector<double> vals;
      for (auto r : rows) vals.push_back((*x)(r, f));
      std::sort(vals.begin(), vals.end());
      vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
      for (std::size_t i = 0; i + 1 < vals.size(); ++i) {
        const double t = 0.5 * (vals[i] + vals[i + 1]);
        std::vector<Eigen::Index> l, r;
        for (auto row : rows) ((*x)(row, f) <= t ? l : r).push_back(row);
        if (l.size() < static_cast<std::size_t>(min_leaf) || r.size() < static_cast<std::size_t>(min_leaf)) continue;
        splits.emplace_back(cost(l) + cost(r), f, t);
      }
    }
    if (splits.empty()) return {leaf};
    double best = std::numeric_limits<double>::infinity();
    for (const auto& s : splits) best = std::min(best, std::get<0>(s));
    if (!(parent - best > 1e-12 * parent)) return {leaf};
    std::vector<double> out;
    for (const auto& [c, f, t] : splits) {
      if (c > best + 1e-9) continue;
      std::vector<Eigen::Index> l, r;
      for (auto row : rows) ((*x)(row, f) <= t ? l : r).push_back(row);
      const auto sub = q(f) <= t ? predict(l, depth + 1, q) : predict(r, depth + 1, q);
      out.insert(out.end(), sub.begin(), sub.end());
    }
    return out;
  }
};

}  // namespace

TEST_CASE("knn small cases") {
  Eigen::MatrixXd x(3, 1);
  x << 0.0, 1.0, 5.0;
  Eigen::VectorXd y(3);
  y << 0.0, 0.1, 9.0;

  KnnRegressor one({1, DistanceMetric::euclidean});
  one.fit(x, y);
  Eigen::MatrixXd q(1, 1);
  q << 1.0;
  CHECK(one.predict(q)(0) == 0.1);

  KnnRegressor two({2, DistanceMetric::euclidean});
  two.fit(x, y);
  q << 0.5;
  CHECK(two.predict(q)(0) == doctest::Approx(0.05).epsilon(1e-15));

  KnnRegressor all({3, DistanceMetric::manhattan});
  all.fit(x, y);
  q << 100.0;
  CHECK(all.predict(q)(0) == doctest::Approx(y.mean()));

  KnnRegressor too_many({4, DistanceMetric::euclidean});
  CHECK_THROWS_AS(too_many.fit(x, y), ConfigError);
}

TEST_CASE("knn matches an exhaustive distance sort") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    Rng rng(seed);
    const Eigen::Index n = 5 + static_cast<Eigen::Index>(rng.below(6));
    const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng.below(3));
    const auto x = random_matrix(n, d, rng);
    const auto y = random_vector(n, rng);
    const int k = 1 + static_cast<int>(rng.below(static_cast<std::size_t>(n)));
    const bool manhattan = seed % 2 == 1;
    KnnRegressor model({k, manhattan ? DistanceMetric::manhattan : DistanceMetric::euclidean});
    model.fit(x, y);
    const auto q = random_matrix(8, d, rng);
    const auto pred = model.predict(q);
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
      CHECK(pred(i) == doctest::Approx(knn_oracle(x, y, q.row(i), k, manhattan)).epsilon(1e-14));
    }
  }
}

TEST_CASE("tree small cases") {
  SUBCASE("constant targets give one leaf") {
    Eigen::MatrixXd x(4, 1);
    x << 0, 1, 2, 3;
    TreeRegressor t({std::nullopt, 1, SplitCriterion::squared_error});
    t.fit(x, Eigen::VectorXd::Constant(4, 0.7));
    CHECK(t.tree().leaf_count() == 1);
    CHECK(t.predict(x).isApproxToConstant(0.7));
  }
  SUBCASE("depth one step") {
    Eigen::MatrixXd x(4, 1);
    x << 0, 1, 2, 3;
    Eigen::VectorXd y(4);
    y << 0, 0, 1, 1;
    TreeRegressor t({1, 1, SplitCriterion::squared_error});
    t.fit(x, y);
    const auto& root = t.tree().nodes().front();
    CHECK(root.feature == 0);
    CHECK(root.threshold > 1.0);
    CHECK(root.threshold < 2.0);
    CHECK(t.predict(x) == y);
  }
  SUBCASE("min_samples_leaf = n keeps the root") {
    Rng rng(1);
    const auto x = random_matrix(6, 2, rng);
    const auto y = random_vector(6, rng);
    TreeRegressor t({std::nullopt, 6, SplitCriterion::squared_error});
    t.fit(x, y);
    CHECK(t.tree().nodes().size() == 1);
    CHECK(t.predict(x).isApproxToConstant(y.mean()));
  }
  SUBCASE("absolute error leaves predict the median") {
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(3, 1);
    Eigen::VectorXd y(3);
    y << 0.0, 0.1, 5.0;
    TreeRegressor t({std::nullopt, 1, SplitCriterion::absolute_error});
    t.fit(x, y);
    CHECK(t.predict(x).isApproxToConstant(0.1));
  }
}

TEST_CASE("tree matches an exhaustive split search") {
  int ambiguous = 0;
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    Rng rng(100 + seed);
    const Eigen::Index n = 3 + static_cast<Eigen::Index>(rng.below(8));
    const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng.below(3));
    const auto x = random_matrix(n, d, rng);
    const auto y = random_vector(n, rng);
    const auto criterion = seed % 2 ? SplitCriterion::absolute_error : SplitCriterion::squared_error;
    const std::optional<int> depth = seed % 3 == 0 ? std::nullopt : std::optional<int>(1 + static_cast<int>(seed % 3));
    const int min_leaf = 1 + static_cast<int>(seed % 2);
    TreeRegressor model({depth, min_leaf, criterion});
    model.fit(x, y);

    OracleTree oracle{criterion, depth, min_leaf, &x, &y};
    std::vector<Eigen::Index> rows(static_cast<std::size_t>(n));
    std::iota(rows.begin(), rows.end(), Eigen::Index{0});
    const auto q = random_matrix(10, d, rng);
    const auto pred = model.predict(q);
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
      const auto allowed = oracle.predict(rows, 0, q.row(i));
      if (allowed.size() > 1) ++ambiguous;
      const bool match = std::any_of(allowed.begin(), allowed.end(),
                                     [&](double a) { return std::abs(a - pred(i)) <= 1e-12 * std::max(1.0, std::abs(a)); });
      CHECK(match);
    }
  }
  MESSAGE(ambiguous << " of 600 queries had several optimal trees");
}

TEST_CASE("tree predictions are invariant to monotone feature transforms") {
  Rng rng(5);
  const auto x = random_matrix(10, 2, rng);
  const auto y = random_vector(10, rng);
  Eigen::MatrixXd xt = x;
  xt.col(1) = x.col(1).array().exp();
  TreeRegressor a({3, 1, SplitCriterion::squared_error});
  TreeRegressor b({3, 1, SplitCriterion::squared_error});
  a.fit(x, y);
  b.fit(xt, y);
  CHECK(a.predict(x) == b.predict(xt));
}

TEST_CASE("forest") {
  const auto m = encode(generate_synthetic(400, 0.05, 2));
  std::vector<std::size_t> tr(300), te(100);
  std::iota(tr.begin(), tr.end(), std::size_t{0});
  std::iota(te.begin(), te.end(), std::size_t{300});
  const auto a = m.select_rows(tr);
  const auto b = m.select_rows(te);

  SUBCASE("one unbootstrapped tree reduces to a plain tree") {
    ForestRegressor f({1, std::nullopt, 2, std::nullopt, false, 9});
    f.fit(a.features, a.targets);
    TreeRegressor t({std::nullopt, 2, SplitCriterion::squared_error});
    t.fit(a.features, a.targets);
    CHECK(f.predict(b.features) == t.predict(b.features));
  }
  SUBCASE("same seed, same predictions") {
    ForestConfig cfg{20, 3, 3, std::nullopt, true, 4};
    ForestRegressor f1(cfg), f2(cfg);
    f1.fit(a.features, a.targets);
    f2.fit(a.features, a.targets);
    CHECK(f1.predict(b.features) == f2.predict(b.features));
  }
  SUBCASE("50 trees beat one tree") {
    ForestRegressor f({50, std::nullopt, 1, std::nullopt, true, 4});
    f.fit(a.features, a.targets);
    TreeRegressor t({std::nullopt, 1, SplitCriterion::squared_error});
    t.fit(a.features, a.targets);
    CHECK(rmse(f.predict(b.features), b.targets) <= rmse(t.predict(b.features), b.targets));
  }
}

TEST_CASE("gradient boosting") {
  Rng rng(8);
  const auto x = random_matrix(40, 3, rng);
  const auto y = random_vector(40, rng);

  SUBCASE("zero stages predict the mean") {
    GbtRegressor g({0.1, 0, std::nullopt, 3, 1.0, 1, 0});
    g.fit(x, y);
    CHECK(g.predict(x).isApproxToConstant(y.mean()));
  }
  SUBCASE("one full stage at rate 1 interpolates") {
    GbtRegressor g({1.0, 1, std::nullopt, 100, 1.0, 1, 0});
    g.fit(x, y);
    CHECK((g.predict(x) - y).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("training loss never increases without subsampling") {
    GbtRegressor g({0.3, 60, 8, std::nullopt, 1.0, 1, 0});
    g.fit(x, y);
    const auto& loss = g.training_loss();
    REQUIRE(loss.size() == 61);
    for (std::size_t i = 1; i < loss.size(); ++i) CHECK(loss[i] <= loss[i - 1] + 1e-15);
  }
  SUBCASE("depth and leaf limits are exclusive") {
    CHECK_THROWS_AS(GbtRegressor({0.1, 10, 8, 3, 1.0, 1, 0}), ConfigError);
  }
  SUBCASE("subsampled stages are seed-reproducible") {
    GbtRegressor g1({0.1, 30, std::nullopt, 3, 0.9, 1, 5}), g2({0.1, 30, std::nullopt, 3, 0.9, 1, 5});
    g1.fit(x, y);
    g2.fit(x, y);
    CHECK(g1.predict(x) == g2.predict(x));
  }
}

TEST_CASE("svr") {
  SUBCASE("one training point") {
    Eigen::MatrixXd x(1, 2);
    x << 0.3, -0.4;
    Eigen::VectorXd y(1);
    y << 0.2;
    SvrRegressor s({0.03, 1.0, std::nullopt, 1e-3, 100000});
    s.fit(x, y);
    CHECK(std::abs(s.predict(x)(0) - 0.2) <= 0.03 + 1e-9);
  }
  SUBCASE("constant targets") {
    Rng rng(2);
    const auto x = random_matrix(12, 3, rng);
    SvrRegressor s({0.03, 1.0, std::nullopt, 1e-3, 100000});
    s.fit(x, Eigen::VectorXd::Constant(12, 0.4));
    CHECK(s.dual_coefficients().isZero(0.0));
    CHECK(s.bias() == doctest::Approx(0.4));
    CHECK(s.predict(random_matrix(5, 3, rng)).isApproxToConstant(0.4, 1e-12));
  }
  SUBCASE("KKT: points inside the tube carry no weight") {
    Rng rng(3);
    const auto x = random_matrix(60, 2, rng);
    Eigen::VectorXd y = (x.col(0).array().sin() + 0.1 * x.col(1).array()).matrix();
    for (Eigen::Index i = 0; i < y.size(); ++i) y(i) += 0.05 * rng.normal();
    const double eps = 0.05;
    SvrRegressor s({eps, 1.0, std::nullopt, 1e-4, 1000000});
    s.fit(x, y);
    CHECK(s.status() == SvrStatus::converged);
    const Eigen::VectorXd resid = (y - s.predict(x)).cwiseAbs();
    const auto& coef = s.dual_coefficients();
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      if (resid(i) < eps - 1e-3) CHECK(std::abs(coef(i)) < 1e-8);
      CHECK(std::abs(coef(i)) <= 1.0 + 1e-12);
    }
  }
}

TEST_CASE("mlp") {
  SUBCASE("zero output weights predict the output bias") {
    MlpRegressor m({{5, 3}, Activation::tanh, MlpSolver::lbfgs, 1e-3, 10, 0.0, 1});
    m.initialize(4);
    auto& p = m.parameters();
    const Eigen::Index out_w = p.size() - 4;  // last layer: 3 weights + 1 bias
    p.segment(out_w, 3).setZero();
    p(p.size() - 1) = 0.37;
    Rng rng(1);
    const auto x = random_matrix(6, 4, rng);
    CHECK(m.forward(p, x).isApproxToConstant(0.37, 1e-15));
  }

  SUBCASE("gradient matches central differences") {
    for (auto act : {Activation::tanh, Activation::relu}) {
      MlpRegressor m({{5, 3}, act, MlpSolver::lbfgs, 1e-3, 10, 1e-3, 7});
      m.initialize(3);
      Rng rng(4);
      const auto x = random_matrix(4, 3, rng);
      const auto y = random_vector(4, rng);
      Eigen::VectorXd p = m.parameters();
      Eigen::VectorXd g;
      m.loss_and_gradient(p, x, y, &g);
      const double h = 1e-5;
      double worst = 0.0;
      for (Eigen::Index i = 0; i < p.size(); ++i) {
        Eigen::VectorXd a = p, b = p;
        a(i) += h;
        b(i) -= h;
        const double fd = (m.loss_and_gradient(a, x, y, nullptr) - m.loss_and_gradient(b, x, y, nullptr)) / (2 * h);
        worst = std::max(worst, std::abs(fd - g(i)) / std::max(1e-6, std::abs(fd) + std::abs(g(i))));
      }
      CHECK(worst < 1e-4);
    }
  }

  SUBCASE("lbfgs fits a smooth function and is reproducible") {
    Rng rng(6);
    const auto x = random_matrix(80, 2, rng);
    const Eigen::VectorXd y = (x.col(0).array() * x.col(1).array()).matrix() * 0.1;
    MlpConfig cfg{{16, 8, 4}, Activation::tanh, MlpSolver::lbfgs, 1e-3, 500, 1e-4, 3};
    MlpRegressor a(cfg), b(cfg);
    a.fit(x, y);
    b.fit(x, y);
    CHECK(a.predict(x) == b.predict(x));
    CHECK(rmse(a.predict(x), y) < 0.02);
  }
}

TEST_CASE("every family is seed-deterministic through the factory") {
  const auto m = encode(generate_synthetic(120, 0.05, 4));
  for (Family f : deterministic_families()) {
    ParamSet params = tuned_grid(f).candidates().front();
    if (f == Family::forest) params["n_estimators"] = 10;
    if (f == Family::mlp) params["max_iter"] = 50;
    auto a = make_regressor(f, params, 17);
    auto b = make_regressor(f, params, 17);
    a->fit(m);
    b->fit(m);
    CHECK_MESSAGE(a->predict(m.features) == b->predict(m.features), to_string(f));
  }
}

TEST_CASE("factory rejects unknown parameters") {
  CHECK_THROWS_AS(make_regressor(Family::knn, {{"n_neighbours", 3}}, 0), ConfigError);
  CHECK_THROWS_AS(make_regressor(Family::svr, {{"kernel", "poly"}}, 0), ConfigError);
  CHECK_THROWS_AS(parse_family("lgbm"), ConfigError);
}
