#include "dftuq/knn.hpp"

#include "dftuq/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <numeric>

namespace dftuq {

KnnRegressor::KnnRegressor(KnnConfig config) : config_(config) {
  if (config_.k < 1) throw ConfigError("knn: k must be >= 1");
}

void KnnRegressor::fit(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets) {
  if (features.rows() != targets.size() || features.rows() == 0) {
    throw ConfigError("knn: empty or misaligned training data");
  }
  if (config_.k > features.rows()) {
    throw ConfigError(fmt::format("knn: k={} exceeds {} training rows", config_.k, features.rows()));
  }
  train_x_ = features;
  train_y_ = targets;
}

std::vector<Eigen::Index> KnnRegressor::neighbours(const Eigen::RowVectorXd& query) const {
  const Eigen::Index n = train_x_.rows();
  if (query.size() != train_x_.cols()) throw ConfigError("knn: query dimension mismatch");
  std::vector<double> dist(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto diff = train_x_.row(i) - query;
    // squared euclidean preserves the ordering
    dist[static_cast<std::size_t>(i)] =
        config_.metric == DistanceMetric::euclidean ? diff.squaredNorm() : diff.cwiseAbs().sum();
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const auto k = static_cast<std::size_t>(config_.k);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](Eigen::Index a, Eigen::Index b) {
                      const double da = dist[static_cast<std::size_t>(a)];
                      const double db = dist[static_cast<std::size_t>(b)];
                      return da < db || (da == db && a < b);
                    });
  order.resize(k);
  return order;
}

Eigen::VectorXd KnnRegressor::predict(const Eigen::MatrixXd& features) const {
  if (train_x_.size() == 0) throw ConfigError("knn: predict before fit");
  Eigen::VectorXd out(features.rows());
  for (Eigen::Index q = 0; q < features.rows(); ++q) {
    double sum = 0.0;
    for (auto i : neighbours(features.row(q))) sum += train_y_(i);
    out(q) = sum / static_cast<double>(config_.k);
  }
  return out;
}

}  // namespace dftuq
