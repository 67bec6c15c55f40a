#pragma once

#include "dftuq/model.hpp"

namespace dftuq {

enum class DistanceMetric { euclidean, manhattan };

struct KnnConfig {
  int k = 5;
  DistanceMetric metric = DistanceMetric::euclidean;
};

/// Unweighted k-nearest-neighbour regression. Equal distances resolve to the
/// lower training-row index.
class KnnRegressor final : public Regressor {
 public:
  explicit KnnRegressor(KnnConfig config);

  void fit(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets) override;
  using Regressor::fit;
  Eigen::VectorXd predict(const Eigen::MatrixXd& features) const override;
  std::string name() const override { return "knn"; }

  /// Training-row indices of the k neighbours of one query, nearest first.
  std::vector<Eigen::Index> neighbours(const Eigen::RowVectorXd& query) const;

 private:
  KnnConfig config_;
  Eigen::MatrixXd train_x_;
  Eigen::VectorXd train_y_;
};

}  // namespace dftuq
