#pragma once

#include "dftuq/model.hpp"
#include "dftuq/random.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace dftuq {

enum class SplitCriterion { squared_error, absolute_error };

/// Growth limits shared by every tree-based family.
struct TreeGrowth {
  std::optional<int> max_depth;       // root has depth 0
  std::optional<int> max_leaf_nodes;  // switches to best-first growth
  int min_samples_leaf = 1;
  SplitCriterion criterion = SplitCriterion::squared_error;
  std::optional<int> max_features;  // candidate features drawn per split
};

/// Binary regression tree grown greedily top-down. Rows go left when
/// x[feature] <= threshold; thresholds are midpoints between consecutive
/// distinct values. Equal split costs keep the lowest feature, then the
/// lowest threshold.
class RegressionTree {
 public:
  struct Node {
    int feature = -1;  // -1 for leaves
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
    int depth = 0;
    std::size_t samples = 0;
  };

  /// `rows` may repeat indices (bootstrap samples). `rng` is required only
  /// when growth.max_features is below the feature count.
  static RegressionTree grow(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets,
                             std::span<const std::size_t> rows, const TreeGrowth& growth, Rng* rng = nullptr);

  double predict_row(const Eigen::MatrixXd& features, Eigen::Index row) const;
  Eigen::VectorXd predict(const Eigen::MatrixXd& features) const;

  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  std::size_t leaf_count() const;
  int depth() const;

 private:
  std::vector<Node> nodes_;
};

struct TreeConfig {
  std::optional<int> max_depth;
  int min_samples_leaf = 1;
  SplitCriterion criterion = SplitCriterion::squared_error;
};

class TreeRegressor final : public Regressor {
 public:
  explicit TreeRegressor(TreeConfig config);
  void fit(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets) override;
  using Regressor::fit;
  Eigen::VectorXd predict(const Eigen::MatrixXd& features) const override;
  std::string name() const override { return "tree"; }
  const RegressionTree& tree() const { return tree_; }

 private:
  TreeConfig config_;
  RegressionTree tree_;
  bool fitted_ = false;
};

struct ForestConfig {
  int n_estimators = 100;
  std::optional<int> max_features;  // all features when unset
  int min_samples_leaf = 1;
  std::optional<int> max_depth;     // unlimited by default
  bool bootstrap = true;
  std::uint64_t seed = 0;
};

/// Bagged trees with per-split feature subsampling. Tree t draws from the
/// stream derive_seed(seed, t), so results do not depend on scheduling.
class ForestRegressor final : public Regressor {
 public:
  explicit ForestRegressor(ForestConfig config);
  void fit(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets) override;
  using Regressor::fit;
  Eigen::VectorXd predict(const Eigen::MatrixXd& features) const override;
  std::string name() const override { return "forest"; }
  std::size_t size() const { return trees_.size(); }

 private:
  ForestConfig config_;
  std::vector<RegressionTree> trees_;
};

struct GbtConfig {
  double learning_rate = 0.1;
  int n_estimators = 100;
  std::optional<int> max_leaf_nodes;
  std::optional<int> max_depth = 3;
  double subsample = 1.0;
  int min_samples_leaf = 1;
  std::uint64_t seed = 0;
};

/// Least-squares gradient boosting: F_0 is the target mean and each stage
/// adds learning_rate times a tree fitted to the current residuals, on a
/// fresh subsample (without replacement) when subsample < 1.
class GbtRegressor final : public Regressor {
 public:
  explicit GbtRegressor(GbtConfig config);
  void fit(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets) override;
  using Regressor::fit;
  Eigen::VectorXd predict(const Eigen::MatrixXd& features) const override;
  std::string name() const override { return "gbt"; }

  /// Training MSE after 0, 1, ..., n_estimators stages.
  const std::vector<double>& training_loss() const { return training_loss_; }

 private:
  GbtConfig config_;
  double base_ = 0.0;
  std::vector<RegressionTree> stages_;
  std::vector<double> training_loss_;
  bool fitted_ = false;
};

}  // namespace dftuq
