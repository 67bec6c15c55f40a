#include "dftuq/trees.hpp"

#include "dftuq/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <queue>

namespace dftuq {

namespace {

// Sum of absolute deviations about the median of a growing multiset.
class RunningAbsDeviation {
 public:
  void push(double v) {
    if (lower_.empty() || v <= lower_.top()) {
      lower_.push(v);
      lower_sum_ += v;
    } else {
      upper_.push(v);
      upper_sum_ += v;
    }
    if (lower_.size() > upper_.size() + 1) {
      const double top = lower_.top();
      lower_.pop();
      lower_sum_ -= top;
      upper_.push(top);
      upper_sum_ += top;
    } else if (upper_.size() > lower_.size()) {
      const double top = upper_.top();
      upper_.pop();
      upper_sum_ -= top;
      lower_.push(top);
      lower_sum_ += top;
    }
  }

  double deviation() const {
    const double med = lower_.top();
    return (upper_sum_ - static_cast<double>(upper_.size()) * med) +
           (static_cast<double>(lower_.size()) * med - lower_sum_);
  }

 private:
  std::priority_queue<double> lower_;
  std::priority_queue<double, std::vector<double>, std::greater<>> upper_;
  double lower_sum_ = 0.0;
  double upper_sum_ = 0.0;
};

double median_of(std::vector<double> values) {
  const std::size_t m = values.size();
  const auto mid = values.begin() + static_cast<std::ptrdiff_t>(m / 2);
  std::nth_element(values.begin(), mid, values.end());
  const double upper = *mid;
  if (m % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), mid);
  return 0.5 * (lower + upper);
}

double leaf_value(const std::vector<double>& y, SplitCriterion criterion) {
  if (criterion == SplitCriterion::absolute_error) return median_of(y);
  return std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
}

double node_cost(const std::vector<double>& y, SplitCriterion criterion) {
  const double center = leaf_value(y, criterion);
  double cost = 0.0;
  for (double v : y) cost += criterion == SplitCriterion::absolute_error ? std::abs(v - center) : (v - center) * (v - center);
  return cost;
}

struct Split {
  int feature = -1;
  double threshold = 0.0;
  double cost = std::numeric_limits<double>::infinity();
};

struct Pending {
  int node = 0;
  std::vector<std::size_t> rows;
  Split split;
  double improvement = 0.0;
};

class Builder {
 public:
  Builder(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const TreeGrowth& growth, Rng* rng)
      : x_(x), y_(y), growth_(growth), rng_(rng) {}

  std::vector<RegressionTree::Node> build(std::vector<std::size_t> rows) {
    nodes_.clear();
    auto root = make_node(std::move(rows), 0);
    if (growth_.max_leaf_nodes) {
      grow_best_first(std::move(root));
    } else {
      grow_depth_first(std::move(root));
    }
    return std::move(nodes_);
  }

 private:
  Pending make_node(std::vector<std::size_t> rows, int depth) {
    RegressionTree::Node node;
    node.depth = depth;
    node.samples = rows.size();
    std::vector<double> y(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) y[i] = y_(static_cast<Eigen::Index>(rows[i]));
    node.value = leaf_value(y, growth_.criterion);
    nodes_.push_back(node);

    Pending p;
    p.node = static_cast<int>(nodes_.size() - 1);
    const bool depth_ok = !growth_.max_depth || depth < *growth_.max_depth;
    const auto msl = static_cast<std::size_t>(growth_.min_samples_leaf);
    if (depth_ok && rows.size() >= 2 * msl) {
      const double parent = node_cost(y, growth_.criterion);
      if (parent > 1e-14 * std::max(1.0, static_cast<double>(rows.size()))) {
        p.split = best_split(rows);
        const double improvement = parent - p.split.cost;
        if (p.split.feature >= 0 && improvement > 1e-12 * parent) p.improvement = improvement;
        else p.split.feature = -1;
      }
    }
    p.rows = std::move(rows);
    return p;
  }

  std::vector<int> candidate_features() {
    const int d = static_cast<int>(x_.cols());
    std::vector<int> all(static_cast<std::size_t>(d));
    std::iota(all.begin(), all.end(), 0);
    if (!growth_.max_features || *growth_.max_features >= d) return all;
    if (!rng_) throw ConfigError("tree: feature subsampling requires a random stream");
    const auto m = static_cast<std::size_t>(*growth_.max_features);
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t j = i + rng_->below(all.size() - i);
      std::swap(all[i], all[j]);
    }
    all.resize(m);
    std::sort(all.begin(), all.end());
    return all;
  }

  Split best_split(const std::vector<std::size_t>& rows) {
    Split best;
    const std::size_t m = rows.size();
    const auto msl = static_cast<std::size_t>(growth_.min_samples_leaf);
    std::vector<std::pair<double, double>> pairs(m);
    std::vector<double> left_cost(m), right_cost(m);
    double mean = 0.0;
    for (auto r : rows) mean += y_(static_cast<Eigen::Index>(r));
    mean /= static_cast<double>(m);

    for (int f : candidate_features()) {
      for (std::size_t i = 0; i < m; ++i) {
        const auto r = static_cast<Eigen::Index>(rows[i]);
        pairs[i] = {x_(r, f), y_(r)};
      }
      std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
      if (pairs.front().first == pairs.back().first) continue;

      if (growth_.criterion == SplitCriterion::squared_error) {
        double total = 0.0;
        double total_sq = 0.0;
        for (const auto& p : pairs) {
          const double c = p.second - mean;
          total += c;
          total_sq += c * c;
        }
        double sum_left = 0.0;
        for (std::size_t i = 0; i + 1 < m; ++i) {
          sum_left += pairs[i].second - mean;
          const std::size_t nl = i + 1;
          const std::size_t nr = m - nl;
          if (nl < msl || nr < msl || !(pairs[i].first < pairs[i + 1].first)) continue;
          const double sum_right = total - sum_left;
          const double cost = total_sq - sum_left * sum_left / static_cast<double>(nl) -
                              sum_right * sum_right / static_cast<double>(nr);
          if (cost < best.cost) best = {f, threshold_between(pairs[i].first, pairs[i + 1].first), cost};
        }
      } else {
        RunningAbsDeviation forward;
        for (std::size_t i = 0; i < m; ++i) {
          forward.push(pairs[i].second);
          left_cost[i] = forward.deviation();
        }
        RunningAbsDeviation backward;
        for (std::size_t i = m; i-- > 0;) {
          backward.push(pairs[i].second);
          right_cost[i] = backward.deviation();
        }
        for (std::size_t i = 0; i + 1 < m; ++i) {
          const std::size_t nl = i + 1;
          const std::size_t nr = m - nl;
          if (nl < msl || nr < msl || !(pairs[i].first < pairs[i + 1].first)) continue;
          const double cost = left_cost[i] + right_cost[i + 1];
          if (cost < best.cost) best = {f, threshold_between(pairs[i].first, pairs[i + 1].first), cost};
        }
      }
    }
    return best;
  }

  static double threshold_between(double a, double b) {
    const double mid = a + 0.5 * (b - a);
    return mid < b ? mid : a;
  }

  std::pair<Pending, Pending> split_node(Pending& p) {
    std::vector<std::size_t> left;
    std::vector<std::size_t> right;
    for (auto r : p.rows) {
      (x_(static_cast<Eigen::Index>(r), p.split.feature) <= p.split.threshold ? left : right).push_back(r);
    }
    const int depth = nodes_[static_cast<std::size_t>(p.node)].depth + 1;
    nodes_[static_cast<std::size_t>(p.node)].feature = p.split.feature;
    nodes_[static_cast<std::size_t>(p.node)].threshold = p.split.threshold;
    Pending l = make_node(std::move(left), depth);
    nodes_[static_cast<std::size_t>(p.node)].left = l.node;
    Pending r = make_node(std::move(right), depth);
    nodes_[static_cast<std::size_t>(p.node)].right = r.node;
    return {std::move(l), std::move(r)};
  }

  void grow_depth_first(Pending root) {
    std::vector<Pending> stack;
    stack.push_back(std::move(root));
    while (!stack.empty()) {
      Pending p = std::move(stack.back());
      stack.pop_back();
      if (p.split.feature < 0) continue;
      auto [l, r] = split_node(p);
      stack.push_back(std::move(r));
      stack.push_back(std::move(l));
    }
  }

  void grow_best_first(Pending root) {
    auto worse = [](const Pending& a, const Pending& b) {
      return a.improvement < b.improvement || (a.improvement == b.improvement && a.node > b.node);
    };
    std::priority_queue<Pending, std::vector<Pending>, decltype(worse)> frontier(worse);
    std::size_t leaves = 1;
    if (root.split.feature >= 0) frontier.push(std::move(root));
    while (!frontier.empty() && leaves < static_cast<std::size_t>(*growth_.max_leaf_nodes)) {
      Pending p = frontier.top();
      frontier.pop();
      auto [l, r] = split_node(p);
      ++leaves;
      if (l.split.feature >= 0) frontier.push(std::move(l));
      if (r.split.feature >= 0) frontier.push(std::move(r));
    }
  }

  const Eigen::MatrixXd& x_;
  const Eigen::VectorXd& y_;
  const TreeGrowth& growth_;
  Rng* rng_;
  std::vector<RegressionTree::Node> nodes_;
};

void check_training(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const char* who) {
  if (x.rows() == 0 || x.rows() != y.size()) throw ConfigError(fmt::format("{}: empty or misaligned training data", who));
}

}  // namespace

RegressionTree RegressionTree::grow(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets,
                                    std::span<const std::size_t> rows, const TreeGrowth& growth, Rng* rng) {
  if (rows.empty()) throw ConfigError("tree: no training rows");
  if (growth.min_samples_leaf < 1) throw ConfigError("tree: min_samples_leaf must be >= 1");
  if (growth.max_depth && *growth.max_depth < 1) throw ConfigError("tree: max_depth must be >= 1");
  if (growth.max_leaf_nodes && *growth.max_leaf_nodes < 2) throw ConfigError("tree: max_leaf_nodes must be >= 2");
  if (growth.max_features && *growth.max_features < 1) throw ConfigError("tree: max_features must be >= 1");
  Builder builder(features, targets, growth, rng);
  RegressionTree tree;
  tree.nodes_ = builder.build(std::vector<std::size_t>(rows.begin(), rows.end()));
  return tree;
}

double RegressionTree::predict_row(const Eigen::MatrixXd& features, Eigen::Index row) const {
  int i = 0;
  while (nodes_[static_cast<std::size_t>(i)].feature >= 0) {
    const auto& n = nodes_[static_cast<std::size_t>(i)];
    i = features(row, n.feature) <= n.threshold ? n.left : n.right;
  }
  return nodes_[static_cast<std::size_t>(i)].value;
}

Eigen::VectorXd RegressionTree::predict(const Eigen::MatrixXd& features) const {
  Eigen::VectorXd out(features.rows());
  for (Eigen::Index r = 0; r < features.rows(); ++r) out(r) = predict_row(features, r);
  return out;
}

std::size_t RegressionTree::leaf_count() const {
  return static_cast<std::size_t>(std::count_if(nodes_.begin(), nodes_.end(), [](const Node& n) { return n.feature < 0; }));
}

int RegressionTree::depth() const {
  int d = 0;
  for (const auto& n : nodes_) d = std::max(d, n.depth);
  return d;
}

// ---------------------------------------------------------------------------

TreeRegressor::TreeRegressor(TreeConfig config) : config_(config) {
  if (config_.max_depth && *config_.max_depth < 1) throw ConfigError("tree: max_depth must be >= 1");
  if (config_.min_samples_leaf < 1) throw ConfigError("tree: min_samples_leaf must be >= 1");
}

void TreeRegressor::fit(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets) {
  check_training(features, targets, "tree");
  std::vector<std::size_t> rows(static_cast<std::size_t>(features.rows()));
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  TreeGrowth growth;
  growth.max_depth = config_.max_depth;
  growth.min_samples_leaf = config_.min_samples_leaf;
  growth.criterion = config_.criterion;
  tree_ = RegressionTree::grow(features, targets, rows, growth);
  fitted_ = true;
}

Eigen::VectorXd TreeRegressor::predict(const Eigen::MatrixXd& features) const {
  if (!fitted_) throw ConfigError("tree: predict before fit");
  return tree_.predict(features);
}

// ---------------------------------------------------------------------------

ForestRegressor::ForestRegressor(ForestConfig config) : config_(config) {
  if (config_.n_estimators < 1) throw ConfigError("forest: n_estimators must be >= 1");
  if (config_.min_samples_leaf < 1) throw ConfigError("forest: min_samples_leaf must be >= 1");
}

void ForestRegressor::fit(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets) {
  check_training(features, targets, "forest");
  if (config_.max_features && (*config_.max_features < 1 || *config_.max_features > features.cols())) {
    throw ConfigError(fmt::format("forest: max_features={} outside [1, {}]", *config_.max_features, features.cols()));
  }
  const auto n = static_cast<std::size_t>(features.rows());
  TreeGrowth growth;
  growth.max_depth = config_.max_depth;
  growth.min_samples_leaf = config_.min_samples_leaf;
  growth.max_features = config_.max_features;
  trees_.clear();
  trees_.reserve(static_cast<std::size_t>(config_.n_estimators));
  std::vector<std::size_t> rows(n);
  for (int t = 0; t < config_.n_estimators; ++t) {
    Rng rng(derive_seed(config_.seed, static_cast<std::uint64_t>(t)));
    if (config_.bootstrap) {
      for (auto& r : rows) r = rng.below(n);
    } else {
      std::iota(rows.begin(), rows.end(), std::size_t{0});
    }
    trees_.push_back(RegressionTree::grow(features, targets, rows, growth, &rng));
  }
}

Eigen::VectorXd ForestRegressor::predict(const Eigen::MatrixXd& features) const {
  if (trees_.empty()) throw ConfigError("forest: predict before fit");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(features.rows());
  for (const auto& t : trees_) sum += t.predict(features);
  return sum / static_cast<double>(trees_.size());
}

// ---------------------------------------------------------------------------

GbtRegressor::GbtRegressor(GbtConfig config) : config_(config) {
  if (!(config_.learning_rate > 0.0 && config_.learning_rate <= 1.0)) {
    throw ConfigError("gbt: learning_rate must lie in (0, 1]");
  }
  if (!(config_.subsample > 0.0 && config_.subsample <= 1.0)) throw ConfigError("gbt: subsample must lie in (0, 1]");
  if (config_.n_estimators < 0) throw ConfigError("gbt: n_estimators must be >= 0");
  if (config_.max_leaf_nodes.has_value() == config_.max_depth.has_value()) {
    throw ConfigError("gbt: set exactly one of max_leaf_nodes and max_depth");
  }
}

void GbtRegressor::fit(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets) {
  check_training(features, targets, "gbt");
  const auto n = static_cast<std::size_t>(features.rows());
  TreeGrowth growth;
  growth.max_depth = config_.max_depth;
  growth.max_leaf_nodes = config_.max_leaf_nodes;
  growth.min_samples_leaf = config_.min_samples_leaf;

  base_ = targets.mean();
  Eigen::VectorXd current = Eigen::VectorXd::Constant(features.rows(), base_);
  stages_.clear();
  training_loss_.assign(1, (targets - current).squaredNorm() / static_cast<double>(n));

  const auto draw = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(config_.subsample * static_cast<double>(n))));
  for (int m = 0; m < config_.n_estimators; ++m) {
    const Eigen::VectorXd residual = targets - current;
    std::vector<std::size_t> rows;
    if (draw >= n) {
      rows.resize(n);
      std::iota(rows.begin(), rows.end(), std::size_t{0});
    } else {
      rows = shuffled_indices(n, derive_seed(config_.seed, static_cast<std::uint64_t>(m)));
      rows.resize(draw);
      std::sort(rows.begin(), rows.end());
    }
    stages_.push_back(RegressionTree::grow(features, residual, rows, growth));
    current += config_.learning_rate * stages_.back().predict(features);
    training_loss_.push_back((targets - current).squaredNorm() / static_cast<double>(n));
  }
  fitted_ = true;
}

Eigen::VectorXd GbtRegressor::predict(const Eigen::MatrixXd& features) const {
  if (!fitted_) throw ConfigError("gbt: predict before fit");
  Eigen::VectorXd out = Eigen::VectorXd::Constant(features.rows(), base_);
  for (const auto& t : stages_) out += config_.learning_rate * t.predict(features);
  return out;
}

}  // namespace dftuq
