#pragma once

#include <Eigen/Dense>

#include <functional>
#include <optional>

namespace dftuq {

/// Returns f(x) and writes the gradient into `grad`. May return +inf (or NaN)
/// to signal an infeasible point; line searches then backtrack.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

struct LbfgsOptions {
  int memory = 10;
  int max_iterations = 1000;
  // Stop when an iteration improves f by less than this (absolute).
  double min_improvement = 1e-8;
  double gradient_tolerance = 1e-10;
  // Optional box constraints; when present a projected backtracking search
  // replaces the Wolfe search.
  std::optional<Eigen::VectorXd> lower;
  std::optional<Eigen::VectorXd> upper;
};

enum class LbfgsStatus { converged, max_iterations, line_search_failed, non_finite };

struct LbfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int iterations = 0;
  int evaluations = 0;
  LbfgsStatus status = LbfgsStatus::max_iterations;
};

LbfgsResult minimize_lbfgs(const Objective& f, Eigen::VectorXd x0, const LbfgsOptions& options = {});

/// First-order optimizers applied in place to a flat parameter vector.
class Adam {
 public:
  Adam(Eigen::Index size, double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-7);
  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad);

 private:
  double lr_, beta1_, beta2_, eps_;
  Eigen::VectorXd m_, v_;
  long t_ = 0;
};

/// RMSprop with epsilon added outside the square root.
class RmsProp {
 public:
  RmsProp(Eigen::Index size, double learning_rate, double decay = 0.9, double epsilon = 1e-7);
  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad);

 private:
  double lr_, decay_, eps_;
  Eigen::VectorXd ms_;
};

}  // namespace dftuq
