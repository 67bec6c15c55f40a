#include "dftuq/optim.hpp"

#include <cmath>
#include <deque>
#include <limits>

namespace dftuq {

namespace {

constexpr double kArmijo = 1e-4;
constexpr double kCurvature = 0.9;

struct Point {
  double alpha = 0.0;
  double value = 0.0;
  double slope = 0.0;  // directional derivative
  Eigen::VectorXd grad;
};

// Strong Wolfe line search (bracketing + zoom with safeguarded quadratic
// interpolation). Returns nullopt if no acceptable step is found.
std::optional<Point> wolfe_search(const Objective& f, const Eigen::VectorXd& x, const Eigen::VectorXd& dir,
                                  const Point& start, double alpha0, int& evaluations) {
  auto eval = [&](double alpha) {
    Point p;
    p.alpha = alpha;
    p.grad.resize(x.size());
    p.value = f(x + alpha * dir, p.grad);
    ++evaluations;
    if (!std::isfinite(p.value)) p.value = std::numeric_limits<double>::infinity();
    p.slope = std::isfinite(p.value) ? p.grad.dot(dir) : 0.0;
    return p;
  };
  auto sufficient = [&](const Point& p) { return p.value <= start.value + kArmijo * p.alpha * start.slope; };
  auto curvature_ok = [&](const Point& p) { return std::abs(p.slope) <= -kCurvature * start.slope; };

  auto zoom = [&](Point lo, Point hi) -> std::optional<Point> {
    for (int iter = 0; iter < 40; ++iter) {
      const double width = hi.alpha - lo.alpha;
      double trial = 0.5 * (lo.alpha + hi.alpha);
      if (std::isfinite(hi.value)) {
        // minimiser of the quadratic through (lo.value, lo.slope) and hi.value
        const double denom = 2.0 * (hi.value - lo.value - lo.slope * width);
        if (denom > 0.0) trial = lo.alpha - lo.slope * width * width / denom;
      }
      const double a = std::min(lo.alpha, hi.alpha) + 0.1 * std::abs(width);
      const double b = std::max(lo.alpha, hi.alpha) - 0.1 * std::abs(width);
      if (!(trial >= a && trial <= b)) trial = 0.5 * (lo.alpha + hi.alpha);
      Point p = eval(trial);
      if (!sufficient(p) || p.value >= lo.value) {
        hi = std::move(p);
      } else {
        if (curvature_ok(p)) return p;
        if (p.slope * (hi.alpha - lo.alpha) >= 0.0) hi = lo;
        lo = std::move(p);
      }
      if (std::abs(hi.alpha - lo.alpha) < 1e-16) break;
    }
    if (lo.alpha > 0.0 && lo.value < start.value) return lo;
    return std::nullopt;
  };

  Point prev = start;
  double alpha = alpha0;
  for (int iter = 0; iter < 30; ++iter) {
    Point p = eval(alpha);
    if (!sufficient(p) || (iter > 0 && p.value >= prev.value)) return zoom(prev, p);
    if (curvature_ok(p)) return p;
    if (p.slope >= 0.0) return zoom(p, prev);
    prev = std::move(p);
    alpha *= 2.0;
  }
  if (prev.alpha > 0.0 && prev.value < start.value) return prev;
  return std::nullopt;
}

Eigen::VectorXd project(const Eigen::VectorXd& x, const LbfgsOptions& o) {
  Eigen::VectorXd out = x;
  if (o.lower) out = out.cwiseMax(*o.lower);
  if (o.upper) out = out.cwiseMin(*o.upper);
  return out;
}

}  // namespace

LbfgsResult minimize_lbfgs(const Objective& f, Eigen::VectorXd x0, const LbfgsOptions& options) {
  const bool bounded = options.lower.has_value() || options.upper.has_value();
  LbfgsResult result;
  Eigen::VectorXd x = bounded ? project(x0, options) : std::move(x0);
  Eigen::VectorXd grad(x.size());
  double value = f(x, grad);
  result.evaluations = 1;
  if (!std::isfinite(value) || !grad.allFinite()) {
    result.x = x;
    result.value = value;
    result.status = LbfgsStatus::non_finite;
    return result;
  }

  std::deque<Eigen::VectorXd> s_hist;
  std::deque<Eigen::VectorXd> y_hist;
  std::deque<double> rho_hist;

  // Components sitting on a bound with the gradient pushing outward are frozen.
  auto free_mask = [&](const Eigen::VectorXd& point, const Eigen::VectorXd& g) {
    Eigen::VectorXd mask = Eigen::VectorXd::Ones(point.size());
    if (!bounded) return mask;
    for (Eigen::Index i = 0; i < point.size(); ++i) {
      if (options.lower && point(i) <= (*options.lower)(i) && g(i) > 0.0) mask(i) = 0.0;
      if (options.upper && point(i) >= (*options.upper)(i) && g(i) < 0.0) mask(i) = 0.0;
    }
    return mask;
  };

  result.status = LbfgsStatus::max_iterations;
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    const Eigen::VectorXd mask = free_mask(x, grad);
    const Eigen::VectorXd pg = grad.cwiseProduct(mask);
    if (pg.lpNorm<Eigen::Infinity>() < options.gradient_tolerance) {
      result.status = LbfgsStatus::converged;
      break;
    }

    // two-loop recursion
    Eigen::VectorXd q = pg;
    std::vector<double> alphas(s_hist.size());
    for (std::size_t k = s_hist.size(); k-- > 0;) {
      alphas[k] = rho_hist[k] * s_hist[k].dot(q);
      q -= alphas[k] * y_hist[k];
    }
    if (!s_hist.empty()) q *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    for (std::size_t k = 0; k < s_hist.size(); ++k) {
      const double beta = rho_hist[k] * y_hist[k].dot(q);
      q += (alphas[k] - beta) * s_hist[k];
    }
    Eigen::VectorXd dir = -q.cwiseProduct(mask);
    if (!(dir.dot(grad) < 0.0)) {
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      dir = -pg;
    }
    const double alpha0 = s_hist.empty() ? std::min(1.0, 1.0 / std::max(pg.norm(), 1e-300)) : 1.0;

    Eigen::VectorXd x_new;
    Eigen::VectorXd grad_new(x.size());
    double value_new = 0.0;
    bool accepted = false;
    if (!bounded) {
      Point start{0.0, value, grad.dot(dir), grad};
      auto step = wolfe_search(f, x, dir, start, alpha0, result.evaluations);
      if (step) {
        x_new = x + step->alpha * dir;
        grad_new = step->grad;
        value_new = step->value;
        accepted = true;
      }
    } else {
      double alpha = alpha0;
      for (int tries = 0; tries < 50 && !accepted; ++tries, alpha *= 0.5) {
        x_new = project(x + alpha * dir, options);
        value_new = f(x_new, grad_new);
        ++result.evaluations;
        if (std::isfinite(value_new) && value_new <= value + kArmijo * grad.dot(x_new - x)) accepted = true;
      }
    }
    if (!accepted) {
      result.status = LbfgsStatus::line_search_failed;
      break;
    }

    Eigen::VectorXd s = x_new - x;
    Eigen::VectorXd y = grad_new - grad;
    const double sy = s.dot(y);
    if (sy > 1e-10 * s.norm() * y.norm()) {
      if (static_cast<int>(s_hist.size()) == options.memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
    }
    const double improvement = value - value_new;
    x = std::move(x_new);
    grad = std::move(grad_new);
    value = value_new;
    result.iterations = iter + 1;
    if (!grad.allFinite()) {
      result.status = LbfgsStatus::non_finite;
      break;
    }
    if (improvement < options.min_improvement) {
      result.status = LbfgsStatus::converged;
      break;
    }
  }
  result.x = std::move(x);
  result.value = value;
  return result;
}

Adam::Adam(Eigen::Index size, double learning_rate, double beta1, double beta2, double epsilon)
    : lr_(learning_rate),
      beta1_(beta1),
      beta2_(beta2),
      eps_(epsilon),
      m_(Eigen::VectorXd::Zero(size)),
      v_(Eigen::VectorXd::Zero(size)) {}

void Adam::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseAbs2();
  const double lr_t = lr_ * std::sqrt(1.0 - std::pow(beta2_, static_cast<double>(t_))) /
                      (1.0 - std::pow(beta1_, static_cast<double>(t_)));
  params.array() -= lr_t * m_.array() / (v_.array().sqrt() + eps_);
}

RmsProp::RmsProp(Eigen::Index size, double learning_rate, double decay, double epsilon)
    : lr_(learning_rate), decay_(decay), eps_(epsilon), ms_(Eigen::VectorXd::Zero(size)) {}

void RmsProp::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
  ms_ = decay_ * ms_ + (1.0 - decay_) * grad.cwiseAbs2();
  params.array() -= lr_ * grad.array() / (ms_.array().sqrt() + eps_);
}

}  // namespace dftuq
