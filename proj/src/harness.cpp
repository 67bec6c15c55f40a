#include "dftuq/harness.hpp"

#include "dftuq/errors.hpp"
#include "dftuq/random.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>

namespace dftuq {

namespace {

std::size_t floor_count(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
}

std::vector<std::size_t> map_rows(std::span<const std::size_t> local, std::span<const std::size_t> ids) {
  if (ids.empty()) return {local.begin(), local.end()};
  std::vector<std::size_t> out;
  out.reserve(local.size());
  for (auto r : local) out.push_back(ids[r]);
  return out;
}

void notify(const std::function<void(std::span<const std::size_t>)>& hook, std::span<const std::size_t> local,
            std::span<const std::size_t> ids) {
  if (!hook) return;
  const auto mapped = map_rows(local, ids);
  hook(mapped);
}

struct ScaledSplit {
  ScalerState scaler;
  Eigen::MatrixXd train_x;
  Eigen::VectorXd train_y;
  Eigen::MatrixXd test_x;
  Eigen::VectorXd test_y;
};

ScaledSplit scale_split(const DesignMatrix& data, std::span<const std::size_t> train, std::span<const std::size_t> test,
                        ScalerMethod method) {
  ScalerState scaler = fit_scaler(data, train, method);
  const DesignMatrix tr = data.select_rows(train);
  const DesignMatrix te = data.select_rows(test);
  Eigen::MatrixXd train_x = apply_scaler(scaler, tr.features);
  Eigen::MatrixXd test_x = apply_scaler(scaler, te.features);
  return {std::move(scaler), std::move(train_x), tr.targets, std::move(test_x), te.targets};
}

double mean_of(std::span<const double> v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_stddev(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

void Fractions::validate() const {
  for (double f : {train, test, holdout}) {
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError(fmt::format("fraction {} outside [0, 1]", f));
  }
  if (!(train > 0.0)) throw ConfigError("train fraction must be > 0");
  if (train + test + holdout > 1.0 + 1e-12) {
    throw ConfigError(fmt::format("fractions sum to {} > 1", train + test + holdout));
  }
}

SplitPlan dual_mc_split(std::size_t n, const Fractions& fractions, std::uint64_t seed, std::uint64_t iteration) {
  fractions.validate();
  const std::size_t n_train = floor_count(fractions.train, n);
  if (n_train == 0) throw ConfigError(fmt::format("train set is empty after rounding ({} of {} rows)", fractions.train, n));
  const std::size_t n_test = std::min(floor_count(fractions.test, n), n - n_train);
  const std::size_t n_holdout = std::min(floor_count(fractions.holdout, n), n - n_train - n_test);

  const auto order = shuffled_indices(n, derive_seed(seed, iteration));
  SplitPlan plan;
  plan.fractions = fractions;
  plan.seed = seed;
  plan.iteration = iteration;
  auto at = order.begin();
  plan.train.assign(at, at + static_cast<std::ptrdiff_t>(n_train));
  at += static_cast<std::ptrdiff_t>(n_train);
  plan.test.assign(at, at + static_cast<std::ptrdiff_t>(n_test));
  at += static_cast<std::ptrdiff_t>(n_test);
  plan.holdout.assign(at, at + static_cast<std::ptrdiff_t>(n_holdout));
  return plan;
}

std::vector<std::vector<std::size_t>> kfold_indices(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2 || k > n) throw ConfigError(fmt::format("k-fold needs 2 <= k <= n (k={}, n={})", k, n));
  const auto order = shuffled_indices(n, seed);
  std::vector<std::vector<std::size_t>> folds(k);
  std::size_t at = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = n / k + (f < n % k ? 1 : 0);
    folds[f].assign(order.begin() + static_cast<std::ptrdiff_t>(at), order.begin() + static_cast<std::ptrdiff_t>(at + size));
    at += size;
  }
  return folds;
}

CvResult grid_search(const HyperGrid& grid, const DesignMatrix& train, const CvOptions& options) {
  CvResult result;
  for (auto& params : grid.candidates()) result.candidates.push_back({std::move(params), {}, 0.0, false, {}});
  if (result.candidates.empty()) throw ConfigError("grid_search: empty grid");
  if (result.candidates.size() == 1 && options.skip_single_candidate) {
    result.skipped = true;
    return result;
  }

  const auto n = static_cast<std::size_t>(train.rows());
  const auto folds = kfold_indices(n, options.folds, derive_seed(options.seed, 0));
  std::vector<std::vector<std::size_t>> fold_train(folds.size());
  for (std::size_t f = 0; f < folds.size(); ++f) {
    for (std::size_t g = 0; g < folds.size(); ++g) {
      if (g != f) fold_train[f].insert(fold_train[f].end(), folds[g].begin(), folds[g].end());
    }
    std::sort(fold_train[f].begin(), fold_train[f].end());
  }

  const FitHooks* hooks = options.hooks;
  for (auto& cand : result.candidates) {
    try {
      for (std::size_t f = 0; f < folds.size(); ++f) {
        if (hooks) notify(hooks->on_scaler_fit, fold_train[f], options.row_ids);
        const auto split = scale_split(train, fold_train[f], folds[f], options.scaler);
        auto model = make_regressor(grid.family, cand.params, derive_seed(options.seed, 1, f));
        if (hooks) notify(hooks->on_model_fit, fold_train[f], options.row_ids);
        model->fit(split.train_x, split.train_y);
        if (hooks) notify(hooks->on_predict, folds[f], options.row_ids);
        const double score = -rmse(model->predict(split.test_x), split.test_y);
        if (!std::isfinite(score)) throw NumericalError("non-finite validation score");
        cand.fold_scores.push_back(score);
      }
      cand.mean_score = mean_of(cand.fold_scores);
    } catch (const std::exception& e) {
      cand.failed = true;
      cand.error = e.what();
      cand.mean_score = -std::numeric_limits<double>::infinity();
    }
  }

  std::optional<std::size_t> best;
  for (std::size_t c = 0; c < result.candidates.size(); ++c) {
    const auto& cand = result.candidates[c];
    if (cand.failed) continue;
    if (!best || cand.mean_score > result.candidates[*best].mean_score) best = c;
  }
  if (!best) {
    throw Error(fmt::format("grid_search: every candidate failed; first error: {}", result.candidates.front().error));
  }
  result.chosen = *best;
  return result;
}

void Protocol::validate() const {
  if (outer_iterations < 1 || inner_iterations < 1) throw ConfigError("protocol iteration counts must be >= 1");
  if (folds < 2) throw ConfigError("protocol folds must be >= 2");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  fractions.validate();
  if (!(fractions.test > 0.0)) throw ConfigError("protocol test fraction must be > 0");
}

RmseSummary RmseSummary::of(std::span<const double> values) {
  RmseSummary s;
  s.count = values.size();
  if (values.empty()) return s;
  s.average = mean_of(values);
  s.maximum = *std::max_element(values.begin(), values.end());
  s.minimum = *std::min_element(values.begin(), values.end());
  s.stddev = sample_stddev(values);
  s.prediction_range = s.maximum - s.minimum;
  return s;
}

std::vector<double> EvalReport::test_rmse_series() const {
  std::vector<double> out;
  for (const auto& it : iterations) {
    if (!it.failed) out.push_back(it.test_rmse);
  }
  return out;
}

std::vector<double> EvalReport::train_rmse_series() const {
  std::vector<double> out;
  for (const auto& it : iterations) {
    if (!it.failed) out.push_back(it.train_rmse);
  }
  return out;
}

const IterationResult* EvalReport::best_iteration() const {
  const IterationResult* best = nullptr;
  for (const auto& it : iterations) {
    if (!it.failed && (!best || it.test_rmse < best->test_rmse)) best = &it;
  }
  return best;
}

EvalReport run_evaluation(const HyperGrid& grid, const DesignMatrix& data, const Protocol& protocol,
                          const FitHooks* hooks, std::string label) {
  protocol.validate();
  if (data.rows() == 0) throw ConfigError("run_evaluation: empty data");
  const auto n = static_cast<std::size_t>(data.rows());
  const int inner_count = protocol.inner_iterations;

  EvalReport report;
  report.family = grid.family;
  report.label = label.empty() ? std::string(to_string(grid.family)) : std::move(label);
  report.grid = grid;
  report.protocol = protocol;
  report.iterations.resize(static_cast<std::size_t>(protocol.outer_iterations * inner_count));

  // Fast mode: one search per outer iteration, on that iteration's first split.
  std::vector<std::optional<ParamSet>> outer_choice(static_cast<std::size_t>(protocol.outer_iterations));
  std::vector<std::string> outer_error(outer_choice.size());
  if (protocol.fast_tuning) {
    parallel_for(outer_choice.size(), protocol.workers, [&](std::size_t outer) {
      const auto id = static_cast<std::uint64_t>(outer) * static_cast<std::uint64_t>(inner_count);
      try {
        const auto plan = dual_mc_split(n, protocol.fractions, protocol.seed, id);
        CvOptions cv{protocol.folds, derive_seed(protocol.seed, 2, id), protocol.scaler, true, hooks, plan.train};
        outer_choice[outer] = grid_search(grid, data.select_rows(plan.train), cv).best();
      } catch (const std::exception& e) {
        outer_error[outer] = e.what();
      }
    });
  }

  parallel_for(report.iterations.size(), protocol.workers, [&](std::size_t slot) {
    auto& it = report.iterations[slot];
    it.outer = static_cast<int>(slot) / inner_count;
    it.inner = static_cast<int>(slot) % inner_count;
    it.id = slot;
    try {
      const auto plan = dual_mc_split(n, protocol.fractions, protocol.seed, it.id);
      if (plan.test.empty()) throw ConfigError("test set is empty after rounding");
      if (protocol.fast_tuning) {
        const auto& choice = outer_choice[static_cast<std::size_t>(it.outer)];
        if (!choice) throw Error(outer_error[static_cast<std::size_t>(it.outer)]);
        it.chosen = *choice;
      } else {
        CvOptions cv{protocol.folds, derive_seed(protocol.seed, 2, it.id), protocol.scaler, true, hooks, plan.train};
        it.chosen = grid_search(grid, data.select_rows(plan.train), cv).best();
      }
      if (hooks && hooks->on_scaler_fit) hooks->on_scaler_fit(plan.train);
      const auto split = scale_split(data, plan.train, plan.test, protocol.scaler);
      auto model = make_regressor(grid.family, it.chosen, derive_seed(protocol.seed, 3, it.id));
      if (hooks && hooks->on_model_fit) hooks->on_model_fit(plan.train);
      model->fit(split.train_x, split.train_y);
      it.train_rmse = rmse(model->predict(split.train_x), split.train_y);
      if (hooks && hooks->on_predict) hooks->on_predict(plan.test);
      it.test_predicted = model->predict(split.test_x);
      it.test_measured = split.test_y;
      it.test_rmse = rmse(it.test_predicted, it.test_measured);
      if (!std::isfinite(it.test_rmse) || !std::isfinite(it.train_rmse)) throw NumericalError("non-finite RMSE");
    } catch (const std::exception& e) {
      it.failed = true;
      it.error = e.what();
    }
  });

  for (const auto& it : report.iterations) report.failed += it.failed ? 1 : 0;
  const auto test = report.test_rmse_series();
  const auto train = report.train_rmse_series();
  report.test = RmseSummary::of(test);
  report.train = RmseSummary::of(train);
  return report;
}

SweepReport fraction_sweep(const HyperGrid& grid, const DesignMatrix& data, std::span<const double> fractions,
                           const Protocol& protocol, std::string label) {
  if (fractions.empty()) throw ConfigError("fraction_sweep: no fractions given");
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    if (!(fractions[i] > 0.0 && fractions[i] < 1.0)) {
      throw ConfigError(fmt::format("sweep fraction {} outside (0, 1)", fractions[i]));
    }
    if (i > 0 && !(fractions[i] > fractions[i - 1])) throw ConfigError("sweep fractions must be strictly increasing");
  }
  SweepReport report;
  report.family = grid.family;
  report.label = label.empty() ? std::string(to_string(grid.family)) : label;
  for (double f : fractions) {
    Protocol p = protocol;
    p.fractions = {f, 1.0 - f, 0.0};
    auto eval = run_evaluation(grid, data, p, nullptr, report.label);
    report.rows.push_back({f, eval.train, eval.test, eval.failed});
    report.evaluations.push_back(std::move(eval));
  }
  return report;
}

UqTrendReport uq_trend_study(const ParamSet& ensemble_params, const DesignMatrix& data,
                             std::span<const double> fractions, std::span<const std::uint64_t> seeds, int draws,
                             ScalerMethod scaler, int workers) {
  if (fractions.empty() || seeds.empty()) throw ConfigError("uq_trend_study: need at least one fraction and one seed");
  for (double f : fractions) {
    if (!(f > 0.0 && f < 1.0)) throw ConfigError(fmt::format("uq fraction {} outside (0, 1)", f));
  }
  if (draws < 2) throw ConfigError("uq_trend_study: draws must be >= 2");
  // validate parameters once up front
  (void)ensemble_model_config(ensemble_params, 0);

  UqTrendReport report;
  report.params = ensemble_params;
  report.draws = draws;
  report.rows.resize(fractions.size());
  const std::size_t jobs = fractions.size() * seeds.size();
  for (std::size_t r = 0; r < fractions.size(); ++r) {
    report.rows[r].fraction = fractions[r];
    report.rows[r].replicates.resize(seeds.size());
  }
  parallel_for(jobs, workers, [&](std::size_t job) {
    const std::size_t r = job / seeds.size();
    const std::size_t s = job % seeds.size();
    const auto run = run_probabilistic(Family::bnn_ensemble, ensemble_params, data,
                                       {fractions[r], 1.0 - fractions[r], 0.0}, seeds[s], draws, scaler);
    auto& rep = report.rows[r].replicates[s];
    rep.seed = seeds[s];
    rep.aleatoric = run.aggregate_aleatoric;
    rep.epistemic = run.aggregate_epistemic.value_or(0.0);
    rep.total = std::hypot(rep.aleatoric, rep.epistemic);
    rep.test_rmse = run.test_rmse;
  });
  for (auto& row : report.rows) {
    std::vector<double> ale, epi, err;
    for (const auto& rep : row.replicates) {
      ale.push_back(rep.aleatoric);
      epi.push_back(rep.epistemic);
      err.push_back(rep.test_rmse);
    }
    row.mean_aleatoric = mean_of(ale);
    row.mean_epistemic = mean_of(epi);
    row.mean_test_rmse = mean_of(err);
    row.stddev_aleatoric = sample_stddev(ale);
    row.stddev_epistemic = sample_stddev(epi);
  }
  return report;
}

ProbabilisticRun run_probabilistic(Family family, const ParamSet& params, const DesignMatrix& data,
                                   const Fractions& fractions, std::uint64_t seed, int draws, ScalerMethod scaler) {
  if (is_deterministic(family)) {
    throw ConfigError(fmt::format("{} is not a probabilistic family", to_string(family)));
  }
  ProbabilisticRun run;
  run.family = family;
  run.params = params;
  run.split = dual_mc_split(static_cast<std::size_t>(data.rows()), fractions, seed, 0);
  if (run.split.test.empty()) throw ConfigError("test set is empty after rounding");
  const auto split = scale_split(data, run.split.train, run.split.test, scaler);
  run.scaler = split.scaler;

  switch (family) {
    case Family::gpr: {
      GprRegressor model(gpr_config(params));
      model.fit(split.train_x, split.train_y);
      const auto dist = model.predict_dist(split.test_x);
      run.test_rmse = rmse(dist.means, split.test_y);
      run.train_rmse = rmse(model.predict(split.train_x), split.train_y);
      run.aggregate_aleatoric = dist.stddevs.mean();
      run.parity = parity_table(split.test_y, dist.means, dist.stddevs);
      const auto& k = model.kernel();
      run.diagnostics = {{"amplitude", k.amplitude},
                         {"length_scale", k.length_scale},
                         {"noise_level", k.noise_level},
                         {"log_marginal_likelihood", model.log_marginal_likelihood()},
                         {"jitter", model.jitter()}};
      break;
    }
    case Family::bnn_head: {
      HeadModel model(head_model_config(params, seed));
      model.fit(split.train_x, split.train_y);
      const auto dist = model.predict_dist(split.test_x);
      run.test_rmse = rmse(dist.means, split.test_y);
      run.train_rmse = rmse(model.predict(split.train_x), split.train_y);
      run.aggregate_aleatoric = dist.stddevs.mean();
      run.parity = parity_table(split.test_y, dist.means, dist.stddevs);
      run.loss_trace = model.loss_trace();
      run.diagnostics = {{"kl_weight", model.kl_weight_used()}};
      break;
    }
    case Family::bnn_ensemble: {
      if (draws < 2) throw ConfigError("ensemble draws must be >= 2");
      auto fitted = std::make_shared<EnsembleModel>(ensemble_model_config(params, seed));
      fitted->fit(split.train_x, split.train_y);
      const EnsembleModel& model = *fitted;
      run.ensemble = fitted;
      const auto ensemble = ensemble_predict(model, split.test_x, draws, derive_seed(seed, 4));
      const auto parts = decompose_uncertainty(ensemble);
      const Eigen::VectorXd mean = ensemble.mixture_mean();
      run.test_rmse = rmse(mean, split.test_y);
      run.train_rmse =
          rmse(ensemble_predict(model, split.train_x, draws, derive_seed(seed, 5)).mixture_mean(), split.train_y);
      run.aggregate_aleatoric = parts.aggregate_aleatoric;
      run.aggregate_epistemic = parts.aggregate_epistemic;
      run.parity = parity_table(split.test_y, mean, parts.aleatoric, parts.epistemic);
      run.loss_trace = model.loss_trace();
      run.diagnostics = {{"kl_weight", model.kl_weight_used()}, {"draws", draws}};
      break;
    }
    default:
      break;
  }
  return run;
}

void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& fn) {
  const std::size_t threads = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(1, workers)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace dftuq
