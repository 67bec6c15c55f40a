#pragma once

#include "dftuq/bnn.hpp"
#include "dftuq/families.hpp"
#include "dftuq/tabular.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dftuq {

/// Train/test/holdout shares of the data; the remainder is unused.
struct Fractions {
  double train = 0.8;
  double test = 0.2;
  double holdout = 0.0;

  /// Throws ConfigError unless all are in [0, 1], train > 0 and the sum <= 1.
  void validate() const;
};

struct SplitPlan {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  std::vector<std::size_t> holdout;
  Fractions fractions;
  std::uint64_t seed = 0;
  std::uint64_t iteration = 0;
};

/// Shuffles 0..n-1 with derive_seed(seed, iteration) and cuts it into
/// floor(train * n) training rows, then floor(test * n) test rows, then
/// floor(holdout * n) holdout rows.
SplitPlan dual_mc_split(std::size_t n, const Fractions& fractions, std::uint64_t seed, std::uint64_t iteration);

/// k shuffled validation folds; the first n % k folds hold one extra row.
std::vector<std::vector<std::size_t>> kfold_indices(std::size_t n, std::size_t k, std::uint64_t seed);

/// Instrumentation called with the rows (indices into the matrix passed to the
/// harness entry point) that a scaler is fitted on, a model is fitted on, or
/// a model predicts. Called from worker threads when workers > 1.
struct FitHooks {
  std::function<void(std::span<const std::size_t>)> on_scaler_fit;
  std::function<void(std::span<const std::size_t>)> on_model_fit;
  std::function<void(std::span<const std::size_t>)> on_predict;
};

struct CandidateScore {
  ParamSet params;
  std::vector<double> fold_scores;  // negative RMSE per fold
  double mean_score = 0.0;          // -inf when failed
  bool failed = false;
  std::string error;
};

struct CvResult {
  std::vector<CandidateScore> candidates;
  std::size_t chosen = 0;
  bool skipped = false;  // one-candidate grid: chosen without cross-validation

  const ParamSet& best() const { return candidates.at(chosen).params; }
};

struct CvOptions {
  std::size_t folds = 5;
  std::uint64_t seed = 0;
  ScalerMethod scaler = ScalerMethod::zscore;
  /// A one-candidate grid is returned without scoring.
  bool skip_single_candidate = true;
  const FitHooks* hooks = nullptr;
  /// Labels for hook callbacks: row i of the matrix is reported as rows[i].
  std::span<const std::size_t> row_ids;
};

/// k-fold cross-validated grid search on unscaled `train`; the scaler is fitted
/// on each fold's training part only. Chooses the highest mean score, the
/// first candidate on ties. Throws Error when every candidate fails.
CvResult grid_search(const HyperGrid& grid, const DesignMatrix& train, const CvOptions& options);

struct Protocol {
  int outer_iterations = 3;
  int inner_iterations = 50;
  Fractions fractions;
  std::size_t folds = 5;
  std::uint64_t seed = 0;
  ScalerMethod scaler = ScalerMethod::zscore;
  /// Tune once per outer iteration and reuse the choice.
  bool fast_tuning = false;
  int workers = 1;

  void validate() const;
};

struct IterationResult {
  int outer = 0;
  int inner = 0;
  std::uint64_t id = 0;  // outer * inner_iterations + inner
  double train_rmse = 0.0;
  double test_rmse = 0.0;
  ParamSet chosen;
  bool failed = false;
  std::string error;
  Eigen::VectorXd test_measured;
  Eigen::VectorXd test_predicted;
};

struct RmseSummary {
  double average = 0.0;
  double maximum = 0.0;
  double minimum = 0.0;
  double stddev = 0.0;  // sample stddev; 0 for a single value
  double prediction_range = 0.0;
  std::size_t count = 0;

  static RmseSummary of(std::span<const double> values);
};

struct EvalReport {
  Family family = Family::knn;
  std::string label;
  HyperGrid grid;
  Protocol protocol;
  std::vector<IterationResult> iterations;  // sorted by id
  RmseSummary test;
  RmseSummary train;
  std::size_t failed = 0;

  std::vector<double> test_rmse_series() const;
  std::vector<double> train_rmse_series() const;
  /// Lowest test RMSE among successful iterations.
  const IterationResult* best_iteration() const;
};

/// Dual Monte Carlo subsampling with nested k-fold grid search on unscaled
/// `data`. Failed iterations are recorded and excluded from the summaries.
EvalReport run_evaluation(const HyperGrid& grid, const DesignMatrix& data, const Protocol& protocol,
                          const FitHooks* hooks = nullptr, std::string label = {});

struct SweepRow {
  double fraction = 0.0;
  RmseSummary train;
  RmseSummary test;
  std::size_t failed = 0;
};

struct SweepReport {
  Family family = Family::knn;
  std::string label;
  std::vector<SweepRow> rows;
  std::vector<EvalReport> evaluations;  // one per row
};

/// run_evaluation per training fraction f with fractions (f, 1 - f, 0).
/// Fractions must be strictly increasing and inside (0, 1).
SweepReport fraction_sweep(const HyperGrid& grid, const DesignMatrix& data, std::span<const double> fractions,
                           const Protocol& protocol, std::string label = {});

struct UqReplicate {
  std::uint64_t seed = 0;
  double aleatoric = 0.0;
  double epistemic = 0.0;
  double total = 0.0;
  double test_rmse = 0.0;
};

struct UqTrendRow {
  double fraction = 0.0;
  std::vector<UqReplicate> replicates;
  double mean_aleatoric = 0.0;
  double mean_epistemic = 0.0;
  double mean_test_rmse = 0.0;
  double stddev_aleatoric = 0.0;
  double stddev_epistemic = 0.0;
};

struct UqTrendReport {
  ParamSet params;
  int draws = 200;
  std::vector<UqTrendRow> rows;
};

/// For every fraction and seed: split (f, 1 - f, 0) with that seed, scale on
/// the training rows, train model B with that seed, draw `draws` ensemble
/// members on the test rows and decompose.
UqTrendReport uq_trend_study(const ParamSet& ensemble_params, const DesignMatrix& data,
                             std::span<const double> fractions, std::span<const std::uint64_t> seeds, int draws = 200,
                             ScalerMethod scaler = ScalerMethod::zscore, int workers = 1);

/// One probabilistic fit on a single split, with per-point uncertainty.
struct ProbabilisticRun {
  Family family = Family::gpr;
  ParamSet params;
  SplitPlan split;
  double test_rmse = 0.0;
  double train_rmse = 0.0;
  double aggregate_aleatoric = 0.0;
  std::optional<double> aggregate_epistemic;
  ParityTable parity;
  nlohmann::json diagnostics = nlohmann::json::object();
  std::vector<EpochLoss> loss_trace;
  ScalerState scaler;  // fitted on the training rows
  std::shared_ptr<const EnsembleModel> ensemble;  // set for bnn_ensemble
};

/// GPR: aleatoric = predictive stddev. Model A: aleatoric = head stddev.
/// Model B: `draws` ensemble members decomposed into aleatoric and epistemic.
ProbabilisticRun run_probabilistic(Family family, const ParamSet& params, const DesignMatrix& data,
                                   const Fractions& fractions, std::uint64_t seed, int draws = 200,
                                   ScalerMethod scaler = ScalerMethod::zscore);

/// Runs fn(i) for i in [0, count) on up to `workers` threads. Exceptions from
/// fn propagate (the first one, by index) after all workers finish.
void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& fn);

}  // namespace dftuq
