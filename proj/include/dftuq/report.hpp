#pragma once

#include "dftuq/harness.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>

namespace dftuq {

nlohmann::json to_json(const Fractions& fractions);
nlohmann::json to_json(const Protocol& protocol);
nlohmann::json to_json(const RmseSummary& summary);
nlohmann::json to_json(const CvResult& result);
nlohmann::json to_json(const EvalReport& report);
nlohmann::json to_json(const SweepReport& report);
nlohmann::json to_json(const UqTrendReport& report);
nlohmann::json to_json(const ProbabilisticRun& run);

/// id,outer,inner,train_rmse_mm,test_rmse_mm,failed,params
void write_iterations_csv(std::ostream& out, const EvalReport& report);
/// model,average_rmse_mm,maximum_rmse_mm,minimum_rmse_mm,standard_deviation_mm,prediction_range_mm,iterations,failed
void write_comparison_csv(std::ostream& out, std::span<const EvalReport> reports);
/// fraction,train_rmse_mean_mm,train_rmse_std_mm,test_rmse_mean_mm,test_rmse_std_mm,iterations,failed
void write_sweep_csv(std::ostream& out, const SweepReport& report);
/// fraction,seed,aleatoric_mm,epistemic_mm,total_mm,test_rmse_mm per replicate.
void write_uq_trend_csv(std::ostream& out, const UqTrendReport& report);
/// Per-fraction means and across-seed stddevs.
void write_uq_summary_csv(std::ostream& out, const UqTrendReport& report);

/// Human-readable lines; the only place micrometres appear (mm x 1000).
std::string summary_text(std::span<const EvalReport> reports);

/// 64-bit FNV-1a of a byte string / file contents, as 16 hex digits.
std::string fnv1a_hex(std::string_view bytes);
std::string file_hash(const std::filesystem::path& path);

struct RunManifest {
  std::string command;
  std::string config_path;
  std::uint64_t seed = 0;
  std::string input_hash;
  std::string input_path;
  std::string started_at;
  std::string finished_at;
  std::vector<std::string> outputs;

  nlohmann::json to_json() const;
};

/// UTC time as ISO 8601.
std::string utc_timestamp();

/// Writes `text` to `path`, creating parent directories. Throws Error on failure.
void write_text_file(const std::filesystem::path& path, const std::string& text);

/// Pretty-printed JSON with a trailing newline.
std::string dump_json(const nlohmann::json& doc);

}  // namespace dftuq
