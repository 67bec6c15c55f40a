#include "dftuq/report.hpp"

#include "dftuq/errors.hpp"

#include <fmt/chrono.h>
#include <fmt/format.h>

#include <chrono>
#include <fstream>
#include <sstream>

namespace dftuq {

namespace {

constexpr char kVersion[] = "0.1.0";

// Quotes a CSV field when needed.
std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

nlohmann::json iteration_json(const IterationResult& it) {
  nlohmann::json doc = {{"id", it.id}, {"outer", it.outer}, {"inner", it.inner}, {"params", it.chosen}};
  if (it.failed) {
    doc["failed"] = true;
    doc["error"] = it.error;
  } else {
    doc["train_rmse_mm"] = it.train_rmse;
    doc["test_rmse_mm"] = it.test_rmse;
  }
  return doc;
}

}  // namespace

nlohmann::json to_json(const Fractions& f) { return {{"train", f.train}, {"test", f.test}, {"holdout", f.holdout}}; }

nlohmann::json to_json(const Protocol& p) {
  return {{"outer_iterations", p.outer_iterations},
          {"inner_iterations", p.inner_iterations},
          {"fractions", to_json(p.fractions)},
          {"folds", p.folds},
          {"seed", p.seed},
          {"scaler", std::string(to_string(p.scaler))},
          {"fast_tuning", p.fast_tuning}};
}

nlohmann::json to_json(const RmseSummary& s) {
  return {{"average_mm", s.average},
          {"maximum_mm", s.maximum},
          {"minimum_mm", s.minimum},
          {"standard_deviation_mm", s.stddev},
          {"prediction_range_mm", s.prediction_range},
          {"count", s.count}};
}

nlohmann::json to_json(const CvResult& r) {
  nlohmann::json cands = nlohmann::json::array();
  for (const auto& c : r.candidates) {
    nlohmann::json doc = {{"params", c.params}, {"fold_scores", c.fold_scores}};
    if (c.failed) {
      doc["failed"] = true;
      doc["error"] = c.error;
    } else if (!r.skipped) {
      doc["mean_score"] = c.mean_score;
    }
    cands.push_back(std::move(doc));
  }
  return {{"candidates", cands}, {"chosen", r.chosen}, {"skipped", r.skipped}};
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json iterations = nlohmann::json::array();
  for (const auto& it : r.iterations) iterations.push_back(iteration_json(it));
  nlohmann::json doc = {{"family", std::string(to_string(r.family))},
                        {"label", r.label},
                        {"grid", r.grid.to_json()},
                        {"protocol", to_json(r.protocol)},
                        {"test_rmse", to_json(r.test)},
                        {"train_rmse", to_json(r.train)},
                        {"failed_iterations", r.failed},
                        {"iterations", iterations},
                        {"manifest", "manifest.json"}};
  if (r.protocol.fast_tuning) {
    doc["protocol_deviation"] = "fast_tuning: grid search run once per outer iteration and reused";
  }
  return doc;
}

nlohmann::json to_json(const SweepReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"fraction", row.fraction},
                    {"train_rmse", to_json(row.train)},
                    {"test_rmse", to_json(row.test)},
                    {"failed_iterations", row.failed}});
  }
  nlohmann::json doc = {{"family", std::string(to_string(r.family))}, {"label", r.label}, {"rows", rows}};
  if (!r.evaluations.empty()) doc["protocol"] = to_json(r.evaluations.front().protocol);
  doc["manifest"] = "manifest.json";
  return doc;
}

nlohmann::json to_json(const UqTrendReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    nlohmann::json reps = nlohmann::json::array();
    for (const auto& rep : row.replicates) {
      reps.push_back({{"seed", rep.seed},
                      {"aleatoric_mm", rep.aleatoric},
                      {"epistemic_mm", rep.epistemic},
                      {"total_mm", rep.total},
                      {"test_rmse_mm", rep.test_rmse}});
    }
    rows.push_back({{"fraction", row.fraction},
                    {"mean_aleatoric_mm", row.mean_aleatoric},
                    {"stddev_aleatoric_mm", row.stddev_aleatoric},
                    {"mean_epistemic_mm", row.mean_epistemic},
                    {"stddev_epistemic_mm", row.stddev_epistemic},
                    {"mean_test_rmse_mm", row.mean_test_rmse},
                    {"replicates", reps}});
  }
  return {{"params", r.params}, {"draws", r.draws}, {"rows", rows}, {"manifest", "manifest.json"}};
}

nlohmann::json to_json(const ProbabilisticRun& run) {
  nlohmann::json doc = {{"family", std::string(to_string(run.family))},
                        {"params", run.params},
                        {"fractions", to_json(run.split.fractions)},
                        {"seed", run.split.seed},
                        {"train_rows", run.split.train.size()},
                        {"test_rows", run.split.test.size()},
                        {"train_rmse_mm", run.train_rmse},
                        {"test_rmse_mm", run.test_rmse},
                        {"aggregate_aleatoric_mm", run.aggregate_aleatoric},
                        {"diagnostics", run.diagnostics},
                        {"manifest", "manifest.json"}};
  if (run.aggregate_epistemic) doc["aggregate_epistemic_mm"] = *run.aggregate_epistemic;
  return doc;
}

void write_iterations_csv(std::ostream& out, const EvalReport& r) {
  out << "id,outer,inner,train_rmse_mm,test_rmse_mm,failed,params\n";
  for (const auto& it : r.iterations) {
    out << it.id << ',' << it.outer << ',' << it.inner << ',';
    if (it.failed) {
      out << ",,1,";
    } else {
      out << format_number(it.train_rmse) << ',' << format_number(it.test_rmse) << ",0,";
    }
    out << csv_field(it.chosen.dump()) << '\n';
  }
}

void write_comparison_csv(std::ostream& out, std::span<const EvalReport> reports) {
  out << "model,average_rmse_mm,maximum_rmse_mm,minimum_rmse_mm,standard_deviation_mm,prediction_range_mm,"
         "iterations,failed\n";
  for (const auto& r : reports) {
    out << csv_field(r.label) << ',' << format_number(r.test.average) << ',' << format_number(r.test.maximum) << ','
        << format_number(r.test.minimum) << ',' << format_number(r.test.stddev) << ','
        << format_number(r.test.prediction_range) << ',' << r.test.count << ',' << r.failed << '\n';
  }
}

void write_sweep_csv(std::ostream& out, const SweepReport& r) {
  out << "fraction,train_rmse_mean_mm,train_rmse_std_mm,test_rmse_mean_mm,test_rmse_std_mm,iterations,failed\n";
  for (const auto& row : r.rows) {
    out << format_number(row.fraction) << ',' << format_number(row.train.average) << ','
        << format_number(row.train.stddev) << ',' << format_number(row.test.average) << ','
        << format_number(row.test.stddev) << ',' << row.test.count << ',' << row.failed << '\n';
  }
}

void write_uq_trend_csv(std::ostream& out, const UqTrendReport& r) {
  out << "fraction,seed,aleatoric_mm,epistemic_mm,total_mm,test_rmse_mm\n";
  for (const auto& row : r.rows) {
    for (const auto& rep : row.replicates) {
      out << format_number(row.fraction) << ',' << rep.seed << ',' << format_number(rep.aleatoric) << ','
          << format_number(rep.epistemic) << ',' << format_number(rep.total) << ',' << format_number(rep.test_rmse)
          << '\n';
    }
  }
}

void write_uq_summary_csv(std::ostream& out, const UqTrendReport& r) {
  out << "fraction,mean_aleatoric_mm,stddev_aleatoric_mm,mean_epistemic_mm,stddev_epistemic_mm,mean_test_rmse_mm,"
         "seeds\n";
  for (const auto& row : r.rows) {
    out << format_number(row.fraction) << ',' << format_number(row.mean_aleatoric) << ','
        << format_number(row.stddev_aleatoric) << ',' << format_number(row.mean_epistemic) << ','
        << format_number(row.stddev_epistemic) << ',' << format_number(row.mean_test_rmse) << ','
        << row.replicates.size() << '\n';
  }
}

std::string summary_text(std::span<const EvalReport> reports) {
  std::string out;
  for (const auto& r : reports) {
    out += fmt::format("{}: average test RMSE {} mm ({:.3f} um), range {} mm ({:.3f} um) over {} iterations", r.label,
                       format_number(r.test.average), r.test.average * 1000.0, format_number(r.test.prediction_range),
                       r.test.prediction_range * 1000.0, r.test.count);
    if (r.failed) out += fmt::format(", {} failed", r.failed);
    out += '\n';
  }
  return out;
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

std::string file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("cannot open {}", path.string()));
  std::ostringstream buf;
  buf << in.rdbuf();
  return fnv1a_hex(buf.str());
}

nlohmann::json RunManifest::to_json() const {
  return {{"command", command},
          {"config", config_path},
          {"seed", seed},
          {"versions", {{"dftuq", kVersion}, {"snapshot_format", 1}}},
          {"input", {{"path", input_path}, {"fnv1a64", input_hash}}},
          {"started_at", started_at},
          {"finished_at", finished_at},
          {"outputs", outputs}};
}

std::string utc_timestamp() {
  const auto now = std::chrono::time_point_cast<std::chrono::seconds>(std::chrono::system_clock::now());
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(std::chrono::system_clock::to_time_t(now)));
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error(fmt::format("cannot write {}", path.string()));
}

std::string dump_json(const nlohmann::json& doc) { return doc.dump(2) + "\n"; }

}  // namespace dftuq
