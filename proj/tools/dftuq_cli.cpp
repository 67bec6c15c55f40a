// dftuq: ingest, evaluate, sweep, uq and predict commands.

#include "dftuq/config.hpp"
#include "dftuq/errors.hpp"
#include "dftuq/report.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace dftuq;

namespace {

enum Exit { kOk = 0, kInput = 2, kConfig = 3, kNumerical = 4 };

struct Options {
  std::string data;
  std::string schema;
  std::string config;
  std::string out = "dftuq_out";
  std::string preset;
  std::string model;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<std::size_t> synthetic_rows;
  double noise = 0.05;
};

// Tracks written files so the manifest can list them.
class Outputs {
 public:
  explicit Outputs(fs::path root) : root_(std::move(root)) {}

  void write(const std::string& name, const std::string& text) {
    write_text_file(root_ / name, text);
    names_.push_back(name);
  }

  template <typename Fn>
  void write_csv(const std::string& name, Fn&& fn) {
    std::ostringstream buf;
    fn(buf);
    write(name, buf.str());
  }

  void manifest(RunManifest m) {
    std::sort(names_.begin(), names_.end());
    m.outputs = names_;
    m.finished_at = utc_timestamp();
    write_text_file(root_ / "manifest.json", dump_json(m.to_json()));
  }

 private:
  fs::path root_;
  std::vector<std::string> names_;
};

RunConfig resolve_config(const Options& opt) {
  RunConfig cfg;
  if (!opt.config.empty()) cfg = RunConfig::load(opt.config);
  if (!opt.data.empty()) {
    cfg.data = fs::path(opt.data);
    cfg.synthetic.reset();
  }
  if (!opt.schema.empty()) cfg.schema = fs::path(opt.schema);
  if (opt.synthetic_rows) {
    cfg.data.reset();
    cfg.synthetic = SyntheticSpec{*opt.synthetic_rows, opt.noise, cfg.synthetic ? cfg.synthetic->seed : 7};
  }
  if (!opt.preset.empty()) cfg.apply_preset(opt.preset);
  if (opt.seed) cfg.set_seed(*opt.seed);
  if (opt.workers) cfg.set_workers(*opt.workers);
  return cfg;
}

// Without a families list, every deterministic family runs with its tuned grid.
void add_default_families(RunConfig& cfg) {
  if (!cfg.families.empty()) return;
  for (Family f : deterministic_families()) cfg.families.push_back({std::string(to_string(f)), tuned_grid(f)});
}

RunManifest start_manifest(const std::string& command, const Options& opt, const RunConfig& cfg) {
  RunManifest m;
  m.command = command;
  m.config_path = opt.config;
  m.seed = cfg.seed;
  m.started_at = utc_timestamp();
  if (cfg.data) {
    m.input_path = cfg.data->string();
    m.input_hash = file_hash(*cfg.data);
  } else if (cfg.synthetic) {
    m.input_path = fmt::format("synthetic(rows={}, noise={}, seed={})", cfg.synthetic->rows,
                               format_number(cfg.synthetic->noise), cfg.synthetic->seed);
  }
  return m;
}

std::string fraction_tag(double f) { return fmt::format("{:03d}", static_cast<int>(std::lround(f * 100.0))); }

std::string parity_csv(const ParityTable& table) {
  std::ostringstream buf;
  table.write_csv(buf);
  return buf.str();
}

int cmd_ingest(const Options& opt) {
  const RunConfig cfg = resolve_config(opt);
  const RecordTable table = cfg.load_table();
  const DesignMatrix m = encode(table);
  Outputs out(opt.out);
  auto manifest = start_manifest("ingest", opt, cfg);

  out.write_csv("encoded.csv", [&](std::ostream& os) {
    for (const auto& label : m.column_labels) os << label << ',';
    os << table.schema().target().name << '\n';
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.width(); ++c) os << format_number(m.features(r, c)) << ',';
      os << format_number(m.targets(r)) << '\n';
    }
  });

  nlohmann::json levels = nlohmann::json::object();
  for (const auto& col : table.schema().columns()) {
    if (col.kind == ColumnKind::categorical) levels[col.name] = col.levels;
  }
  const double mean = m.rows() ? m.targets.mean() : 0.0;
  const double sd = m.rows() > 1 ? std::sqrt((m.targets.array() - mean).square().sum() / static_cast<double>(m.rows() - 1)) : 0.0;
  const nlohmann::json summary = {{"rows", m.rows()},
                                  {"width", m.width()},
                                  {"column_labels", m.column_labels},
                                  {"levels", levels},
                                  {"target_mean_mm", mean},
                                  {"target_stddev_mm", sd},
                                  {"manifest", "manifest.json"}};
  out.write("ingest_summary.json", dump_json(summary));
  out.manifest(std::move(manifest));
  std::cout << fmt::format("rows {} width {}\n", m.rows(), m.width());
  return kOk;
}

int cmd_evaluate(const Options& opt) {
  RunConfig cfg = resolve_config(opt);
  add_default_families(cfg);
  const DesignMatrix data = encode(cfg.load_table());
  Outputs out(opt.out);
  auto manifest = start_manifest("evaluate", opt, cfg);

  std::vector<EvalReport> reports;
  bool all_failed_somewhere = false;
  for (const auto& entry : cfg.families) {
    auto report = run_evaluation(entry.grid, data, cfg.protocol, nullptr, entry.name);
    all_failed_somewhere = all_failed_somewhere || report.test.count == 0;
    out.write(entry.name + ".json", dump_json(to_json(report)));
    out.write_csv(entry.name + "_iterations.csv", [&](std::ostream& os) { write_iterations_csv(os, report); });
    std::cerr << summary_text(std::span(&report, 1));
    reports.push_back(std::move(report));
  }
  out.write_csv("comparison.csv", [&](std::ostream& os) { write_comparison_csv(os, reports); });
  out.write("summary.txt", summary_text(reports));
  out.manifest(std::move(manifest));
  return all_failed_somewhere ? kNumerical : kOk;
}

int cmd_sweep(const Options& opt) {
  RunConfig cfg = resolve_config(opt);
  add_default_families(cfg);
  const DesignMatrix data = encode(cfg.load_table());
  Outputs out(opt.out);
  auto manifest = start_manifest("sweep", opt, cfg);

  for (const auto& entry : cfg.families) {
    const auto& wanted = cfg.sweep.families;
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), entry.name) == wanted.end()) continue;
    const auto report = fraction_sweep(entry.grid, data, cfg.sweep.fractions, cfg.protocol, entry.name);
    out.write("sweep_" + entry.name + ".json", dump_json(to_json(report)));
    out.write_csv("sweep_" + entry.name + ".csv", [&](std::ostream& os) { write_sweep_csv(os, report); });
    for (std::size_t r = 0; r < report.rows.size(); ++r) {
      const auto* best = report.evaluations[r].best_iteration();
      if (!best) continue;
      const auto table = parity_table(best->test_measured, best->test_predicted);
      out.write(fmt::format("parity_{}_train{}.csv", entry.name, fraction_tag(report.rows[r].fraction)),
                parity_csv(table));
    }
  }
  out.manifest(std::move(manifest));
  return kOk;
}

int cmd_uq(const Options& opt) {
  const RunConfig cfg = resolve_config(opt);
  const DesignMatrix data = encode(cfg.load_table());
  Outputs out(opt.out);
  auto manifest = start_manifest("uq", opt, cfg);

  if (cfg.uq.trend) {
    const auto trend = uq_trend_study(cfg.uq.bnn_ensemble, data, cfg.uq.fractions, cfg.uq.seeds, cfg.uq.draws,
                                      cfg.scaler, cfg.workers);
    out.write("uq_trend.json", dump_json(to_json(trend)));
    out.write_csv("uq_trend.csv", [&](std::ostream& os) { write_uq_trend_csv(os, trend); });
    out.write_csv("uq_trend_summary.csv", [&](std::ostream& os) { write_uq_summary_csv(os, trend); });
  }
  for (Family family : cfg.uq.models) {
    const std::string name(to_string(family));
    const auto run = run_probabilistic(family, cfg.uq.params(family), data, cfg.uq.split, cfg.seed, cfg.uq.draws,
                                       cfg.scaler);
    out.write(name + ".json", dump_json(to_json(run)));
    out.write("parity_" + name + ".csv", parity_csv(run.parity));
    if (!run.loss_trace.empty()) {
      out.write_csv("loss_" + name + ".csv", [&](std::ostream& os) { write_loss_trace(os, run.loss_trace); });
    }
    if (run.ensemble) {
      const nlohmann::json meta = {{"scaler", to_json(run.scaler)}, {"draws", cfg.uq.draws}, {"seed", cfg.seed}};
      std::ostringstream buf;
      run.ensemble->save(buf, meta);
      out.write(name + ".snapshot", buf.str());
    }
    std::cerr << fmt::format("{}: test RMSE {} mm, aleatoric {} mm{}\n", name, format_number(run.test_rmse),
                             format_number(run.aggregate_aleatoric),
                             run.aggregate_epistemic ? fmt::format(", epistemic {} mm", format_number(*run.aggregate_epistemic))
                                                     : std::string());
  }
  out.manifest(std::move(manifest));
  return kOk;
}

int cmd_predict(const Options& opt) {
  if (opt.model.empty()) throw ConfigError("predict needs --model <snapshot>");
  std::ifstream in(opt.model, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("cannot open snapshot {}", opt.model));
  auto [model, meta] = EnsembleModel::load(in);
  const RunConfig cfg = resolve_config(opt);
  const RecordTable table = cfg.load_table();
  const DesignMatrix m = encode(table);
  const ScalerState scaler = scaler_from_json(meta.at("scaler"));
  const Eigen::MatrixXd x = apply_scaler(scaler, m.features);
  const int draws = meta.value("draws", 200);
  const std::uint64_t seed = opt.seed.value_or(meta.value("seed", std::uint64_t{0}));
  const auto ensemble = ensemble_predict(model, x, draws, derive_seed(seed, 4));
  const auto parts = decompose_uncertainty(ensemble);
  const Eigen::VectorXd mean = ensemble.mixture_mean();

  Outputs out(opt.out);
  auto manifest = start_manifest("predict", opt, cfg);
  out.write_csv("predictions.csv", [&](std::ostream& os) {
    os << "row,measured_mm,predicted_mm,aleatoric_mm,epistemic_mm,total_mm\n";
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      os << r << ',' << format_number(m.targets(r)) << ',' << format_number(mean(r)) << ','
         << format_number(parts.aleatoric(r)) << ',' << format_number(parts.epistemic(r)) << ','
         << format_number(parts.total(r)) << '\n';
    }
  });
  out.manifest(std::move(manifest));
  return kOk;
}

void add_common(CLI::App* cmd, Options& opt) {
  cmd->add_option("--data", opt.data, "Measurement CSV");
  cmd->add_option("--schema", opt.schema, "Schema JSON (default schema when omitted)");
  cmd->add_option("--config", opt.config, "Run configuration JSON");
  cmd->add_option("--out", opt.out, "Output directory");
  cmd->add_option("--seed", opt.seed, "Override the configured seed");
  cmd->add_option("--workers", opt.workers, "Parallel workers")->check(CLI::PositiveNumber);
  cmd->add_option("--preset", opt.preset, "Iteration preset")->check(CLI::IsMember({"full", "ci"}));
  cmd->add_option("--synthetic", opt.synthetic_rows, "Use N rows of the synthetic fixture instead of --data");
  cmd->add_option("--noise", opt.noise, "Synthetic noise stddev (mm)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dimensional deviation prediction with uncertainty quantification"};
  app.require_subcommand(1);
  Options opt;
  auto* ingest = app.add_subcommand("ingest", "Validate and encode a measurement CSV");
  auto* evaluate = app.add_subcommand("evaluate", "Dual Monte Carlo evaluation of the configured families");
  auto* sweep = app.add_subcommand("sweep", "Training-fraction sweep");
  auto* uq = app.add_subcommand("uq", "Uncertainty study with GPR and the Bayesian networks");
  auto* predict = app.add_subcommand("predict", "Predict with a saved ensemble snapshot");
  for (auto* cmd : {ingest, evaluate, sweep, uq, predict}) add_common(cmd, opt);
  predict->add_option("--model", opt.model, "Snapshot written by the uq command")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*ingest) return cmd_ingest(opt);
    if (*evaluate) return cmd_evaluate(opt);
    if (*sweep) return cmd_sweep(opt);
    if (*uq) return cmd_uq(opt);
    if (*predict) return cmd_predict(opt);
  } catch (const ParseError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kInput;
  } catch (const SchemaError& e) {
    std::cerr << "schema error: " << e.what() << '\n';
    return kInput;
  } catch (const LayoutError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kInput;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kOk;
}
