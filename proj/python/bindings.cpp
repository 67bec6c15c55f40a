// Python bindings: data loading, regressors, the evaluation protocol and the
// uncertainty study. JSON documents cross the boundary as strings.

#include "dftuq/config.hpp"
#include "dftuq/errors.hpp"
#include "dftuq/report.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace dftuq;
using nlohmann::json;

namespace {

py::tuple design_tuple(const DesignMatrix& m) { return py::make_tuple(m.features, m.targets, m.column_labels); }

class PyModel {
 public:
  PyModel(const std::string& family, const std::string& params, std::uint64_t seed)
      : family_(parse_family(family)),
        model_(make_regressor(family_, params.empty() ? json::object() : json::parse(params), seed)) {}

  void fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) { model_->fit(x, y); }
  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const { return model_->predict(x); }

  std::pair<Eigen::VectorXd, Eigen::VectorXd> predict_dist(const Eigen::MatrixXd& x) const {
    const auto* p = dynamic_cast<const ProbabilisticRegressor*>(model_.get());
    if (!p) throw ConfigError(std::string(to_string(family_)) + " has no predictive distribution");
    auto d = p->predict_dist(x);
    return {std::move(d.means), std::move(d.stddevs)};
  }

  std::string name() const { return model_->name(); }

 private:
  Family family_;
  std::unique_ptr<Regressor> model_;
};

RunConfig config_from(const std::string& doc, const std::string& preset, const std::string& base_dir) {
  RunConfig cfg = RunConfig::from_json(json::parse(doc.empty() ? "{}" : doc), base_dir);
  if (!preset.empty()) cfg.apply_preset(preset);
  return cfg;
}

std::string evaluate(const std::string& doc, const std::string& preset, const std::string& base_dir) {
  const RunConfig cfg = config_from(doc, preset, base_dir);
  const DesignMatrix data = encode(cfg.load_table());
  json out = json::object();
  std::vector<FamilyEntry> families = cfg.families;
  if (families.empty()) {
    for (Family f : deterministic_families()) families.push_back({std::string(to_string(f)), tuned_grid(f)});
  }
  for (const auto& entry : families) out[entry.name] = to_json(run_evaluation(entry.grid, data, cfg.protocol, nullptr, entry.name));
  return out.dump();
}

std::string uq_trend(const std::string& doc, const std::string& base_dir) {
  const RunConfig cfg = config_from(doc, "", base_dir);
  const DesignMatrix data = encode(cfg.load_table());
  return to_json(uq_trend_study(cfg.uq.bnn_ensemble, data, cfg.uq.fractions, cfg.uq.seeds, cfg.uq.draws, cfg.scaler,
                                cfg.workers))
      .dump();
}

std::string probabilistic(const std::string& family, const std::string& doc, const std::string& base_dir) {
  const RunConfig cfg = config_from(doc, "", base_dir);
  const DesignMatrix data = encode(cfg.load_table());
  const Family f = parse_family(family);
  json run = to_json(run_probabilistic(f, cfg.uq.params(f), data, cfg.uq.split, cfg.seed, cfg.uq.draws, cfg.scaler));
  return run.dump();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Dimensional-deviation regression with uncertainty";

  // translators run newest first, so base classes go first
  auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  auto schema = py::register_exception<SchemaError>(m, "SchemaError", error.ptr());
  py::register_exception<LevelError>(m, "LevelError", schema.ptr());
  py::register_exception<ParseError>(m, "ParseError", error.ptr());
  py::register_exception<LayoutError>(m, "LayoutError", error.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", error.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", error.ptr());

  m.def("synthetic", [](std::size_t n, double noise, std::uint64_t seed) {
    return design_tuple(encode(generate_synthetic(n, noise, seed)));
  }, py::arg("n"), py::arg("noise") = 0.05, py::arg("seed") = 7, "(features, targets, labels) of the synthetic fixture");

  m.def("load", [](const std::string& path, const std::string& schema) {
    const DataSchema s = schema.empty() ? DataSchema::default_schema() : DataSchema::load(schema);
    return design_tuple(encode(load_csv(path, s)));
  }, py::arg("path"), py::arg("schema") = "", "(features, targets, labels) of an encoded measurement CSV");

  m.def("rmse", &rmse, py::arg("predicted"), py::arg("actual"));

  m.def("split", [](std::size_t n, double train, double test, double holdout, std::uint64_t seed, std::uint64_t it) {
    const auto plan = dual_mc_split(n, {train, test, holdout}, seed, it);
    return py::make_tuple(plan.train, plan.test, plan.holdout);
  }, py::arg("n"), py::arg("train") = 0.8, py::arg("test") = 0.2, py::arg("holdout") = 0.0, py::arg("seed") = 0,
     py::arg("iteration") = 0);

  m.def("decompose", [](const Eigen::MatrixXd& means, const Eigen::MatrixXd& stddevs) {
    EnsembleOutput e;
    e.means = means;
    e.stddevs = stddevs;
    const auto u = decompose_uncertainty(e);
    return py::make_tuple(u.aleatoric, u.epistemic, u.total);
  }, py::arg("means"), py::arg("stddevs"), "Per-query aleatoric, epistemic and total stddev from draws x queries arrays");

  m.def("families", [] {
    std::vector<std::string> out;
    for (Family f : {Family::knn, Family::svr, Family::tree, Family::forest, Family::gbm, Family::xgb, Family::mlp,
                     Family::gpr, Family::bnn_head, Family::bnn_ensemble})
      out.emplace_back(to_string(f));
    return out;
  });

  py::class_<PyModel>(m, "Model")
      .def(py::init<const std::string&, const std::string&, std::uint64_t>(), py::arg("family"),
           py::arg("params") = "", py::arg("seed") = 0)
      .def("fit", &PyModel::fit, py::call_guard<py::gil_scoped_release>())
      .def("predict", &PyModel::predict, py::call_guard<py::gil_scoped_release>())
      .def("predict_dist", &PyModel::predict_dist, py::call_guard<py::gil_scoped_release>())
      .def_property_readonly("name", &PyModel::name);

  m.def("evaluate", &evaluate, py::arg("config") = "", py::arg("preset") = "", py::arg("base_dir") = "",
        py::call_guard<py::gil_scoped_release>(), "Run the evaluation protocol; returns a JSON object per family");
  m.def("uq_trend", &uq_trend, py::arg("config") = "", py::arg("base_dir") = "",
        py::call_guard<py::gil_scoped_release>());
  m.def("probabilistic", &probabilistic, py::arg("family"), py::arg("config") = "", py::arg("base_dir") = "",
        py::call_guard<py::gil_scoped_release>());
}
