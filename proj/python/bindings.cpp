#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "avfp/checkpoint.hpp"
#include "avfp/cmapss.hpp"
#include "avfp/diagnostics.hpp"
#include "avfp/error.hpp"
#include "avfp/evaluation.hpp"
#include "avfp/experiment.hpp"
#include "avfp/linear_gaussian.hpp"
#include "avfp/objectives.hpp"
#include "avfp/training.hpp"

namespace py = pybind11;
using namespace avfp;

namespace {

ExperimentConfig config_of(const std::optional<std::string>& json) {
    return json ? config_from_json(*json) : ExperimentConfig{};
}

PreparedData prepared_from(const std::filesystem::path& dir, const std::string& subset, const TrainConfig& c) {
    const RawSubset raw = load_subset(CmapssFiles::in(dir, subset));
    return prepare_data(raw.train, &raw.test, &raw.test_rul, c.validation_fraction, c.rul_cap);
}

py::list trace_of(const std::vector<MetricPoint>& trace) {
    py::list out;
    for (const auto& p : trace) {
        py::dict d;
        d["step"] = p.step;
        d["validation_rmse"] = p.validation_rmse;
        d["test_rmse"] = p.test_rmse ? py::cast(*p.test_rmse) : py::none();
        out.append(d);
    }
    return out;
}

py::dict train_run(const std::filesystem::path& data_dir, const std::optional<std::string>& config,
                   const std::string& subset, const std::optional<std::filesystem::path>& checkpoint) {
    const ExperimentConfig cfg = config_of(config);
    const PreparedData data = prepared_from(data_dir, subset, cfg.train);
    Trainer trainer(data, network_for(data, cfg.network), cfg.train);
    {
        py::gil_scoped_release release;
        trainer.run_to_end();
    }
    if (checkpoint) save_checkpoint(*checkpoint, trainer.checkpoint());
    const TrainResult r = trainer.result();
    py::dict d;
    d["steps"] = trainer.step();
    d["best_step"] = r.best_step;
    d["best_validation_rmse"] = r.best_validation_rmse;
    d["skipped_batches"] = r.skipped_batches;
    d["trace"] = trace_of(r.trace);
    return d;
}

py::dict evaluate(const std::filesystem::path& checkpoint, const std::filesystem::path& data_dir,
                  const std::string& mode_text, bool use_best, const std::string& subset) {
    const Checkpoint c = load_checkpoint(checkpoint);
    const RawSubset raw = load_subset(CmapssFiles::in(data_dir, subset));
    const Dataset train = normalize(raw.train, &c.stats).first;
    const Dataset test = normalize(raw.test, &c.stats).first;
    const ModelParams& params = use_best && c.has_best ? c.best_params : c.params;
    const PredictionMode mode = parse_prediction_mode(mode_text);
    std::optional<HealthIndexModel> hi;
    if (mode == PredictionMode::health_index) hi = HealthIndexModel::fit(params, c.spec, train, c.stats.rul_cap);
    const PredictionSet preds = predict_rul(params, c.spec, test, raw.test_rul, mode, hi ? &*hi : nullptr);
    py::dict per_unit;
    for (const auto& [id, p] : preds) per_unit[py::int_(id)] = py::make_tuple(p.predicted, p.truth);
    py::dict d;
    d["rmse"] = rmse(preds);
    d["predictions"] = per_unit;
    return d;
}

py::dict summary_dict(const RunSummary& s) {
    py::dict d;
    d["readout"] = s.readout;
    d["completed"] = s.completed;
    d["aborted"] = s.aborted;
    d["mean"] = s.mean;
    d["std"] = s.std;
    d["min"] = s.min;
    d["argmin_run"] = s.argmin_run;
    d["argmin_step"] = s.argmin_step;
    d["mean_supervised"] = s.mean_supervised;
    d["mean_health_index"] = s.mean_health_index;
    py::list runs;
    for (const auto& r : s.runs) {
        py::dict rd;
        rd["run"] = r.run;
        rd["seed"] = r.seed;
        rd["completed"] = r.completed;
        rd["abort_reason"] = r.abort_reason;
        rd["best_step"] = r.best_step;
        rd["test_rmse"] = r.test_rmse;
        rd["test_rmse_supervised"] = r.test_rmse_supervised;
        rd["test_rmse_health_index"] = r.test_rmse_health_index;
        rd["curve"] = trace_of(r.curve);
        runs.append(rd);
    }
    d["runs"] = runs;
    return d;
}

py::dict experiment(const std::filesystem::path& data_dir, const std::optional<std::string>& config,
                    std::size_t runs, bool same_seed, const std::optional<std::filesystem::path>& out,
                    const std::string& subset) {
    const ExperimentConfig cfg = config_of(config);
    const PreparedData data = prepared_from(data_dir, subset, cfg.train);
    RunSummary s;
    {
        py::gil_scoped_release release;
        s = run_experiment(data, network_for(data, cfg.network), cfg.train, runs, same_seed);
    }
    if (out) {
        std::filesystem::create_directories(*out);
        emit_plot_data(s, *out);
    }
    return summary_dict(s);
}

GaussianDiag gaussian(Tape& tape, const std::vector<double>& mean, const std::vector<double>& log_var) {
    return GaussianDiag::make(tape.constant(Tensor::vector(mean)), tape.constant(Tensor::vector(log_var)));
}

}  // namespace

PYBIND11_MODULE(_avfp, m) {
    m.doc() = "Adversarial-variational sequential latent-variable models for RUL prognostics";

    auto base = py::register_exception<Error>(m, "Error");
    py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
    py::register_exception<DomainError>(m, "DomainError", base.ptr());
    py::register_exception<NumericError>(m, "NumericError", base.ptr());
    py::register_exception<TapeError>(m, "TapeError", base.ptr());
    py::register_exception<DataError>(m, "DataError", base.ptr());
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<CheckpointError>(m, "CheckpointError", base.ptr());
    py::register_exception<TrainingAborted>(m, "TrainingAborted", base.ptr());

    m.def("version", &code_version);

    m.def("default_config", [] { return config_to_json(ExperimentConfig{}); },
          "Default configuration as a JSON string.");
    m.def("normalize_config", [](const std::string& json) { return config_to_json(config_from_json(json)); },
          py::arg("config"), "Validates a JSON configuration and returns it with every field filled in.");

    m.def("write_surrogate", &write_surrogate_cmapss, py::arg("dir"), py::arg("seed") = 0, py::arg("train_units") = 30,
          py::arg("test_units") = 20, py::arg("subset") = "FD001");

    m.def(
        "load_subset",
        [](const std::filesystem::path& dir, const std::string& subset) {
            const RawSubset raw = load_subset(CmapssFiles::in(dir, subset));
            const auto [norm, stats] = normalize(raw.train);
            py::dict d;
            d["train_units"] = raw.train.units.size();
            d["train_rows"] = raw.train.row_count();
            d["test_units"] = raw.test.units.size();
            d["test_rows"] = raw.test.row_count();
            d["kept_sensors"] = stats.kept_sensors;
            d["kept_settings"] = stats.kept_settings;
            d["stats_json"] = stats_to_json(stats);
            return d;
        },
        py::arg("dir"), py::arg("subset") = "FD001");

    m.def("train", &train_run, py::arg("data_dir"), py::arg("config") = py::none(), py::arg("subset") = "FD001",
          py::arg("checkpoint") = py::none());
    m.def("evaluate", &evaluate, py::arg("checkpoint"), py::arg("data_dir"), py::arg("mode") = "supervised",
          py::arg("best") = true, py::arg("subset") = "FD001");
    m.def("run_experiment", &experiment, py::arg("data_dir"), py::arg("config") = py::none(), py::arg("runs") = 1,
          py::arg("same_seed") = false, py::arg("out") = py::none(), py::arg("subset") = "FD001");

    m.def(
        "rmse",
        [](const std::vector<std::pair<double, double>>& pairs) {
            PredictionSet p;
            for (std::size_t i = 0; i < pairs.size(); ++i) p[static_cast<int>(i)] = {pairs[i].first, pairs[i].second};
            return rmse(p);
        },
        py::arg("pairs"), "RMSE over (predicted, true) pairs.");

    m.def(
        "gaussian_log_density",
        [](const std::vector<double>& x, const std::vector<double>& mean, const std::vector<double>& log_var) {
            Tape tape;
            return gaussian_log_density(tape.constant(Tensor::vector(x)), gaussian(tape, mean, log_var)).item();
        },
        py::arg("x"), py::arg("mean"), py::arg("log_var"));
    m.def(
        "kl_diag_gaussians",
        [](const std::vector<double>& mu_q, const std::vector<double>& lv_q, const std::vector<double>& mu_p,
           const std::vector<double>& lv_p) {
            Tape tape;
            return kl_diag_gaussians(gaussian(tape, mu_q, lv_q), gaussian(tape, mu_p, lv_p)).item();
        },
        py::arg("mu_q"), py::arg("log_var_q"), py::arg("mu_p"), py::arg("log_var_p"));

    m.def(
        "kalman_loglik",
        [](const Eigen::MatrixXd& A, const Eigen::MatrixXd& C, const Eigen::VectorXd& Q, const Eigen::VectorXd& R,
           const Eigen::VectorXd& mu0, const Eigen::MatrixXd& Sigma0, const Eigen::MatrixXd& x) {
            LinearGaussianSpec s{A, C, Q, R, mu0, Sigma0};
            s.validate();
            std::vector<Eigen::VectorXd> obs;
            for (Eigen::Index t = 0; t < x.rows(); ++t) obs.emplace_back(x.row(t).transpose());
            return kalman_loglik(s, obs);
        },
        py::arg("A"), py::arg("C"), py::arg("Q"), py::arg("R"), py::arg("mu0"), py::arg("Sigma0"), py::arg("x"),
        "Exact log-likelihood of observations x (T rows) under a linear-Gaussian state-space model.");

    m.def(
        "gradcheck",
        [](std::size_t draws, std::uint64_t seed) {
            py::dict d;
            for (const auto& e : gradcheck_suite(draws, seed)) d[py::str(e.objective)] = e.max_error;
            return d;
        },
        py::arg("draws") = 20, py::arg("seed") = 0, "Largest relative gradient error per objective.");

    m.def(
        "toy_gan",
        [](std::size_t steps, std::uint64_t seed) {
            ToyGanOptions o;
            o.steps = steps;
            o.seed = seed;
            ToyGanResult r;
            {
                py::gil_scoped_release release;
                r = toy_gan(o);
            }
            py::dict d;
            d["d_real"] = r.d_real;
            d["d_fake"] = r.d_fake;
            d["generated_mean"] = r.generated_mean;
            d["generated_std"] = r.generated_std;
            return d;
        },
        py::arg("steps") = 5000, py::arg("seed") = 0);
}
