#include <CLI/CLI.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "avfp/checkpoint.hpp"
#include "avfp/cmapss.hpp"
#include "avfp/diagnostics.hpp"
#include "avfp/error.hpp"
#include "avfp/evaluation.hpp"
#include "avfp/experiment.hpp"
#include "avfp/training.hpp"

namespace fs = std::filesystem;
using namespace avfp;

namespace {

enum Exit : int { ok = 0, usage = 1, data_error = 2, aborted = 3, check_failed = 4 };

struct DataOptions {
    std::string dir;
    std::string subset = "FD001";

    void add(CLI::App& app) {
        app.add_option("--data", dir, "C-MAPSS directory (default: $AVFP_DATA_DIR)");
        app.add_option("--subset", subset, "subset name, e.g. FD001")->capture_default_str();
    }

    CmapssFiles files() const {
        fs::path d = dir;
        if (d.empty()) {
            const char* env = std::getenv("AVFP_DATA_DIR");
            if (!env || !*env) throw DataError("no data directory: pass --data or set AVFP_DATA_DIR");
            d = env;
        }
        return CmapssFiles::in(d, subset);
    }
};

std::string command_line(int argc, char** argv) {
    std::string s;
    for (int i = 0; i < argc; ++i) s += (i ? " " : "") + std::string(argv[i]);
    return s;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::ofstream open_out(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write " + p.string());
    return f;
}

void write_manifest(const fs::path& dir, const ExperimentConfig& cfg, const CmapssFiles& files, double wall,
                    const std::string& command) {
    ManifestInfo info;
    info.config = cfg;
    info.data_files = {files.train, files.test, files.rul};
    info.wall_seconds = wall;
    info.command = command;
    open_out(dir / "manifest.json") << run_manifest(info);
}

ExperimentConfig read_config(const std::string& path, std::optional<std::uint64_t> seed) {
    ExperimentConfig cfg = path.empty() ? ExperimentConfig{} : load_config(path);
    if (seed) cfg.train.seed = *seed;
    return cfg;
}

void print_point(const MetricPoint& p) {
    std::printf("step %zu  validation %.3f", p.step, p.validation_rmse);
    if (p.test_rmse) std::printf("  test %.3f", *p.test_rmse);
    std::printf("\n");
    std::fflush(stdout);
}

// Data normalized with a checkpoint's statistics, checked against its network.
struct CheckpointData {
    Checkpoint ckpt;
    Dataset train, test;
    std::map<int, double> truth;
};

CheckpointData load_for_checkpoint(const std::string& ckpt_path, const DataOptions& data) {
    CheckpointData cd;
    cd.ckpt = load_checkpoint(ckpt_path);
    const RawSubset raw = load_subset(data.files());
    cd.train = normalize(raw.train, &cd.ckpt.stats).first;
    cd.test = normalize(raw.test, &cd.ckpt.stats).first;
    cd.truth = raw.test_rul;

    const NetworkSpec& s = cd.ckpt.spec;
    if (s.n_x != cd.ckpt.stats.kept_sensors.size() || s.n_u != cd.ckpt.stats.kept_settings.size()) {
        throw DataError("checkpoint network expects n_x=" + std::to_string(s.n_x) + ", n_u=" + std::to_string(s.n_u) +
                        " but its normalization keeps " + std::to_string(cd.ckpt.stats.kept_sensors.size()) +
                        " sensors and " + std::to_string(cd.ckpt.stats.kept_settings.size()) + " settings");
    }
    try {
        Tape tape;
        ModelGraph(tape, cd.ckpt.params, s);
    } catch (const ShapeError& e) {
        throw DataError(std::string("checkpoint parameters do not match its network: ") + e.what());
    }
    return cd;
}

PredictionSet checkpoint_predictions(const CheckpointData& cd, PredictionMode mode, bool use_best) {
    const ModelParams& params = use_best && cd.ckpt.has_best ? cd.ckpt.best_params : cd.ckpt.params;
    std::optional<HealthIndexModel> hi;
    if (mode == PredictionMode::health_index) hi = HealthIndexModel::fit(params, cd.ckpt.spec, cd.train, cd.ckpt.stats.rul_cap);
    return predict_rul(params, cd.ckpt.spec, cd.test, cd.truth, mode, hi ? &*hi : nullptr);
}

// --- subcommands ---------------------------------------------------------------

int cmd_ingest(const DataOptions& data, const std::string& out, const std::string& command) {
    const auto t0 = std::chrono::steady_clock::now();
    const CmapssFiles files = data.files();
    const RawSubset raw = load_subset(files);
    const auto [train, stats] = normalize(raw.train);
    const Dataset test = normalize(raw.test, &stats).first;
    const RulTargets targets = build_rul_targets(raw.train, stats.rul_cap);

    const fs::path dir = out;
    {
        auto f = open_out(dir / "train_normalized.csv");
        write_normalized_csv(f, train, stats);
    }
    {
        auto f = open_out(dir / "test_normalized.csv");
        write_normalized_csv(f, test, stats);
    }
    open_out(dir / "stats.json") << stats_to_json(stats);
    {
        auto f = open_out(dir / "rul_targets.csv");
        f << "unit_id,cycle,rul\n";
        for (const auto& [id, rows] : train.units) {
            for (std::size_t i = 0; i < rows.size(); ++i) f << id << ',' << rows[i].cycle << ',' << targets.at(id)[i] << '\n';
        }
    }
    write_manifest(dir, ExperimentConfig{}, files, seconds_since(t0), command);
    std::printf("train: %zu units, %zu rows\ntest: %zu units, %zu rows\nretained: %zu settings, %zu sensors\n",
                raw.train.units.size(), raw.train.row_count(), raw.test.units.size(), raw.test.row_count(),
                stats.kept_settings.size(), stats.kept_sensors.size());
    return ok;
}

struct TrainArgs {
    std::string config, out = "run", resume;
    std::optional<std::uint64_t> seed;
    std::size_t stop_at = 0;
};

int cmd_train(const DataOptions& data, const TrainArgs& a, const std::string& command) {
    const auto t0 = std::chrono::steady_clock::now();
    const CmapssFiles files = data.files();
    const RawSubset raw = load_subset(files);

    std::optional<Checkpoint> resumed;
    ExperimentConfig cfg;
    if (!a.resume.empty()) {
        resumed = load_checkpoint(a.resume);
        cfg.train = resumed->config;
        cfg.network = resumed->spec;
    } else {
        cfg = read_config(a.config, a.seed);
    }
    const PreparedData prepared = prepare_data(raw.train, &raw.test, &raw.test_rul, cfg.train.validation_fraction,
                                               cfg.train.rul_cap);
    Trainer trainer = resumed ? Trainer::resume(prepared, *resumed)
                              : Trainer(prepared, network_for(prepared, cfg.network), cfg.train);
    cfg.network = trainer.spec();

    std::size_t printed = trainer.result().trace.size();
    const std::size_t until = a.stop_at ? std::min(a.stop_at, trainer.total_steps()) : trainer.total_steps();
    const std::size_t every = std::max<std::size_t>(1, trainer.config().eval_every);
    while (trainer.step() < until) {
        trainer.run(std::min(until, (trainer.step() / every + 1) * every));
        const auto trace = trainer.result().trace;
        for (; printed < trace.size(); ++printed) print_point(trace[printed]);
    }

    const fs::path dir = a.out;
    fs::create_directories(dir);
    save_checkpoint(dir / "checkpoint.avfp", trainer.checkpoint());
    const TrainResult r = trainer.result();
    {
        auto f = open_out(dir / "trace.csv");
        f << "step,validation_rmse,test_rmse\n";
        for (const auto& p : r.trace) {
            f << p.step << ',' << p.validation_rmse << ',';
            if (p.test_rmse) f << *p.test_rmse;
            f << '\n';
        }
    }
    write_manifest(dir, cfg, files, seconds_since(t0), command);
    std::printf("steps %zu/%zu  best step %zu  best validation %.3f  skipped %zu\n", trainer.step(),
                trainer.total_steps(), r.best_step, r.best_validation_rmse, r.skipped_batches);
    return ok;
}

int cmd_eval(const DataOptions& data, const std::string& ckpt, const std::string& mode_text, bool use_best) {
    const CheckpointData cd = load_for_checkpoint(ckpt, data);
    const PredictionMode mode = mode_text.empty()
                                    ? (cd.ckpt.config.rul_supervision ? PredictionMode::supervised
                                                                      : PredictionMode::health_index)
                                    : parse_prediction_mode(mode_text);
    const PredictionSet preds = checkpoint_predictions(cd, mode, use_best);
    std::printf("%s RMSE %.4f over %zu units (step %llu%s)\n", mode_name(mode), rmse(preds), preds.size(),
                static_cast<unsigned long long>(use_best && cd.ckpt.has_best ? cd.ckpt.best_step : cd.ckpt.step),
                use_best && cd.ckpt.has_best ? ", best on validation" : "");
    return ok;
}

int cmd_predict(const DataOptions& data, const std::string& ckpt, const std::string& mode_text, bool use_best,
                const std::string& out) {
    const CheckpointData cd = load_for_checkpoint(ckpt, data);
    const PredictionMode mode = mode_text.empty()
                                    ? (cd.ckpt.config.rul_supervision ? PredictionMode::supervised
                                                                      : PredictionMode::health_index)
                                    : parse_prediction_mode(mode_text);
    const PredictionSet preds = checkpoint_predictions(cd, mode, use_best);
    std::ostringstream os;
    os << "unit_id,predicted_rul,true_rul\n";
    for (const auto& [id, p] : preds) os << id << ',' << p.predicted << ',' << p.truth << '\n';
    if (out.empty() || out == "-") {
        std::cout << os.str();
    } else {
        open_out(out) << os.str();
        std::printf("wrote %zu predictions to %s\n", preds.size(), out.c_str());
    }
    return ok;
}

struct ExperimentArgs {
    std::string config, out = "experiment";
    std::optional<std::uint64_t> seed;
    std::size_t runs = 5;
    bool same_seed = false;
    bool ablation = false;
};

RunSummary run_and_emit(const PreparedData& prepared, const ExperimentConfig& cfg, const ExperimentArgs& a,
                        const fs::path& dir, const CmapssFiles& files, const std::string& command) {
    const auto t0 = std::chrono::steady_clock::now();
    const RunSummary s = run_experiment(prepared, network_for(prepared, cfg.network), cfg.train, a.runs, a.same_seed,
                                        [](const RunOutcome& r) {
                                            if (r.completed) {
                                                std::printf("run %zu seed %llu: best step %zu test RMSE %.3f (%.0fs)\n",
                                                            r.run, static_cast<unsigned long long>(r.seed),
                                                            r.best_step, r.test_rmse, r.wall_seconds);
                                            } else {
                                                std::printf("run %zu aborted: %s\n", r.run, r.abort_reason.c_str());
                                            }
                                            std::fflush(stdout);
                                        });
    fs::create_directories(dir);
    emit_plot_data(s, dir);
    write_manifest(dir, cfg, files, seconds_since(t0), command);
    std::printf("%s readout: %zu/%zu completed, mean %.3f, std %.3f, min %.3f (run %zu, step %zu)\n",
                s.readout.c_str(), s.completed, s.runs.size(), s.mean, s.std, s.min, s.argmin_run, s.argmin_step);
    return s;
}

int cmd_experiment(const DataOptions& data, const ExperimentArgs& a, const std::string& command) {
    const CmapssFiles files = data.files();
    const RawSubset raw = load_subset(files);
    const ExperimentConfig cfg = read_config(a.config, a.seed);
    const PreparedData prepared = prepare_data(raw.train, &raw.test, &raw.test_rul, cfg.train.validation_fraction,
                                               cfg.train.rul_cap);
    const fs::path dir = a.out;
    if (!a.ablation) {
        const RunSummary s = run_and_emit(prepared, cfg, a, dir, files, command);
        return s.completed > 0 ? ok : aborted;
    }
    std::vector<std::pair<std::string, RunSummary>> rows;
    for (const bool markovian : {true, false}) {
        ExperimentConfig c = cfg;
        c.train.markovian = markovian;
        const std::string label = markovian ? "markovian" : "non-markovian";
        std::printf("== %s\n", label.c_str());
        rows.emplace_back(label, run_and_emit(prepared, c, a, dir / label, files, command));
    }
    const std::string table = ablation_table(rows);
    open_out(dir / "ablation.md") << table;
    std::cout << table;
    for (const auto& [label, s] : rows) {
        if (s.completed != s.runs.size()) return aborted;
    }
    return ok;
}

int cmd_gradcheck(std::size_t draws, std::uint64_t seed, double tolerance) {
    bool pass = true;
    for (const GradCheckEntry& e : gradcheck_suite(draws, seed)) {
        const bool good = e.max_error < tolerance;
        pass = pass && good;
        std::printf("%-22s draws %zu  max relative error %.3e  %s\n", e.objective.c_str(), e.draws, e.max_error,
                    good ? "ok" : "FAIL");
    }
    return pass ? ok : check_failed;
}

int cmd_oracle(const OracleOptions& o, double n_se, std::size_t min_shrunk) {
    std::size_t bound_ok = 0, shrunk = 0;
    const auto results = oracle_suite(o, [&](std::size_t i, const OracleInstance& r) {
        std::printf("instance %2zu  n_z %zu n_x %zu T %2zu  kalman %.4f  elbo %.4f -> %.4f (se %.4f)  gap %.4f -> %.4f\n", i,
                    r.n_z, r.n_x, r.length, r.kalman, r.elbo_initial, r.elbo_final, r.se_final, r.gap_initial(),
                    r.gap_final());
        std::fflush(stdout);
    });
    for (const auto& r : results) {
        bound_ok += r.bound_holds(n_se);
        shrunk += r.gap_shrank();
    }
    std::printf("bound held in %zu/%zu, gap shrank in %zu/%zu\n", bound_ok, results.size(), shrunk, results.size());
    return bound_ok == results.size() && shrunk >= min_shrunk ? ok : check_failed;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adversarial-variational RUL prognostics"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);
    const std::string command = command_line(argc, argv);

    DataOptions data;

    auto* ingest = app.add_subcommand("ingest", "parse, normalize and cache a C-MAPSS subset");
    data.add(*ingest);
    std::string ingest_out = "ingest";
    ingest->add_option("--out", ingest_out, "output directory")->capture_default_str();

    auto* train = app.add_subcommand("train", "train one model and write a checkpoint");
    data.add(*train);
    TrainArgs targs;
    train->add_option("--config", targs.config, "JSON configuration");
    train->add_option("--seed", targs.seed, "overrides the configured seed");
    train->add_option("--out", targs.out, "output directory")->capture_default_str();
    train->add_option("--resume", targs.resume, "continue from a checkpoint");
    train->add_option("--stop-at", targs.stop_at, "stop after this many steps");

    std::string ckpt, mode, pred_out;
    bool use_best = false;
    auto* eval = app.add_subcommand("eval", "score a checkpoint on the test split");
    data.add(*eval);
    eval->add_option("--checkpoint", ckpt, "checkpoint file")->required();
    eval->add_option("--mode", mode, "supervised or health_index (default: the trained readout)");
    eval->add_flag("--best", use_best, "use the best-on-validation parameters");

    auto* predict = app.add_subcommand("predict", "write per-unit RUL predictions as CSV");
    data.add(*predict);
    predict->add_option("--checkpoint", ckpt, "checkpoint file")->required();
    predict->add_option("--mode", mode, "supervised or health_index (default: the trained readout)");
    predict->add_flag("--best", use_best, "use the best-on-validation parameters");
    predict->add_option("--out", pred_out, "CSV path (default: stdout)");

    auto* experiment = app.add_subcommand("experiment", "repeated runs with summary statistics and plot data");
    data.add(*experiment);
    ExperimentArgs eargs;
    experiment->add_option("--config", eargs.config, "JSON configuration");
    experiment->add_option("--seed", eargs.seed, "overrides the configured seed");
    experiment->add_option("--runs", eargs.runs, "number of runs")->capture_default_str()->check(CLI::PositiveNumber);
    experiment->add_option("--out", eargs.out, "output directory")->capture_default_str();
    experiment->add_flag("--same-seed", eargs.same_seed, "use the same seed for every run");
    experiment->add_flag("--ablation", eargs.ablation, "run Markovian and non-Markovian and write a comparison table");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every objective");
    std::size_t draws = 20;
    std::uint64_t check_seed = 0;
    double tolerance = 1e-4;
    gradcheck->add_option("--draws", draws, "parameter draws per objective")->capture_default_str();
    gradcheck->add_option("--seed", check_seed)->capture_default_str();
    gradcheck->add_option("--tolerance", tolerance, "maximum relative error")->capture_default_str();

    auto* oracle = app.add_subcommand("oracle", "ELBO against the exact Kalman likelihood");
    OracleOptions oopts;
    double n_se = 3.0;
    std::size_t min_shrunk = 18;
    oracle->add_option("--instances", oopts.instances)->capture_default_str();
    oracle->add_option("--steps", oopts.train_steps, "recognition training steps")->capture_default_str();
    oracle->add_option("--draws", oopts.eval_draws, "Monte Carlo draws per ELBO estimate")->capture_default_str();
    oracle->add_option("--seed", oopts.seed)->capture_default_str();
    oracle->add_option("--se", n_se, "allowed standard errors above the bound")->capture_default_str();
    oracle->add_option("--min-shrunk", min_shrunk, "instances whose gap must shrink")->capture_default_str();

    auto* surrogate = app.add_subcommand("surrogate", "write a synthetic data set in the C-MAPSS layout");
    std::string sur_out;
    std::uint64_t sur_seed = 0;
    int sur_train = 30, sur_test = 20;
    std::string sur_subset = "FD001";
    surrogate->add_option("--out", sur_out, "output directory")->required();
    surrogate->add_option("--seed", sur_seed)->capture_default_str();
    surrogate->add_option("--train-units", sur_train)->capture_default_str()->check(CLI::PositiveNumber);
    surrogate->add_option("--test-units", sur_test)->capture_default_str()->check(CLI::PositiveNumber);
    surrogate->add_option("--subset", sur_subset)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? ok : usage;
    }

    try {
        if (*ingest) return cmd_ingest(data, ingest_out, command);
        if (*train) return cmd_train(data, targs, command);
        if (*eval) return cmd_eval(data, ckpt, mode, use_best);
        if (*predict) return cmd_predict(data, ckpt, mode, use_best, pred_out);
        if (*experiment) return cmd_experiment(data, eargs, command);
        if (*gradcheck) return cmd_gradcheck(draws, check_seed, tolerance);
        if (*oracle) return cmd_oracle(oopts, n_se, min_shrunk);
        if (*surrogate) {
            fs::create_directories(sur_out);
            write_surrogate_cmapss(sur_out, sur_seed, sur_train, sur_test, sur_subset);
            std::printf("wrote %s files to %s\n", sur_subset.c_str(), sur_out.c_str());
            return ok;
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "configuration error: %s\n", e.what());
        return usage;
    } catch (const TrainingAborted& e) {
        std::fprintf(stderr, "training aborted: %s\n", e.what());
        return aborted;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return data_error;
    }
    return usage;
}
