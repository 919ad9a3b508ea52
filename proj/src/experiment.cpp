#include "avfp/experiment.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "avfp/checkpoint.hpp"
#include "avfp/cmapss.hpp"
#include "avfp/error.hpp"
#include "avfp/evaluation.hpp"

#ifndef AVFP_VERSION
#define AVFP_VERSION "dev"
#endif

namespace avfp {

using nlohmann::json;

namespace {

std::string num(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

std::ofstream open_out(const std::filesystem::path& p) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write " + p.string());
    return f;
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
    if (v.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
    double s = 0.0;
    for (double x : v) s += x;
    const double mean = s / static_cast<double>(v.size());
    double sq = 0.0;
    for (double x : v) sq += (x - mean) * (x - mean);
    return {mean, std::sqrt(sq / static_cast<double>(v.size()))};
}

std::string csv_quoted(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c == '\n' ? ' ' : c;
    }
    return out + '"';
}

json nullable(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

const char* code_version() noexcept { return AVFP_VERSION; }

RunSummary run_experiment(const PreparedData& data, const NetworkSpec& spec, const TrainConfig& config,
                          std::size_t n_runs, bool same_seed, const RunCallback& on_run) {
    if (n_runs == 0) throw ConfigError("n_runs must be at least 1");
    if (!data.test) throw DataError("experiment needs test trajectories and ground-truth RUL");
    RunSummary summary;
    summary.readout = config.rul_supervision ? "supervised" : "health_index";
    for (std::size_t r = 0; r < n_runs; ++r) {
        RunOutcome out;
        out.run = r;
        out.seed = same_seed ? config.seed : config.seed + r;
        TrainConfig c = config;
        c.seed = out.seed;
        const auto start = std::chrono::steady_clock::now();
        Trainer trainer(data, spec, c);
        try {
            trainer.run_to_end();
            out.completed = true;
        } catch (const TrainingAborted& e) {
            out.abort_reason = e.what();
        }
        const TrainResult res = trainer.result();
        out.curve = res.trace;
        out.skipped_batches = res.skipped_batches;
        if (out.completed) {
            out.best_step = res.best_step;
            out.best_validation_rmse = res.best_validation_rmse;
            out.test_rmse_supervised = rmse(predict_rul(res.best_params, spec, *data.test, data.test_truth,
                                                        PredictionMode::supervised, nullptr));
            const HealthIndexModel hi = HealthIndexModel::fit(res.best_params, spec, data.train, data.stats.rul_cap);
            out.test_rmse_health_index = rmse(
                predict_rul(res.best_params, spec, *data.test, data.test_truth, PredictionMode::health_index, &hi));
            out.test_rmse = config.rul_supervision ? out.test_rmse_supervised : out.test_rmse_health_index;
        }
        out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (on_run) on_run(out);
        summary.runs.push_back(std::move(out));
    }
    summarize(summary);
    return summary;
}

void summarize(RunSummary& s) {
    std::vector<double> headline, sup, hi;
    s.completed = s.aborted = 0;
    s.argmin_run = s.argmin_step = 0;
    s.min = std::numeric_limits<double>::quiet_NaN();
    for (const auto& r : s.runs) {
        if (!r.completed) {
            ++s.aborted;
            continue;
        }
        ++s.completed;
        headline.push_back(r.test_rmse);
        sup.push_back(r.test_rmse_supervised);
        hi.push_back(r.test_rmse_health_index);
        if (s.completed == 1 || r.test_rmse < s.min) {
            s.min = r.test_rmse;
            s.argmin_run = r.run;
            s.argmin_step = r.best_step;
        }
    }
    std::tie(s.mean, s.std) = mean_std(headline);
    std::tie(s.mean_supervised, s.std_supervised) = mean_std(sup);
    std::tie(s.mean_health_index, s.std_health_index) = mean_std(hi);
}

void emit_plot_data(const RunSummary& summary, const std::filesystem::path& dir) {
    if (summary.runs.empty()) throw DataError("emit_plot_data: empty summary");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());

    // Global minimum over all curve points (first occurrence wins).
    std::size_t min_run = 0, min_index = 0;
    double min_value = std::numeric_limits<double>::infinity();
    bool any = false;
    for (const auto& r : summary.runs) {
        for (std::size_t i = 0; i < r.curve.size(); ++i) {
            const auto& p = r.curve[i];
            if (p.test_rmse && *p.test_rmse < min_value) {
                min_value = *p.test_rmse;
                min_run = r.run;
                min_index = i;
                any = true;
            }
        }
    }

    {
        auto f = open_out(dir / "curves.csv");
        f << "run,step,rmse,is_min\n";
        for (const auto& r : summary.runs) {
            for (std::size_t i = 0; i < r.curve.size(); ++i) {
                const auto& p = r.curve[i];
                const bool is_min = any && r.run == min_run && i == min_index;
                f << r.run << ',' << p.step << ',' << (p.test_rmse ? num(*p.test_rmse) : "") << ','
                  << (is_min ? 1 : 0) << '\n';
            }
        }
    }
    {
        auto f = open_out(dir / "runs.csv");
        f << "run,seed,completed,best_step,best_validation_rmse,test_rmse,test_rmse_supervised,"
             "test_rmse_health_index,skipped_batches,abort_reason\n";
        for (const auto& r : summary.runs) {
            f << r.run << ',' << r.seed << ',' << (r.completed ? 1 : 0) << ',' << r.best_step << ','
              << num(r.best_validation_rmse) << ',' << num(r.test_rmse) << ',' << num(r.test_rmse_supervised) << ','
              << num(r.test_rmse_health_index) << ',' << r.skipped_batches << ',' << csv_quoted(r.abort_reason)
              << '\n';
        }
    }
    {
        json j;
        j["readout"] = summary.readout;
        j["runs"] = summary.runs.size();
        j["completed"] = summary.completed;
        j["aborted"] = summary.aborted;
        j["mean"] = nullable(summary.mean);
        j["std"] = nullable(summary.std);
        j["min"] = nullable(summary.min);
        j["argmin_run"] = summary.argmin_run;
        j["argmin_step"] = summary.argmin_step;
        j["supervised"] = {{"mean", nullable(summary.mean_supervised)}, {"std", nullable(summary.std_supervised)}};
        j["health_index"] = {{"mean", nullable(summary.mean_health_index)},
                             {"std", nullable(summary.std_health_index)}};
        if (any) {
            j["curve_min"] = {{"run", min_run},
                              {"step", summary.runs.at(min_run).curve[min_index].step},
                              {"rmse", min_value}};
        }
        auto f = open_out(dir / "summary.json");
        f << j.dump(2) << '\n';
    }
}

std::string ablation_table(const std::vector<std::pair<std::string, RunSummary>>& rows) {
    std::ostringstream os;
    os << "| configuration | runs | completed | mean RMSE | std | min | supervised mean | health-index mean |\n";
    os << "|---|---|---|---|---|---|---|---|\n";
    auto fmt = [](double v) {
        if (!std::isfinite(v)) return std::string("n/a");
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", v);
        return std::string(buf);
    };
    for (const auto& [label, s] : rows) {
        os << "| " << label << " | " << s.runs.size() << " | " << s.completed << " | " << fmt(s.mean) << " | "
           << fmt(s.std) << " | " << fmt(s.min) << " | " << fmt(s.mean_supervised) << " | "
           << fmt(s.mean_health_index) << " |\n";
    }
    return os.str();
}

// --- configuration -------------------------------------------------------------

namespace {

std::size_t get_count(const json& v, const std::string& key) {
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) throw ConfigError("'" + key + "' must be a non-negative integer");
    return v.get<std::size_t>();
}

double get_real(const json& v, const std::string& key) {
    if (!v.is_number()) throw ConfigError("'" + key + "' must be a number");
    return v.get<double>();
}

bool get_bool(const json& v, const std::string& key) {
    if (!v.is_boolean()) throw ConfigError("'" + key + "' must be true or false");
    return v.get<bool>();
}

void read_network(const json& j, NetworkSpec& n) {
    if (!j.is_object()) throw ConfigError("'network' must be an object");
    for (const auto& [key, v] : j.items()) {
        const std::string k = "network." + key;
        if (key == "n_z") n.n_z = get_count(v, k);
        else if (key == "n_h") n.n_h = get_count(v, k);
        else if (key == "recognizer_hidden") n.recognizer_hidden = get_count(v, k);
        else if (key == "prior_hidden") n.prior_hidden = get_count(v, k);
        else if (key == "emitter_hidden") n.emitter_hidden = get_count(v, k);
        else if (key == "discriminator_hidden") n.discriminator_hidden = get_count(v, k);
        else if (key == "rul_hidden") n.rul_hidden = get_count(v, k);
        else if (key == "rul_scale") n.rul_scale = get_real(v, k);
        else throw ConfigError("unknown config key '" + k + "'");
    }
}

}  // namespace

ExperimentConfig config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    ExperimentConfig c;
    TrainConfig& t = c.train;
    for (const auto& [key, v] : j.items()) {
        if (key == "seed") {
            if (!v.is_number_unsigned()) throw ConfigError("'seed' must be a non-negative integer");
            t.seed = v.get<std::uint64_t>();
        } else if (key == "epochs") t.epochs = get_count(v, key);
        else if (key == "trajectories_per_batch") t.trajectories_per_batch = get_count(v, key);
        else if (key == "lr") t.lr = get_real(v, key);
        else if (key == "beta1") t.beta1 = get_real(v, key);
        else if (key == "beta2") t.beta2 = get_real(v, key);
        else if (key == "eps") t.eps = get_real(v, key);
        else if (key == "lambda_adv") t.lambda_adv = get_real(v, key);
        else if (key == "disc_steps_per_gen_step") t.disc_steps_per_gen_step = get_count(v, key);
        else if (key == "gradient_clip_norm") t.gradient_clip_norm = get_real(v, key);
        else if (key == "markovian") t.markovian = get_bool(v, key);
        else if (key == "rul_supervision") t.rul_supervision = get_bool(v, key);
        else if (key == "eval_every") t.eval_every = get_count(v, key);
        else if (key == "max_steps") t.max_steps = get_count(v, key);
        else if (key == "validation_fraction") t.validation_fraction = get_real(v, key);
        else if (key == "rul_cap") t.rul_cap = get_real(v, key);
        else if (key == "network") read_network(v, c.network);
        else throw ConfigError("unknown config key '" + key + "'");
    }
    t.validate();
    return c;
}

std::string config_to_json(const ExperimentConfig& c) {
    const TrainConfig& t = c.train;
    const NetworkSpec& n = c.network;
    json j = {{"seed", t.seed},
              {"epochs", t.epochs},
              {"trajectories_per_batch", t.trajectories_per_batch},
              {"lr", t.lr},
              {"beta1", t.beta1},
              {"beta2", t.beta2},
              {"eps", t.eps},
              {"lambda_adv", t.lambda_adv},
              {"disc_steps_per_gen_step", t.disc_steps_per_gen_step},
              {"gradient_clip_norm", t.gradient_clip_norm},
              {"markovian", t.markovian},
              {"rul_supervision", t.rul_supervision},
              {"eval_every", t.eval_every},
              {"max_steps", t.max_steps},
              {"validation_fraction", t.validation_fraction},
              {"rul_cap", t.rul_cap},
              {"network",
               {{"n_z", n.n_z},
                {"n_h", n.n_h},
                {"recognizer_hidden", n.recognizer_hidden},
                {"prior_hidden", n.prior_hidden},
                {"emitter_hidden", n.emitter_hidden},
                {"discriminator_hidden", n.discriminator_hidden},
                {"rul_hidden", n.rul_hidden},
                {"rul_scale", n.rul_scale}}}};
    return j.dump(2);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return config_from_json(ss.str());
}

std::string run_manifest(const ManifestInfo& info) {
    const std::string cfg = config_to_json(info.config);
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a64(cfg.data(), cfg.size())));
    json files = json::array();
    for (const auto& p : info.data_files) {
        char sum[17];
        std::snprintf(sum, sizeof sum, "%016llx", static_cast<unsigned long long>(file_checksum(p)));
        files.push_back({{"path", p.string()}, {"fnv1a64", sum}});
    }
    json j = {{"code_version", code_version()},
              {"command", info.command},
              {"seed", info.config.train.seed},
              {"config_hash", hash},
              {"config", json::parse(cfg)},
              {"data_files", files},
              {"wall_seconds", info.wall_seconds}};
    return j.dump(2);
}

}  // namespace avfp
