#pragma once

// Repeated-runs harness, plot data, run manifests and JSON configuration.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "avfp/model.hpp"
#include "avfp/training.hpp"

namespace avfp {

struct RunOutcome {
    std::size_t run = 0;
    std::uint64_t seed = 0;
    bool completed = false;
    std::string abort_reason;
    std::size_t best_step = 0;
    double best_validation_rmse = 0.0;
    double test_rmse = 0.0;  // readout the run was trained for, at best_step
    double test_rmse_supervised = 0.0;
    double test_rmse_health_index = 0.0;
    std::vector<MetricPoint> curve;
    std::size_t skipped_batches = 0;
    double wall_seconds = 0.0;
};

struct RunSummary {
    std::string readout;  // "supervised" or "health_index"
    std::vector<RunOutcome> runs;
    std::size_t completed = 0;
    std::size_t aborted = 0;
    // Over completed runs, in run order.
    double mean = 0.0;
    double std = 0.0;  // population
    double min = 0.0;
    std::size_t argmin_run = 0;
    std::size_t argmin_step = 0;
    double mean_supervised = 0.0, std_supervised = 0.0;
    double mean_health_index = 0.0, std_health_index = 0.0;
};

using RunCallback = std::function<void(const RunOutcome&)>;

/// Trains n_runs models with seeds config.seed + run (or config.seed for every
/// run when same_seed is set). Each run is scored on test data at its best
/// validation step. Runs that abort are recorded and left out of the
/// aggregates.
RunSummary run_experiment(const PreparedData& data, const NetworkSpec& spec, const TrainConfig& config,
                          std::size_t n_runs, bool same_seed = false, const RunCallback& on_run = {});

/// Fills the aggregate fields from runs (used by run_experiment and tests).
void summarize(RunSummary& summary);

/// Writes curves.csv (run,step,rmse,is_min), runs.csv and summary.json.
void emit_plot_data(const RunSummary& summary, const std::filesystem::path& dir);

/// Markdown comparison table, one row per labelled summary.
std::string ablation_table(const std::vector<std::pair<std::string, RunSummary>>& rows);

// --- configuration -----------------------------------------------------------

struct ExperimentConfig {
    TrainConfig train;
    NetworkSpec network;  // n_x and n_u are taken from the data
};

/// Keys are the snake_case field names of TrainConfig at top level and of
/// NetworkSpec under "network". Unknown keys and wrong types raise ConfigError.
ExperimentConfig config_from_json(const std::string& text);
std::string config_to_json(const ExperimentConfig& config);
ExperimentConfig load_config(const std::filesystem::path& path);

struct ManifestInfo {
    ExperimentConfig config;
    std::vector<std::filesystem::path> data_files;
    double wall_seconds = 0.0;
    std::string command;
};

std::string run_manifest(const ManifestInfo& info);
const char* code_version() noexcept;

}  // namespace avfp
