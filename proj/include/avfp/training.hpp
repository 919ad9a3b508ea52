#pragma once

// Alternating minimax training. Each step takes one batch of full
// trajectories and runs
//   1. k discriminator updates of ψ (prior rollouts real, recognition fake),
//   2. one joint update of θ, φ on the negated combined objective,
//   3. one update of ρ on squared error to the capped RUL target (optional).
// All randomness is a pure function of (seed, step), so a run resumed from a
// checkpoint is bit-identical to an uninterrupted one.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "avfp/cmapss.hpp"
#include "avfp/evaluation.hpp"
#include "avfp/model.hpp"
#include "avfp/optimizer.hpp"

namespace avfp {

struct TrainConfig {
    std::uint64_t seed = 0;
    std::size_t epochs = 60;
    std::size_t trajectories_per_batch = 8;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double lambda_adv = 0.1;
    std::size_t disc_steps_per_gen_step = 1;
    double gradient_clip_norm = 5.0;
    bool markovian = false;
    bool rul_supervision = true;
    std::size_t eval_every = 200;
    std::size_t max_steps = 0;  // 0: epochs decide
    double validation_fraction = 0.1;
    double rul_cap = kDefaultRulCap;

    void validate() const;
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Normalized splits ready for training.
struct PreparedData {
    NormalizationStats stats;
    Dataset train;                        // units used for gradient steps
    Dataset validation;                   // held-out units, truncated
    std::map<int, double> validation_truth;
    RulTargets train_targets;
    std::optional<Dataset> test;
    std::map<int, double> test_truth;

    std::size_t n_x() const { return stats.kept_sensors.size(); }
    std::size_t n_u() const { return stats.kept_settings.size(); }
};

/// Normalizes with training statistics, holds out the last
/// `validation_fraction` of training units (by id) and truncates each of
/// them at a fixed pseudo-random cycle.
PreparedData prepare_data(const Dataset& raw_train, const Dataset* raw_test = nullptr,
                          const std::map<int, double>* test_rul = nullptr, double validation_fraction = 0.1,
                          double rul_cap = kDefaultRulCap);

struct MetricPoint {
    std::size_t step = 0;  // completed steps
    double validation_rmse = 0.0;
    std::optional<double> test_rmse;
    friend bool operator==(const MetricPoint&, const MetricPoint&) = default;
};

struct StepRecord {
    bool skipped = false;        // non-finite batch; the values below are 0
    double elbo_per_step = 0.0;  // batch ELBO / total time steps
    double disc_loss = 0.0;
    double rul_loss = 0.0;
    friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

struct TrainResult {
    ModelParams final_params;
    ModelParams best_params;
    std::size_t best_step = 0;
    double best_validation_rmse = 0.0;
    std::vector<MetricPoint> trace;
    std::vector<StepRecord> steps;
    std::size_t skipped_batches = 0;
};

struct Checkpoint;

class Trainer {
public:
    Trainer(const PreparedData& data, NetworkSpec spec, TrainConfig config);
    /// Continues a run; `data` must have been prepared with the checkpoint's
    /// normalization statistics.
    static Trainer resume(const PreparedData& data, const Checkpoint& checkpoint);

    std::size_t step() const noexcept { return step_; }
    std::size_t total_steps() const noexcept { return total_steps_; }
    std::size_t batches_per_epoch() const noexcept { return batches_per_epoch_; }
    bool done() const noexcept { return step_ >= total_steps_; }

    /// Runs until `until` completed steps (clamped to total_steps()).
    void run(std::size_t until);
    void run_to_end() { run(total_steps_); }
    void step_once();

    /// Unit ids of the batch at a given step, sorted.
    std::vector<int> batch_units(std::size_t step) const;

    const ModelParams& params() const noexcept { return params_; }
    const NetworkSpec& spec() const noexcept { return spec_; }
    const TrainConfig& config() const noexcept { return config_; }
    const OptimizerState& generative_optimizer() const noexcept { return gen_opt_; }
    const OptimizerState& discriminator_optimizer() const noexcept { return disc_opt_; }
    const OptimizerState& rul_optimizer() const noexcept { return rul_opt_; }

    Checkpoint checkpoint() const;
    TrainResult result() const;

    /// Evaluates validation (and test) RMSE with the current parameters.
    MetricPoint evaluate() const;

    /// Individual phases, exposed for partition-isolation tests.
    double discriminator_phase(const std::vector<int>& units, std::uint64_t stream);
    double generative_phase(const std::vector<int>& units, std::uint64_t stream, StepRecord& record);

private:
    void maybe_evaluate();

    const PreparedData& data_;
    NetworkSpec spec_;
    TrainConfig config_;
    ModelParams params_;
    ModelParams best_params_;
    OptimizerState gen_opt_, disc_opt_, rul_opt_;
    std::map<int, Sequence> sequences_;
    std::vector<int> unit_ids_;
    std::size_t step_ = 0;
    std::size_t total_steps_ = 0;
    std::size_t batches_per_epoch_ = 0;
    std::size_t consecutive_failures_ = 0;
    std::size_t skipped_batches_ = 0;
    std::size_t best_step_ = 0;
    double best_validation_rmse_ = 0.0;
    bool has_best_ = false;
    std::vector<MetricPoint> trace_;
    std::vector<StepRecord> steps_;
};

TrainResult train(const PreparedData& data, const NetworkSpec& spec, const TrainConfig& config);

/// Network spec for the prepared data: n_x, n_u from the retained channels,
/// everything else from `base`.
NetworkSpec network_for(const PreparedData& data, NetworkSpec base = {});

inline constexpr std::size_t kMaxConsecutiveFailures = 10;

}  // namespace avfp
