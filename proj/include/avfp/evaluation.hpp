#pragma once

#include <map>
#include <string>
#include <vector>

#include "avfp/cmapss.hpp"
#include "avfp/model.hpp"

namespace avfp {

enum class PredictionMode { supervised, health_index };

PredictionMode parse_prediction_mode(const std::string& text);
const char* mode_name(PredictionMode mode) noexcept;

struct Prediction {
    double predicted = 0.0;
    double truth = 0.0;
    friend bool operator==(const Prediction&, const Prediction&) = default;
};

/// One entry per unit, evaluated at the unit's last observed cycle.
using PredictionSet = std::map<int, Prediction>;

/// sqrt(mean over units of (predicted - truth)^2). Throws on an empty set.
double rmse(const PredictionSet& predictions);

/// Latent means and the RUL-head output at every cycle of one unit, from the
/// deterministic (mean-fed) filtering pass.
struct UnitTrace {
    std::vector<std::vector<double>> latent_means;
    std::vector<double> rul;
};

UnitTrace trace_unit(const ModelParams& params, const NetworkSpec& spec, const std::vector<TrajectoryRecord>& unit);

/// Label-free RUL readout: a scalar health index (projection of latent means
/// on their first principal direction over the training units) and
/// nearest-trajectory matching against the training units' index curves.
class HealthIndexModel {
public:
    static HealthIndexModel fit(const ModelParams& params, const NetworkSpec& spec, const Dataset& train,
                                double cap = kDefaultRulCap);
    /// Builds a model from precomputed index curves (one per run-to-failure
    /// unit) with an identity projection; used for testing the matcher.
    static HealthIndexModel from_curves(std::map<int, std::vector<double>> curves, double cap);

    std::vector<double> index(const UnitTrace& trace) const;
    /// RUL read from the best-matching training curve position, clamped to
    /// [0, cap].
    double match(const std::vector<double>& index_tail) const;

    const std::map<int, std::vector<double>>& curves() const noexcept { return curves_; }
    const std::vector<double>& direction() const noexcept { return direction_; }

private:
    std::vector<double> center_;
    std::vector<double> direction_;
    std::map<int, std::vector<double>> curves_;
    double cap_ = kDefaultRulCap;
};

/// Per-unit predictions at the last observed cycle. `truth` must hold one
/// entry per unit of `ds`. Health-index mode needs `hi`.
PredictionSet predict_rul(const ModelParams& params, const NetworkSpec& spec, const Dataset& ds,
                          const std::map<int, double>& truth, PredictionMode mode,
                          const HealthIndexModel* hi = nullptr);

}  // namespace avfp
