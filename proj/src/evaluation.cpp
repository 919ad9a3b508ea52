#include "avfp/evaluation.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "avfp/error.hpp"
#include "avfp/objectives.hpp"

namespace avfp {

PredictionMode parse_prediction_mode(const std::string& text) {
    if (text == "supervised") return PredictionMode::supervised;
    if (text == "health_index") return PredictionMode::health_index;
    throw ConfigError("unknown prediction mode '" + text + "' (expected supervised or health_index)");
}

const char* mode_name(PredictionMode mode) noexcept {
    return mode == PredictionMode::supervised ? "supervised" : "health_index";
}

double rmse(const PredictionSet& predictions) {
    if (predictions.empty()) throw DataError("rmse: empty prediction set");
    double sq = 0.0;
    for (const auto& [id, p] : predictions) sq += (p.predicted - p.truth) * (p.predicted - p.truth);
    return std::sqrt(sq / static_cast<double>(predictions.size()));
}

UnitTrace trace_unit(const ModelParams& params, const NetworkSpec& spec, const std::vector<TrajectoryRecord>& unit) {
    if (unit.empty()) throw DataError("empty unit");
    if (unit.front().sensors.size() != spec.n_x || unit.front().op_settings.size() != spec.n_u) {
        throw DataError("unit has " + std::to_string(unit.front().sensors.size()) + " sensors and " +
                        std::to_string(unit.front().op_settings.size()) + " settings, model expects " +
                        std::to_string(spec.n_x) + " and " + std::to_string(spec.n_u));
    }
    Tape tape;
    ModelGraph g(tape, params, spec);
    const Filtered f = filter_means(g, to_sequence(unit));
    UnitTrace out;
    out.latent_means.reserve(unit.size());
    out.rul.reserve(unit.size());
    for (std::size_t t = 0; t < unit.size(); ++t) {
        out.latent_means.push_back(f.latent_means[t].value().values());
        out.rul.push_back(g.rul_head(f.histories[t], f.latent_means[t]).item());
    }
    return out;
}

// ---------------------------------------------------------------------------

HealthIndexModel HealthIndexModel::fit(const ModelParams& params, const NetworkSpec& spec, const Dataset& train,
                                       double cap) {
    if (train.split != Split::train) throw DataError("health index must be fitted on run-to-failure units");
    std::map<int, UnitTrace> traces;
    std::size_t rows = 0;
    for (const auto& [id, unit] : train.units) {
        traces.emplace(id, trace_unit(params, spec, unit));
        rows += unit.size();
    }
    const auto n = static_cast<Eigen::Index>(spec.n_z);
    Eigen::MatrixXd M(static_cast<Eigen::Index>(rows), n);
    Eigen::Index r = 0;
    for (const auto& [id, tr] : traces) {
        for (const auto& m : tr.latent_means) M.row(r++) = Eigen::Map<const Eigen::RowVectorXd>(m.data(), n);
    }
    const Eigen::RowVectorXd center = M.colwise().mean();
    const Eigen::MatrixXd centered = M.rowwise() - center;
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(rows);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    Eigen::VectorXd dir = eig.eigenvectors().col(n - 1);
    // Fix the sign so the largest-magnitude component is positive.
    Eigen::Index arg = 0;
    dir.cwiseAbs().maxCoeff(&arg);
    if (dir[arg] < 0.0) dir = -dir;

    HealthIndexModel hi;
    hi.cap_ = cap;
    hi.center_.assign(center.data(), center.data() + n);
    hi.direction_.assign(dir.data(), dir.data() + n);
    for (const auto& [id, tr] : traces) hi.curves_.emplace(id, hi.index(tr));
    return hi;
}

HealthIndexModel HealthIndexModel::from_curves(std::map<int, std::vector<double>> curves, double cap) {
    HealthIndexModel hi;
    hi.cap_ = cap;
    hi.center_ = {0.0};
    hi.direction_ = {1.0};
    hi.curves_ = std::move(curves);
    return hi;
}

std::vector<double> HealthIndexModel::index(const UnitTrace& trace) const {
    std::vector<double> out;
    out.reserve(trace.latent_means.size());
    for (const auto& m : trace.latent_means) {
        if (m.size() != direction_.size()) throw ShapeError("health index: latent dimension mismatch");
        double s = 0.0;
        for (std::size_t i = 0; i < m.size(); ++i) s += (m[i] - center_[i]) * direction_[i];
        out.push_back(s);
    }
    return out;
}

double HealthIndexModel::match(const std::vector<double>& tail) const {
    if (tail.empty()) throw DataError("health index: empty test trajectory");
    if (curves_.empty()) throw DataError("health index: no reference curves");
    const std::size_t L = tail.size();
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_window = 0;
    double best_rul = 0.0;
    for (const auto& [id, curve] : curves_) {
        const std::size_t T = curve.size();
        for (std::size_t cut = 1; cut <= T; ++cut) {
            const std::size_t w = std::min(L, cut);
            double d = 0.0;
            for (std::size_t i = 0; i < w; ++i) {
                const double diff = tail[L - w + i] - curve[cut - w + i];
                d += diff * diff;
            }
            d /= static_cast<double>(w);
            if (d < best || (d == best && w > best_window)) {
                best = d;
                best_window = w;
                best_rul = static_cast<double>(T - cut);
            }
        }
    }
    return std::clamp(best_rul, 0.0, cap_);
}

PredictionSet predict_rul(const ModelParams& params, const NetworkSpec& spec, const Dataset& ds,
                          const std::map<int, double>& truth, PredictionMode mode, const HealthIndexModel* hi) {
    if (mode == PredictionMode::health_index && !hi) throw ConfigError("health-index prediction needs a fitted model");
    check_test_rul(truth, ds);
    PredictionSet out;
    for (const auto& [id, unit] : ds.units) {
        if (unit.empty()) throw DataError("unit " + std::to_string(id) + " is empty");
        const UnitTrace tr = trace_unit(params, spec, unit);
        const double predicted = mode == PredictionMode::supervised ? tr.rul.back() : hi->match(hi->index(tr));
        out.emplace(id, Prediction{predicted, truth.at(id)});
    }
    return out;
}

}  // namespace avfp
