#include "avfp/optimizer.hpp"

#include <cmath>

#include "avfp/error.hpp"

namespace avfp {

bool adam_step(ModelParams& params, const Gradients& grads, OptimizerState& state) {
    for (const auto& [id, g] : grads) {
        if (id.value >= params.size()) throw ShapeError("adam_step: unknown parameter id");
        if (g.shape() != params.value(id).shape()) {
            throw ShapeError("adam_step: gradient shape " + shape_string(g.shape()) + " for parameter '" +
                             params.entry(id).name + "' of shape " + shape_string(params.value(id).shape()));
        }
    }
    for (const auto& [id, g] : grads) {
        if (!g.all_finite()) {
            ++state.skipped;
            return false;
        }
    }

    ++state.t;
    const double t = static_cast<double>(state.t);
    const double correction1 = 1.0 - std::pow(state.beta1, t);
    const double correction2 = 1.0 - std::pow(state.beta2, t);
    for (const auto& [id, g] : grads) {
        auto it = state.moments.find(id);
        if (it == state.moments.end()) {
            it = state.moments.emplace(id, AdamMoments{Tensor::zeros(g.shape()), Tensor::zeros(g.shape())}).first;
        }
        auto m = it->second.m.mutable_data();
        auto v = it->second.v.mutable_data();
        auto p = params.value(id).mutable_data();
        const auto gd = g.data();
        for (std::size_t i = 0; i < gd.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gd[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gd[i] * gd[i];
            const double m_hat = m[i] / correction1;
            const double v_hat = v[i] / correction2;
            p[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
        }
    }
    return true;
}

Gradients restrict_to(const Gradients& grads, std::span<const ParamId> ids, const ModelParams& params) {
    Gradients out;
    for (ParamId id : ids) {
        const auto it = grads.find(id);
        out.emplace(id, it != grads.end() ? it->second : Tensor::zeros(params.value(id).shape()));
    }
    return out;
}

double global_norm(const Gradients& grads) {
    double sq = 0.0;
    for (const auto& [id, g] : grads) {
        for (double v : g.data()) sq += v * v;
    }
    return std::sqrt(sq);
}

double clip_global_norm(Gradients& grads, double max_norm) {
    if (!(max_norm > 0.0)) throw DomainError("clip_global_norm: bound must be positive");
    const double norm = global_norm(grads);
    if (norm > max_norm && std::isfinite(norm)) {
        const double factor = max_norm / norm;
        for (auto& [id, g] : grads) {
            for (double& v : g.mutable_data()) v *= factor;
        }
        // Rounding can leave the norm a few ulps above the bound.
        while (global_norm(grads) > max_norm) {
            for (auto& [id, g] : grads) {
                for (double& v : g.mutable_data()) v *= 1.0 - 1e-15;
            }
        }
    }
    return norm;
}

}  // namespace avfp
