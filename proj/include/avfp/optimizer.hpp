#pragma once

#include <cstdint>
#include <map>
#include <span>

#include "avfp/autodiff.hpp"
#include "avfp/model.hpp"

namespace avfp {

struct AdamMoments {
    Tensor m;
    Tensor v;
    friend bool operator==(const AdamMoments&, const AdamMoments&) = default;
};

struct OptimizerState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t t = 0;
    std::uint64_t skipped = 0;  // steps refused because of non-finite gradients
    std::map<ParamId, AdamMoments> moments;

    friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

/// Bias-corrected adaptive-moment update of every parameter present in
/// `grads`; parameters absent from `grads` are untouched. Returns false and
/// counts the step as skipped (t unchanged) if any gradient is non-finite.
bool adam_step(ModelParams& params, const Gradients& grads, OptimizerState& state);

/// Keeps exactly the entries of `ids`, inserting zero gradients for
/// parameters the loss did not reach.
Gradients restrict_to(const Gradients& grads, std::span<const ParamId> ids, const ModelParams& params);

double global_norm(const Gradients& grads);
/// Rescales all gradients by max_norm / norm when norm > max_norm. Returns
/// the norm before clipping.
double clip_global_norm(Gradients& grads, double max_norm);

}  // namespace avfp
