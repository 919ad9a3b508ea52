#pragma once

// Linear-Gaussian state-space model and its exact Kalman-filter likelihood,
// used as an oracle for the sequence ELBO.
//
//   z_1 ~ N(mu0, Sigma0)
//   z_t = A z_{t-1} + w_t,  w_t ~ N(0, diag(Q))     t >= 2
//   x_t = C z_t + v_t,      v_t ~ N(0, diag(R))

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "avfp/model.hpp"
#include "avfp/objectives.hpp"

namespace avfp {

struct LinearGaussianSpec {
    Eigen::MatrixXd A;  // n_z x n_z
    Eigen::MatrixXd C;  // n_x x n_z
    Eigen::VectorXd Q;  // process noise variances, n_z
    Eigen::VectorXd R;  // observation noise variances, n_x
    Eigen::VectorXd mu0;
    Eigen::MatrixXd Sigma0;

    std::size_t n_z() const { return static_cast<std::size_t>(A.rows()); }
    std::size_t n_x() const { return static_cast<std::size_t>(C.rows()); }
    /// Throws ConfigError on inconsistent dimensions or non-positive variances.
    void validate() const;
};

/// Observations x_1..x_T (and the hidden states, for tests).
struct LinearGaussianTrajectory {
    std::vector<Eigen::VectorXd> x;
    std::vector<Eigen::VectorXd> z;
};

LinearGaussianTrajectory gen_linear_gaussian(const LinearGaussianSpec& spec, std::size_t steps, std::uint64_t seed);

/// Exact log p(x_{1:T}) by the predict / innovate / update recursion. Throws
/// DomainError when an innovation covariance is not positive definite.
double kalman_loglik(const LinearGaussianSpec& spec, const std::vector<Eigen::VectorXd>& x);

/// Random stable instance: spectral norm of A below 0.95, mu0 = 0,
/// Sigma0 = I (the model's fixed first-step prior).
LinearGaussianSpec random_linear_gaussian(std::size_t n_z, std::size_t n_x, std::uint64_t seed);

/// Model input view of an LG trajectory; u_t is a constant zero channel.
Sequence to_sequence(const LinearGaussianTrajectory& traj);

/// Network spec with affine heads whose generative part can represent the
/// LG model exactly in Markovian mode.
NetworkSpec linear_gaussian_network(const LinearGaussianSpec& spec, std::size_t n_h = 8,
                                    std::size_t recognizer_hidden = 16);

/// Writes A, Q into the prior head and C, R into the emitter head, leaving
/// the recognition side untouched. Requires mu0 = 0 and Sigma0 = I.
void set_generative_to_linear_gaussian(ModelParams& params, const NetworkSpec& net, const LinearGaussianSpec& spec);

}  // namespace avfp
