#include "avfp/linear_gaussian.hpp"

#include <cmath>
#include <numbers>

#include "avfp/error.hpp"
#include "avfp/rng.hpp"

namespace avfp {

void LinearGaussianSpec::validate() const {
    const auto nz = A.rows();
    const auto nx = C.rows();
    if (nz == 0 || nx == 0 || A.cols() != nz || C.cols() != nz || Q.size() != nz || R.size() != nx ||
        mu0.size() != nz || Sigma0.rows() != nz || Sigma0.cols() != nz) {
        throw ConfigError("linear-Gaussian spec: inconsistent dimensions");
    }
    if ((Q.array() <= 0.0).any() || (R.array() <= 0.0).any()) {
        throw ConfigError("linear-Gaussian spec: noise variances must be positive");
    }
}

namespace {

Eigen::VectorXd standard_normal(CounterRng& rng, Eigen::Index n) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.normal();
    return v;
}

}  // namespace

LinearGaussianTrajectory gen_linear_gaussian(const LinearGaussianSpec& spec, std::size_t steps, std::uint64_t seed) {
    spec.validate();
    if (steps == 0) throw DomainError("gen_linear_gaussian: need at least one step");
    CounterRng rng(seed, 0x16);
    const Eigen::LLT<Eigen::MatrixXd> chol(spec.Sigma0);
    if (chol.info() != Eigen::Success) throw ConfigError("linear-Gaussian spec: Sigma0 is not positive definite");
    const Eigen::MatrixXd L = chol.matrixL();
    const Eigen::VectorXd q_std = spec.Q.array().sqrt();
    const Eigen::VectorXd r_std = spec.R.array().sqrt();

    LinearGaussianTrajectory out;
    Eigen::VectorXd z = spec.mu0 + L * standard_normal(rng, spec.A.rows());
    for (std::size_t t = 0; t < steps; ++t) {
        if (t > 0) z = spec.A * z + q_std.cwiseProduct(standard_normal(rng, spec.A.rows()));
        out.z.push_back(z);
        out.x.push_back(spec.C * z + r_std.cwiseProduct(standard_normal(rng, spec.C.rows())));
    }
    return out;
}

double kalman_loglik(const LinearGaussianSpec& spec, const std::vector<Eigen::VectorXd>& x) {
    spec.validate();
    const auto nx = spec.C.rows();
    const auto nz = spec.A.rows();
    const double log2pi = std::log(2.0 * std::numbers::pi);

    Eigen::VectorXd m = spec.mu0;
    Eigen::MatrixXd P = spec.Sigma0;
    const Eigen::MatrixXd Qm = spec.Q.asDiagonal();
    const Eigen::MatrixXd Rm = spec.R.asDiagonal();
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(nz, nz);
    double total = 0.0;

    for (std::size_t t = 0; t < x.size(); ++t) {
        if (x[t].size() != nx) throw ShapeError("kalman_loglik: observation dimension mismatch");
        if (t > 0) {
            m = spec.A * m;
            P = spec.A * P * spec.A.transpose() + Qm;
        }
        const Eigen::VectorXd innovation = x[t] - spec.C * m;
        const Eigen::MatrixXd S = spec.C * P * spec.C.transpose() + Rm;
        const Eigen::LLT<Eigen::MatrixXd> chol(S);
        if (chol.info() != Eigen::Success) {
            throw DomainError("kalman_loglik: innovation covariance is not positive definite at step " +
                              std::to_string(t + 1));
        }
        const Eigen::MatrixXd L = chol.matrixL();
        const double log_det = 2.0 * L.diagonal().array().log().sum();
        const Eigen::VectorXd solved = chol.solve(innovation);
        total += -0.5 * (static_cast<double>(nx) * log2pi + log_det + innovation.dot(solved));

        const Eigen::MatrixXd K = chol.solve(spec.C * P).transpose();  // P Cᵀ S⁻¹
        m = m + K * innovation;
        const Eigen::MatrixXd IKC = I - K * spec.C;
        P = IKC * P * IKC.transpose() + K * Rm * K.transpose();  // Joseph form
    }
    return total;
}

LinearGaussianSpec random_linear_gaussian(std::size_t n_z, std::size_t n_x, std::uint64_t seed) {
    CounterRng rng(seed, 0x17);
    const auto nz = static_cast<Eigen::Index>(n_z);
    const auto nx = static_cast<Eigen::Index>(n_x);
    LinearGaussianSpec s;
    s.A.resize(nz, nz);
    for (Eigen::Index i = 0; i < nz * nz; ++i) s.A.data()[i] = rng.uniform(-1.0, 1.0);
    const double norm = Eigen::JacobiSVD<Eigen::MatrixXd>(s.A).singularValues()[0];
    s.A *= rng.uniform(0.5, 0.95) / norm;
    s.C.resize(nx, nz);
    for (Eigen::Index i = 0; i < nx * nz; ++i) s.C.data()[i] = rng.uniform(-1.5, 1.5);
    s.Q.resize(nz);
    for (Eigen::Index i = 0; i < nz; ++i) s.Q[i] = rng.uniform(0.05, 0.5);
    s.R.resize(nx);
    for (Eigen::Index i = 0; i < nx; ++i) s.R[i] = rng.uniform(0.05, 0.5);
    s.mu0 = Eigen::VectorXd::Zero(nz);
    s.Sigma0 = Eigen::MatrixXd::Identity(nz, nz);
    return s;
}

Sequence to_sequence(const LinearGaussianTrajectory& traj) {
    Sequence s;
    for (const auto& x : traj.x) {
        s.x.push_back(Tensor::vector(std::vector<double>(x.data(), x.data() + x.size())));
        s.u.push_back(Tensor::zeros({1}));
    }
    return s;
}

NetworkSpec linear_gaussian_network(const LinearGaussianSpec& spec, std::size_t n_h, std::size_t recognizer_hidden) {
    NetworkSpec net;
    net.n_x = spec.n_x();
    net.n_u = 1;
    net.n_z = spec.n_z();
    net.n_h = n_h;
    net.recognizer_hidden = recognizer_hidden;
    net.prior_hidden = 0;
    net.emitter_hidden = 0;
    net.discriminator_hidden = 8;
    net.rul_hidden = 8;
    return net;
}

void set_generative_to_linear_gaussian(ModelParams& params, const NetworkSpec& net, const LinearGaussianSpec& spec) {
    spec.validate();
    if (net.prior_hidden != 0 || net.emitter_hidden != 0) {
        throw ConfigError("linear-Gaussian configuration needs affine prior and emitter heads");
    }
    if (net.n_z != spec.n_z() || net.n_x != spec.n_x()) throw ShapeError("network and LG spec dimensions differ");
    if (!spec.mu0.isZero(0.0) || !spec.Sigma0.isIdentity(0.0)) {
        throw ConfigError("linear-Gaussian configuration requires mu0 = 0 and Sigma0 = I");
    }
    const std::size_t nz = net.n_z, nx = net.n_x;
    Tensor& prior_w = params["prior.mean.w"];  // nz x (nz + nh)
    Tensor& emit_w = params["emitter.mean.w"];  // nx x (nz + nh)
    for (double& v : prior_w.mutable_data()) v = 0.0;
    for (double& v : emit_w.mutable_data()) v = 0.0;
    for (std::size_t i = 0; i < nz; ++i) {
        for (std::size_t j = 0; j < nz; ++j) prior_w.at(i, j) = spec.A(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
    for (std::size_t i = 0; i < nx; ++i) {
        for (std::size_t j = 0; j < nz; ++j) emit_w.at(i, j) = spec.C(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
    for (double& v : params["prior.mean.b"].mutable_data()) v = 0.0;
    for (double& v : params["emitter.mean.b"].mutable_data()) v = 0.0;
    for (double& v : params["prior.log_var.w"].mutable_data()) v = 0.0;
    for (double& v : params["emitter.log_var.w"].mutable_data()) v = 0.0;
    Tensor& prior_lv = params["prior.log_var.b"];
    for (std::size_t i = 0; i < nz; ++i) prior_lv[i] = std::log(spec.Q[static_cast<Eigen::Index>(i)]);
    Tensor& emit_lv = params["emitter.log_var.b"];
    for (std::size_t i = 0; i < nx; ++i) emit_lv[i] = std::log(spec.R[static_cast<Eigen::Index>(i)]);
}

}  // namespace avfp
