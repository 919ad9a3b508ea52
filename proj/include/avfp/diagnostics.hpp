#pragma once

// Self-check suites shared by the command-line tool and the acceptance tests.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace avfp {

struct GradCheckEntry {
    std::string objective;
    std::size_t draws = 0;
    double max_error = 0.0;
};

/// Central-difference check of every objective over `draws` random
/// parameter draws each.
/// Network objectives use the five-point stencil at `model_step`.
std::vector<GradCheckEntry> gradcheck_suite(std::size_t draws, std::uint64_t seed, double step = 1e-6,
                                            double model_step = 1e-3);

struct OracleInstance {
    std::size_t n_z = 0, n_x = 0, length = 0;
    double kalman = 0.0;
    double elbo_initial = 0.0, se_initial = 0.0;
    double elbo_final = 0.0, se_final = 0.0;

    double gap_initial() const { return kalman - elbo_initial; }
    double gap_final() const { return kalman - elbo_final; }
    bool bound_holds(double n_se) const;
    bool gap_shrank() const { return gap_final() < gap_initial(); }
};

struct OracleOptions {
    std::size_t instances = 20;
    std::size_t train_steps = 2000;
    std::size_t eval_draws = 256;
    std::size_t samples_per_step = 1;
    double lr = 1e-2;
    std::uint64_t seed = 0;
};

/// Kalman-bound suite: random linear-Gaussian instances, generative side set
/// to the true model, recognition side trained alone.
std::vector<OracleInstance> oracle_suite(const OracleOptions& options,
                                         const std::function<void(std::size_t, const OracleInstance&)>& on_instance = {});

struct ToyGanOptions {
    std::size_t steps = 5000;
    std::size_t batch = 256;
    std::size_t hidden = 8;
    double real_mean = 2.0;
    double real_std = 0.5;
    double lr = 1e-3;
    double beta1 = 0.5;
    std::size_t eval_samples = 10000;
    std::uint64_t seed = 0;
};

struct ToyGanResult {
    double d_real = 0.0;  // mean discriminator output on real samples
    double d_fake = 0.0;
    double generated_mean = 0.0;
    double generated_std = 0.0;
};

/// One-dimensional GAN: generator a * eps + b with eps ~ N(0, 1), a tanh
/// discriminator, alternating single steps, non-saturating generator loss.
ToyGanResult toy_gan(const ToyGanOptions& options);

}  // namespace avfp
