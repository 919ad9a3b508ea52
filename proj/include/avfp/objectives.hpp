#pragma once

#include <span>
#include <vector>

#include "avfp/autodiff.hpp"
#include "avfp/model.hpp"

namespace avfp {

/// Observed sequence fed to the model: one sensor vector x_t and one
/// operating-setting vector u_t per time step.
struct Sequence {
    std::vector<Tensor> x;
    std::vector<Tensor> u;

    std::size_t length() const noexcept { return x.size(); }
};

/// Standard-normal draws for one trajectory, each of shape (T, n_z).
/// `posterior` drives recognition samples, `prior` drives the unconditional
/// prior rollout the discriminator treats as real.
struct SequenceNoise {
    Tensor posterior;
    Tensor prior;
};

/// Scalar terms, all in nats. combined = recon_loglik - kl_total - λ·adv_gen.
struct ObjectiveBreakdown {
    double recon_loglik = 0.0;
    double kl_total = 0.0;
    double adv_gen = 0.0;
    double adv_disc = 0.0;
    double combined = 0.0;
    std::vector<double> step_kl;

    double elbo() const noexcept { return recon_loglik - kl_total; }
};

/// Graph-level version of ObjectiveBreakdown, for differentiation.
struct ObjectiveTerms {
    Var recon_loglik;
    Var kl_total;
    Var elbo;
    Var adv_gen;
    Var adv_disc;
    Var combined;
    std::vector<Var> step_kl;
    std::vector<HistoryState> histories;  // h_1..h_T
    std::vector<Var> latent_samples;      // z_1..z_T
    std::vector<Var> latent_means;        // mean of q(z_t | ·)

    ObjectiveBreakdown values() const;
};

Var gaussian_log_density(Var x, const GaussianDiag& g);
Var kl_diag_gaussians(const GaussianDiag& q, const GaussianDiag& p);

struct AdversarialLosses {
    Var disc;  // -mean log D(real) - mean log(1 - D(fake))
    Var gen;   // -mean log D(fake)
};

/// Probabilities must lie strictly inside (0, 1).
AdversarialLosses adversarial_losses(std::span<const Var> d_real, std::span<const Var> d_fake);

/// Single-sample reparameterized filtering ELBO: h_t is updated with x_t
/// before z_t is recognized. adv terms and combined are set to the ELBO-only
/// values (adv = 0, combined = elbo).
ObjectiveTerms sequence_elbo_terms(ModelGraph& g, const Sequence& seq, const Tensor& noise, bool markovian);

/// Unconditional rollout z_1 ~ N(0, I), z_t ~ p(z_t | z_{t-1}, g_t).
std::vector<Var> sample_prior_sequence(ModelGraph& g, std::size_t length, const Tensor& noise, bool markovian);

/// Recognition rollout only: z_t = mean + std * noise_t for t = 1..T.
std::vector<Var> sample_posterior_sequence(ModelGraph& g, const Sequence& seq, const Tensor& noise);

/// ELBO plus the generator-side adversarial term where recognition samples
/// play fake against prior samples.
ObjectiveTerms combined_objective_terms(ModelGraph& g, const Sequence& seq, const SequenceNoise& noise,
                                        double lambda_adv, bool markovian);

ObjectiveBreakdown sequence_elbo(const ModelParams& params, const NetworkSpec& spec, const Sequence& seq,
                                 const Tensor& noise, bool markovian);
ObjectiveBreakdown combined_objective(const ModelParams& params, const NetworkSpec& spec, const Sequence& seq,
                                      const SequenceNoise& noise, double lambda_adv, bool markovian);

/// Deterministic pass using latent means in place of samples. Returns the
/// recognition histories and means for every step.
struct Filtered {
    std::vector<HistoryState> histories;
    std::vector<Var> latent_means;
};
Filtered filter_means(ModelGraph& g, const Sequence& seq);

}  // namespace avfp
