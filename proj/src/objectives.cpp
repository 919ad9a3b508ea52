#include "avfp/objectives.hpp"

#include <cmath>
#include <numbers>

#include "avfp/error.hpp"

namespace avfp {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // ½ ln 2π

void require_same_dims(const GaussianDiag& a, const GaussianDiag& b, const char* what) {
    if (a.mean.shape() != b.mean.shape()) {
        throw ShapeError(std::string(what) + ": dimension mismatch " + shape_string(a.mean.shape()) + " vs " +
                         shape_string(b.mean.shape()));
    }
}

Var mean_of(std::span<const Var> xs) {
    Var total = xs.front();
    for (std::size_t i = 1; i < xs.size(); ++i) total = total + xs[i];
    return scale(total, 1.0 / static_cast<double>(xs.size()));
}

void check_probabilities(std::span<const Var> ps, const char* what) {
    if (ps.empty()) throw ShapeError(std::string("adversarial_losses: no ") + what + " probabilities");
    for (const Var& p : ps) {
        for (double v : p.value().data()) {
            if (!(v > 0.0 && v < 1.0)) {
                throw DomainError(std::string("adversarial_losses: ") + what + " probability " + std::to_string(v) +
                                  " outside (0, 1)");
            }
        }
    }
}

Tensor noise_row(const Tensor& noise, std::size_t t, std::size_t n_z) {
    const auto first = noise.data().begin() + static_cast<std::ptrdiff_t>(t * n_z);
    return Tensor::vector(std::vector<double>(first, first + static_cast<std::ptrdiff_t>(n_z)));
}

void check_noise(const Tensor& noise, std::size_t length, std::size_t n_z, const char* what) {
    if (noise.rank() != 2 || noise.shape()[0] != length || noise.shape()[1] != n_z) {
        throw ShapeError(std::string(what) + " noise must have shape (" + std::to_string(length) + ", " +
                         std::to_string(n_z) + "), got " + shape_string(noise.shape()));
    }
}

void check_sequence(const Sequence& seq) {
    if (seq.x.empty()) throw ShapeError("empty trajectory");
    if (seq.u.size() != seq.x.size()) throw ShapeError("trajectory x and u lengths differ");
}

}  // namespace

Var gaussian_log_density(Var x, const GaussianDiag& g) {
    if (x.shape() != g.mean.shape()) {
        throw ShapeError("gaussian_log_density: x " + shape_string(x.shape()) + " vs distribution " +
                         shape_string(g.mean.shape()));
    }
    Tape& tape = *x.tape();
    const Var diff = x - g.mean;
    const Var scaled_sq = diff * diff * exp(-g.log_var);
    const Var per_dim = scale(g.log_var + scaled_sq, -0.5);
    const auto n = static_cast<double>(x.size());
    return sum(per_dim) - tape.constant(Tensor::scalar(n * kHalfLog2Pi));
}

Var kl_diag_gaussians(const GaussianDiag& q, const GaussianDiag& p) {
    require_same_dims(q, p, "kl_diag_gaussians");
    // ½ Σ [ (lv_p - lv_q) + exp(lv_q - lv_p) + (μ_q - μ_p)² exp(-lv_p) - 1 ]
    Tape& tape = *q.mean.tape();
    const Var d = q.log_var - p.log_var;
    const Var diff = q.mean - p.mean;
    const Var per_dim = exp(d) - d + diff * diff * exp(-p.log_var);
    const auto n = static_cast<double>(q.dim());
    return scale(sum(per_dim) - tape.constant(Tensor::scalar(n)), 0.5);
}

AdversarialLosses adversarial_losses(std::span<const Var> d_real, std::span<const Var> d_fake) {
    check_probabilities(d_real, "real");
    check_probabilities(d_fake, "fake");
    Tape& tape = *d_real.front().tape();
    const Var one = tape.constant(Tensor::filled(d_fake.front().shape(), 1.0));

    std::vector<Var> log_real, log_not_fake, log_fake;
    for (const Var& p : d_real) log_real.push_back(sum(log(p)));
    for (const Var& p : d_fake) {
        log_fake.push_back(sum(log(p)));
        log_not_fake.push_back(sum(log(one - p)));
    }
    const Var disc = -(mean_of(log_real) + mean_of(log_not_fake));
    const Var gen = -mean_of(log_fake);
    return {disc, gen};
}

ObjectiveTerms sequence_elbo_terms(ModelGraph& g, const Sequence& seq, const Tensor& noise, bool markovian) {
    check_sequence(seq);
    const auto& spec = g.spec();
    const std::size_t T = seq.length();
    check_noise(noise, T, spec.n_z, "posterior");

    Tape& tape = g.tape();
    ObjectiveTerms terms;
    HistoryState h = g.initial_history();
    HistoryState prior_h = g.initial_prior_history();
    Var z_prev = g.zeros(spec.n_z);
    Var recon, kl;

    for (std::size_t t = 0; t < T; ++t) {
        const HistoryState h_before = h;
        const Var x = tape.constant(seq.x[t]);
        h = g.encode_history(h, x, tape.constant(seq.u[t]), z_prev);
        const GaussianDiag q = g.recognize(h);
        const Var z = g.sample_reparam(q, tape.constant(noise_row(noise, t, spec.n_z)));

        GaussianDiag prior;
        if (t == 0) {
            prior = GaussianDiag::standard(tape, spec.n_z);
        } else {
            prior_h = g.advance_prior_history(prior_h, z_prev);
            prior = g.transition_prior(z_prev, prior_h, markovian);
        }
        const GaussianDiag px = g.emit(h_before, z, markovian);

        const Var step_recon = gaussian_log_density(x, px);
        const Var step_kl = kl_diag_gaussians(q, prior);
        recon = t == 0 ? step_recon : recon + step_recon;
        kl = t == 0 ? step_kl : kl + step_kl;

        terms.step_kl.push_back(step_kl);
        terms.histories.push_back(h);
        terms.latent_samples.push_back(z);
        terms.latent_means.push_back(q.mean);
        z_prev = z;
    }

    terms.recon_loglik = recon;
    terms.kl_total = kl;
    terms.elbo = recon - kl;
    terms.adv_gen = tape.constant(Tensor::scalar(0.0));
    terms.adv_disc = terms.adv_gen;
    terms.combined = terms.elbo;
    return terms;
}

std::vector<Var> sample_prior_sequence(ModelGraph& g, std::size_t length, const Tensor& noise, bool markovian) {
    const auto& spec = g.spec();
    check_noise(noise, length, spec.n_z, "prior");
    Tape& tape = g.tape();
    std::vector<Var> zs;
    zs.reserve(length);
    HistoryState prior_h = g.initial_prior_history();
    for (std::size_t t = 0; t < length; ++t) {
        GaussianDiag p;
        if (t == 0) {
            p = GaussianDiag::standard(tape, spec.n_z);
        } else {
            prior_h = g.advance_prior_history(prior_h, zs.back());
            p = g.transition_prior(zs.back(), prior_h, markovian);
        }
        zs.push_back(g.sample_reparam(p, tape.constant(noise_row(noise, t, spec.n_z))));
    }
    return zs;
}

std::vector<Var> sample_posterior_sequence(ModelGraph& g, const Sequence& seq, const Tensor& noise) {
    check_sequence(seq);
    const auto& spec = g.spec();
    check_noise(noise, seq.length(), spec.n_z, "posterior");
    Tape& tape = g.tape();
    std::vector<Var> zs;
    zs.reserve(seq.length());
    HistoryState h = g.initial_history();
    Var z_prev = g.zeros(spec.n_z);
    for (std::size_t t = 0; t < seq.length(); ++t) {
        h = g.encode_history(h, tape.constant(seq.x[t]), tape.constant(seq.u[t]), z_prev);
        z_prev = g.sample_reparam(g.recognize(h), tape.constant(noise_row(noise, t, spec.n_z)));
        zs.push_back(z_prev);
    }
    return zs;
}

ObjectiveTerms combined_objective_terms(ModelGraph& g, const Sequence& seq, const SequenceNoise& noise,
                                        double lambda_adv, bool markovian) {
    if (!(lambda_adv >= 0.0) || !std::isfinite(lambda_adv)) {
        throw DomainError("combined_objective: lambda_adv must be a finite non-negative number");
    }
    ObjectiveTerms terms = sequence_elbo_terms(g, seq, noise.posterior, markovian);
    const std::vector<Var> real = sample_prior_sequence(g, seq.length(), noise.prior, markovian);
    const Var d_real = g.discriminate(real);
    const Var d_fake = g.discriminate(terms.latent_samples);
    const AdversarialLosses adv = adversarial_losses(std::span(&d_real, 1), std::span(&d_fake, 1));
    terms.adv_gen = adv.gen;
    terms.adv_disc = adv.disc;
    terms.combined = terms.elbo - scale(adv.gen, lambda_adv);
    return terms;
}

ObjectiveBreakdown ObjectiveTerms::values() const {
    ObjectiveBreakdown b;
    b.recon_loglik = recon_loglik.item();
    b.kl_total = kl_total.item();
    b.adv_gen = adv_gen.item();
    b.adv_disc = adv_disc.item();
    b.combined = combined.item();
    b.step_kl.reserve(step_kl.size());
    for (const Var& v : step_kl) b.step_kl.push_back(v.item());
    return b;
}

ObjectiveBreakdown sequence_elbo(const ModelParams& params, const NetworkSpec& spec, const Sequence& seq,
                                 const Tensor& noise, bool markovian) {
    Tape tape;
    ModelGraph g(tape, params, spec);
    return sequence_elbo_terms(g, seq, noise, markovian).values();
}

ObjectiveBreakdown combined_objective(const ModelParams& params, const NetworkSpec& spec, const Sequence& seq,
                                      const SequenceNoise& noise, double lambda_adv, bool markovian) {
    Tape tape;
    ModelGraph g(tape, params, spec);
    return combined_objective_terms(g, seq, noise, lambda_adv, markovian).values();
}

Filtered filter_means(ModelGraph& g, const Sequence& seq) {
    check_sequence(seq);
    Tape& tape = g.tape();
    Filtered out;
    HistoryState h = g.initial_history();
    Var z_prev = g.zeros(g.spec().n_z);
    for (std::size_t t = 0; t < seq.length(); ++t) {
        h = g.encode_history(h, tape.constant(seq.x[t]), tape.constant(seq.u[t]), z_prev);
        const GaussianDiag q = g.recognize(h);
        out.histories.push_back(h);
        out.latent_means.push_back(q.mean);
        z_prev = q.mean;
    }
    return out;
}

}  // namespace avfp
