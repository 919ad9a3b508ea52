#include "avfp/diagnostics.hpp"

#include <algorithm>
#include <cmath>

#include "avfp/error.hpp"
#include "avfp/linear_gaussian.hpp"
#include "avfp/objectives.hpp"
#include "avfp/optimizer.hpp"
#include "avfp/rng.hpp"

namespace avfp {

namespace {

constexpr std::uint64_t kGradStream = 0x6772'6164'0000'0000ULL;
constexpr std::uint64_t kOracleStream = 0x6f72'6163'0000'0000ULL;
constexpr std::uint64_t kGanStream = 0x6761'6e00'0000'0000ULL;

Tensor uniform_vector(CounterRng& rng, std::size_t n, double lo, double hi) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor::vector(std::move(v));
}

NetworkSpec toy_network() {
    NetworkSpec s;
    s.n_x = 2;
    s.n_u = 1;
    s.n_z = 2;
    s.n_h = 3;
    s.recognizer_hidden = 3;
    s.prior_hidden = 3;
    s.emitter_hidden = 3;
    s.discriminator_hidden = 3;
    s.rul_hidden = 3;
    return s;
}

Sequence toy_sequence(CounterRng& rng, const NetworkSpec& s, std::size_t T) {
    Sequence seq;
    for (std::size_t t = 0; t < T; ++t) {
        seq.x.push_back(uniform_vector(rng, s.n_x, -1.5, 1.5));
        seq.u.push_back(uniform_vector(rng, s.n_u, -1.0, 1.0));
    }
    return seq;
}

ModelParams perturbed_params(const NetworkSpec& s, CounterRng& rng) {
    ModelParams p = ModelParams::initialize(s, rng.next_u64());
    for (std::size_t i = 0; i < p.size(); ++i) {
        for (double& v : p.value(ParamId{static_cast<std::uint32_t>(i)}).mutable_data()) v += 0.3 * rng.normal();
    }
    return p;
}

/// Every model parameter is a checker input, in id order, so the checker's
/// leaf ids coincide with the ids ModelGraph binds.
double check_model_objective(const ModelParams& params, const NetworkSpec& spec,
                             const std::function<Var(ModelGraph&)>& objective, double step) {
    std::vector<Tensor> values;
    for (const auto& e : params.entries()) values.push_back(e.value);
    const ScalarFunction f = [&](Tape& tape, std::span<const Var> vars) {
        ModelParams local = params;
        for (std::size_t k = 0; k < vars.size(); ++k) local.value(ParamId{static_cast<std::uint32_t>(k)}) = vars[k].value();
        ModelGraph g(tape, local, spec);
        return objective(g);
    };
    return grad_check(f, values, step, Stencil::central4);
}

}  // namespace

bool OracleInstance::bound_holds(double n_se) const {
    return elbo_initial <= kalman + n_se * se_initial && elbo_final <= kalman + n_se * se_final;
}

std::vector<GradCheckEntry> gradcheck_suite(std::size_t draws, std::uint64_t seed, double step, double model_step) {
    std::vector<GradCheckEntry> out;
    auto record = [&](const std::string& name, const std::function<double(CounterRng&)>& one) {
        GradCheckEntry e{name, draws, 0.0};
        for (std::size_t d = 0; d < draws; ++d) {
            CounterRng rng(seed, kGradStream + out.size() * 1000 + d);
            e.max_error = std::max(e.max_error, one(rng));
        }
        out.push_back(e);
    };

    record("gaussian_log_density", [&](CounterRng& rng) {
        const std::size_t n = 4;
        std::vector<Tensor> p{uniform_vector(rng, n, -2, 2), uniform_vector(rng, n, -2, 2),
                              uniform_vector(rng, n, -2, 2)};
        return grad_check(
            [](Tape&, std::span<const Var> v) {
                return gaussian_log_density(v[0], GaussianDiag::make(v[1], v[2]));
            },
            p, step);
    });

    record("kl_diag_gaussians", [&](CounterRng& rng) {
        const std::size_t n = 4;
        std::vector<Tensor> p{uniform_vector(rng, n, -2, 2), uniform_vector(rng, n, -2, 2),
                              uniform_vector(rng, n, -2, 2), uniform_vector(rng, n, -2, 2)};
        return grad_check(
            [](Tape&, std::span<const Var> v) {
                return kl_diag_gaussians(GaussianDiag::make(v[0], v[1]), GaussianDiag::make(v[2], v[3]));
            },
            p, step);
    });

    record("adversarial_losses", [&](CounterRng& rng) {
        std::vector<Tensor> p{uniform_vector(rng, 3, -3, 3), uniform_vector(rng, 3, -3, 3)};
        auto loss = [](bool disc) {
            return [disc](Tape&, std::span<const Var> v) {
                std::vector<Var> real, fake;
                for (std::size_t i = 0; i < 3; ++i) {
                    real.push_back(sigmoid(slice(v[0], i, 1)));
                    fake.push_back(sigmoid(slice(v[1], i, 1)));
                }
                const AdversarialLosses a = adversarial_losses(real, fake);
                return disc ? a.disc : a.gen;
            };
        };
        return std::max(grad_check(loss(true), p, step), grad_check(loss(false), p, step));
    });

    const NetworkSpec spec = toy_network();
    constexpr std::size_t T = 5;

    record("sequence_elbo", [&](CounterRng& rng) {
        const ModelParams params = perturbed_params(spec, rng);
        const Sequence seq = toy_sequence(rng, spec, T);
        const Tensor noise = rng.normal_tensor({T, spec.n_z});
        return check_model_objective(params, spec,
                                     [&](ModelGraph& g) { return sequence_elbo_terms(g, seq, noise, false).elbo; },
                                     model_step);
    });

    record("combined_objective", [&](CounterRng& rng) {
        const ModelParams params = perturbed_params(spec, rng);
        const Sequence seq = toy_sequence(rng, spec, T);
        const SequenceNoise noise{rng.normal_tensor({T, spec.n_z}), rng.normal_tensor({T, spec.n_z})};
        return check_model_objective(
            params, spec, [&](ModelGraph& g) { return combined_objective_terms(g, seq, noise, 0.5, false).combined; }, model_step);
    });
    return out;
}

std::vector<OracleInstance> oracle_suite(const OracleOptions& o,
                                         const std::function<void(std::size_t, const OracleInstance&)>& on_instance) {
    std::vector<OracleInstance> out;
    for (std::size_t i = 0; i < o.instances; ++i) {
        const std::uint64_t inst_seed = splitmix64(o.seed * 1000003ULL + i);
        CounterRng rng(inst_seed, kOracleStream);
        OracleInstance r;
        r.n_z = 1 + rng.below(3);
        r.n_x = 1 + rng.below(4);
        r.length = 10 + rng.below(21);
        const LinearGaussianSpec lg = random_linear_gaussian(r.n_z, r.n_x, rng.next_u64());
        const LinearGaussianTrajectory traj = gen_linear_gaussian(lg, r.length, rng.next_u64());
        const Sequence seq = to_sequence(traj);
        r.kalman = kalman_loglik(lg, traj.x);

        const NetworkSpec net = linear_gaussian_network(lg);
        ModelParams params = ModelParams::initialize(net, rng.next_u64());
        set_generative_to_linear_gaussian(params, net, lg);

        auto estimate = [&](std::uint64_t stream, double& mean, double& se) {
            CounterRng er(inst_seed, stream);
            double s = 0.0, sq = 0.0;
            for (std::size_t d = 0; d < o.eval_draws; ++d) {
                const double v = sequence_elbo(params, net, seq, er.normal_tensor({r.length, net.n_z}), true).elbo();
                s += v;
                sq += v * v;
            }
            const auto n = static_cast<double>(o.eval_draws);
            mean = s / n;
            const double var = std::max(0.0, (sq - n * mean * mean) / (n - 1.0));
            se = std::sqrt(var / n);
        };
        estimate(1, r.elbo_initial, r.se_initial);

        OptimizerState opt;
        opt.lr = o.lr;
        const std::vector<ParamId> phi = params.group(ParamGroup::phi);
        for (std::size_t s = 0; s < o.train_steps; ++s) {
            CounterRng nr(inst_seed, 0x100 + s);
            Tape tape;
            ModelGraph g(tape, params, net);
            Var total = sequence_elbo_terms(g, seq, nr.normal_tensor({r.length, net.n_z}), true).elbo;
            for (std::size_t k = 1; k < o.samples_per_step; ++k) {
                total = total + sequence_elbo_terms(g, seq, nr.normal_tensor({r.length, net.n_z}), true).elbo;
            }
            const Var loss = scale(total, -1.0 / static_cast<double>(o.samples_per_step * r.length));
            Gradients grads = restrict_to(backward(tape, loss), phi, params);
            clip_global_norm(grads, 5.0);
            adam_step(params, grads, opt);
        }
        estimate(2, r.elbo_final, r.se_final);
        if (on_instance) on_instance(i, r);
        out.push_back(r);
    }
    return out;
}

namespace {

struct ToyGan {
    ModelParams params;
    ParamId w1, b1, w2, b2, scale, shift;

    explicit ToyGan(const ToyGanOptions& o, CounterRng& rng) {
        const double limit = std::sqrt(6.0 / static_cast<double>(o.hidden + 1));
        auto glorot = [&](Shape shape) {
            Tensor t = Tensor::zeros(std::move(shape));
            for (double& v : t.mutable_data()) v = rng.uniform(-limit, limit);
            return t;
        };
        params = ModelParams::from_entries({
            {"discriminator.hidden.w", ParamGroup::psi, glorot({1, o.hidden})},
            {"discriminator.hidden.b", ParamGroup::psi, Tensor::zeros({o.hidden})},
            {"discriminator.out.w", ParamGroup::psi, glorot({o.hidden, 1})},
            {"discriminator.out.b", ParamGroup::psi, Tensor::zeros({1})},
            {"generator.scale", ParamGroup::theta, Tensor::vector({1.0})},
            {"generator.shift", ParamGroup::theta, Tensor::vector({0.0})},
        });
        w1 = params.id("discriminator.hidden.w");
        b1 = params.id("discriminator.hidden.b");
        w2 = params.id("discriminator.out.w");
        b2 = params.id("discriminator.out.b");
        scale = params.id("generator.scale");
        shift = params.id("generator.shift");
    }

    Var leaf(Tape& tape, ParamId id) const { return tape.parameter(id, params.value(id)); }

    /// x: (B, 1) -> probabilities (B, 1).
    Var discriminate(Tape& tape, Var x) const {
        const std::size_t B = x.shape()[0];
        const Var w1v = leaf(tape, w1);
        const Var h = tanh(matmul(x, w1v) + broadcast(leaf(tape, b1), {B, w1v.shape()[1]}));
        const Var logit = matmul(h, leaf(tape, w2)) + broadcast(leaf(tape, b2), {B, 1});
        return sigmoid(clamp(logit, -ModelGraph::kLogitBound, ModelGraph::kLogitBound));
    }

    Var generate(Tape& tape, const Tensor& noise) const {
        const Shape shape = noise.shape();
        return tape.constant(noise) * broadcast(leaf(tape, scale), shape) + broadcast(leaf(tape, shift), shape);
    }
};

Tensor column(CounterRng& rng, std::size_t n, double mean, double std) {
    Tensor t = Tensor::zeros({n, 1});
    for (double& v : t.mutable_data()) v = mean + std * rng.normal();
    return t;
}

}  // namespace

ToyGanResult toy_gan(const ToyGanOptions& o) {
    if (o.batch == 0 || o.hidden == 0 || o.eval_samples == 0) throw ConfigError("toy_gan: sizes must be positive");
    CounterRng init(o.seed, kGanStream);
    ToyGan gan(o, init);
    OptimizerState d_opt, g_opt;
    d_opt.lr = g_opt.lr = o.lr;
    d_opt.beta1 = g_opt.beta1 = o.beta1;
    const auto psi = gan.params.group(ParamGroup::psi);
    const auto theta = gan.params.group(ParamGroup::theta);
    const double inv_batch = 1.0 / static_cast<double>(o.batch);

    for (std::size_t step = 0; step < o.steps; ++step) {
        CounterRng rng(o.seed, kGanStream + 1 + step);
        {
            Tape tape;
            const Var real = gan.discriminate(tape, tape.constant(column(rng, o.batch, o.real_mean, o.real_std)));
            const Tensor fake_values = gan.generate(tape, column(rng, o.batch, 0.0, 1.0)).value();
            const Var fake = gan.discriminate(tape, tape.constant(fake_values));
            const Var loss = scale(adversarial_losses({&real, 1}, {&fake, 1}).disc, inv_batch);
            adam_step(gan.params, restrict_to(backward(tape, loss), psi, gan.params), d_opt);
        }
        {
            Tape tape;
            const Var fake = gan.discriminate(tape, gan.generate(tape, column(rng, o.batch, 0.0, 1.0)));
            const Var loss = scale(-sum(log(fake)), inv_batch);
            adam_step(gan.params, restrict_to(backward(tape, loss), theta, gan.params), g_opt);
        }
    }

    CounterRng rng(o.seed, kGanStream + 1 + o.steps);
    Tape tape;
    const Tensor real = column(rng, o.eval_samples, o.real_mean, o.real_std);
    const Var fake = gan.generate(tape, column(rng, o.eval_samples, 0.0, 1.0));
    ToyGanResult r;
    r.d_real = mean(gan.discriminate(tape, tape.constant(real))).item();
    r.d_fake = mean(gan.discriminate(tape, fake)).item();
    double s = 0.0, sq = 0.0;
    for (double v : fake.value().data()) {
        s += v;
        sq += v * v;
    }
    const auto n = static_cast<double>(o.eval_samples);
    r.generated_mean = s / n;
    r.generated_std = std::sqrt(std::max(0.0, sq / n - r.generated_mean * r.generated_mean));
    return r;
}

}  // namespace avfp
