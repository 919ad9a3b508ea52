#include <doctest.h>

#include <cmath>
#include <numbers>

#include "avfp/error.hpp"
#include "avfp/linear_gaussian.hpp"
#include "avfp/objectives.hpp"
#include "avfp/optimizer.hpp"
#include "support.hpp"

using namespace avfp;
using avfp::test::uniform_tensor;

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

double log_density(const std::vector<double>& x, const std::vector<double>& mean, const std::vector<double>& lv) {
    Tape tape;
    return gaussian_log_density(tape.constant(Tensor::vector(x)),
                                GaussianDiag::make(tape.constant(Tensor::vector(mean)), tape.constant(Tensor::vector(lv))))
        .item();
}

double kl(const std::vector<double>& mq, const std::vector<double>& lq, const std::vector<double>& mp,
          const std::vector<double>& lp) {
    Tape tape;
    auto g = [&](const std::vector<double>& m, const std::vector<double>& l) {
        return GaussianDiag::make(tape.constant(Tensor::vector(m)), tape.constant(Tensor::vector(l)));
    };
    return kl_diag_gaussians(g(mq, lq), g(mp, lp)).item();
}

NetworkSpec toy_spec() {
    NetworkSpec s;
    s.n_x = 2;
    s.n_u = 1;
    s.n_z = 2;
    s.n_h = 4;
    s.recognizer_hidden = 4;
    s.prior_hidden = 4;
    s.emitter_hidden = 4;
    s.discriminator_hidden = 4;
    s.rul_hidden = 4;
    return s;
}

Sequence toy_sequence(CounterRng& rng, const NetworkSpec& s, std::size_t T) {
    Sequence seq;
    for (std::size_t t = 0; t < T; ++t) {
        seq.x.push_back(uniform_tensor(rng, {s.n_x}, -1, 1));
        seq.u.push_back(uniform_tensor(rng, {s.n_u}, -1, 1));
    }
    return seq;
}

double energy_distance(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
    auto dist = [](const std::vector<double>& x, const std::vector<double>& y) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
        return std::sqrt(s);
    };
    auto mean_dist = [&](const auto& p, const auto& q) {
        double s = 0.0;
        for (const auto& x : p) {
            for (const auto& y : q) s += dist(x, y);
        }
        return s / static_cast<double>(p.size() * q.size());
    };
    return 2.0 * mean_dist(a, b) - mean_dist(a, a) - mean_dist(b, b);
}

}  // namespace

TEST_CASE("gaussian log density examples") {
    CHECK(log_density({1.3}, {1.3}, {0.0}) == doctest::Approx(-0.918938533204673).epsilon(1e-14));
    const double lv = 0.7;
    const double sigma = std::exp(0.5 * lv);
    CHECK(log_density({2.0 + sigma}, {2.0}, {lv}) == doctest::Approx(-kHalfLog2Pi - 0.5 - 0.5 * lv).epsilon(1e-14));
}

TEST_CASE("gaussian log density matches an extended-precision evaluation") {
    CounterRng rng(1, 0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> x(5), m(5), lv(5);
        for (int i = 0; i < 5; ++i) {
            x[i] = rng.uniform(-3, 3);
            m[i] = rng.uniform(-3, 3);
            lv[i] = rng.uniform(-4, 4);
        }
        long double ref = 0.0L;
        const long double half_log_2pi = 0.5L * std::log(2.0L * std::numbers::pi_v<long double>);
        for (int i = 0; i < 5; ++i) {
            const long double d = static_cast<long double>(x[i]) - m[i];
            ref += -half_log_2pi - 0.5L * lv[i] - d * d / (2.0L * std::exp(static_cast<long double>(lv[i])));
        }
        CHECK(log_density(x, m, lv) == doctest::Approx(static_cast<double>(ref)).epsilon(1e-13));
    }
}

TEST_CASE("gaussian density integrates to one") {
    for (double lv : {-2.0, 0.0, 1.5}) {
        const double mu = 0.4, sigma = std::exp(0.5 * lv);
        constexpr int n = 4000;
        const double lo = mu - 8 * sigma, hi = mu + 8 * sigma, h = (hi - lo) / n;
        double total = 0.0;
        // Composite Simpson rule.
        for (int i = 0; i <= n; ++i) {
            const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
            total += w * std::exp(log_density({lo + i * h}, {mu}, {lv}));
        }
        total *= h / 3.0;
        CHECK(std::abs(total - 1.0) < 1e-6);
    }
}

TEST_CASE("gaussian log density shape error") {
    Tape tape;
    const GaussianDiag g = GaussianDiag::standard(tape, 2);
    CHECK_THROWS_AS(gaussian_log_density(tape.constant(Tensor::vector({1, 2, 3})), g), ShapeError);
}

TEST_CASE("kl examples") {
    CHECK(kl({0}, {0}, {0}, {0}) == 0.0);
    CHECK(kl({1}, {0}, {0}, {0}) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK_THROWS_AS(kl({0, 1}, {0, 0}, {0}, {0}), ShapeError);
}

TEST_CASE("kl matches a Monte Carlo estimate") {
    const double mu = 0.5, lv = std::log(0.64);
    const double closed = kl({mu}, {lv}, {0}, {0});
    CounterRng rng(2, 0);
    constexpr int n = 1000000;
    double s = 0.0, sq = 0.0;
    const double sigma = 0.8;
    for (int i = 0; i < n; ++i) {
        const double z = mu + sigma * rng.normal();
        const double log_q = -kHalfLog2Pi - std::log(sigma) - 0.5 * (z - mu) * (z - mu) / (sigma * sigma);
        const double log_p = -kHalfLog2Pi - 0.5 * z * z;
        s += log_q - log_p;
        sq += (log_q - log_p) * (log_q - log_p);
    }
    const double m = s / n;
    const double se = std::sqrt((sq / n - m * m) / n);
    CHECK(std::abs(closed - m) < 3 * se);
}

TEST_CASE("kl is non-negative and zero only for identical arguments") {
    CounterRng rng(3, 0);
    for (int i = 0; i < 10000; ++i) {
        const std::size_t n = 1 + rng.below(4);
        std::vector<double> mq(n), lq(n), mp(n), lp(n);
        for (std::size_t k = 0; k < n; ++k) {
            mq[k] = rng.uniform(-3, 3);
            lq[k] = rng.uniform(-5, 5);
            mp[k] = rng.uniform(-3, 3);
            lp[k] = rng.uniform(-5, 5);
        }
        const double v = kl(mq, lq, mp, lp);
        CHECK(v >= 0.0);
        CHECK(v > 1e-12);
        CHECK(kl(mq, lq, mq, lq) == 0.0);
    }
}

TEST_CASE("single-step zero-network elbo") {
    const NetworkSpec s = toy_spec();
    const ModelParams p = ModelParams::zeros(s);
    Sequence seq;
    seq.x.push_back(Tensor::zeros({s.n_x}));
    seq.u.push_back(Tensor::zeros({s.n_u}));
    for (bool markovian : {false, true}) {
        const ObjectiveBreakdown b = sequence_elbo(p, s, seq, Tensor::zeros({1, s.n_z}), markovian);
        CHECK(b.kl_total == 0.0);
        CHECK(b.elbo() == doctest::Approx(-static_cast<double>(s.n_x) * kHalfLog2Pi).epsilon(1e-15));
        CHECK(b.combined == b.elbo());
        CHECK(b.step_kl.size() == 1);
    }
}

TEST_CASE("sequence elbo input errors") {
    const NetworkSpec s = toy_spec();
    const ModelParams p = ModelParams::initialize(s, 1);
    CHECK_THROWS_AS(sequence_elbo(p, s, Sequence{}, Tensor::zeros({1, s.n_z}), false), ShapeError);
    CounterRng rng(4, 0);
    const Sequence seq = toy_sequence(rng, s, 3);
    CHECK_THROWS_AS(sequence_elbo(p, s, seq, Tensor::zeros({2, s.n_z}), false), ShapeError);
}

TEST_CASE("elbo breakdown invariants") {
    const NetworkSpec s = toy_spec();
    const ModelParams p = ModelParams::initialize(s, 2);
    CounterRng rng(5, 0);
    const Sequence seq = toy_sequence(rng, s, 6);
    const SequenceNoise noise{rng.normal_tensor({6, s.n_z}), rng.normal_tensor({6, s.n_z})};
    const ObjectiveBreakdown b = combined_objective(p, s, seq, noise, 0.3, false);
    CHECK(b.kl_total >= 0.0);
    CHECK(b.step_kl.size() == 6);
    double total = 0.0;
    for (double k : b.step_kl) total += k;
    CHECK(total == doctest::Approx(b.kl_total).epsilon(1e-12));
    CHECK(b.combined == doctest::Approx(b.recon_loglik - b.kl_total - 0.3 * b.adv_gen).epsilon(1e-12));
}

TEST_CASE("elbo stays below the Kalman likelihood for random recognition parameters") {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        const LinearGaussianSpec lg = random_linear_gaussian(2, 3, 100 + seed);
        const LinearGaussianTrajectory traj = gen_linear_gaussian(lg, 12, 200 + seed);
        const Sequence seq = to_sequence(traj);
        const double exact = kalman_loglik(lg, traj.x);
        const NetworkSpec net = linear_gaussian_network(lg);
        ModelParams p = ModelParams::initialize(net, 300 + seed);
        set_generative_to_linear_gaussian(p, net, lg);
        CounterRng rng(seed, 9);
        constexpr int n = 256;
        double s = 0.0, sq = 0.0;
        for (int d = 0; d < n; ++d) {
            const double v = sequence_elbo(p, net, seq, rng.normal_tensor({12, net.n_z}), true).elbo();
            s += v;
            sq += v * v;
        }
        const double m = s / n;
        const double se = std::sqrt((sq - n * m * m) / (n - 1.0) / n);
        CHECK(m <= exact + 3 * se);
    }
}

TEST_CASE("averaging 64 draws reduces estimator variance") {
    const NetworkSpec s = toy_spec();
    const ModelParams p = ModelParams::initialize(s, 6);
    CounterRng rng(6, 0);
    const Sequence seq = toy_sequence(rng, s, 5);
    auto estimate = [&](int draws) {
        double acc = 0.0;
        for (int d = 0; d < draws; ++d) acc += sequence_elbo(p, s, seq, rng.normal_tensor({5, s.n_z}), false).elbo();
        return acc / draws;
    };
    auto variance = [&](int draws) {
        constexpr int reps = 40;
        double s1 = 0.0, s2 = 0.0;
        for (int r = 0; r < reps; ++r) {
            const double v = estimate(draws);
            s1 += v;
            s2 += v * v;
        }
        return (s2 - s1 * s1 / reps) / (reps - 1);
    };
    const double single = variance(1);
    const double averaged = variance(64);
    CHECK(single > 0.0);
    CHECK(averaged < single / 8.0);
}

TEST_CASE("adversarial loss examples") {
    Tape tape;
    auto probs = [&](std::vector<double> v) {
        std::vector<Var> out;
        for (double p : v) out.push_back(tape.constant(Tensor::vector({p})));
        return out;
    };
    const AdversarialLosses eq = adversarial_losses(probs({0.5, 0.5}), probs({0.5, 0.5, 0.5}));
    CHECK(eq.disc.item() == doctest::Approx(2.0 * std::numbers::ln2).epsilon(1e-15));
    CHECK(eq.gen.item() == doctest::Approx(std::numbers::ln2).epsilon(1e-15));
    const AdversarialLosses perfect = adversarial_losses(probs({1.0 - 1e-12}), probs({1e-12}));
    CHECK(perfect.disc.item() < 1e-11);
    CHECK_THROWS_AS(adversarial_losses(probs({1.0}), probs({0.5})), DomainError);
    CHECK_THROWS_AS(adversarial_losses(probs({0.5}), probs({0.0})), DomainError);
    CHECK_THROWS_AS(adversarial_losses(probs({}), probs({0.5})), ShapeError);
}

TEST_CASE("generator loss gradient with respect to fake logits") {
    CounterRng rng(7, 0);
    for (int i = 0; i < 20; ++i) {
        const std::vector<Tensor> logits{uniform_tensor(rng, {4}, -3, 3)};
        const Tensor real = uniform_tensor(rng, {4}, 0.1, 0.9);
        const ScalarFunction f = [&](Tape& tape, std::span<const Var> v) {
            std::vector<Var> fake;
            for (std::size_t k = 0; k < 4; ++k) fake.push_back(sigmoid(slice(v[0], k, 1)));
            const std::vector<Var> r{tape.constant(real)};
            return adversarial_losses(r, fake).gen;
        };
        CHECK(grad_check(f, logits, 1e-6) < 1e-6);
    }
}

TEST_CASE("combined objective reductions") {
    const NetworkSpec s = toy_spec();
    ModelParams p = ModelParams::initialize(s, 8);
    CounterRng rng(8, 0);
    const Sequence seq = toy_sequence(rng, s, 5);
    const SequenceNoise noise{rng.normal_tensor({5, s.n_z}), rng.normal_tensor({5, s.n_z})};
    for (bool markovian : {false, true}) {
        const ObjectiveBreakdown elbo = sequence_elbo(p, s, seq, noise.posterior, markovian);
        const ObjectiveBreakdown zero = combined_objective(p, s, seq, noise, 0.0, markovian);
        CHECK(zero.combined == elbo.elbo());
        CHECK(zero.recon_loglik == elbo.recon_loglik);
        CHECK(zero.kl_total == elbo.kl_total);
    }

    for (const ParamId id : p.group(ParamGroup::psi)) p.value(id) = Tensor::zeros(p.value(id).shape());
    const ObjectiveBreakdown one = combined_objective(p, s, seq, noise, 1.0, false);
    CHECK(one.adv_gen == doctest::Approx(std::numbers::ln2).epsilon(1e-15));
    CHECK(one.combined == doctest::Approx(one.elbo() - std::numbers::ln2).epsilon(1e-14));
    CHECK_THROWS_AS(combined_objective(p, s, seq, noise, -1.0, false), DomainError);
}

TEST_CASE("adversarial variational training brings posterior samples closer to the prior") {
    const NetworkSpec s = toy_spec();
    ModelParams p = ModelParams::initialize(s, 9);
    CounterRng data_rng(9, 0);
    std::vector<Sequence> data;
    for (int i = 0; i < 4; ++i) data.push_back(toy_sequence(data_rng, s, 8));

    auto samples = [&](std::uint64_t stream) {
        CounterRng rng(9, stream);
        std::vector<std::vector<double>> post, prior;
        for (int r = 0; r < 125; ++r) {
            Tape tape;
            ModelGraph g(tape, p, s);
            const Sequence& seq = data[r % data.size()];
            for (const Var& z : sample_posterior_sequence(g, seq, rng.normal_tensor({8, s.n_z}))) {
                post.push_back(z.value().values());
            }
            for (const Var& z : sample_prior_sequence(g, 8, rng.normal_tensor({8, s.n_z}), false)) {
                prior.push_back(z.value().values());
            }
        }
        return energy_distance(post, prior);
    };
    const double before = samples(1);

    const auto psi = p.group(ParamGroup::psi);
    std::vector<ParamId> gen = p.group(ParamGroup::theta);
    const auto phi = p.group(ParamGroup::phi);
    gen.insert(gen.end(), phi.begin(), phi.end());
    OptimizerState d_opt, g_opt;
    d_opt.lr = g_opt.lr = 5e-3;
    for (std::size_t step = 0; step < 300; ++step) {
        CounterRng rng(9, 100 + step);
        const Sequence& seq = data[step % data.size()];
        {
            Tape tape;
            ModelGraph g(tape, p, s);
            const std::vector<Var> real{g.discriminate(sample_prior_sequence(g, 8, rng.normal_tensor({8, s.n_z}), false))};
            const std::vector<Var> fake{g.discriminate(sample_posterior_sequence(g, seq, rng.normal_tensor({8, s.n_z})))};
            adam_step(p, restrict_to(backward(tape, adversarial_losses(real, fake).disc), psi, p), d_opt);
        }
        Tape tape;
        ModelGraph g(tape, p, s);
        const SequenceNoise noise{rng.normal_tensor({8, s.n_z}), rng.normal_tensor({8, s.n_z})};
        const Var loss = scale(combined_objective_terms(g, seq, noise, 0.1, false).combined, -1.0 / 8.0);
        Gradients grads = restrict_to(backward(tape, loss), gen, p);
        clip_global_norm(grads, 5.0);
        adam_step(p, grads, g_opt);
    }
    const double after = samples(2);
    MESSAGE("energy distance " << before << " -> " << after);
    CHECK(after < before);
}
