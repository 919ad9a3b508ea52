#include "avfp/training.hpp"

#include <algorithm>
#include <cmath>

#include "avfp/checkpoint.hpp"
#include "avfp/error.hpp"
#include "avfp/objectives.hpp"
#include "avfp/rng.hpp"

namespace avfp {

namespace {

constexpr std::uint64_t kEpochStream = 1ULL << 63;
constexpr std::uint64_t kValidationCutStream = 0x7661'6c69'6461'7465ULL;
constexpr std::uint64_t kPhaseBits = 8;

std::uint64_t phase_stream(std::size_t step, std::uint64_t phase) { return (std::uint64_t{step} << kPhaseBits) | phase; }

OptimizerState make_optimizer(const TrainConfig& c) {
    OptimizerState s;
    s.lr = c.lr;
    s.beta1 = c.beta1;
    s.beta2 = c.beta2;
    s.eps = c.eps;
    return s;
}

std::vector<ParamId> ids_of(const ModelParams& p, std::initializer_list<ParamGroup> groups) {
    std::vector<ParamId> out;
    for (ParamGroup g : groups) {
        auto ids = p.group(g);
        out.insert(out.end(), ids.begin(), ids.end());
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

void TrainConfig::validate() const {
    if (trajectories_per_batch == 0) throw ConfigError("trajectories_per_batch must be positive");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("eps must be positive");
    if (!(lambda_adv >= 0.0) || !std::isfinite(lambda_adv)) throw ConfigError("lambda_adv must be non-negative");
    if (disc_steps_per_gen_step == 0) throw ConfigError("disc_steps_per_gen_step must be at least 1");
    if (disc_steps_per_gen_step >= (1U << kPhaseBits) - 1) throw ConfigError("disc_steps_per_gen_step too large");
    if (!(gradient_clip_norm > 0.0)) throw ConfigError("gradient_clip_norm must be positive");
    if (eval_every == 0) throw ConfigError("eval_every must be positive");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
        throw ConfigError("validation_fraction must lie in (0, 1)");
    }
    if (!(rul_cap > 0.0)) throw ConfigError("rul_cap must be positive");
}

PreparedData prepare_data(const Dataset& raw_train, const Dataset* raw_test, const std::map<int, double>* test_rul,
                          double validation_fraction, double rul_cap) {
    if (raw_train.split != Split::train) throw DataError("training data must be run-to-failure units");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
        throw ConfigError("validation_fraction must lie in (0, 1)");
    }
    const std::size_t n = raw_train.units.size();
    if (n < 2) throw DataError("need at least two training units to hold out validation units");

    PreparedData out;
    auto [normalized, stats] = normalize(raw_train);
    stats.rul_cap = rul_cap;
    out.stats = stats;

    std::vector<int> ids;
    for (const auto& [id, unit] : normalized.units) ids.push_back(id);
    auto n_val = static_cast<std::size_t>(std::lround(validation_fraction * static_cast<double>(n)));
    n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
    const std::vector<int> train_ids(ids.begin(), ids.end() - static_cast<std::ptrdiff_t>(n_val));
    const std::vector<int> val_ids(ids.end() - static_cast<std::ptrdiff_t>(n_val), ids.end());

    out.train = normalized.subset(train_ids);
    out.train_targets = build_rul_targets(out.train, rul_cap);

    out.validation.split = Split::test;
    for (int id : val_ids) {
        const auto& unit = normalized.units.at(id);
        const std::size_t T = unit.size();
        std::size_t keep = T;
        if (T >= 2) {
            // Cut independent of the run seed so every run sees the same validation set.
            CounterRng rng(static_cast<std::uint64_t>(id), kValidationCutStream);
            const std::size_t lo = std::max<std::size_t>(1, (3 * T + 9) / 10);
            const std::size_t hi = T - 1;
            keep = lo >= hi ? hi : lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
        }
        out.validation.units.emplace(id, std::vector<TrajectoryRecord>(unit.begin(), unit.begin() + static_cast<std::ptrdiff_t>(keep)));
        out.validation_truth.emplace(id, static_cast<double>(T - keep));
    }

    if (raw_test) {
        if (!test_rul) throw DataError("test trajectories given without ground-truth RUL");
        check_test_rul(*test_rul, *raw_test);
        out.test = normalize(*raw_test, &out.stats).first;
        out.test_truth = *test_rul;
    }
    return out;
}

NetworkSpec network_for(const PreparedData& data, NetworkSpec base) {
    base.n_x = data.n_x();
    base.n_u = data.n_u();
    base.validate();
    return base;
}

Trainer::Trainer(const PreparedData& data, NetworkSpec spec, TrainConfig config)
    : data_(data), spec_(std::move(spec)), config_(std::move(config)) {
    spec_.validate();
    config_.validate();
    if (spec_.n_x != data.n_x() || spec_.n_u != data.n_u()) {
        throw ConfigError("network expects " + std::to_string(spec_.n_x) + " sensors and " + std::to_string(spec_.n_u) +
                          " settings, data has " + std::to_string(data.n_x()) + " and " + std::to_string(data.n_u()));
    }
    if (data.train.units.empty()) throw DataError("no training units");
    if (data.validation.units.empty()) throw DataError("no validation units");

    params_ = ModelParams::initialize(spec_, config_.seed);
    best_params_ = params_;
    gen_opt_ = disc_opt_ = rul_opt_ = make_optimizer(config_);

    for (const auto& [id, unit] : data.train.units) {
        sequences_.emplace(id, to_sequence(unit));
        unit_ids_.push_back(id);
    }
    const std::size_t n = unit_ids_.size();
    const std::size_t B = config_.trajectories_per_batch;
    batches_per_epoch_ = (n + B - 1) / B;
    total_steps_ = config_.epochs * batches_per_epoch_;
    if (config_.max_steps > 0) total_steps_ = std::min(total_steps_, config_.max_steps);
}

Trainer Trainer::resume(const PreparedData& data, const Checkpoint& ckpt) {
    if (!(data.stats == ckpt.stats)) throw DataError("data was normalized with different statistics than the checkpoint");
    Trainer t(data, ckpt.spec, ckpt.config);
    if (ckpt.rng_seed != ckpt.config.seed || ckpt.rng_position != ckpt.step) {
        throw CheckpointError("generator state does not match the training position");
    }
    if (ckpt.step > t.total_steps_) throw CheckpointError("checkpoint step beyond the end of the schedule");
    if (ckpt.steps.size() != ckpt.step) throw CheckpointError("step history length does not match the step count");
    t.params_ = ckpt.params;
    t.best_params_ = ckpt.best_params;
    // Shapes must match the network; a ModelGraph validates them.
    {
        Tape tape;
        ModelGraph g1(tape, t.params_, t.spec_);
        ModelGraph g2(tape, t.best_params_, t.spec_);
    }
    t.gen_opt_ = ckpt.gen_opt;
    t.disc_opt_ = ckpt.disc_opt;
    t.rul_opt_ = ckpt.rul_opt;
    t.step_ = ckpt.step;
    t.consecutive_failures_ = ckpt.consecutive_failures;
    t.skipped_batches_ = ckpt.skipped_batches;
    t.best_step_ = ckpt.best_step;
    t.best_validation_rmse_ = ckpt.best_validation_rmse;
    t.has_best_ = ckpt.has_best;
    t.trace_ = ckpt.trace;
    t.steps_ = ckpt.steps;
    return t;
}

std::vector<int> Trainer::batch_units(std::size_t step) const {
    const std::size_t epoch = step / batches_per_epoch_;
    const std::size_t b = step % batches_per_epoch_;
    CounterRng rng(config_.seed, kEpochStream | epoch);
    const auto perm = permutation(rng, unit_ids_.size());
    const std::size_t B = config_.trajectories_per_batch;
    const std::size_t end = std::min(perm.size(), (b + 1) * B);
    std::vector<int> out;
    for (std::size_t i = b * B; i < end; ++i) out.push_back(unit_ids_[perm[i]]);
    std::sort(out.begin(), out.end());
    return out;
}

double Trainer::discriminator_phase(const std::vector<int>& units, std::uint64_t stream) {
    CounterRng rng(config_.seed, stream);
    Tape tape;
    ModelGraph g(tape, params_, spec_);
    std::vector<Var> d_real, d_fake;
    for (int id : units) {
        const Sequence& seq = sequences_.at(id);
        const std::size_t T = seq.length();
        const Tensor post = rng.normal_tensor({T, spec_.n_z});
        const Tensor prior = rng.normal_tensor({T, spec_.n_z});
        // Samples are fixed inputs here; only ψ sees gradients.
        Tape sample_tape;
        ModelGraph sg(sample_tape, params_, spec_);
        const auto fake = sample_posterior_sequence(sg, seq, post);
        const auto real = sample_prior_sequence(sg, T, prior, config_.markovian);
        std::vector<Var> fake_c, real_c;
        for (const Var& v : fake) fake_c.push_back(tape.constant(v.value()));
        for (const Var& v : real) real_c.push_back(tape.constant(v.value()));
        d_real.push_back(g.discriminate(real_c));
        d_fake.push_back(g.discriminate(fake_c));
    }
    const AdversarialLosses adv = adversarial_losses(d_real, d_fake);
    const Gradients all = backward(tape, adv.disc);
    Gradients grads = restrict_to(all, ids_of(params_, {ParamGroup::psi}), params_);
    clip_global_norm(grads, config_.gradient_clip_norm);
    if (!adam_step(params_, grads, disc_opt_)) throw NumericError("non-finite discriminator gradient");
    return adv.disc.item();
}

double Trainer::generative_phase(const std::vector<int>& units, std::uint64_t stream, StepRecord& record) {
    CounterRng rng(config_.seed, stream);
    Tape tape;
    ModelGraph g(tape, params_, spec_);
    std::optional<Var> objective, rul_sq;
    double elbo_sum = 0.0;
    std::size_t total_T = 0;
    const double cap = data_.stats.rul_cap;

    for (int id : units) {
        const Sequence& seq = sequences_.at(id);
        const std::size_t T = seq.length();
        SequenceNoise noise{rng.normal_tensor({T, spec_.n_z}), rng.normal_tensor({T, spec_.n_z})};
        const ObjectiveTerms terms = combined_objective_terms(g, seq, noise, config_.lambda_adv, config_.markovian);
        objective = objective ? *objective + terms.combined : terms.combined;
        elbo_sum += terms.elbo.item();
        total_T += T;

        if (config_.rul_supervision) {
            const auto& targets = data_.train_targets.at(id);
            for (std::size_t t = 0; t < T; ++t) {
                // Detached inputs: the RUL loss only reaches ρ.
                const HistoryState h{tape.constant(terms.histories[t].h.value()), terms.histories[t].t};
                const Var pred = g.rul_head(h, tape.constant(terms.latent_means[t].value()));
                const Var diff = pred - tape.constant(Tensor::vector({targets[t]}));
                const Var sq = sum(diff * diff);
                rul_sq = rul_sq ? *rul_sq + sq : sq;
            }
        }
    }

    const double inv_T = 1.0 / static_cast<double>(total_T);
    Var loss = scale(*objective, -inv_T);
    if (rul_sq) loss = loss + scale(*rul_sq, inv_T / (cap * cap));
    const Gradients all = backward(tape, loss);

    Gradients gen = restrict_to(all, ids_of(params_, {ParamGroup::theta, ParamGroup::phi}), params_);
    clip_global_norm(gen, config_.gradient_clip_norm);
    std::optional<Gradients> rul;
    if (rul_sq) {
        rul = restrict_to(all, ids_of(params_, {ParamGroup::rho}), params_);
        clip_global_norm(*rul, config_.gradient_clip_norm);
    }
    for (const auto* gs : {&gen, rul ? &*rul : nullptr}) {
        if (!gs) continue;
        for (const auto& [id, t] : *gs) {
            if (!t.all_finite()) throw NumericError("non-finite gradient for " + params_.entry(id).name);
        }
    }
    adam_step(params_, gen, gen_opt_);
    if (rul) adam_step(params_, *rul, rul_opt_);

    record.elbo_per_step = elbo_sum * inv_T;
    record.rul_loss = rul_sq ? rul_sq->item() * inv_T : 0.0;
    return loss.item();
}

void Trainer::step_once() {
    if (done()) return;
    const std::vector<int> units = batch_units(step_);
    StepRecord record;
    const ModelParams before = params_;
    const OptimizerState g0 = gen_opt_, d0 = disc_opt_, r0 = rul_opt_;
    try {
        for (std::size_t j = 0; j < config_.disc_steps_per_gen_step; ++j) {
            record.disc_loss = discriminator_phase(units, phase_stream(step_, 1 + j));
        }
        generative_phase(units, phase_stream(step_, 0), record);
        consecutive_failures_ = 0;
    } catch (const NumericError&) {
        record = StepRecord{};
        record.skipped = true;
    } catch (const DomainError&) {
        record = StepRecord{};
        record.skipped = true;
    }
    if (record.skipped) {
        // A skipped batch leaves no trace in the parameters or moments.
        params_ = before;
        gen_opt_ = g0;
        disc_opt_ = d0;
        rul_opt_ = r0;
        ++skipped_batches_;
        ++consecutive_failures_;
    }
    steps_.push_back(record);
    ++step_;
    if (consecutive_failures_ >= kMaxConsecutiveFailures) {
        throw TrainingAborted("aborted after " + std::to_string(consecutive_failures_) +
                              " consecutive non-finite batches at step " + std::to_string(step_));
    }
    maybe_evaluate();
}

void Trainer::run(std::size_t until) {
    until = std::min(until, total_steps_);
    while (step_ < until) step_once();
}

void Trainer::maybe_evaluate() {
    if (step_ % config_.eval_every != 0 && step_ != total_steps_) return;
    if (!trace_.empty() && trace_.back().step == step_) return;
    const MetricPoint p = evaluate();
    trace_.push_back(p);
    if (!has_best_ || p.validation_rmse < best_validation_rmse_) {
        has_best_ = true;
        best_validation_rmse_ = p.validation_rmse;
        best_step_ = step_;
        best_params_ = params_;
    }
}

MetricPoint Trainer::evaluate() const {
    const PredictionMode mode = config_.rul_supervision ? PredictionMode::supervised : PredictionMode::health_index;
    std::optional<HealthIndexModel> hi;
    if (mode == PredictionMode::health_index) hi = HealthIndexModel::fit(params_, spec_, data_.train, data_.stats.rul_cap);
    const HealthIndexModel* hp = hi ? &*hi : nullptr;
    MetricPoint p;
    p.step = step_;
    p.validation_rmse = rmse(predict_rul(params_, spec_, data_.validation, data_.validation_truth, mode, hp));
    if (data_.test) p.test_rmse = rmse(predict_rul(params_, spec_, *data_.test, data_.test_truth, mode, hp));
    return p;
}

Checkpoint Trainer::checkpoint() const {
    Checkpoint c;
    c.spec = spec_;
    c.config = config_;
    c.stats = data_.stats;
    c.params = params_;
    c.best_params = best_params_;
    c.gen_opt = gen_opt_;
    c.disc_opt = disc_opt_;
    c.rul_opt = rul_opt_;
    c.rng_seed = config_.seed;
    c.rng_position = step_;
    c.step = step_;
    c.consecutive_failures = consecutive_failures_;
    c.skipped_batches = skipped_batches_;
    c.best_step = best_step_;
    c.best_validation_rmse = best_validation_rmse_;
    c.has_best = has_best_;
    c.trace = trace_;
    c.steps = steps_;
    return c;
}

TrainResult Trainer::result() const {
    TrainResult r;
    r.final_params = params_;
    r.best_params = best_params_;
    r.best_step = best_step_;
    r.best_validation_rmse = best_validation_rmse_;
    r.trace = trace_;
    r.steps = steps_;
    r.skipped_batches = skipped_batches_;
    return r;
}

TrainResult train(const PreparedData& data, const NetworkSpec& spec, const TrainConfig& config) {
    Trainer t(data, spec, config);
    t.run_to_end();
    return t.result();
}

}  // namespace avfp
