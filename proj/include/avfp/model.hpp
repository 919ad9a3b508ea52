#pragma once

// Networks of the sequential latent-variable model.
//
//   recognition history  h_t = cell_φ(h_{t-1}, [x_t; u_t; z_{t-1}])
//   recognition          q_φ(z_t | h_t)
//   prior history        g_t = cell_θ(g_{t-1}, z_{t-1})          (t >= 2)
//   transition prior     p_θ(z_t | z_{t-1}, g_t),  p(z_1) = N(0, I)
//   emission             p_θ(x_t | z_t, h_{t-1})
//   discriminator        D_ψ(z_{1:T})  prior samples = real, recognition samples = fake
//   RUL readout          softplus(scale * MLP_ρ([h_t; mean z_t]))
//
// In Markovian mode the history inputs of the prior and emission heads are
// replaced by zeros, so emission depends on z_t only and the prior on
// z_{t-1} only. Parameter shapes are identical in both modes.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "avfp/autodiff.hpp"

namespace avfp {

struct NetworkSpec {
    std::size_t n_x = 0;  // sensor channels
    std::size_t n_u = 0;  // operating-setting channels
    std::size_t n_z = 8;
    std::size_t n_h = 32;
    // Hidden width of each feed-forward head; 0 makes the head affine.
    std::size_t recognizer_hidden = 32;
    std::size_t prior_hidden = 32;
    std::size_t emitter_hidden = 32;
    std::size_t discriminator_hidden = 32;
    std::size_t rul_hidden = 32;
    double rul_scale = 125.0;

    /// Throws ConfigError on a violated invariant.
    void validate() const;
    friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

enum class ParamGroup : std::uint8_t { theta, phi, psi, rho };

const char* group_name(ParamGroup g) noexcept;

/// Every learnable array of the model, addressed by ParamId (its index).
class ModelParams {
public:
    struct Entry {
        std::string name;
        ParamGroup group;
        Tensor value;
    };

    ModelParams() = default;
    /// Glorot-uniform weights, zero biases, zero initial history states.
    static ModelParams initialize(const NetworkSpec& spec, std::uint64_t seed);
    static ModelParams zeros(const NetworkSpec& spec);
    /// Arbitrary parameter set (names must be unique); not usable with
    /// ModelGraph.
    static ModelParams from_entries(std::vector<Entry> entries);

    std::size_t size() const noexcept { return entries_.size(); }
    const Entry& entry(ParamId id) const { return entries_.at(id.value); }
    const Tensor& value(ParamId id) const { return entries_.at(id.value).value; }
    Tensor& value(ParamId id) { return entries_.at(id.value).value; }
    const std::vector<Entry>& entries() const noexcept { return entries_; }

    std::optional<ParamId> find(const std::string& name) const;
    ParamId id(const std::string& name) const;
    Tensor& operator[](const std::string& name) { return value(id(name)); }
    const Tensor& operator[](const std::string& name) const { return value(id(name)); }

    std::vector<ParamId> group(ParamGroup g) const;
    /// FNV-1a over the raw bytes of every parameter in `g`.
    std::uint64_t group_hash(ParamGroup g) const;

    friend bool operator==(const ModelParams& a, const ModelParams& b);

private:
    std::vector<Entry> entries_;
};

bool operator==(const ModelParams::Entry& a, const ModelParams::Entry& b);

/// Diagonal Gaussian on a tape. log_var is clamped to [-10, 10] on
/// construction through make().
struct GaussianDiag {
    Var mean;
    Var log_var;

    static constexpr double kMinLogVar = -10.0;
    static constexpr double kMaxLogVar = 10.0;

    static GaussianDiag make(Var mean, Var raw_log_var);
    static GaussianDiag standard(Tape& tape, std::size_t dim);
    std::size_t dim() const { return mean.size(); }
};

struct HistoryState {
    Var h;
    std::size_t t = 0;
};

/// Binds a ModelParams to one tape. Parameter leaves are created lazily, once
/// per tape, so gradients of parameters shared across time steps accumulate.
class ModelGraph {
public:
    ModelGraph(Tape& tape, const ModelParams& params, const NetworkSpec& spec);

    Tape& tape() noexcept { return tape_; }
    const NetworkSpec& spec() const noexcept { return spec_; }

    HistoryState initial_history();
    HistoryState encode_history(const HistoryState& prev, Var x, Var u, Var z_prev);
    GaussianDiag recognize(const HistoryState& h);

    HistoryState initial_prior_history();
    HistoryState advance_prior_history(const HistoryState& prev, Var z_prev);
    /// Prior over z_t for t >= 2. `prior_history` must summarize z_{1:t-1}.
    GaussianDiag transition_prior(Var z_prev, const HistoryState& prior_history, bool markovian);

    /// Emission over x_t given z_t and the recognition history before x_t
    /// was absorbed.
    GaussianDiag emit(const HistoryState& h_before, Var z, bool markovian);

    Var sample_reparam(const GaussianDiag& g, Var noise);
    Var discriminate(std::span<const Var> z_seq);
    Var rul_head(const HistoryState& h, Var z_mean);

    /// Pre-sigmoid discriminator output, before clamping.
    Var discriminator_logit(std::span<const Var> z_seq);

    Var param(ParamId id);
    Var param(const std::string& name);
    Var zeros(std::size_t n);

    static constexpr double kLogitBound = 15.0;

private:
    struct Dense {
        ParamId w, b;
    };
    struct Cell {
        Dense reset, update, candidate;
        ParamId initial;
    };
    struct Head {
        std::optional<Dense> hidden;
        Dense mean, log_var;
    };
    struct Mlp {
        std::optional<Dense> hidden;
        Dense out;
    };

    Var dense(const Dense& d, Var x);
    Var cell_step(const Cell& c, Var h, Var in);
    GaussianDiag head(const Head& h, Var in);
    Var mlp(const Mlp& m, Var in);
    void check_dim(Var v, std::size_t n, const char* what) const;

    Tape& tape_;
    const ModelParams& params_;
    NetworkSpec spec_;
    std::vector<std::optional<Var>> bound_;

    Cell encoder_;
    Head recognizer_;
    Cell prior_cell_;
    Head prior_;
    Head emitter_;
    Mlp discriminator_;
    Mlp rul_;
};

/// Plain-value view of a GaussianDiag.
struct GaussianValues {
    std::vector<double> mean;
    std::vector<double> log_var;
};

GaussianValues values_of(const GaussianDiag& g);

}  // namespace avfp
