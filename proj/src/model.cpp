#include "avfp/model.hpp"

#include <cmath>
#include <cstring>
#include <map>

#include "avfp/error.hpp"
#include "avfp/rng.hpp"

namespace avfp {

void NetworkSpec::validate() const {
    auto positive = [](std::size_t v, const char* name) {
        if (v == 0) throw ConfigError(std::string("network spec: ") + name + " must be positive");
    };
    positive(n_x, "n_x");
    positive(n_u, "n_u");
    positive(n_z, "n_z");
    positive(n_h, "n_h");
    if (n_z > n_h) throw ConfigError("network spec: n_z must not exceed n_h");
    if (!(rul_scale > 0.0) || !std::isfinite(rul_scale)) throw ConfigError("network spec: rul_scale must be positive");
}

const char* group_name(ParamGroup g) noexcept {
    switch (g) {
        case ParamGroup::theta: return "theta";
        case ParamGroup::phi: return "phi";
        case ParamGroup::psi: return "psi";
        case ParamGroup::rho: return "rho";
    }
    return "?";
}

namespace {

constexpr std::uint64_t kInitStream = 0x4000000000001a17ULL;

enum class Init { glorot, zero };

struct LayoutEntry {
    std::string name;
    ParamGroup group;
    Shape shape;
    Init init;
};

class LayoutBuilder {
public:
    void dense(const std::string& name, ParamGroup g, std::size_t out, std::size_t in) {
        entries.push_back({name + ".w", g, {out, in}, Init::glorot});
        entries.push_back({name + ".b", g, {out}, Init::zero});
    }
    void cell(const std::string& name, ParamGroup g, std::size_t in, std::size_t hidden) {
        dense(name + ".reset", g, hidden, in + hidden);
        dense(name + ".update", g, hidden, in + hidden);
        dense(name + ".candidate", g, hidden, in + hidden);
        entries.push_back({name + ".h0", g, {hidden}, Init::zero});
    }
    void head(const std::string& name, ParamGroup g, std::size_t in, std::size_t hidden, std::size_t out) {
        std::size_t width = in;
        if (hidden > 0) {
            dense(name + ".hidden", g, hidden, in);
            width = hidden;
        }
        dense(name + ".mean", g, out, width);
        dense(name + ".log_var", g, out, width);
    }
    void mlp(const std::string& name, ParamGroup g, std::size_t in, std::size_t hidden) {
        std::size_t width = in;
        if (hidden > 0) {
            dense(name + ".hidden", g, hidden, in);
            width = hidden;
        }
        dense(name + ".out", g, 1, width);
    }

    std::vector<LayoutEntry> entries;
};

std::vector<LayoutEntry> layout(const NetworkSpec& s) {
    s.validate();
    LayoutBuilder b;
    b.cell("encoder", ParamGroup::phi, s.n_x + s.n_u + s.n_z, s.n_h);
    b.head("recognizer", ParamGroup::phi, s.n_h, s.recognizer_hidden, s.n_z);
    b.cell("prior_cell", ParamGroup::theta, s.n_z, s.n_h);
    b.head("prior", ParamGroup::theta, s.n_z + s.n_h, s.prior_hidden, s.n_z);
    b.head("emitter", ParamGroup::theta, s.n_z + s.n_h, s.emitter_hidden, s.n_x);
    b.mlp("discriminator", ParamGroup::psi, s.n_z, s.discriminator_hidden);
    b.mlp("rul_head", ParamGroup::rho, s.n_h + s.n_z, s.rul_hidden);
    return b.entries;
}

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

ModelParams ModelParams::initialize(const NetworkSpec& spec, std::uint64_t seed) {
    ModelParams p;
    CounterRng rng(seed, kInitStream);
    for (auto& e : layout(spec)) {
        Tensor t = Tensor::zeros(e.shape);
        if (e.init == Init::glorot) {
            const double limit = std::sqrt(6.0 / static_cast<double>(e.shape[0] + e.shape[1]));
            for (double& v : t.mutable_data()) v = rng.uniform(-limit, limit);
        }
        p.entries_.push_back({e.name, e.group, std::move(t)});
    }
    return p;
}

ModelParams ModelParams::zeros(const NetworkSpec& spec) {
    ModelParams p;
    for (auto& e : layout(spec)) p.entries_.push_back({e.name, e.group, Tensor::zeros(e.shape)});
    return p;
}

ModelParams ModelParams::from_entries(std::vector<Entry> entries) {
    ModelParams p;
    for (auto& e : entries) {
        if (p.find(e.name)) throw ConfigError("duplicate parameter '" + e.name + "'");
        p.entries_.push_back(std::move(e));
    }
    return p;
}

std::optional<ParamId> ModelParams::find(const std::string& name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].name == name) return ParamId{static_cast<std::uint32_t>(i)};
    }
    return std::nullopt;
}

ParamId ModelParams::id(const std::string& name) const {
    if (auto found = find(name)) return *found;
    throw ConfigError("unknown parameter '" + name + "'");
}

std::vector<ParamId> ModelParams::group(ParamGroup g) const {
    std::vector<ParamId> ids;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].group == g) ids.push_back(ParamId{static_cast<std::uint32_t>(i)});
    }
    return ids;
}

std::uint64_t ModelParams::group_hash(ParamGroup g) const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& e : entries_) {
        if (e.group != g) continue;
        h = fnv1a(h, e.name.data(), e.name.size());
        h = fnv1a(h, e.value.data().data(), e.value.size() * sizeof(double));
    }
    return h;
}

bool operator==(const ModelParams::Entry& a, const ModelParams::Entry& b) {
    return a.name == b.name && a.group == b.group && a.value == b.value;
}

bool operator==(const ModelParams& a, const ModelParams& b) { return a.entries_ == b.entries_; }

// ---------------------------------------------------------------------------

GaussianDiag GaussianDiag::make(Var mean, Var raw_log_var) {
    if (mean.shape() != raw_log_var.shape()) {
        throw ShapeError("gaussian: mean " + shape_string(mean.shape()) + " vs log_var " +
                         shape_string(raw_log_var.shape()));
    }
    return {mean, clamp(raw_log_var, kMinLogVar, kMaxLogVar)};
}

GaussianDiag GaussianDiag::standard(Tape& tape, std::size_t dim) {
    const Var zero = tape.constant(Tensor::zeros({dim}));
    return {zero, zero};
}

GaussianValues values_of(const GaussianDiag& g) { return {g.mean.value().values(), g.log_var.value().values()}; }

// ---------------------------------------------------------------------------

ModelGraph::ModelGraph(Tape& tape, const ModelParams& params, const NetworkSpec& spec)
    : tape_(tape), params_(params), spec_(spec), bound_(params.size()) {
    spec_.validate();
    const auto expected = layout(spec);
    if (expected.size() != params.size()) throw ShapeError("model parameters do not match network spec");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& e = params.entries()[i];
        if (e.name != expected[i].name || e.value.shape() != expected[i].shape) {
            throw ShapeError("parameter '" + e.name + "' has shape " + shape_string(e.value.shape()) +
                             ", network spec expects '" + expected[i].name + "' " + shape_string(expected[i].shape));
        }
    }
    auto dense_ids = [&](const std::string& name) { return Dense{params.id(name + ".w"), params.id(name + ".b")}; };
    auto cell_ids = [&](const std::string& name) {
        return Cell{dense_ids(name + ".reset"), dense_ids(name + ".update"), dense_ids(name + ".candidate"),
                    params.id(name + ".h0")};
    };
    auto head_ids = [&](const std::string& name, std::size_t hidden) {
        Head h{std::nullopt, dense_ids(name + ".mean"), dense_ids(name + ".log_var")};
        if (hidden > 0) h.hidden = dense_ids(name + ".hidden");
        return h;
    };
    auto mlp_ids = [&](const std::string& name, std::size_t hidden) {
        Mlp m{std::nullopt, dense_ids(name + ".out")};
        if (hidden > 0) m.hidden = dense_ids(name + ".hidden");
        return m;
    };
    encoder_ = cell_ids("encoder");
    recognizer_ = head_ids("recognizer", spec.recognizer_hidden);
    prior_cell_ = cell_ids("prior_cell");
    prior_ = head_ids("prior", spec.prior_hidden);
    emitter_ = head_ids("emitter", spec.emitter_hidden);
    discriminator_ = mlp_ids("discriminator", spec.discriminator_hidden);
    rul_ = mlp_ids("rul_head", spec.rul_hidden);
}


Var ModelGraph::param(ParamId id) {
    auto& slot = bound_.at(id.value);
    if (!slot) slot = tape_.parameter(id, params_.value(id));
    return *slot;
}

Var ModelGraph::param(const std::string& name) { return param(params_.id(name)); }

Var ModelGraph::zeros(std::size_t n) { return tape_.constant(Tensor::zeros({n})); }

void ModelGraph::check_dim(Var v, std::size_t n, const char* what) const {
    if (v.value().rank() != 1 || v.size() != n) {
        throw ShapeError(std::string(what) + ": expected vector of length " + std::to_string(n) + ", got " +
                         shape_string(v.shape()));
    }
}

Var ModelGraph::dense(const Dense& d, Var x) { return matmul(param(d.w), x) + param(d.b); }

Var ModelGraph::cell_step(const Cell& c, Var h, Var in) {
    const Var joint = concat({in, h});
    const Var reset = sigmoid(dense(c.reset, joint));
    const Var update = sigmoid(dense(c.update, joint));
    const Var candidate = tanh(dense(c.candidate, concat({in, reset * h})));
    return h + update * (candidate - h);
}

GaussianDiag ModelGraph::head(const Head& h, Var in) {
    const Var features = h.hidden ? tanh(dense(*h.hidden, in)) : in;
    return GaussianDiag::make(dense(h.mean, features), dense(h.log_var, features));
}

Var ModelGraph::mlp(const Mlp& m, Var in) {
    const Var features = m.hidden ? tanh(dense(*m.hidden, in)) : in;
    return dense(m.out, features);
}

HistoryState ModelGraph::initial_history() { return {param(encoder_.initial), 0}; }

HistoryState ModelGraph::encode_history(const HistoryState& prev, Var x, Var u, Var z_prev) {
    check_dim(prev.h, spec_.n_h, "encode_history(h)");
    check_dim(x, spec_.n_x, "encode_history(x)");
    check_dim(u, spec_.n_u, "encode_history(u)");
    check_dim(z_prev, spec_.n_z, "encode_history(z_prev)");
    return {cell_step(encoder_, prev.h, concat({x, u, z_prev})), prev.t + 1};
}

GaussianDiag ModelGraph::recognize(const HistoryState& h) {
    check_dim(h.h, spec_.n_h, "recognize");
    return head(recognizer_, h.h);
}

HistoryState ModelGraph::initial_prior_history() { return {param(prior_cell_.initial), 0}; }

HistoryState ModelGraph::advance_prior_history(const HistoryState& prev, Var z_prev) {
    check_dim(prev.h, spec_.n_h, "advance_prior_history(h)");
    check_dim(z_prev, spec_.n_z, "advance_prior_history(z_prev)");
    return {cell_step(prior_cell_, prev.h, z_prev), prev.t + 1};
}

GaussianDiag ModelGraph::transition_prior(Var z_prev, const HistoryState& prior_history, bool markovian) {
    check_dim(z_prev, spec_.n_z, "transition_prior(z_prev)");
    check_dim(prior_history.h, spec_.n_h, "transition_prior(h)");
    const Var history = markovian ? zeros(spec_.n_h) : prior_history.h;
    return head(prior_, concat({z_prev, history}));
}

GaussianDiag ModelGraph::emit(const HistoryState& h_before, Var z, bool markovian) {
    check_dim(z, spec_.n_z, "emit(z)");
    check_dim(h_before.h, spec_.n_h, "emit(h)");
    const Var history = markovian ? zeros(spec_.n_h) : h_before.h;
    return head(emitter_, concat({z, history}));
}

Var ModelGraph::sample_reparam(const GaussianDiag& g, Var noise) {
    if (noise.shape() != g.mean.shape()) {
        throw ShapeError("sample_reparam: noise " + shape_string(noise.shape()) + " vs distribution " +
                         shape_string(g.mean.shape()));
    }
    return g.mean + exp(scale(g.log_var, 0.5)) * noise;
}

Var ModelGraph::discriminator_logit(std::span<const Var> z_seq) {
    if (z_seq.empty()) throw ShapeError("discriminate: empty latent sequence");
    Var pooled;
    for (std::size_t t = 0; t < z_seq.size(); ++t) {
        check_dim(z_seq[t], spec_.n_z, "discriminate");
        const Var f = discriminator_.hidden ? tanh(dense(*discriminator_.hidden, z_seq[t])) : z_seq[t];
        pooled = t == 0 ? f : pooled + f;
    }
    pooled = scale(pooled, 1.0 / static_cast<double>(z_seq.size()));
    return matmul(param(discriminator_.out.w), pooled) + param(discriminator_.out.b);
}

Var ModelGraph::discriminate(std::span<const Var> z_seq) {
    return sigmoid(clamp(discriminator_logit(z_seq), -kLogitBound, kLogitBound));
}

Var ModelGraph::rul_head(const HistoryState& h, Var z_mean) {
    check_dim(h.h, spec_.n_h, "rul_head(h)");
    check_dim(z_mean, spec_.n_z, "rul_head(z)");
    return softplus(scale(mlp(rul_, concat({h.h, z_mean})), spec_.rul_scale));
}

}  // namespace avfp
