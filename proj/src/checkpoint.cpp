#include "avfp/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "avfp/error.hpp"

namespace avfp {

namespace {

class Writer {
public:
    void u32(std::uint32_t v) { le(v, 4); }
    void u64(std::uint64_t v) { le(v, 8); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void bytes(const std::string& s) { out_ += s; }
    std::string& str() { return out_; }

private:
    void le(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    std::string out_;
};

class Reader {
public:
    Reader(const char* p, std::size_t n) : p_(p), n_(n) {}
    std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
    std::uint64_t u64() { return le(8); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s(p_ + pos_, n);
        pos_ += n;
        return s;
    }
    bool at_end() const { return pos_ == n_; }
    std::size_t remaining() const { return n_ - pos_; }

private:
    void need(std::size_t n) const {
        if (n > n_ - pos_) throw CheckpointError("checkpoint truncated");
    }
    std::uint64_t le(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= std::uint64_t{static_cast<unsigned char>(p_[pos_ + i])} << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }
    const char* p_;
    std::size_t n_;
    std::size_t pos_ = 0;
};

constexpr std::size_t kHeaderBytes = 4 + 4 + 8;

// --- conversion helpers ----------------------------------------------------

double hi32(std::uint64_t v) { return static_cast<double>(v >> 32); }
double lo32(std::uint64_t v) { return static_cast<double>(v & 0xffffffffULL); }

std::uint64_t join(double hi, double lo) {
    auto part = [](double d) {
        if (!(d >= 0.0 && d <= 4294967295.0) || d != std::floor(d)) throw CheckpointError("corrupt integer field");
        return static_cast<std::uint64_t>(d);
    };
    return (part(hi) << 32) | part(lo);
}

std::uint64_t as_count(double d) {
    if (!(d >= 0.0 && d <= 9007199254740992.0) || d != std::floor(d)) throw CheckpointError("corrupt integer field");
    return static_cast<std::uint64_t>(d);
}

NamedArray vec(std::string name, std::vector<double> data) {
    NamedArray a{std::move(name), {data.size()}, std::move(data)};
    return a;
}

NamedArray tensor_array(std::string name, const Tensor& t) {
    NamedArray a;
    a.name = std::move(name);
    a.shape.assign(t.shape().begin(), t.shape().end());
    a.data = t.values();
    return a;
}

template <class Int>
std::vector<double> to_doubles(const std::vector<Int>& v) {
    return std::vector<double>(v.begin(), v.end());
}

class Table {
public:
    explicit Table(const std::vector<NamedArray>& arrays) {
        for (const auto& a : arrays) {
            if (!map_.emplace(a.name, &a).second) throw CheckpointError("duplicate entry '" + a.name + "'");
        }
    }
    const NamedArray& get(const std::string& name) const {
        const auto it = map_.find(name);
        if (it == map_.end()) throw CheckpointError("missing entry '" + name + "'");
        return *it->second;
    }
    const std::vector<double>& vec(const std::string& name, std::size_t expected) const {
        const auto& a = get(name);
        if (a.data.size() != expected) {
            throw CheckpointError("entry '" + name + "' has " + std::to_string(a.data.size()) + " values, expected " +
                                  std::to_string(expected));
        }
        return a.data;
    }
    const std::vector<double>& any(const std::string& name) const { return get(name).data; }
    bool has(const std::string& name) const { return map_.contains(name); }
    std::vector<std::string> with_prefix(const std::string& prefix) const {
        std::vector<std::string> out;
        for (auto it = map_.lower_bound(prefix); it != map_.end() && it->first.starts_with(prefix); ++it) {
            out.push_back(it->first);
        }
        return out;
    }

private:
    std::map<std::string, const NamedArray*> map_;
};

Tensor tensor_of(const NamedArray& a) {
    Shape shape(a.shape.begin(), a.shape.end());
    try {
        return Tensor(std::move(shape), a.data);
    } catch (const Error& e) {
        throw CheckpointError("entry '" + a.name + "': " + e.what());
    }
}

std::vector<std::size_t> to_indices(const std::vector<double>& v) {
    std::vector<std::size_t> out;
    for (double d : v) out.push_back(static_cast<std::size_t>(as_count(d)));
    return out;
}

// --- sections ---------------------------------------------------------------

std::vector<double> spec_values(const NetworkSpec& s) {
    return {static_cast<double>(s.n_x),           static_cast<double>(s.n_u),
            static_cast<double>(s.n_z),           static_cast<double>(s.n_h),
            static_cast<double>(s.recognizer_hidden), static_cast<double>(s.prior_hidden),
            static_cast<double>(s.emitter_hidden),    static_cast<double>(s.discriminator_hidden),
            static_cast<double>(s.rul_hidden),        s.rul_scale};
}

NetworkSpec spec_from(const std::vector<double>& v) {
    NetworkSpec s;
    s.n_x = as_count(v[0]);
    s.n_u = as_count(v[1]);
    s.n_z = as_count(v[2]);
    s.n_h = as_count(v[3]);
    s.recognizer_hidden = as_count(v[4]);
    s.prior_hidden = as_count(v[5]);
    s.emitter_hidden = as_count(v[6]);
    s.discriminator_hidden = as_count(v[7]);
    s.rul_hidden = as_count(v[8]);
    s.rul_scale = v[9];
    return s;
}

std::vector<double> config_values(const TrainConfig& c) {
    return {hi32(c.seed),
            lo32(c.seed),
            static_cast<double>(c.epochs),
            static_cast<double>(c.trajectories_per_batch),
            c.lr,
            c.beta1,
            c.beta2,
            c.eps,
            c.lambda_adv,
            static_cast<double>(c.disc_steps_per_gen_step),
            c.gradient_clip_norm,
            c.markovian ? 1.0 : 0.0,
            c.rul_supervision ? 1.0 : 0.0,
            static_cast<double>(c.eval_every),
            static_cast<double>(c.max_steps),
            c.validation_fraction,
            c.rul_cap};
}

TrainConfig config_from(const std::vector<double>& v) {
    TrainConfig c;
    c.seed = join(v[0], v[1]);
    c.epochs = as_count(v[2]);
    c.trajectories_per_batch = as_count(v[3]);
    c.lr = v[4];
    c.beta1 = v[5];
    c.beta2 = v[6];
    c.eps = v[7];
    c.lambda_adv = v[8];
    c.disc_steps_per_gen_step = as_count(v[9]);
    c.gradient_clip_norm = v[10];
    c.markovian = v[11] != 0.0;
    c.rul_supervision = v[12] != 0.0;
    c.eval_every = as_count(v[13]);
    c.max_steps = as_count(v[14]);
    c.validation_fraction = v[15];
    c.rul_cap = v[16];
    return c;
}

void put_params(std::vector<NamedArray>& out, const std::string& prefix, const ModelParams& p) {
    for (const auto& e : p.entries()) out.push_back(tensor_array(prefix + e.name, e.value));
}

ModelParams get_params(const Table& t, const std::string& prefix, const NetworkSpec& spec) {
    ModelParams p = ModelParams::zeros(spec);
    for (std::size_t i = 0; i < p.size(); ++i) {
        const ParamId id{static_cast<std::uint32_t>(i)};
        const std::string name = prefix + p.entry(id).name;
        Tensor v = tensor_of(t.get(name));
        if (v.shape() != p.value(id).shape()) {
            throw CheckpointError("entry '" + name + "' has shape " + shape_string(v.shape()) + ", expected " +
                                  shape_string(p.value(id).shape()) + " for the stored network (n_x " +
                                  std::to_string(spec.n_x) + ", n_u " + std::to_string(spec.n_u) + ", n_z " +
                                  std::to_string(spec.n_z) + ", n_h " + std::to_string(spec.n_h) + ")");
        }
        p.value(id) = std::move(v);
    }
    if (t.with_prefix(prefix).size() != p.size()) throw CheckpointError("unexpected entries under '" + prefix + "'");
    return p;
}

void put_optimizer(std::vector<NamedArray>& out, const std::string& prefix, const OptimizerState& s,
                   const ModelParams& p) {
    out.push_back(vec(prefix + "state", {s.lr, s.beta1, s.beta2, s.eps, hi32(s.t), lo32(s.t), hi32(s.skipped),
                                         lo32(s.skipped)}));
    for (const auto& [id, mv] : s.moments) {
        const std::string& name = p.entry(id).name;
        out.push_back(tensor_array(prefix + "m/" + name, mv.m));
        out.push_back(tensor_array(prefix + "v/" + name, mv.v));
    }
}

OptimizerState get_optimizer(const Table& t, const std::string& prefix, const ModelParams& p) {
    OptimizerState s;
    const auto& v = t.vec(prefix + "state", 8);
    s.lr = v[0];
    s.beta1 = v[1];
    s.beta2 = v[2];
    s.eps = v[3];
    s.t = join(v[4], v[5]);
    s.skipped = join(v[6], v[7]);
    const std::string m_prefix = prefix + "m/";
    const auto names = t.with_prefix(m_prefix);
    for (const auto& full : names) {
        const std::string name = full.substr(m_prefix.size());
        const auto id = p.find(name);
        if (!id) throw CheckpointError("optimizer moment for unknown parameter '" + name + "'");
        AdamMoments mv{tensor_of(t.get(full)), tensor_of(t.get(prefix + "v/" + name))};
        if (mv.m.shape() != p.value(*id).shape() || mv.v.shape() != p.value(*id).shape()) {
            throw CheckpointError("optimizer moment shape mismatch for '" + name + "'");
        }
        s.moments.emplace(*id, std::move(mv));
    }
    if (t.with_prefix(prefix + "v/").size() != names.size()) throw CheckpointError("unpaired optimizer moments");
    return s;
}

}  // namespace

std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string encode_arrays(const std::vector<NamedArray>& arrays, std::uint32_t version) {
    Writer payload;
    payload.u32(static_cast<std::uint32_t>(arrays.size()));
    for (const auto& a : arrays) {
        std::uint64_t n = 1;
        for (auto d : a.shape) n *= d;
        if (n != a.data.size()) throw ShapeError("array '" + a.name + "' data does not match its shape");
        payload.u32(static_cast<std::uint32_t>(a.name.size()));
        payload.bytes(a.name);
        payload.u32(static_cast<std::uint32_t>(a.shape.size()));
        for (auto d : a.shape) payload.u64(d);
        for (double v : a.data) payload.f64(v);
    }
    const std::string& body = payload.str();
    Writer file;
    file.bytes(std::string(kCheckpointMagic, 4));
    file.u32(version);
    file.u64(body.size());
    file.bytes(body);
    file.u64(fnv1a64(body.data(), body.size()));
    return std::move(file.str());
}

std::vector<NamedArray> decode_arrays(const std::string& bytes) {
    if (bytes.size() < kHeaderBytes + 8) throw CheckpointError("checkpoint truncated");
    if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) throw CheckpointError("not a checkpoint (bad magic)");
    Reader header(bytes.data() + 4, kHeaderBytes - 4);
    const std::uint32_t version = header.u32();
    if (version != kCheckpointVersion) {
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                              std::to_string(kCheckpointVersion) + ")");
    }
    const std::uint64_t length = header.u64();
    if (length > bytes.size() - kHeaderBytes - 8) throw CheckpointError("checkpoint truncated");
    if (length != bytes.size() - kHeaderBytes - 8) throw CheckpointError("trailing bytes after checkpoint");
    const char* body = bytes.data() + kHeaderBytes;
    Reader trailer(body + length, 8);
    if (trailer.u64() != fnv1a64(body, length)) throw CheckpointError("checkpoint checksum mismatch");

    Reader r(body, length);
    const std::uint32_t count = r.u32();
    std::vector<NamedArray> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedArray a;
        a.name = r.bytes(r.u32());
        const std::uint32_t rank = r.u32();
        std::uint64_t n = 1;
        for (std::uint32_t k = 0; k < rank; ++k) {
            const std::uint64_t d = r.u64();
            if (d != 0 && n > r.remaining() / d) throw CheckpointError("entry '" + a.name + "' is larger than the file");
            n *= d;
            a.shape.push_back(d);
        }
        if (n > r.remaining() / 8) throw CheckpointError("checkpoint truncated");
        a.data.reserve(n);
        for (std::uint64_t k = 0; k < n; ++k) a.data.push_back(r.f64());
        out.push_back(std::move(a));
    }
    if (!r.at_end()) throw CheckpointError("unparsed bytes in checkpoint payload");
    return out;
}

std::vector<NamedArray> to_arrays(const Checkpoint& c) {
    std::vector<NamedArray> out;
    out.push_back(vec("meta/spec", spec_values(c.spec)));
    out.push_back(vec("meta/config", config_values(c.config)));

    const auto& s = c.stats;
    out.push_back(vec("stats/setting_mean", s.setting_mean));
    out.push_back(vec("stats/setting_std", s.setting_std));
    out.push_back(vec("stats/sensor_mean", s.sensor_mean));
    out.push_back(vec("stats/sensor_std", s.sensor_std));
    out.push_back(vec("stats/kept_settings", to_doubles(s.kept_settings)));
    out.push_back(vec("stats/kept_sensors", to_doubles(s.kept_sensors)));
    out.push_back(vec("stats/dropped_settings", to_doubles(s.dropped_settings)));
    out.push_back(vec("stats/dropped_sensors", to_doubles(s.dropped_sensors)));
    out.push_back(vec("stats/meta", {static_cast<double>(s.raw_settings), static_cast<double>(s.raw_sensors), s.rul_cap}));

    put_params(out, "param/", c.params);
    put_params(out, "best/", c.best_params);
    put_optimizer(out, "adam/gen/", c.gen_opt, c.params);
    put_optimizer(out, "adam/disc/", c.disc_opt, c.params);
    put_optimizer(out, "adam/rul/", c.rul_opt, c.params);

    out.push_back(vec("rng/state", {hi32(c.rng_seed), lo32(c.rng_seed), hi32(c.rng_position), lo32(c.rng_position)}));
    out.push_back(vec("train/progress",
                      {static_cast<double>(c.step), static_cast<double>(c.consecutive_failures),
                       static_cast<double>(c.skipped_batches), static_cast<double>(c.best_step),
                       c.best_validation_rmse, c.has_best ? 1.0 : 0.0}));

    NamedArray trace{"train/trace", {c.trace.size(), 3}, {}};
    for (const auto& p : c.trace) {
        trace.data.insert(trace.data.end(), {static_cast<double>(p.step), p.validation_rmse,
                                             p.test_rmse ? *p.test_rmse : std::numeric_limits<double>::quiet_NaN()});
    }
    out.push_back(std::move(trace));
    NamedArray steps{"train/steps", {c.steps.size(), 4}, {}};
    for (const auto& r : c.steps) {
        steps.data.insert(steps.data.end(), {r.skipped ? 1.0 : 0.0, r.elbo_per_step, r.disc_loss, r.rul_loss});
    }
    out.push_back(std::move(steps));
    return out;
}

Checkpoint from_arrays(const std::vector<NamedArray>& arrays) {
    const Table t(arrays);
    Checkpoint c;
    c.spec = spec_from(t.vec("meta/spec", 10));
    c.config = config_from(t.vec("meta/config", 17));
    try {
        c.spec.validate();
        c.config.validate();
    } catch (const ConfigError& e) {
        throw CheckpointError(std::string("invalid stored configuration: ") + e.what());
    }

    auto& s = c.stats;
    s.setting_mean = t.any("stats/setting_mean");
    s.setting_std = t.any("stats/setting_std");
    s.sensor_mean = t.any("stats/sensor_mean");
    s.sensor_std = t.any("stats/sensor_std");
    s.kept_settings = to_indices(t.any("stats/kept_settings"));
    s.kept_sensors = to_indices(t.any("stats/kept_sensors"));
    s.dropped_settings = to_indices(t.any("stats/dropped_settings"));
    s.dropped_sensors = to_indices(t.any("stats/dropped_sensors"));
    const auto& meta = t.vec("stats/meta", 3);
    s.raw_settings = as_count(meta[0]);
    s.raw_sensors = as_count(meta[1]);
    s.rul_cap = meta[2];

    c.params = get_params(t, "param/", c.spec);
    c.best_params = get_params(t, "best/", c.spec);
    c.gen_opt = get_optimizer(t, "adam/gen/", c.params);
    c.disc_opt = get_optimizer(t, "adam/disc/", c.params);
    c.rul_opt = get_optimizer(t, "adam/rul/", c.params);

    const auto& rng = t.vec("rng/state", 4);
    c.rng_seed = join(rng[0], rng[1]);
    c.rng_position = join(rng[2], rng[3]);
    const auto& prog = t.vec("train/progress", 6);
    c.step = as_count(prog[0]);
    c.consecutive_failures = as_count(prog[1]);
    c.skipped_batches = as_count(prog[2]);
    c.best_step = as_count(prog[3]);
    c.best_validation_rmse = prog[4];
    c.has_best = prog[5] != 0.0;

    const auto& trace = t.get("train/trace");
    if (trace.shape.size() != 2 || trace.shape[1] != 3) throw CheckpointError("malformed train/trace");
    for (std::size_t i = 0; i < trace.shape[0]; ++i) {
        MetricPoint p;
        p.step = as_count(trace.data[3 * i]);
        p.validation_rmse = trace.data[3 * i + 1];
        if (!std::isnan(trace.data[3 * i + 2])) p.test_rmse = trace.data[3 * i + 2];
        c.trace.push_back(p);
    }
    const auto& steps = t.get("train/steps");
    if (steps.shape.size() != 2 || steps.shape[1] != 4) throw CheckpointError("malformed train/steps");
    for (std::size_t i = 0; i < steps.shape[0]; ++i) {
        StepRecord r;
        r.skipped = steps.data[4 * i] != 0.0;
        r.elbo_per_step = steps.data[4 * i + 1];
        r.disc_loss = steps.data[4 * i + 2];
        r.rul_loss = steps.data[4 * i + 3];
        c.steps.push_back(r);
    }
    return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    const std::string bytes = encode_arrays(to_arrays(ckpt), ckpt.version);
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw CheckpointError("cannot write " + tmp.string());
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw CheckpointError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open checkpoint " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return from_arrays(decode_arrays(ss.str()));
}

}  // namespace avfp
