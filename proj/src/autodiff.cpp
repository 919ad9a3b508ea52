#include "avfp/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "avfp/error.hpp"

namespace avfp {

namespace {

void require_same_shape(Primitive op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(primitive_name(op)) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
    }
}

void require_arity(Primitive op, std::size_t got, std::size_t want) {
    if (got != want) {
        throw ShapeError(std::string(primitive_name(op)) + ": expected " + std::to_string(want) + " inputs, got " +
                         std::to_string(got));
    }
}

double sigmoid_scalar(double x) noexcept {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

template <typename F>
Tensor map_unary(const Tensor& a, F f) {
    std::vector<double> out(a.size());
    const auto in = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
    return Tensor(a.shape(), std::move(out));
}

template <typename F>
Tensor map_binary(const Tensor& a, const Tensor& b, F f) {
    std::vector<double> out(a.size());
    const auto x = a.data();
    const auto y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i], y[i]);
    return Tensor(a.shape(), std::move(out));
}

Tensor matmul_forward(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || (b.rank() != 1 && b.rank() != 2) || a.shape()[1] != b.shape()[0]) {
        throw ShapeError("matmul: cannot multiply " + shape_string(a.shape()) + " by " + shape_string(b.shape()));
    }
    const std::size_t m = a.shape()[0];
    const std::size_t k = a.shape()[1];
    const std::size_t n = b.rank() == 2 ? b.shape()[1] : 1;
    std::vector<double> out(m * n, 0.0);
    const auto A = a.data();
    const auto B = b.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = A[i * k + p];
            const double* brow = &B[p * n];
            double* orow = &out[i * n];
            for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
        }
    }
    if (b.rank() == 1) return Tensor({m}, std::move(out));
    return Tensor({m, n}, std::move(out));
}

bool broadcast_compatible(const Shape& from, const Shape& to) {
    if (shape_size(from) == 1) return true;
    if (from == to) return true;
    return from.size() == 1 && to.size() == 2 && from[0] == to[1];
}

}  // namespace

const char* primitive_name(Primitive op) noexcept {
    switch (op) {
        case Primitive::leaf: return "leaf";
        case Primitive::add: return "add";
        case Primitive::sub: return "sub";
        case Primitive::mul: return "mul";
        case Primitive::matmul: return "matmul";
        case Primitive::tanh: return "tanh";
        case Primitive::sigmoid: return "sigmoid";
        case Primitive::exp: return "exp";
        case Primitive::log: return "log";
        case Primitive::softplus: return "softplus";
        case Primitive::sum: return "sum";
        case Primitive::mean: return "mean";
        case Primitive::concat: return "concat";
        case Primitive::slice: return "slice";
        case Primitive::broadcast: return "broadcast";
        case Primitive::scale: return "scale";
        case Primitive::clamp: return "clamp";
    }
    return "unknown";
}

double softplus(double x) noexcept { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

Tensor apply_primitive(Primitive op, std::span<const Tensor* const> in, const Attributes& attrs) {
    Tensor out;
    switch (op) {
        case Primitive::leaf:
            throw TapeError("leaf is not an evaluable primitive");
        case Primitive::add:
            require_arity(op, in.size(), 2);
            require_same_shape(op, *in[0], *in[1]);
            out = map_binary(*in[0], *in[1], [](double x, double y) { return x + y; });
            break;
        case Primitive::sub:
            require_arity(op, in.size(), 2);
            require_same_shape(op, *in[0], *in[1]);
            out = map_binary(*in[0], *in[1], [](double x, double y) { return x - y; });
            break;
        case Primitive::mul:
            require_arity(op, in.size(), 2);
            require_same_shape(op, *in[0], *in[1]);
            out = map_binary(*in[0], *in[1], [](double x, double y) { return x * y; });
            break;
        case Primitive::matmul:
            require_arity(op, in.size(), 2);
            out = matmul_forward(*in[0], *in[1]);
            break;
        case Primitive::tanh:
            require_arity(op, in.size(), 1);
            out = map_unary(*in[0], [](double x) { return std::tanh(x); });
            break;
        case Primitive::sigmoid:
            require_arity(op, in.size(), 1);
            out = map_unary(*in[0], sigmoid_scalar);
            break;
        case Primitive::exp:
            require_arity(op, in.size(), 1);
            out = map_unary(*in[0], [](double x) { return std::exp(x); });
            break;
        case Primitive::log:
            require_arity(op, in.size(), 1);
            for (double v : in[0]->data()) {
                if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
            }
            out = map_unary(*in[0], [](double x) { return std::log(x); });
            break;
        case Primitive::softplus:
            require_arity(op, in.size(), 1);
            out = map_unary(*in[0], [](double x) { return softplus(x); });
            break;
        case Primitive::sum: {
            require_arity(op, in.size(), 1);
            double s = 0.0;
            for (double v : in[0]->data()) s += v;
            out = Tensor::scalar(s);
            break;
        }
        case Primitive::mean: {
            require_arity(op, in.size(), 1);
            double s = 0.0;
            for (double v : in[0]->data()) s += v;
            out = Tensor::scalar(s / static_cast<double>(in[0]->size()));
            break;
        }
        case Primitive::concat: {
            if (in.empty()) throw ShapeError("concat: no inputs");
            std::vector<double> data;
            for (const Tensor* t : in) {
                if (t->rank() > 1) throw ShapeError("concat: inputs must be scalars or vectors");
                data.insert(data.end(), t->data().begin(), t->data().end());
            }
            out = Tensor::vector(std::move(data));
            break;
        }
        case Primitive::slice: {
            require_arity(op, in.size(), 1);
            const Tensor& a = *in[0];
            if (a.rank() != 1 || attrs.length == 0 || attrs.offset + attrs.length > a.size()) {
                throw ShapeError("slice: [" + std::to_string(attrs.offset) + ", +" + std::to_string(attrs.length) +
                                 ") out of range for " + shape_string(a.shape()));
            }
            const auto first = a.data().begin() + static_cast<std::ptrdiff_t>(attrs.offset);
            out = Tensor::vector(std::vector<double>(first, first + static_cast<std::ptrdiff_t>(attrs.length)));
            break;
        }
        case Primitive::broadcast: {
            require_arity(op, in.size(), 1);
            const Tensor& a = *in[0];
            if (!broadcast_compatible(a.shape(), attrs.shape)) {
                throw ShapeError("broadcast: cannot broadcast " + shape_string(a.shape()) + " to " +
                                 shape_string(attrs.shape));
            }
            std::vector<double> data(shape_size(attrs.shape));
            for (std::size_t i = 0; i < data.size(); ++i) data[i] = a[i % a.size()];
            out = Tensor(attrs.shape, std::move(data));
            break;
        }
        case Primitive::scale: {
            require_arity(op, in.size(), 1);
            const double c = attrs.factor;
            out = map_unary(*in[0], [c](double x) { return c * x; });
            break;
        }
        case Primitive::clamp: {
            require_arity(op, in.size(), 1);
            if (!(attrs.lo <= attrs.hi)) throw DomainError("clamp: lo > hi");
            const double lo = attrs.lo, hi = attrs.hi;
            out = map_unary(*in[0], [lo, hi](double x) { return std::clamp(x, lo, hi); });
            break;
        }
    }
    if (!out.all_finite()) {
        throw NumericError(std::string(primitive_name(op)) + " produced a non-finite value");
    }
    return out;
}

Tensor apply_primitive(Primitive op, std::initializer_list<const Tensor*> inputs, const Attributes& attrs) {
    return apply_primitive(op, std::span<const Tensor* const>(inputs.begin(), inputs.size()), attrs);
}

// ---------------------------------------------------------------------------
// Tape

const Tensor& Var::value() const {
    if (!tape_) throw TapeError("variable is not attached to a tape");
    return tape_->node(node_).value;
}

Var Tape::constant(Tensor value) {
    if (!value.all_finite()) throw NumericError("constant contains a non-finite value");
    nodes_.push_back(Node{Primitive::leaf, {}, {}, std::move(value), std::nullopt});
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::parameter(ParamId id, Tensor value) {
    if (!value.all_finite()) throw NumericError("parameter contains a non-finite value");
    nodes_.push_back(Node{Primitive::leaf, {}, {}, std::move(value), id});
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::record(Primitive op, std::span<const Var> inputs, const Attributes& attrs) {
    std::vector<const Tensor*> values;
    std::vector<std::uint32_t> ids;
    values.reserve(inputs.size());
    ids.reserve(inputs.size());
    for (const Var& v : inputs) {
        if (v.tape() != this) throw TapeError(std::string(primitive_name(op)) + ": input recorded on another tape");
        values.push_back(&nodes_[v.node()].value);
        ids.push_back(v.node());
    }
    Tensor out = apply_primitive(op, values, attrs);
    Node node{op, std::move(ids), {}, std::move(out), std::nullopt};
    if (op == Primitive::broadcast || op == Primitive::slice || op == Primitive::scale || op == Primitive::clamp) {
        node.attrs = attrs;
    }
    nodes_.push_back(std::move(node));
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::record(Primitive op, std::initializer_list<Var> inputs, const Attributes& attrs) {
    return record(op, std::span<const Var>(inputs.begin(), inputs.size()), attrs);
}

bool Tape::replay() const {
    std::vector<const Tensor*> values;
    for (const Node& n : nodes_) {
        if (n.op == Primitive::leaf) continue;
        values.clear();
        for (auto i : n.inputs) values.push_back(&nodes_[i].value);
        if (!(apply_primitive(n.op, values, n.attrs) == n.value)) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Reverse sweep

namespace {

void accumulate(std::vector<double>& dst, std::size_t n, std::span<const double> src) {
    if (dst.empty()) dst.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
}

std::vector<double>& slot(std::vector<std::vector<double>>& adj, std::uint32_t node, std::size_t n) {
    auto& s = adj[node];
    if (s.empty()) s.assign(n, 0.0);
    return s;
}

}  // namespace

Gradients backward(const Tape& tape, Var loss) {
    if (loss.tape() != &tape) throw TapeError("backward: loss is not recorded on this tape");
    if (loss.size() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_string(loss.shape()));

    std::vector<std::vector<double>> adj(tape.size());
    adj[loss.node()] = {1.0};
    Gradients grads;

    for (std::int64_t idx = loss.node(); idx >= 0; --idx) {
        const auto id = static_cast<std::uint32_t>(idx);
        if (adj[id].empty()) continue;
        const Tape::Node& n = tape.node(id);
        const std::vector<double>& g = adj[id];
        const Tensor& y = n.value;

        auto input = [&](std::size_t k) -> const Tensor& { return tape.node(n.inputs[k]).value; };
        auto grad_of = [&](std::size_t k) -> std::vector<double>& {
            return slot(adj, n.inputs[k], input(k).size());
        };

        switch (n.op) {
            case Primitive::leaf:
                if (n.param) {
                    auto it = grads.find(*n.param);
                    if (it == grads.end()) {
                        grads.emplace(*n.param, Tensor(y.shape(), g));
                    } else {
                        auto dst = it->second.mutable_data();
                        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                    }
                }
                break;
            case Primitive::add:
                accumulate(grad_of(0), g.size(), g);
                accumulate(grad_of(1), g.size(), g);
                break;
            case Primitive::sub: {
                accumulate(grad_of(0), g.size(), g);
                auto& gb = grad_of(1);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                break;
            }
            case Primitive::mul: {
                const auto a = input(0).data();
                const auto b = input(1).data();
                auto& ga = grad_of(0);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
                auto& gb = grad_of(1);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
                break;
            }
            case Primitive::matmul: {
                const Tensor& A = input(0);
                const Tensor& B = input(1);
                const std::size_t m = A.shape()[0];
                const std::size_t k = A.shape()[1];
                const std::size_t cols = B.rank() == 2 ? B.shape()[1] : 1;
                const auto a = A.data();
                const auto b = B.data();
                auto& ga = grad_of(0);
                // dA = G Bᵀ
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t p = 0; p < k; ++p) {
                        double s = 0.0;
                        for (std::size_t j = 0; j < cols; ++j) s += g[i * cols + j] * b[p * cols + j];
                        ga[i * k + p] += s;
                    }
                }
                auto& gb = grad_of(1);
                // dB = Aᵀ G
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t p = 0; p < k; ++p) {
                        const double aip = a[i * k + p];
                        for (std::size_t j = 0; j < cols; ++j) gb[p * cols + j] += aip * g[i * cols + j];
                    }
                }
                break;
            }
            case Primitive::tanh: {
                auto& ga = grad_of(0);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
                break;
            }
            case Primitive::sigmoid: {
                auto& ga = grad_of(0);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
                break;
            }
            case Primitive::exp: {
                auto& ga = grad_of(0);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
                break;
            }
            case Primitive::log: {
                const auto a = input(0).data();
                auto& ga = grad_of(0);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / a[i];
                break;
            }
            case Primitive::softplus: {
                const auto a = input(0).data();
                auto& ga = grad_of(0);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * sigmoid_scalar(a[i]);
                break;
            }
            case Primitive::sum: {
                auto& ga = grad_of(0);
                for (double& v : ga) v += g[0];
                break;
            }
            case Primitive::mean: {
                auto& ga = grad_of(0);
                const double share = g[0] / static_cast<double>(ga.size());
                for (double& v : ga) v += share;
                break;
            }
            case Primitive::concat: {
                std::size_t offset = 0;
                for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                    auto& gk = grad_of(k);
                    for (std::size_t i = 0; i < gk.size(); ++i) gk[i] += g[offset + i];
                    offset += gk.size();
                }
                break;
            }
            case Primitive::slice: {
                auto& ga = grad_of(0);
                for (std::size_t i = 0; i < g.size(); ++i) ga[n.attrs.offset + i] += g[i];
                break;
            }
            case Primitive::broadcast: {
                auto& ga = grad_of(0);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i % ga.size()] += g[i];
                break;
            }
            case Primitive::scale: {
                auto& ga = grad_of(0);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += n.attrs.factor * g[i];
                break;
            }
            case Primitive::clamp: {
                const auto a = input(0).data();
                auto& ga = grad_of(0);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    if (a[i] >= n.attrs.lo && a[i] <= n.attrs.hi) ga[i] += g[i];
                }
                break;
            }
        }
        if (n.op != Primitive::leaf) adj[id].clear();
    }
    return grads;
}

// ---------------------------------------------------------------------------
// Wrappers

namespace {
Tape& tape_of(Var v) {
    if (!v.tape()) throw TapeError("operation on a detached variable");
    return *v.tape();
}
}  // namespace

Var operator+(Var a, Var b) { return tape_of(a).record(Primitive::add, {a, b}); }
Var operator-(Var a, Var b) { return tape_of(a).record(Primitive::sub, {a, b}); }
Var operator*(Var a, Var b) { return tape_of(a).record(Primitive::mul, {a, b}); }
Var operator-(Var a) { return scale(a, -1.0); }
Var operator*(double c, Var a) { return scale(a, c); }
Var matmul(Var a, Var b) { return tape_of(a).record(Primitive::matmul, {a, b}); }
Var tanh(Var a) { return tape_of(a).record(Primitive::tanh, {a}); }
Var sigmoid(Var a) { return tape_of(a).record(Primitive::sigmoid, {a}); }
Var exp(Var a) { return tape_of(a).record(Primitive::exp, {a}); }
Var log(Var a) { return tape_of(a).record(Primitive::log, {a}); }
Var softplus(Var a) { return tape_of(a).record(Primitive::softplus, {a}); }
Var sum(Var a) { return tape_of(a).record(Primitive::sum, {a}); }
Var mean(Var a) { return tape_of(a).record(Primitive::mean, {a}); }

Var concat(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    return tape_of(parts.front()).record(Primitive::concat, parts);
}

Var concat(std::initializer_list<Var> parts) { return concat(std::span<const Var>(parts.begin(), parts.size())); }

Var slice(Var a, std::size_t offset, std::size_t length) {
    Attributes attrs;
    attrs.offset = offset;
    attrs.length = length;
    return tape_of(a).record(Primitive::slice, {a}, attrs);
}

Var broadcast(Var a, Shape shape) {
    Attributes attrs;
    attrs.shape = std::move(shape);
    return tape_of(a).record(Primitive::broadcast, {a}, attrs);
}

Var scale(Var a, double factor) {
    Attributes attrs;
    attrs.factor = factor;
    return tape_of(a).record(Primitive::scale, {a}, attrs);
}

Var clamp(Var a, double lo, double hi) {
    Attributes attrs;
    attrs.lo = lo;
    attrs.hi = hi;
    return tape_of(a).record(Primitive::clamp, {a}, attrs);
}

// ---------------------------------------------------------------------------
// Finite-difference check

double grad_check(const ScalarFunction& f, std::span<const Tensor> params, double step, Stencil stencil) {
    if (!(step > 0.0)) throw DomainError("grad_check: step must be positive");

    auto evaluate = [&](std::span<const Tensor> values) {
        Tape tape;
        std::vector<Var> vars;
        vars.reserve(values.size());
        for (std::size_t i = 0; i < values.size(); ++i) {
            vars.push_back(tape.parameter(ParamId{static_cast<std::uint32_t>(i)}, values[i]));
        }
        const double v = f(tape, vars).item();
        if (!std::isfinite(v)) throw NumericError("grad_check: function is not finite");
        return v;
    };

    Tape tape;
    std::vector<Var> vars;
    for (std::size_t i = 0; i < params.size(); ++i) {
        vars.push_back(tape.parameter(ParamId{static_cast<std::uint32_t>(i)}, params[i]));
    }
    const Var out = f(tape, vars);
    const Gradients grads = backward(tape, out);

    std::vector<Tensor> work(params.begin(), params.end());
    double worst = 0.0;
    for (std::size_t p = 0; p < params.size(); ++p) {
        const auto it = grads.find(ParamId{static_cast<std::uint32_t>(p)});
        for (std::size_t i = 0; i < params[p].size(); ++i) {
            const double orig = params[p][i];
            auto at = [&](double offset) {
                work[p][i] = orig + offset;
                const double v = evaluate(work);
                work[p][i] = orig;
                return v;
            };
            const double d1 = at(step) - at(-step);
            const double fd = stencil == Stencil::central2 ? d1 / (2.0 * step)
                                                           : (8.0 * d1 - (at(2.0 * step) - at(-2.0 * step))) / (12.0 * step);
            const double ad = it == grads.end() ? 0.0 : it->second[i];
            worst = std::max(worst, std::abs(ad - fd) / (std::abs(fd) + 1e-12));
        }
    }
    return worst;
}

}  // namespace avfp
