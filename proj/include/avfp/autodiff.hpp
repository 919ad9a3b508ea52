#pragma once

// Tape-based reverse-mode differentiation over dense tensors.
//
// Every primitive is a pure function of its input tensors (and a small set
// of attributes). Recording a primitive on a Tape appends a node whose inputs
// always precede it, so the node list is a topological order by construction
// and backward() is a single reverse sweep.

#include <compare>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "avfp/tensor.hpp"

namespace avfp {

enum class Primitive : std::uint8_t {
    leaf,
    add,
    sub,
    mul,
    matmul,
    tanh,
    sigmoid,
    exp,
    log,
    softplus,
    sum,
    mean,
    concat,
    slice,
    broadcast,
    scale,
    clamp,
};

const char* primitive_name(Primitive op) noexcept;

/// Non-tensor arguments of a primitive. Only the fields a primitive reads
/// are meaningful: slice uses offset/length, broadcast uses shape, scale uses
/// factor, clamp uses lo/hi.
struct Attributes {
    std::size_t offset = 0;
    std::size_t length = 0;
    double factor = 1.0;
    double lo = 0.0;
    double hi = 0.0;
    Shape shape{};
};

/// Forward evaluation of a primitive on plain tensors. Throws ShapeError on
/// non-conforming inputs, DomainError for log of a non-positive value and
/// NumericError if the result is not finite.
Tensor apply_primitive(Primitive op, std::span<const Tensor* const> inputs, const Attributes& attrs = {});
Tensor apply_primitive(Primitive op, std::initializer_list<const Tensor*> inputs, const Attributes& attrs = {});

/// Identifies a learnable parameter across tapes.
struct ParamId {
    std::uint32_t value = 0;
    friend auto operator<=>(const ParamId&, const ParamId&) = default;
};

/// ∂loss/∂parameter for every parameter leaf reached by backward().
using Gradients = std::map<ParamId, Tensor>;

class Tape;

/// Handle to a node on a tape.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    double item() const { return value().item(); }
    const Shape& shape() const { return value().shape(); }
    std::size_t size() const { return value().size(); }

    Tape* tape() const noexcept { return tape_; }
    std::uint32_t node() const noexcept { return node_; }
    bool valid() const noexcept { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::uint32_t node) : tape_(tape), node_(node) {}

    Tape* tape_ = nullptr;
    std::uint32_t node_ = 0;
};

class Tape {
public:
    struct Node {
        Primitive op = Primitive::leaf;
        std::vector<std::uint32_t> inputs;
        Attributes attrs;
        Tensor value;
        std::optional<ParamId> param;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf that receives no gradient.
    Var constant(Tensor value);
    /// Leaf whose gradient is reported under `id`.
    Var parameter(ParamId id, Tensor value);

    Var record(Primitive op, std::span<const Var> inputs, const Attributes& attrs = {});
    Var record(Primitive op, std::initializer_list<Var> inputs, const Attributes& attrs = {});

    std::size_t size() const noexcept { return nodes_.size(); }
    const Node& node(std::uint32_t i) const { return nodes_.at(i); }

    /// Recomputes every non-leaf node from its recorded inputs and reports
    /// whether all outputs match the recorded values bit for bit.
    bool replay() const;

    void clear() { nodes_.clear(); }

private:
    std::vector<Node> nodes_;
};

/// Reverse sweep from a scalar node. Throws ShapeError for a non-scalar loss
/// and TapeError when `loss` does not belong to `tape`.
Gradients backward(const Tape& tape, Var loss);

// Primitive wrappers.
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator-(Var a);
Var operator*(double c, Var a);
Var matmul(Var a, Var b);
Var tanh(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
Var softplus(Var a);
Var sum(Var a);
Var mean(Var a);
Var concat(std::span<const Var> parts);
Var concat(std::initializer_list<Var> parts);
Var slice(Var a, std::size_t offset, std::size_t length);
Var broadcast(Var a, Shape shape);
Var scale(Var a, double factor);
Var clamp(Var a, double lo, double hi);

/// Numerically stable log(1 + exp(x)) on a plain double.
double softplus(double x) noexcept;

/// A scalar function of a list of parameter tensors, expressed on a tape.
using ScalarFunction = std::function<Var(Tape&, std::span<const Var>)>;

enum class Stencil { central2, central4 };

/// Largest |autodiff - central difference| / (|central difference| + 1e-12)
/// over every coordinate of every parameter. central4 is the five-point
/// stencil (8[f(x+h) - f(x-h)] - [f(x+2h) - f(x-2h)]) / 12h, whose O(h^4)
/// truncation allows a larger step and so less cancellation error.
double grad_check(const ScalarFunction& f, std::span<const Tensor> params, double step = 1e-6,
                  Stencil stencil = Stencil::central2);

}  // namespace avfp
