#pragma once

// Dense 64-bit arrays with a reverse-mode tape.
//
// A Tape records every primitive application in topological order. Values
// are computed eagerly; backward() replays the record in reverse and
// accumulates gradients into any Parameter reachable from the loss.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mgh/errors.hpp"

namespace mgh {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

/// a·b / (‖a‖‖b‖), or 0 when either norm is below 1e-12.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

class Array {
public:
    Array() = default;
    explicit Array(Shape shape, double fill = 0.0);
    Array(Shape shape, std::vector<double> values);

    static Array scalar(double value) { return Array({1}, {value}); }
    static Array vector(std::vector<double> values);
    static Array matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return values_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t rows() const { return shape_.at(0); }
    std::size_t cols() const { return shape_.at(1); }

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }
    std::vector<double>& storage() { return values_; }
    const std::vector<double>& storage() const { return values_; }

    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }
    double& operator()(std::size_t r, std::size_t c) { return values_[r * shape_[1] + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values_[r * shape_[1] + c]; }

    std::span<double> row(std::size_t r);
    std::span<const double> row(std::size_t r) const;

    /// Single value of a one-element array.
    double item() const;

    bool all_finite() const;
    void fill(double value);
    void add_in_place(const Array& other);
    Array reshaped(Shape shape) const;

    bool operator==(const Array& other) const = default;

private:
    Shape shape_;
    std::vector<double> values_;
};

/// A named learnable array. `grad` always has the shape of `value`.
struct Parameter {
    Parameter() = default;
    Parameter(std::string name, Array value);

    std::string name;
    Array value;
    Array grad;

    void zero_grad() { grad.fill(0.0); }
};

class Tape;

/// Handle to one recorded value on a Tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Array& value() const;
    const Shape& shape() const;
};

class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Array value);
    /// Leaf bound to a Parameter; the same Parameter maps to the same leaf.
    Var param(Parameter& p);

    /// Appends a primitive result. Throws NumericError if `value` holds a
    /// NaN or Inf.
    Var record(std::string_view op, std::vector<std::size_t> inputs, Array value, BackwardFn backward);

    const Array& value(std::size_t id) const { return nodes_.at(id).value; }
    const Array& value(Var v) const { return value(v.id); }
    std::string_view op(std::size_t id) const { return nodes_.at(id).op; }
    const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }

    /// Gradient of the last backward() w.r.t. a node; zeros if unreachable.
    Array grad(Var v) const;

    /// Seeds d(loss)/d(loss) = 1, replays in reverse, and adds leaf
    /// gradients into the bound Parameters. Tape-internal gradients are
    /// reset first, so repeated calls accumulate identical increments.
    void backward(Var loss);

    std::size_t size() const { return nodes_.size(); }

    // For primitive backward functions.
    const Array& upstream(std::size_t id) const { return nodes_[id].grad; }
    Array& grad_ref(std::size_t id);

private:
    struct Node {
        std::string_view op;
        std::vector<std::size_t> inputs;
        Array value;
        Array grad;
        bool has_grad = false;
        Parameter* param = nullptr;
        BackwardFn backward;
    };

    std::vector<Node> nodes_;
    std::unordered_map<const Parameter*, std::size_t> param_ids_;
};

namespace ops {

Var matmul(Var a, Var b);
/// x[N×in] · wᵀ + bias, with w[out×in] and bias[out].
Var linear(Var x, Var w, Var bias);
Var linear(Var x, Var w);
Var reshape(Var x, Shape shape);
Var softmax(Var x);
/// Cosine similarity as a one-element array; 0 with zero gradient when
/// either norm is below 1e-12.
Var cosine(Var a, Var b);
Var mean_rows(Var x);
Var concat(Var a, Var b);
Var relu(Var x);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var x, double factor);
Var sum(Var x);
Var mean(Var x);
Var softplus(Var x);

Var gather_rows(Var x, std::vector<std::size_t> rows);
/// Row g of the result is the mean of x's rows listed in groups[g].
Var group_mean(Var x, std::vector<std::vector<std::size_t>> groups);
Var row_cosine(Var a, Var b);
/// Softmax within each segment [offsets[s], offsets[s+1]).
Var segment_softmax(Var z, std::vector<std::size_t> offsets);
/// Row s of the result is Σ_{k in segment s} w[k]·x[k]; empty segments give zero rows.
Var segment_weighted_sum(Var w, Var x, std::vector<std::size_t> offsets);
Var concat_cols(Var a, Var b);
/// s[i] = x[i]ᵀ · m · y[i].
Var bilinear_rows(Var x, Var m, Var y);

} // namespace ops

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_coordinate;
    std::size_t coordinates = 0;
};

/// Compares analytic gradients of `f` against central differences
/// (f(θ+δ) − f(θ−δ)) / 2δ over every coordinate of `params`. The relative
/// error is |a − n| / max(1e-8, |a| + |n|). Parameter grads are left zeroed.
GradCheckReport gradient_check(const std::function<Var(Tape&)>& f, std::span<Parameter* const> params,
                               double step = 1e-5);

} // namespace mgh
