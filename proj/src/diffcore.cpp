#include "mgh/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace mgh {

namespace {

std::size_t product(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_rank(const Array& a, std::size_t rank, std::string_view op)
{
    if (a.rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_string(a.shape()));
    }
}

void require_same_shape(const Array& a, const Array& b, std::string_view op)
{
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
    }
}

constexpr double kCosineNormFloor = 1e-12;

} // namespace

std::string shape_string(const Shape& shape)
{
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << "x";
        out << shape[i];
    }
    out << ']';
    return out.str();
}

// ---------------------------------------------------------------- Array

Array::Array(Shape shape, double fill) : shape_(std::move(shape)), values_(product(shape_), fill) {}

Array::Array(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values))
{
    if (product(shape_) != values_.size()) {
        throw ShapeError("array of shape " + shape_string(shape_) + " cannot hold " +
                         std::to_string(values_.size()) + " values");
    }
}

Array Array::vector(std::vector<double> values)
{
    const std::size_t n = values.size();
    return Array({n}, std::move(values));
}

Array Array::matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
{
    return Array({rows, cols}, std::move(values));
}

std::span<double> Array::row(std::size_t r)
{
    const std::size_t c = shape_.at(1);
    return std::span<double>(values_).subspan(r * c, c);
}

std::span<const double> Array::row(std::size_t r) const
{
    const std::size_t c = shape_.at(1);
    return std::span<const double>(values_).subspan(r * c, c);
}

double Array::item() const
{
    if (values_.size() != 1) throw ShapeError("item() on array of shape " + shape_string(shape_));
    return values_[0];
}

bool Array::all_finite() const
{
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

void Array::fill(double value) { std::fill(values_.begin(), values_.end(), value); }

void Array::add_in_place(const Array& other)
{
    if (other.size() != values_.size()) {
        throw ShapeError("add_in_place: " + shape_string(shape_) + " vs " + shape_string(other.shape_));
    }
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
}

Array Array::reshaped(Shape shape) const { return Array(std::move(shape), values_); }

Parameter::Parameter(std::string name_, Array value_)
    : name(std::move(name_)), value(std::move(value_)), grad(value.shape(), 0.0)
{
}

// ---------------------------------------------------------------- Tape

const Array& Var::value() const { return tape->value(id); }
const Shape& Var::shape() const { return tape->value(id).shape(); }

Var Tape::constant(Array value)
{
    return record("constant", {}, std::move(value), nullptr);
}

Var Tape::param(Parameter& p)
{
    if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var{this, it->second};
    Var v = record("param", {}, p.value, nullptr);
    nodes_[v.id].param = &p;
    param_ids_.emplace(&p, v.id);
    return v;
}

Var Tape::record(std::string_view op, std::vector<std::size_t> inputs, Array value, BackwardFn backward)
{
    if (!value.all_finite()) {
        throw NumericError("non-finite value produced by '" + std::string(op) + "' (node " +
                           std::to_string(nodes_.size()) + ")");
    }
    Node node;
    node.op = op;
    node.inputs = std::move(inputs);
    node.value = std::move(value);
    node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1};
}

Array& Tape::grad_ref(std::size_t id)
{
    Node& n = nodes_[id];
    if (!n.has_grad) {
        n.grad = Array(n.value.shape(), 0.0);
        n.has_grad = true;
    }
    return n.grad;
}

Array Tape::grad(Var v) const
{
    const Node& n = nodes_.at(v.id);
    return n.has_grad ? n.grad : Array(n.value.shape(), 0.0);
}

void Tape::backward(Var loss)
{
    if (loss.tape != this) throw ShapeError("backward: loss belongs to another tape");
    if (value(loss).size() != 1) {
        throw ShapeError("backward: loss must be scalar, got shape " + shape_string(value(loss).shape()));
    }
    for (Node& n : nodes_) {
        n.has_grad = false;
        n.grad = Array();
    }
    grad_ref(loss.id)[0] = 1.0;
    for (std::size_t id = loss.id + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (!n.has_grad) continue;
        if (n.backward) n.backward(*this, id);
        if (n.param) n.param->grad.add_in_place(n.grad);
    }
}

// ---------------------------------------------------------------- primitives

namespace ops {

Var matmul(Var a, Var b)
{
    const Array& A = a.value();
    const Array& B = b.value();
    require_rank(A, 2, "matmul");
    require_rank(B, 2, "matmul");
    if (A.cols() != B.rows()) {
        throw ShapeError("matmul: inner dimensions disagree, " + shape_string(A.shape()) + " vs " +
                         shape_string(B.shape()));
    }
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    Array out({m, n}, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double av = A(i, p);
            for (std::size_t j = 0; j < n; ++j) out(i, j) += av * B(p, j);
        }
    return a.tape->record("matmul", {a.id, b.id}, std::move(out), [ai = a.id, bi = b.id, m, k, n](Tape& t, std::size_t self) {
        const Array& g = t.upstream(self);
        const Array& A = t.value(ai);
        const Array& B = t.value(bi);
        Array& ga = t.grad_ref(ai);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j) acc += g(i, j) * B(p, j);
                ga(i, p) += acc;
            }
        Array& gb = t.grad_ref(bi);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
                const double av = A(i, p);
                for (std::size_t j = 0; j < n; ++j) gb(p, j) += av * g(i, j);
            }
    });
}

namespace {

Var linear_impl(Var x, Var w, const Var* bias)
{
    const Array& X = x.value();
    const Array& W = w.value();
    require_rank(X, 2, "linear");
    require_rank(W, 2, "linear");
    if (X.cols() != W.cols()) {
        throw ShapeError("linear: input " + shape_string(X.shape()) + " does not match weight " +
                         shape_string(W.shape()));
    }
    const std::size_t n = X.rows(), in = X.cols(), out_dim = W.rows();
    if (bias && bias->value().shape() != Shape{out_dim}) {
        throw ShapeError("linear: bias " + shape_string(bias->value().shape()) + " does not match weight " +
                         shape_string(W.shape()));
    }
    Array out({n, out_dim}, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        const auto xr = X.row(r);
        for (std::size_t o = 0; o < out_dim; ++o) {
            const auto wr = W.row(o);
            double acc = bias ? bias->value()[o] : 0.0;
            for (std::size_t i = 0; i < in; ++i) acc += wr[i] * xr[i];
            out(r, o) = acc;
        }
    }
    std::vector<std::size_t> inputs{x.id, w.id};
    if (bias) inputs.push_back(bias->id);
    const bool has_bias = bias != nullptr;
    const std::size_t bi = has_bias ? bias->id : 0;
    return x.tape->record("linear", std::move(inputs), std::move(out),
                          [xi = x.id, wi = w.id, bi, has_bias, n, in, out_dim](Tape& t, std::size_t self) {
                              const Array& g = t.upstream(self);
                              const Array& X = t.value(xi);
                              const Array& W = t.value(wi);
                              Array& gx = t.grad_ref(xi);
                              Array& gw = t.grad_ref(wi);
                              for (std::size_t r = 0; r < n; ++r) {
                                  const auto xr = X.row(r);
                                  auto gxr = gx.row(r);
                                  for (std::size_t o = 0; o < out_dim; ++o) {
                                      const double go = g(r, o);
                                      if (go == 0.0) continue;
                                      const auto wr = W.row(o);
                                      auto gwr = gw.row(o);
                                      for (std::size_t i = 0; i < in; ++i) {
                                          gxr[i] += go * wr[i];
                                          gwr[i] += go * xr[i];
                                      }
                                  }
                              }
                              if (has_bias) {
                                  Array& gb = t.grad_ref(bi);
                                  for (std::size_t r = 0; r < n; ++r)
                                      for (std::size_t o = 0; o < out_dim; ++o) gb[o] += g(r, o);
                              }
                          });
}

} // namespace

Var linear(Var x, Var w, Var bias) { return linear_impl(x, w, &bias); }
Var linear(Var x, Var w) { return linear_impl(x, w, nullptr); }

Var reshape(Var x, Shape shape)
{
    Array out = x.value().reshaped(std::move(shape));
    return x.tape->record("reshape", {x.id}, std::move(out), [xi = x.id](Tape& t, std::size_t self) {
        t.grad_ref(xi).add_in_place(t.upstream(self));
    });
}

Var softmax(Var x)
{
    const Array& X = x.value();
    require_rank(X, 1, "softmax");
    if (X.size() == 0) throw ShapeError("softmax: empty input");
    const double top = *std::max_element(X.values().begin(), X.values().end());
    Array out(X.shape(), 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < X.size(); ++i) {
        out[i] = std::exp(X[i] - top);
        total += out[i];
    }
    for (double& v : out.values()) v /= total;
    return x.tape->record("softmax", {x.id}, std::move(out), [xi = x.id](Tape& t, std::size_t self) {
        const Array& g = t.upstream(self);
        const Array& y = t.value(self);
        double dot = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) dot += g[i] * y[i];
        Array& gx = t.grad_ref(xi);
        for (std::size_t i = 0; i < y.size(); ++i) gx[i] += y[i] * (g[i] - dot);
    });
}

namespace {

struct CosineParts {
    double value = 0.0;
    double na = 0.0;
    double nb = 0.0;
    bool degenerate = true;
};

CosineParts cosine_parts(std::span<const double> a, std::span<const double> b)
{
    double dot = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    CosineParts c;
    c.na = std::sqrt(aa);
    c.nb = std::sqrt(bb);
    if (c.na < kCosineNormFloor || c.nb < kCosineNormFloor) return c;
    c.degenerate = false;
    c.value = dot / (c.na * c.nb);
    return c;
}

void cosine_backward(std::span<const double> a, std::span<const double> b, const CosineParts& c, double g,
                     std::span<double> ga, std::span<double> gb)
{
    if (c.degenerate || g == 0.0) return;
    const double inv = 1.0 / (c.na * c.nb);
    const double ka = c.value / (c.na * c.na);
    const double kb = c.value / (c.nb * c.nb);
    for (std::size_t i = 0; i < a.size(); ++i) {
        ga[i] += g * (b[i] * inv - ka * a[i]);
        gb[i] += g * (a[i] * inv - kb * b[i]);
    }
}

} // namespace

Var cosine(Var a, Var b)
{
    const Array& A = a.value();
    const Array& B = b.value();
    require_rank(A, 1, "cosine");
    require_rank(B, 1, "cosine");
    require_same_shape(A, B, "cosine");
    const CosineParts c = cosine_parts(A.values(), B.values());
    return a.tape->record("cosine", {a.id, b.id}, Array::scalar(c.value), [ai = a.id, bi = b.id, c](Tape& t, std::size_t self) {
        const double g = t.upstream(self)[0];
        cosine_backward(t.value(ai).values(), t.value(bi).values(), c, g, t.grad_ref(ai).values(),
                        t.grad_ref(bi).values());
    });
}

Var mean_rows(Var x)
{
    const Array& X = x.value();
    require_rank(X, 2, "mean_rows");
    const std::size_t m = X.rows(), n = X.cols();
    if (m == 0) throw ShapeError("mean_rows: empty reduction over 0 rows");
    Array out({n}, 0.0);
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) out[c] += X(r, c);
    for (double& v : out.values()) v /= static_cast<double>(m);
    return x.tape->record("mean_rows", {x.id}, std::move(out), [xi = x.id, m, n](Tape& t, std::size_t self) {
        const Array& g = t.upstream(self);
        Array& gx = t.grad_ref(xi);
        const double inv = 1.0 / static_cast<double>(m);
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) gx(r, c) += g[c] * inv;
    });
}

Var concat(Var a, Var b)
{
    const Array& A = a.value();
    const Array& B = b.value();
    require_rank(A, 1, "concat");
    require_rank(B, 1, "concat");
    const std::size_t m = A.size();
    std::vector<double> joined(A.values().begin(), A.values().end());
    joined.insert(joined.end(), B.values().begin(), B.values().end());
    return a.tape->record("concat", {a.id, b.id}, Array::vector(std::move(joined)),
                          [ai = a.id, bi = b.id, m](Tape& t, std::size_t self) {
                              const Array& g = t.upstream(self);
                              Array& ga = t.grad_ref(ai);
                              Array& gb = t.grad_ref(bi);
                              for (std::size_t i = 0; i < m; ++i) ga[i] += g[i];
                              for (std::size_t i = m; i < g.size(); ++i) gb[i - m] += g[i];
                          });
}

Var relu(Var x)
{
    Array out = x.value();
    for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
    return x.tape->record("relu", {x.id}, std::move(out), [xi = x.id](Tape& t, std::size_t self) {
        const Array& g = t.upstream(self);
        const Array& X = t.value(xi);
        Array& gx = t.grad_ref(xi);
        for (std::size_t i = 0; i < X.size(); ++i)
            if (X[i] > 0.0) gx[i] += g[i];
    });
}

Var add(Var a, Var b)
{
    require_same_shape(a.value(), b.value(), "add");
    Array out = a.value();
    out.add_in_place(b.value());
    return a.tape->record("add", {a.id, b.id}, std::move(out), [ai = a.id, bi = b.id](Tape& t, std::size_t self) {
        t.grad_ref(ai).add_in_place(t.upstream(self));
        t.grad_ref(bi).add_in_place(t.upstream(self));
    });
}

Var sub(Var a, Var b)
{
    require_same_shape(a.value(), b.value(), "sub");
    Array out = a.value();
    const Array& B = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
    return a.tape->record("sub", {a.id, b.id}, std::move(out), [ai = a.id, bi = b.id](Tape& t, std::size_t self) {
        const Array& g = t.upstream(self);
        t.grad_ref(ai).add_in_place(g);
        Array& gb = t.grad_ref(bi);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    });
}

Var scale(Var x, double factor)
{
    Array out = x.value();
    for (double& v : out.values()) v *= factor;
    return x.tape->record("scale", {x.id}, std::move(out), [xi = x.id, factor](Tape& t, std::size_t self) {
        const Array& g = t.upstream(self);
        Array& gx = t.grad_ref(xi);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
    });
}

Var sum(Var x)
{
    const Array& X = x.value();
    const double total = std::accumulate(X.values().begin(), X.values().end(), 0.0);
    return x.tape->record("sum", {x.id}, Array::scalar(total), [xi = x.id](Tape& t, std::size_t self) {
        const double g = t.upstream(self)[0];
        for (double& v : t.grad_ref(xi).values()) v += g;
    });
}

Var mean(Var x)
{
    const std::size_t n = x.value().size();
    if (n == 0) throw ShapeError("mean: empty reduction");
    return scale(sum(x), 1.0 / static_cast<double>(n));
}

Var softplus(Var x)
{
    Array out = x.value();
    for (double& v : out.values()) v = std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
    return x.tape->record("softplus", {x.id}, std::move(out), [xi = x.id](Tape& t, std::size_t self) {
        const Array& g = t.upstream(self);
        const Array& X = t.value(xi);
        Array& gx = t.grad_ref(xi);
        for (std::size_t i = 0; i < X.size(); ++i) {
            const double v = X[i];
            const double sig = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
            gx[i] += g[i] * sig;
        }
    });
}

Var gather_rows(Var x, std::vector<std::size_t> rows)
{
    const Array& X = x.value();
    require_rank(X, 2, "gather_rows");
    const std::size_t d = X.cols();
    Array out({rows.size(), d}, 0.0);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] >= X.rows()) throw ShapeError("gather_rows: row index " + std::to_string(rows[r]) + " out of range");
        std::copy_n(X.row(rows[r]).begin(), d, out.row(r).begin());
    }
    return x.tape->record("gather_rows", {x.id}, std::move(out), [xi = x.id, rows = std::move(rows)](Tape& t, std::size_t self) {
        const Array& g = t.upstream(self);
        Array& gx = t.grad_ref(xi);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            auto dst = gx.row(rows[r]);
            const auto src = g.row(r);
            for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
        }
    });
}

Var group_mean(Var x, std::vector<std::vector<std::size_t>> groups)
{
    const Array& X = x.value();
    require_rank(X, 2, "group_mean");
    const std::size_t d = X.cols();
    Array out({groups.size(), d}, 0.0);
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const auto& members = groups[gi];
        if (members.empty()) throw ShapeError("group_mean: empty reduction in group " + std::to_string(gi));
        auto dst = out.row(gi);
        for (std::size_t r : members) {
            if (r >= X.rows()) throw ShapeError("group_mean: row index " + std::to_string(r) + " out of range");
            const auto src = X.row(r);
            for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
        }
        const double inv = 1.0 / static_cast<double>(members.size());
        for (double& v : dst) v *= inv;
    }
    return x.tape->record("group_mean", {x.id}, std::move(out), [xi = x.id, groups = std::move(groups)](Tape& t, std::size_t self) {
        const Array& g = t.upstream(self);
        Array& gx = t.grad_ref(xi);
        for (std::size_t gi = 0; gi < groups.size(); ++gi) {
            const double inv = 1.0 / static_cast<double>(groups[gi].size());
            const auto src = g.row(gi);
            for (std::size_t r : groups[gi]) {
                auto dst = gx.row(r);
                for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += inv * src[c];
            }
        }
    });
}

Var row_cosine(Var a, Var b)
{
    const Array& A = a.value();
    const Array& B = b.value();
    require_rank(A, 2, "row_cosine");
    require_same_shape(A, B, "row_cosine");
    const std::size_t m = A.rows();
    std::vector<CosineParts> parts(m);
    Array out({m}, 0.0);
    for (std::size_t r = 0; r < m; ++r) {
        parts[r] = cosine_parts(A.row(r), B.row(r));
        out[r] = parts[r].value;
    }
    return a.tape->record("row_cosine", {a.id, b.id}, std::move(out),
                          [ai = a.id, bi = b.id, parts = std::move(parts)](Tape& t, std::size_t self) {
                              const Array& g = t.upstream(self);
                              const Array& A = t.value(ai);
                              const Array& B = t.value(bi);
                              Array& ga = t.grad_ref(ai);
                              Array& gb = t.grad_ref(bi);
                              for (std::size_t r = 0; r < parts.size(); ++r)
                                  cosine_backward(A.row(r), B.row(r), parts[r], g[r], ga.row(r), gb.row(r));
                          });
}

namespace {

void check_offsets(const std::vector<std::size_t>& offsets, std::size_t n, std::string_view op)
{
    if (offsets.empty() || offsets.front() != 0 || offsets.back() != n ||
        !std::is_sorted(offsets.begin(), offsets.end())) {
        throw ShapeError(std::string(op) + ": segment offsets do not partition " + std::to_string(n) + " entries");
    }
}

} // namespace

Var segment_softmax(Var z, std::vector<std::size_t> offsets)
{
    const Array& Z = z.value();
    require_rank(Z, 1, "segment_softmax");
    check_offsets(offsets, Z.size(), "segment_softmax");
    Array out(Z.shape(), 0.0);
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
        const std::size_t lo = offsets[s], hi = offsets[s + 1];
        if (lo == hi) continue;
        const double top = *std::max_element(Z.values().begin() + lo, Z.values().begin() + hi);
        double total = 0.0;
        for (std::size_t k = lo; k < hi; ++k) {
            out[k] = std::exp(Z[k] - top);
            total += out[k];
        }
        for (std::size_t k = lo; k < hi; ++k) out[k] /= total;
    }
    return z.tape->record("segment_softmax", {z.id}, std::move(out), [zi = z.id, offsets = std::move(offsets)](Tape& t, std::size_t self) {
        const Array& g = t.upstream(self);
        const Array& y = t.value(self);
        Array& gz = t.grad_ref(zi);
        for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
            double dot = 0.0;
            for (std::size_t k = offsets[s]; k < offsets[s + 1]; ++k) dot += g[k] * y[k];
            for (std::size_t k = offsets[s]; k < offsets[s + 1]; ++k) gz[k] += y[k] * (g[k] - dot);
        }
    });
}

Var segment_weighted_sum(Var w, Var x, std::vector<std::size_t> offsets)
{
    const Array& Wt = w.value();
    const Array& X = x.value();
    require_rank(Wt, 1, "segment_weighted_sum");
    require_rank(X, 2, "segment_weighted_sum");
    if (Wt.size() != X.rows()) {
        throw ShapeError("segment_weighted_sum: weights " + shape_string(Wt.shape()) + " vs rows " +
                         shape_string(X.shape()));
    }
    check_offsets(offsets, X.rows(), "segment_weighted_sum");
    const std::size_t segments = offsets.size() - 1, d = X.cols();
    Array out({segments, d}, 0.0);
    for (std::size_t s = 0; s < segments; ++s) {
        auto dst = out.row(s);
        for (std::size_t k = offsets[s]; k < offsets[s + 1]; ++k) {
            const auto src = X.row(k);
            for (std::size_t c = 0; c < d; ++c) dst[c] += Wt[k] * src[c];
        }
    }
    return w.tape->record("segment_weighted_sum", {w.id, x.id}, std::move(out),
                          [wi = w.id, xi = x.id, offsets = std::move(offsets)](Tape& t, std::size_t self) {
                              const Array& g = t.upstream(self);
                              const Array& Wt = t.value(wi);
                              const Array& X = t.value(xi);
                              Array& gw = t.grad_ref(wi);
                              Array& gx = t.grad_ref(xi);
                              for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
                                  const auto gs = g.row(s);
                                  for (std::size_t k = offsets[s]; k < offsets[s + 1]; ++k) {
                                      const auto xr = X.row(k);
                                      auto gxr = gx.row(k);
                                      double acc = 0.0;
                                      for (std::size_t c = 0; c < gs.size(); ++c) {
                                          acc += gs[c] * xr[c];
                                          gxr[c] += Wt[k] * gs[c];
                                      }
                                      gw[k] += acc;
                                  }
                              }
                          });
}

Var concat_cols(Var a, Var b)
{
    const Array& A = a.value();
    const Array& B = b.value();
    require_rank(A, 2, "concat_cols");
    require_rank(B, 2, "concat_cols");
    if (A.rows() != B.rows()) {
        throw ShapeError("concat_cols: row counts differ, " + shape_string(A.shape()) + " vs " + shape_string(B.shape()));
    }
    const std::size_t n = A.rows(), ca = A.cols(), cb = B.cols();
    Array out({n, ca + cb}, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        std::copy_n(A.row(r).begin(), ca, out.row(r).begin());
        std::copy_n(B.row(r).begin(), cb, out.row(r).begin() + static_cast<std::ptrdiff_t>(ca));
    }
    return a.tape->record("concat_cols", {a.id, b.id}, std::move(out), [ai = a.id, bi = b.id, ca](Tape& t, std::size_t self) {
        const Array& g = t.upstream(self);
        Array& ga = t.grad_ref(ai);
        Array& gb = t.grad_ref(bi);
        for (std::size_t r = 0; r < g.rows(); ++r) {
            const auto gr = g.row(r);
            auto dsta = ga.row(r);
            auto dstb = gb.row(r);
            for (std::size_t c = 0; c < ca; ++c) dsta[c] += gr[c];
            for (std::size_t c = ca; c < gr.size(); ++c) dstb[c - ca] += gr[c];
        }
    });
}

Var bilinear_rows(Var x, Var m, Var y)
{
    const Array& X = x.value();
    const Array& M = m.value();
    const Array& Y = y.value();
    require_rank(X, 2, "bilinear_rows");
    require_rank(M, 2, "bilinear_rows");
    require_rank(Y, 2, "bilinear_rows");
    if (X.rows() != Y.rows() || M.rows() != X.cols() || M.cols() != Y.cols()) {
        throw ShapeError("bilinear_rows: incompatible shapes " + shape_string(X.shape()) + ", " +
                         shape_string(M.shape()) + ", " + shape_string(Y.shape()));
    }
    const std::size_t n = X.rows(), dx = X.cols(), dy = Y.cols();
    Array out({n}, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        double acc = 0.0;
        for (std::size_t i = 0; i < dx; ++i) {
            double inner = 0.0;
            for (std::size_t j = 0; j < dy; ++j) inner += M(i, j) * Y(r, j);
            acc += X(r, i) * inner;
        }
        out[r] = acc;
    }
    return x.tape->record("bilinear_rows", {x.id, m.id, y.id}, std::move(out),
                          [xi = x.id, mi = m.id, yi = y.id, n, dx, dy](Tape& t, std::size_t self) {
                              const Array& g = t.upstream(self);
                              const Array& X = t.value(xi);
                              const Array& M = t.value(mi);
                              const Array& Y = t.value(yi);
                              Array& gx = t.grad_ref(xi);
                              Array& gm = t.grad_ref(mi);
                              Array& gy = t.grad_ref(yi);
                              for (std::size_t r = 0; r < n; ++r) {
                                  const double gr = g[r];
                                  if (gr == 0.0) continue;
                                  for (std::size_t i = 0; i < dx; ++i) {
                                      double my = 0.0;
                                      for (std::size_t j = 0; j < dy; ++j) {
                                          my += M(i, j) * Y(r, j);
                                          gm(i, j) += gr * X(r, i) * Y(r, j);
                                          gy(r, j) += gr * X(r, i) * M(i, j);
                                      }
                                      gx(r, i) += gr * my;
                                  }
                              }
                          });
}

} // namespace ops

// ---------------------------------------------------------------- gradient check

double cosine_similarity(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size()) {
        throw ShapeError("cosine: length mismatch " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    }
    return ops::cosine_parts(a, b).value;
}


GradCheckReport gradient_check(const std::function<Var(Tape&)>& f, std::span<Parameter* const> params, double step)
{
    if (!(step > 0.0)) throw ConfigError("gradient_check: step must be positive");
    for (Parameter* p : params) p->zero_grad();
    {
        Tape tape;
        tape.backward(f(tape));
    }
    std::vector<Array> analytic;
    analytic.reserve(params.size());
    for (Parameter* p : params) {
        analytic.push_back(p->grad);
        p->zero_grad();
    }

    auto probe = [&](const std::string& coordinate) {
        try {
            Tape tape;
            const double v = f(tape).value().item();
            if (!std::isfinite(v)) throw NumericError("non-finite objective");
            return v;
        } catch (const NumericError& e) {
            throw NumericError("gradient_check: " + std::string(e.what()) + " at " + coordinate);
        }
    };

    GradCheckReport report;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Parameter& p = *params[pi];
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const std::string coordinate = p.name + "[" + std::to_string(i) + "]";
            const double original = p.value[i];
            p.value[i] = original + step;
            const double up = probe(coordinate);
            p.value[i] = original - step;
            const double down = probe(coordinate);
            p.value[i] = original;
            const double numeric = (up - down) / (2.0 * step);
            const double a = analytic[pi][i];
            const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
            ++report.coordinates;
            if (rel > report.max_rel_error || report.worst_coordinate.empty()) {
                report.max_rel_error = rel;
                report.worst_coordinate = coordinate;
            }
        }
    }
    return report;
}

} // namespace mgh
