// Copyright (c) 2026, The grec Authors
// SPDX-License-Identifier: Apache-2.0

#include "grec/autodiff.hpp"

#include "grec/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace grec {

const Tensor& Var::value() const
{
    if (!tape_)
        throw ContractError("use of an unbound Var");
    return tape_->value(id_);
}

Var Tape::constant(Tensor value)
{
    nodes_.push_back(Node{std::move(value), {}, {}, false, nullptr});
    return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value)
{
    nodes_.push_back(Node{std::move(value), {}, {}, true, nullptr});
    return Var(this, nodes_.size() - 1);
}

Var Tape::param(Tensor& bound)
{
    if (auto it = bound_.find(&bound); it != bound_.end())
        return Var(this, it->second);
    // The tape keeps a copy of the value so later parameter updates cannot
    // change an already-recorded forward pass.
    nodes_.push_back(Node{bound, {}, {}, bound.requires_grad(), &bound});
    nodes_.back().value.zero_grad();
    bound_.emplace(&bound, nodes_.size() - 1);
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn)
{
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn fn)
{
    bool needs = false;
    for (const auto& in : inputs) {
        if (in.tape() != this)
            throw ContractError("op inputs belong to a different tape");
        needs = needs || nodes_[in.id()].needs_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, needs ? std::move(fn) : BackwardFn{}, needs, nullptr});
    return Var(this, nodes_.size() - 1);
}

std::span<double> Tape::grad_buffer(std::size_t id)
{
    auto& node = nodes_[id];
    if (node.grad.empty())
        node.grad.assign(node.value.size(), 0.0);
    return node.grad;
}

void Tape::backward(const Var& loss)
{
    if (loss.tape() != this)
        throw ContractError("loss belongs to a different tape");
    if (loss.value().size() != 1)
        throw ContractError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
    if (differentiated_)
        throw ContractError("backward() called twice on the same tape; record a new pass");
    differentiated_ = true;
    if (!nodes_[loss.id()].needs_grad)
        return;
    grad_buffer(loss.id())[0] = 1.0;
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
        auto& node = nodes_[id];
        if (!node.needs_grad || node.grad.empty() || !node.backward)
            continue;
        node.backward(*this, id);
    }
    for (auto& node : nodes_)
        if (node.bound && !node.grad.empty() && node.bound->requires_grad())
            node.bound->accumulate_grad(node.grad);
}

Tensor Tape::grad(const Var& v) const
{
    const auto& node = nodes_[v.id()];
    if (node.grad.empty())
        return Tensor(node.value.shape());
    return Tensor(node.value.shape(), node.grad);
}

namespace {

// C[m x n] += A[m x k] * B[k x n]
void mm_nn(const double* A, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n)
{
    for (std::size_t i = 0; i < m; ++i) {
        double* c = C + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double a = A[i * k + p];
            if (a == 0.0)
                continue;
            const double* b = B + p * n;
            for (std::size_t j = 0; j < n; ++j)
                c[j] += a * b[j];
        }
    }
}

// C[m x n] += A[m x k] * B[n x k]^T
void mm_nt(const double* A, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n)
{
    for (std::size_t i = 0; i < m; ++i) {
        const double* a = A + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* b = B + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p)
                acc += a[p] * b[p];
            C[i * n + j] += acc;
        }
    }
}

// C[m x n] += A[k x m]^T * B[k x n]
void mm_tn(const double* A, const double* B, double* C, std::size_t k, std::size_t m, std::size_t n)
{
    for (std::size_t p = 0; p < k; ++p) {
        const double* b = B + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double a = A[p * m + i];
            if (a == 0.0)
                continue;
            double* c = C + i * n;
            for (std::size_t j = 0; j < n; ++j)
                c[j] += a * b[j];
        }
    }
}

void require_rank(const Var& v, std::size_t rank, const char* op)
{
    if (v.value().rank() != rank)
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                             to_string(v.shape()));
}

void require_same_shape(const Var& a, const Var& b, const char* op)
{
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                             to_string(b.shape()));
}

Tape& tape_of(const Var& v)
{
    if (!v.valid())
        throw ContractError("use of an unbound Var");
    return *v.tape();
}

std::size_t resolve_axis(int axis, std::size_t rank)
{
    const int r = static_cast<int>(rank);
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r)
        throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
    return static_cast<std::size_t>(a);
}

} // namespace

Var matmul(Var a, Var b)
{
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw DimensionError("matmul: inner dimensions disagree, " + to_string(a.shape()) + " x " +
                             to_string(b.shape()));
    Tensor out(Shape{m, n});
    mm_nn(a.value().values().data(), b.value().values().data(), out.values().data(), m, k, n);
    const auto ia = a.id(), ib = b.id();
    return tape_of(a).record(std::move(out), {a, b}, [ia, ib, m, k, n](Tape& t, std::size_t self) {
        const double* g = t.grad_of(self).data();
        if (t.needs_grad(ia))
            mm_nt(g, t.value(ib).values().data(), t.grad_buffer(ia).data(), m, n, k);
        if (t.needs_grad(ib))
            mm_tn(t.value(ia).values().data(), g, t.grad_buffer(ib).data(), m, k, n);
    });
}

Var batched_matmul(Var a, Var b, bool transpose_b)
{
    require_rank(a, 3, "batched_matmul");
    require_rank(b, 3, "batched_matmul");
    const std::size_t B = a.dim(0), m = a.dim(1), k = a.dim(2);
    const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
    const std::size_t bk = transpose_b ? b.dim(2) : b.dim(1);
    if (b.dim(0) != B || bk != k)
        throw DimensionError("batched_matmul: incompatible shapes " + to_string(a.shape()) + " and " +
                             to_string(b.shape()) + (transpose_b ? " (b transposed)" : ""));
    Tensor out(Shape{B, m, n});
    const double* A = a.value().values().data();
    const double* Bm = b.value().values().data();
    double* C = out.values().data();
    for (std::size_t i = 0; i < B; ++i) {
        if (transpose_b)
            mm_nt(A + i * m * k, Bm + i * n * k, C + i * m * n, m, k, n);
        else
            mm_nn(A + i * m * k, Bm + i * k * n, C + i * m * n, m, k, n);
    }
    const auto ia = a.id(), ib = b.id();
    return tape_of(a).record(std::move(out), {a, b}, [=](Tape& t, std::size_t self) {
        const double* g = t.grad_of(self).data();
        const double* Av = t.value(ia).values().data();
        const double* Bv = t.value(ib).values().data();
        double* gA = t.needs_grad(ia) ? t.grad_buffer(ia).data() : nullptr;
        double* gB = t.needs_grad(ib) ? t.grad_buffer(ib).data() : nullptr;
        for (std::size_t i = 0; i < B; ++i) {
            const double* gi = g + i * m * n;
            if (transpose_b) {
                // C = A B^T: dA = dC B, dB = dC^T A
                if (gA)
                    mm_nn(gi, Bv + i * n * k, gA + i * m * k, m, n, k);
                if (gB)
                    mm_tn(gi, Av + i * m * k, gB + i * n * k, m, n, k);
            } else {
                if (gA)
                    mm_nt(gi, Bv + i * k * n, gA + i * m * k, m, n, k);
                if (gB)
                    mm_tn(Av + i * m * k, gi, gB + i * k * n, m, k, n);
            }
        }
    });
}

Var transpose(Var a)
{
    require_rank(a, 2, "transpose");
    const std::size_t r = a.dim(0), c = a.dim(1);
    Tensor out = transpose(a.value());
    const auto ia = a.id();
    return tape_of(a).record(std::move(out), {a}, [=](Tape& t, std::size_t self) {
        auto g = t.grad_of(self);
        auto ga = t.grad_buffer(ia);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j)
                ga[i * c + j] += g[j * r + i];
    });
}

Var reshape(Var a, Shape shape)
{
    Tensor out = a.value().reshaped(std::move(shape));
    const auto ia = a.id();
    return tape_of(a).record(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
        auto g = t.grad_of(self);
        auto ga = t.grad_buffer(ia);
        for (std::size_t i = 0; i < g.size(); ++i)
            ga[i] += g[i];
    });
}

Var add(Var a, Var b)
{
    require_same_shape(a, b, "add");
    Tensor out = a.value();
    out.zero_grad();
    auto bv = b.value().values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i)
        ov[i] += bv[i];
    const auto ia = a.id(), ib = b.id();
    return tape_of(a).record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
        auto g = t.grad_of(self);
        for (auto id : {ia, ib}) {
            if (!t.needs_grad(id))
                continue;
            auto gi = t.grad_buffer(id);
            for (std::size_t i = 0; i < g.size(); ++i)
                gi[i] += g[i];
        }
    });
}

Var sub(Var a, Var b)
{
    require_same_shape(a, b, "sub");
    Tensor out(a.shape());
    auto av = a.value().values();
    auto bv = b.value().values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i)
        ov[i] = av[i] - bv[i];
    const auto ia = a.id(), ib = b.id();
    return tape_of(a).record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
        auto g = t.grad_of(self);
        if (t.needs_grad(ia)) {
            auto gi = t.grad_buffer(ia);
            for (std::size_t i = 0; i < g.size(); ++i)
                gi[i] += g[i];
        }
        if (t.needs_grad(ib)) {
            auto gi = t.grad_buffer(ib);
            for (std::size_t i = 0; i < g.size(); ++i)
                gi[i] -= g[i];
        }
    });
}

Var mul(Var a, Var b)
{
    require_same_shape(a, b, "mul");
    Tensor out(a.shape());
    auto av = a.value().values();
    auto bv = b.value().values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i)
        ov[i] = av[i] * bv[i];
    const auto ia = a.id(), ib = b.id();
    return tape_of(a).record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
        auto g = t.grad_of(self);
        if (t.needs_grad(ia)) {
            auto gi = t.grad_buffer(ia);
            auto bv = t.value(ib).values();
            for (std::size_t i = 0; i < g.size(); ++i)
                gi[i] += g[i] * bv[i];
        }
        if (t.needs_grad(ib)) {
            auto gi = t.grad_buffer(ib);
            auto av = t.value(ia).values();
            for (std::size_t i = 0; i < g.size(); ++i)
                gi[i] += g[i] * av[i];
        }
    });
}

Var div(Var a, Var b)
{
    require_same_shape(a, b, "div");
    Tensor out(a.shape());
    auto av = a.value().values();
    auto bv = b.value().values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i)
        ov[i] = av[i] / bv[i];
    const auto ia = a.id(), ib = b.id();
    return tape_of(a).record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
        auto g = t.grad_of(self);
        auto av = t.value(ia).values();
        auto bv = t.value(ib).values();
        if (t.needs_grad(ia)) {
            auto gi = t.grad_buffer(ia);
            for (std::size_t i = 0; i < g.size(); ++i)
                gi[i] += g[i] / bv[i];
        }
        if (t.needs_grad(ib)) {
            auto gi = t.grad_buffer(ib);
            for (std::size_t i = 0; i < g.size(); ++i)
                gi[i] -= g[i] * av[i] / (bv[i] * bv[i]);
        }
    });
}

Var scale(Var a, double c)
{
    Tensor out(a.shape());
    auto av = a.value().values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i)
        ov[i] = av[i] * c;
    const auto ia = a.id();
    return tape_of(a).record(std::move(out), {a}, [ia, c](Tape& t, std::size_t self) {
        auto g = t.grad_of(self);
        auto gi = t.grad_buffer(ia);
        for (std::size_t i = 0; i < g.size(); ++i)
            gi[i] += g[i] * c;
    });
}

Var add_bias(Var a, Var bias)
{
    const auto& as = a.shape();
    const auto& bs = bias.shape();
    if (bs.size() > as.size() || !std::equal(bs.rbegin(), bs.rend(), as.rbegin()))
        throw DimensionError("add_bias: bias " + to_string(bs) + " does not match trailing dims of " + to_string(as));
    const std::size_t width = bias.value().size();
    Tensor out = a.value();
    out.zero_grad();
    auto bv = bias.value().values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i)
        ov[i] += bv[i % width];
    const auto ia = a.id(), ib = bias.id();
    return tape_of(a).record(std::move(out), {a, bias}, [ia, ib, width](Tape& t, std::size_t self) {
        auto g = t.grad_of(self);
        if (t.needs_grad(ia)) {
            auto gi = t.grad_buffer(ia);
            for (std::size_t i = 0; i < g.size(); ++i)
                gi[i] += g[i];
        }
        if (t.needs_grad(ib)) {
            auto gb = t.grad_buffer(ib);
            for (std::size_t i = 0; i < g.size(); ++i)
                gb[i % width] += g[i];
        }
    });
}

Var scale_rows(Var a, Var w)
{
    const std::size_t n = w.value().size();
    if (a.value().rank() == 0 || a.dim(0) != n)
        throw DimensionError("scale_rows: " + std::to_string(n) + " weights for shape " + to_string(a.shape()));
    const std::size_t width = n ? a.value().size() / n : 0;
    Tensor out(a.shape());
    auto av = a.value().values();
    auto wv = w.value().values();
    auto ov = out.values();
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < width; ++j)
            ov[r * width + j] = av[r * width + j] * wv[r];
    const auto ia = a.id(), iw = w.id();
    return tape_of(a).record(std::move(out), {a, w}, [=](Tape& t, std::size_t self) {
        auto g = t.grad_of(self);
        auto av = t.value(ia).values();
        auto wv = t.value(iw).values();
        if (t.needs_grad(ia)) {
            auto gi = t.grad_buffer(ia);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t j = 0; j < width; ++j)
                    gi[r * width + j] += g[r * width + j] * wv[r];
        }
        if (t.needs_grad(iw)) {
            auto gw = t.grad_buffer(iw);
            for (std::size_t r = 0; r < n; ++r) {
                double acc = 0.0;
                for (std::size_t j = 0; j < width; ++j)
                    acc += g[r * width + j] * av[r * width + j];
                gw[r] += acc;
            }
        }
    });
}

Var relu(Var a)
{
    Tensor out(a.shape());
    auto av = a.value().values();
    auto ov = out.values();
    double margin = 1e300;
    for (std::size_t i = 0; i < ov.size(); ++i) {
        ov[i] = av[i] > 0.0 ? av[i] : 0.0;
        margin = std::min(margin, std::abs(av[i]));
    }
    Tape& tape = tape_of(a);
    tape.note_relu_margin(margin);
    const auto ia = a.id();
    return tape.record(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
        auto g = t.grad_of(self);
        auto av = t.value(ia).values();
        auto gi = t.grad_buffer(ia);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (av[i] > 0.0)
                gi[i] += g[i];
    });
}

Var sigmoid(Var a)
{
    Tensor out(a.shape());
    auto av = a.value().values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) {
        const double z = av[i];
        ov[i] = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    }
    const auto ia = a.id();
    return tape_of(a).record(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
        auto g = t.grad_of(self);
        auto y = t.value(self).values();
        auto gi = t.grad_buffer(ia);
        for (std::size_t i = 0; i < g.size(); ++i)
            gi[i] += g[i] * y[i] * (1.0 - y[i]);
    });
}

Var softmax(Var a, int axis)
{
    const auto& shape = a.shape();
    if (shape.empty())
        throw DimensionError("softmax of a scalar");
    const std::size_t ax = resolve_axis(axis, shape.size());
    const std::size_t len = shape[ax];
    if (len == 0)
        throw DimensionError("softmax over an empty axis of shape " + to_string(shape));
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < ax; ++i)
        outer *= shape[i];
    for (std::size_t i = ax + 1; i < shape.size(); ++i)
        inner *= shape[i];

    Tensor out(shape);
    auto x = a.value().values();
    auto y = out.values();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < len; ++j)
                mx = std::max(mx, x[base + j * inner]);
            double s = 0.0;
            for (std::size_t j = 0; j < len; ++j) {
                const double e = std::exp(x[base + j * inner] - mx);
                y[base + j * inner] = e;
                s += e;
            }
            for (std::size_t j = 0; j < len; ++j)
                y[base + j * inner] /= s;
        }
    const auto ia = a.id();
    return tape_of(a).record(std::move(out), {a}, [=](Tape& t, std::size_t self) {
        auto g = t.grad_of(self);
        auto y = t.value(self).values();
        auto gi = t.grad_buffer(ia);
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * len * inner + in;
                double dot = 0.0;
                for (std::size_t j = 0; j < len; ++j)
                    dot += y[base + j * inner] * g[base + j * inner];
                for (std::size_t j = 0; j < len; ++j) {
                    const std::size_t p = base + j * inner;
                    gi[p] += y[p] * (g[p] - dot);
                }
            }
    });
}

Var masked_softmax(Var scores, std::span<const std::uint8_t> key_mask, std::size_t groups)
{
    require_rank(scores, 3, "masked_softmax");
    const std::size_t Bp = scores.dim(0), q = scores.dim(1), k = scores.dim(2);
    if (groups == 0 || Bp % groups != 0 || key_mask.size() != (Bp / groups) * k)
        throw DimensionError("masked_softmax: mask of " + std::to_string(key_mask.size()) +
                             " flags does not fit scores " + to_string(scores.shape()));
    Tensor out(scores.shape());
    auto x = scores.value().values();
    auto y = out.values();
    for (std::size_t b = 0; b < Bp; ++b) {
        const std::uint8_t* m = key_mask.data() + (b / groups) * k;
        for (std::size_t r = 0; r < q; ++r) {
            const std::size_t base = (b * q + r) * k;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < k; ++j)
                if (m[j])
                    mx = std::max(mx, x[base + j]);
            if (mx == -std::numeric_limits<double>::infinity())
                continue;
            double s = 0.0;
            for (std::size_t j = 0; j < k; ++j)
                if (m[j]) {
                    const double e = std::exp(x[base + j] - mx);
                    y[base + j] = e;
                    s += e;
                }
            for (std::size_t j = 0; j < k; ++j)
                y[base + j] /= s;
        }
    }
    const auto ia = scores.id();
    return tape_of(scores).record(std::move(out), {scores}, [=](Tape& t, std::size_t self) {
        auto g = t.grad_of(self);
        auto y = t.value(self).values();
        auto gi = t.grad_buffer(ia);
        for (std::size_t row = 0; row < Bp * q; ++row) {
            const std::size_t base = row * k;
            double dot = 0.0;
            for (std::size_t j = 0; j < k; ++j)
                dot += y[base + j] * g[base + j];
            for (std::size_t j = 0; j < k; ++j)
                gi[base + j] += y[base + j] * (g[base + j] - dot);
        }
    });
}

Var normalize_rows(Var a)
{
    if (a.value().rank() == 0)
        throw DimensionError("normalize_rows of a scalar");
    const std::size_t width = a.shape().back();
    const std::size_t rows = width ? a.value().size() / width : 0;
    Tensor out(a.shape());
    auto x = a.value().values();
    auto y = out.values();
    std::vector<double> sums(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < width; ++j)
            s += x[r * width + j];
        sums[r] = s;
        for (std::size_t j = 0; j < width; ++j)
            y[r * width + j] = x[r * width + j] / s;
    }
    const auto ia = a.id();
    return tape_of(a).record(std::move(out), {a}, [=, sums = std::move(sums)](Tape& t, std::size_t self) {
        auto g = t.grad_of(self);
        auto y = t.value(self).values();
        auto gi = t.grad_buffer(ia);
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (std::size_t j = 0; j < width; ++j)
                dot += g[r * width + j] * y[r * width + j];
            for (std::size_t j = 0; j < width; ++j)
                gi[r * width + j] += (g[r * width + j] - dot) / sums[r];
        }
    });
}

Var layer_norm(Var x, Var gain, Var shift, double eps)
{
    if (x.value().rank() == 0)
        throw DimensionError("layer_norm of a scalar");
    const std::size_t d = x.shape().back();
    if (d == 0)
        throw DimensionError("layer_norm over an empty last axis of shape " + to_string(x.shape()));
    if (gain.value().size() != d || shift.value().size() != d)
        throw DimensionError("layer_norm: gain/shift width must be " + std::to_string(d));
    const std::size_t rows = x.value().size() / d;
    Tensor out(x.shape());
    std::vector<double> xhat(x.value().size());
    std::vector<double> rstd(rows);
    auto xv = x.value().values();
    auto gv = gain.value().values();
    auto sv = shift.value().values();
    auto yv = out.values();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xv.data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j)
            mu += xr[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j)
            var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<double>(d);
        const double rs = 1.0 / std::sqrt(var + eps);
        rstd[r] = rs;
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (xr[j] - mu) * rs;
            xhat[r * d + j] = h;
            yv[r * d + j] = h * gv[j] + sv[j];
        }
    }
    const auto ix = x.id(), ig = gain.id(), is = shift.id();
    return tape_of(x).record(
        std::move(out), {x, gain, shift},
        [=, xhat = std::move(xhat), rstd = std::move(rstd)](Tape& t, std::size_t self) {
            auto g = t.grad_of(self);
            auto gv = t.value(ig).values();
            if (t.needs_grad(ig)) {
                auto gg = t.grad_buffer(ig);
                for (std::size_t i = 0; i < g.size(); ++i)
                    gg[i % d] += g[i] * xhat[i];
            }
            if (t.needs_grad(is)) {
                auto gs = t.grad_buffer(is);
                for (std::size_t i = 0; i < g.size(); ++i)
                    gs[i % d] += g[i];
            }
            if (t.needs_grad(ix)) {
                auto gx = t.grad_buffer(ix);
                const double inv_d = 1.0 / static_cast<double>(d);
                for (std::size_t r = 0; r < rows; ++r) {
                    double m1 = 0.0, m2 = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dh = g[r * d + j] * gv[j];
                        m1 += dh;
                        m2 += dh * xhat[r * d + j];
                    }
                    m1 *= inv_d;
                    m2 *= inv_d;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dh = g[r * d + j] * gv[j];
                        gx[r * d + j] += rstd[r] * (dh - m1 - xhat[r * d + j] * m2);
                    }
                }
            }
        });
}

Var gather_rows(Var table, std::span<const std::size_t> ids)
{
    require_rank(table, 2, "gather_rows");
    const std::size_t vocab = table.dim(0), d = table.dim(1);
    Tensor out(Shape{ids.size(), d});
    auto tv = table.value().values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= vocab)
            throw IndexError("row id " + std::to_string(ids[i]) + " out of range for " + std::to_string(vocab) +
                             " rows");
        std::copy_n(tv.data() + ids[i] * d, d, ov.data() + i * d);
    }
    const auto it = table.id();
    std::vector<std::size_t> idx(ids.begin(), ids.end());
    return tape_of(table).record(std::move(out), {table}, [it, d, idx = std::move(idx)](Tape& t, std::size_t self) {
        auto g = t.grad_of(self);
        auto gt = t.grad_buffer(it);
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = 0; j < d; ++j)
                gt[idx[i] * d + j] += g[i * d + j];
    });
}

Var scatter_add_rows(Var src, std::span<const std::size_t> dest, std::size_t n)
{
    require_rank(src, 2, "scatter_add_rows");
    const std::size_t m = src.dim(0), d = src.dim(1);
    if (dest.size() != m)
        throw DimensionError("scatter_add_rows: " + std::to_string(dest.size()) + " destinations for " +
                             std::to_string(m) + " rows");
    Tensor out(Shape{n, d});
    auto sv = src.value().values();
    auto ov = out.values();
    for (std::size_t i = 0; i < m; ++i) {
        if (dest[i] >= n)
            throw IndexError("scatter_add_rows: destination " + std::to_string(dest[i]) + " >= " + std::to_string(n));
        for (std::size_t j = 0; j < d; ++j)
            ov[dest[i] * d + j] += sv[i * d + j];
    }
    const auto is = src.id();
    std::vector<std::size_t> idx(dest.begin(), dest.end());
    return tape_of(src).record(std::move(out), {src}, [is, d, idx = std::move(idx)](Tape& t, std::size_t self) {
        auto g = t.grad_of(self);
        auto gs = t.grad_buffer(is);
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = 0; j < d; ++j)
                gs[i * d + j] += g[idx[i] * d + j];
    });
}

Var gather_columns(Var a, std::span<const std::size_t> cols, std::size_t k)
{
    require_rank(a, 2, "gather_columns");
    const std::size_t U = a.dim(0), E = a.dim(1);
    if (cols.size() != U * k)
        throw DimensionError("gather_columns: expected " + std::to_string(U * k) + " column ids");
    Tensor out(Shape{U, k});
    auto av = a.value().values();
    for (std::size_t u = 0; u < U; ++u)
        for (std::size_t j = 0; j < k; ++j) {
            const std::size_t c = cols[u * k + j];
            if (c >= E)
                throw IndexError("gather_columns: column " + std::to_string(c) + " >= " + std::to_string(E));
            out[u * k + j] = av[u * E + c];
        }
    const auto ia = a.id();
    std::vector<std::size_t> idx(cols.begin(), cols.end());
    return tape_of(a).record(std::move(out), {a}, [=, idx = std::move(idx)](Tape& t, std::size_t self) {
        auto g = t.grad_of(self);
        auto ga = t.grad_buffer(ia);
        for (std::size_t u = 0; u < U; ++u)
            for (std::size_t j = 0; j < k; ++j)
                ga[u * E + idx[u * k + j]] += g[u * k + j];
    });
}

Var masked_segment_mean(Var x, std::span<const std::size_t> segment, std::span<const std::uint8_t> keep,
                        std::size_t segments)
{
    require_rank(x, 2, "segment_mean");
    const std::size_t N = x.dim(0), d = x.dim(1);
    if (segment.size() != N || (!keep.empty() && keep.size() != N))
        throw DimensionError("segment_mean: segment ids do not match " + std::to_string(N) + " rows");
    std::vector<double> count(segments, 0.0);
    for (std::size_t i = 0; i < N; ++i) {
        if (segment[i] >= segments)
            throw IndexError("segment id " + std::to_string(segment[i]) + " >= " + std::to_string(segments));
        if (keep.empty() || keep[i])
            count[segment[i]] += 1.0;
    }
    Tensor out(Shape{segments, d});
    auto xv = x.value().values();
    auto ov = out.values();
    for (std::size_t i = 0; i < N; ++i) {
        if (!keep.empty() && !keep[i])
            continue;
        const double w = 1.0 / count[segment[i]];
        for (std::size_t j = 0; j < d; ++j)
            ov[segment[i] * d + j] += xv[i * d + j] * w;
    }
    const auto ix = x.id();
    std::vector<std::size_t> seg(segment.begin(), segment.end());
    std::vector<std::uint8_t> kept(keep.begin(), keep.end());
    return tape_of(x).record(
        std::move(out), {x},
        [=, seg = std::move(seg), kept = std::move(kept), count = std::move(count)](Tape& t, std::size_t self) {
            auto g = t.grad_of(self);
            auto gx = t.grad_buffer(ix);
            for (std::size_t i = 0; i < seg.size(); ++i) {
                if (!kept.empty() && !kept[i])
                    continue;
                const double w = 1.0 / count[seg[i]];
                for (std::size_t j = 0; j < d; ++j)
                    gx[i * d + j] += g[seg[i] * d + j] * w;
            }
        });
}

Var segment_mean(Var x, std::span<const std::size_t> segment, std::size_t segments)
{
    return masked_segment_mean(x, segment, {}, segments);
}

Var concat_last(std::span<const Var> parts)
{
    if (parts.empty())
        throw ContractError("concat_last of zero tensors");
    const Shape& s0 = parts[0].shape();
    if (s0.empty())
        throw DimensionError("concat_last of scalars");
    const Shape lead(s0.begin(), s0.end() - 1);
    const std::size_t rows = shape_size(lead);
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != s0.size() || !std::equal(lead.begin(), lead.end(), s.begin()))
            throw DimensionError("concat_last: leading dims differ, " + to_string(s0) + " vs " + to_string(s));
        widths.push_back(s.back());
        total += s.back();
    }
    Shape shape = lead;
    shape.push_back(total);
    Tensor out(shape);
    auto ov = out.values();
    std::size_t offset = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        auto pv = parts[p].value().values();
        const std::size_t w = widths[p];
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(pv.data() + r * w, w, ov.data() + r * total + offset);
        offset += w;
    }
    std::vector<std::size_t> ids;
    for (const auto& p : parts)
        ids.push_back(p.id());
    return tape_of(parts[0]).record(
        std::move(out), parts,
        [=, ids = std::move(ids), widths = std::move(widths)](Tape& t, std::size_t self) {
            auto g = t.grad_of(self);
            std::size_t off = 0;
            for (std::size_t p = 0; p < ids.size(); ++p) {
                const std::size_t w = widths[p];
                if (t.needs_grad(ids[p])) {
                    auto gp = t.grad_buffer(ids[p]);
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < w; ++j)
                            gp[r * w + j] += g[r * total + off + j];
                }
                off += w;
            }
        });
}

Var slice_last(Var a, std::size_t begin, std::size_t end)
{
    const Shape& s = a.shape();
    if (s.empty() || begin > end || end > s.back())
        throw DimensionError("slice_last [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                             to_string(s));
    const std::size_t width = s.back(), w = end - begin;
    const std::size_t rows = width ? a.value().size() / width : 0;
    Shape shape = s;
    shape.back() = w;
    Tensor out(shape);
    auto av = a.value().values();
    auto ov = out.values();
    for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(av.data() + r * width + begin, w, ov.data() + r * w);
    const auto ia = a.id();
    return tape_of(a).record(std::move(out), {a}, [=](Tape& t, std::size_t self) {
        auto g = t.grad_of(self);
        auto ga = t.grad_buffer(ia);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < w; ++j)
                ga[r * width + begin + j] += g[r * w + j];
    });
}

Var split_heads(Var x, std::size_t heads)
{
    require_rank(x, 3, "split_heads");
    const std::size_t B = x.dim(0), s = x.dim(1), width = x.dim(2);
    if (heads == 0 || width % heads != 0)
        throw DimensionError("split_heads: width " + std::to_string(width) + " not divisible by " +
                             std::to_string(heads) + " heads");
    const std::size_t dh = width / heads;
    Tensor out(Shape{B * heads, s, dh});
    auto xv = x.value().values();
    auto ov = out.values();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < s; ++t)
            for (std::size_t h = 0; h < heads; ++h)
                std::copy_n(xv.data() + (b * s + t) * width + h * dh, dh, ov.data() + ((b * heads + h) * s + t) * dh);
    const auto ix = x.id();
    return tape_of(x).record(std::move(out), {x}, [=](Tape& tp, std::size_t self) {
        auto g = tp.grad_of(self);
        auto gx = tp.grad_buffer(ix);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t t = 0; t < s; ++t)
                for (std::size_t h = 0; h < heads; ++h)
                    for (std::size_t c = 0; c < dh; ++c)
                        gx[(b * s + t) * width + h * dh + c] += g[((b * heads + h) * s + t) * dh + c];
    });
}

Var merge_heads(Var x, std::size_t heads)
{
    require_rank(x, 3, "merge_heads");
    const std::size_t Bh = x.dim(0), s = x.dim(1), dh = x.dim(2);
    if (heads == 0 || Bh % heads != 0)
        throw DimensionError("merge_heads: leading dim " + std::to_string(Bh) + " not divisible by " +
                             std::to_string(heads));
    const std::size_t B = Bh / heads, width = heads * dh;
    Tensor out(Shape{B, s, width});
    auto xv = x.value().values();
    auto ov = out.values();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < s; ++t)
            for (std::size_t h = 0; h < heads; ++h)
                std::copy_n(xv.data() + ((b * heads + h) * s + t) * dh, dh, ov.data() + (b * s + t) * width + h * dh);
    const auto ix = x.id();
    return tape_of(x).record(std::move(out), {x}, [=](Tape& tp, std::size_t self) {
        auto g = tp.grad_of(self);
        auto gx = tp.grad_buffer(ix);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t t = 0; t < s; ++t)
                for (std::size_t h = 0; h < heads; ++h)
                    for (std::size_t c = 0; c < dh; ++c)
                        gx[((b * heads + h) * s + t) * dh + c] += g[(b * s + t) * width + h * dh + c];
    });
}

Var sum(Var a)
{
    auto av = a.value().values();
    const double s = std::accumulate(av.begin(), av.end(), 0.0);
    const auto ia = a.id();
    return tape_of(a).record(Tensor::scalar(s), {a}, [ia](Tape& t, std::size_t self) {
        const double g = t.grad_of(self)[0];
        for (auto& v : t.grad_buffer(ia))
            v += g;
    });
}

Var mean(Var a)
{
    const std::size_t n = a.value().size();
    if (n == 0)
        throw DimensionError("mean of an empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var sum_rows(Var a)
{
    require_rank(a, 2, "sum_rows");
    const std::size_t n = a.dim(0), d = a.dim(1);
    Tensor out(Shape{d});
    auto av = a.value().values();
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < d; ++j)
            out[j] += av[r * d + j];
    const auto ia = a.id();
    return tape_of(a).record(std::move(out), {a}, [=](Tape& t, std::size_t self) {
        auto g = t.grad_of(self);
        auto ga = t.grad_buffer(ia);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < d; ++j)
                ga[r * d + j] += g[j];
    });
}

Var bce_with_logits(Var logits, std::span<const double> labels, std::span<const std::uint8_t> mask)
{
    const std::size_t n = logits.value().size();
    if (labels.size() != n || (!mask.empty() && mask.size() != n))
        throw DimensionError("bce: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                             " logits");
    auto z = logits.value().values();
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!mask.empty() && !mask[i])
            continue;
        const double y = labels[i];
        total += std::max(z[i], 0.0) - z[i] * y + std::log1p(std::exp(-std::abs(z[i])));
        ++count;
    }
    if (count == 0)
        throw ContractError("bce over zero labelled entries");
    const double inv = 1.0 / static_cast<double>(count);
    const auto iz = logits.id();
    std::vector<double> ys(labels.begin(), labels.end());
    std::vector<std::uint8_t> ms(mask.begin(), mask.end());
    return tape_of(logits).record(
        Tensor::scalar(total * inv), {logits},
        [iz, inv, ys = std::move(ys), ms = std::move(ms)](Tape& t, std::size_t self) {
            const double g = t.grad_of(self)[0];
            auto z = t.value(iz).values();
            auto gz = t.grad_buffer(iz);
            for (std::size_t i = 0; i < ys.size(); ++i) {
                if (!ms.empty() && !ms[i])
                    continue;
                const double p = z[i] >= 0 ? 1.0 / (1.0 + std::exp(-z[i])) : std::exp(z[i]) / (1.0 + std::exp(z[i]));
                gz[i] += g * inv * (p - ys[i]);
            }
        });
}

} // namespace grec
