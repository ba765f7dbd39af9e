// Copyright (c) 2026, The grec Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation over a per-pass tape.
//
// A Tape owns every intermediate value of one forward pass. Parameters from a
// ParamStore are bound as leaves; after backward() their gradients are added
// into Tensor::grad of the bound tensor. A tape can be differentiated once.

#pragma once

#include "grec/tensor.hpp"

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

namespace grec {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while its tape lives.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t dim(std::size_t axis) const { return value().dim(axis); }
    std::size_t id() const noexcept { return id_; }
    Tape* tape() const noexcept { return tape_; }
    bool valid() const noexcept { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf that never receives a gradient.
    Var constant(Tensor value);
    /// Leaf owned by the tape that receives a gradient (read it with grad()).
    Var variable(Tensor value);
    /// Leaf bound to an external tensor. Binding the same tensor twice yields the same node.
    Var param(Tensor& bound);

    /// Records an op result. `fn` runs during backward when the node needs a gradient.
    Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
    Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn);

    /// Populates gradients of everything reachable from the scalar `loss`.
    void backward(const Var& loss);

    /// Gradient of a node after backward(); zeros if nothing flowed into it.
    Tensor grad(const Var& v) const;

    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
    std::span<const double> grad_of(std::size_t id) const { return nodes_[id].grad; }
    /// Gradient accumulator of `id`, zero-filled on first access.
    std::span<double> grad_buffer(std::size_t id);

    std::size_t size() const noexcept { return nodes_.size(); }

    /// Smallest |pre-activation| seen by relu() on this tape. Gradient checks
    /// use it to reject samples that sit on the kink.
    double relu_margin() const noexcept { return relu_margin_; }
    void note_relu_margin(double m) noexcept
    {
        if (m < relu_margin_)
            relu_margin_ = m;
    }

private:
    struct Node {
        Tensor value;
        std::vector<double> grad;
        BackwardFn backward;
        bool needs_grad = false;
        Tensor* bound = nullptr;
    };

    std::deque<Node> nodes_;
    std::unordered_map<const Tensor*, std::size_t> bound_;
    bool differentiated_ = false;
    double relu_margin_ = 1e300;
};

// ---- ops -------------------------------------------------------------------
// All ops require their inputs to live on the same tape.

/// [m x k] x [k x n] -> [m x n]
Var matmul(Var a, Var b);
/// [B x m x k] x [B x k x n] -> [B x m x n]; with transpose_b, b is [B x n x k].
Var batched_matmul(Var a, Var b, bool transpose_b = false);
Var transpose(Var a);
Var reshape(Var a, Shape shape);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double c);
inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

/// Adds `bias` broadcast over the leading axes; bias.shape must equal a's trailing dims.
Var add_bias(Var a, Var bias);
/// Multiplies row i of `a` (viewed as [n x rest]) by w[i]; w has n elements.
Var scale_rows(Var a, Var w);

Var relu(Var a);
Var sigmoid(Var a);

/// Numerically stable softmax along `axis` (negative counts from the back).
Var softmax(Var a, int axis = -1);
/// Softmax over the last axis of scores[B' x q x k]. key_mask holds B*k flags
/// (1 = valid) with B' = B * groups; batch b' uses mask row b' / groups.
/// Masked keys get weight exactly 0; a row with no valid key is all zeros.
Var masked_softmax(Var scores, std::span<const std::uint8_t> key_mask, std::size_t groups);
/// Divides each row (last axis) by its sum.
Var normalize_rows(Var a);

/// Last-axis layer normalization with variance epsilon `eps`.
Var layer_norm(Var x, Var gain, Var shift, double eps = 1e-5);

/// out[i] = table[ids[i]]; gradient scatters back to the selected rows.
Var gather_rows(Var table, std::span<const std::size_t> ids);
/// out[dest[i]] += src[i] into an [n x d] zero matrix.
Var scatter_add_rows(Var src, std::span<const std::size_t> dest, std::size_t n);
/// Row-wise gather of columns: out[u][j] = a[u][cols[u*k + j]], giving [U x k].
Var gather_columns(Var a, std::span<const std::size_t> cols, std::size_t k);
/// Mean of the rows of x[N x d] sharing a segment id; empty segments are zero.
Var segment_mean(Var x, std::span<const std::size_t> segment, std::size_t segments);
/// Same as segment_mean but only rows with weight[i] != 0 count.
Var masked_segment_mean(Var x, std::span<const std::size_t> segment, std::span<const std::uint8_t> keep,
                        std::size_t segments);

/// Concatenation along the last axis; leading dims must agree.
Var concat_last(std::span<const Var> parts);
Var slice_last(Var a, std::size_t begin, std::size_t end);

/// [B x s x h*dh] -> [B*h x s x dh]
Var split_heads(Var x, std::size_t heads);
/// [B*h x s x dh] -> [B x s x h*dh]
Var merge_heads(Var x, std::size_t heads);

Var sum(Var a);
Var mean(Var a);
/// Column sums of a matrix: [n x d] -> [d].
Var sum_rows(Var a);

/// Mean binary cross-entropy over entries with mask != 0, from logits, in the
/// stable form max(z,0) - z*y + log(1 + exp(-|z|)).
Var bce_with_logits(Var logits, std::span<const double> labels, std::span<const std::uint8_t> mask = {});

} // namespace grec
