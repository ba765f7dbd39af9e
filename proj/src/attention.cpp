// Copyright (c) 2026, The grec Authors
// SPDX-License-Identifier: Apache-2.0

#include "grec/attention.hpp"

#include "grec/errors.hpp"

#include <cmath>

namespace grec {

void AttentionParams::init(ParamStore& store, Rng& rng) const
{
    if (heads == 0 || d_head == 0)
        throw ContractError(name + ": heads and d_head must be positive");
    store.add(w_q(), glorot_uniform(Shape{d_model, query_width()}, d_model, query_width(), rng));
    store.add(w_k(), glorot_uniform(Shape{d_model, kv_width()}, d_model, kv_width(), rng));
    store.add(w_v(), glorot_uniform(Shape{d_model, kv_width()}, d_model, kv_width(), rng));
    store.add(w_o(), glorot_uniform(Shape{query_width(), d_model}, query_width(), d_model, rng));
}

void AttentionParams::validate(const ParamStore& store) const
{
    auto expect = [&](const std::string& n, Shape s) {
        if (store.at(n).shape() != s)
            throw DimensionError(n + ": expected " + to_string(s) + ", stored " + to_string(store.at(n).shape()));
    };
    expect(w_q(), {d_model, query_width()});
    expect(w_k(), {d_model, kv_width()});
    expect(w_v(), {d_model, kv_width()});
    expect(w_o(), {query_width(), d_model});
}

Var scaled_attention_batched(Var q, Var k, Var v, std::span<const std::uint8_t> key_mask, std::size_t mask_groups)
{
    if (q.value().rank() != 3 || k.value().rank() != 3 || v.value().rank() != 3)
        throw DimensionError("scaled_attention_batched expects rank-3 operands");
    if (q.dim(2) != k.dim(2))
        throw DimensionError("attention: query width " + std::to_string(q.dim(2)) + " != key width " +
                             std::to_string(k.dim(2)));
    if (k.dim(1) == 0)
        throw DimensionError("attention over zero keys");
    if (k.dim(1) != v.dim(1))
        throw DimensionError("attention: " + std::to_string(k.dim(1)) + " keys but " + std::to_string(v.dim(1)) +
                             " values");
    const double inv = 1.0 / std::sqrt(static_cast<double>(q.dim(2)));
    Var scores = scale(batched_matmul(q, k, /*transpose_b=*/true), inv);
    Var weights = key_mask.empty() ? softmax(scores, -1) : masked_softmax(scores, key_mask, mask_groups);
    return batched_matmul(weights, v);
}

Var scaled_attention(Var q, Var k, Var v)
{
    if (q.value().rank() != 2 || k.value().rank() != 2 || v.value().rank() != 2)
        throw DimensionError("scaled_attention expects matrices");
    if (q.dim(1) != k.dim(1))
        throw DimensionError("attention: query width " + std::to_string(q.dim(1)) + " != key width " +
                             std::to_string(k.dim(1)));
    Var out = scaled_attention_batched(reshape(q, {1, q.dim(0), q.dim(1)}), reshape(k, {1, k.dim(0), k.dim(1)}),
                                       reshape(v, {1, v.dim(0), v.dim(1)}));
    return reshape(out, {q.dim(0), v.dim(1)});
}

Tensor attention_weights(const Tensor& q, const Tensor& k)
{
    Tape tape;
    const double inv = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
    return softmax(scale(matmul(tape.constant(q), transpose(tape.constant(k))), inv), -1).value();
}

namespace {

Var attend(Tape& tape, ParamStore& store, Var x, const AttentionParams& p, std::span<const std::uint8_t> key_mask)
{
    const std::size_t B = x.dim(0), s = x.dim(1), h = p.heads, dh = p.d_head;
    Var q = matmul(reshape(x, {B * s, p.d_model}), tape.param(store.at(p.w_q())));
    Var k = matmul(reshape(x, {B * s, p.d_model}), tape.param(store.at(p.w_k())));
    Var v = matmul(reshape(x, {B * s, p.d_model}), tape.param(store.at(p.w_v())));
    Var heads_out;
    if (p.mode == AttentionMode::MultiHead) {
        Var qh = split_heads(reshape(q, {B, s, h * dh}), h);
        Var kh = split_heads(reshape(k, {B, s, h * dh}), h);
        Var vh = split_heads(reshape(v, {B, s, h * dh}), h);
        heads_out = merge_heads(scaled_attention_batched(qh, kh, vh, key_mask, h), h);
    } else {
        // Row t*h + j of the reshaped queries is head j of token t; every head
        // reads the same single K/V head.
        Var qh = reshape(q, {B, s * h, dh});
        Var kh = reshape(k, {B, s, dh});
        Var vh = reshape(v, {B, s, dh});
        heads_out = reshape(scaled_attention_batched(qh, kh, vh, key_mask, 1), {B, s, h * dh});
    }
    Var y = matmul(reshape(heads_out, {B * s, h * dh}), tape.param(store.at(p.w_o())));
    return reshape(y, {B, s, p.d_model});
}

void check_input(Var x, const AttentionParams& p, std::size_t rank)
{
    if (x.value().rank() != rank || x.shape().back() != p.d_model)
        throw DimensionError(p.name + ": input " + to_string(x.shape()) + " does not match d_model " +
                             std::to_string(p.d_model));
}

} // namespace

Var self_attention(Tape& tape, ParamStore& store, Var x, const AttentionParams& p,
                   std::span<const std::uint8_t> key_mask)
{
    check_input(x, p, 3);
    p.validate(store);
    if (!key_mask.empty() && key_mask.size() != x.dim(0) * x.dim(1))
        throw DimensionError(p.name + ": key mask has " + std::to_string(key_mask.size()) + " flags for " +
                             to_string(x.shape()));
    return attend(tape, store, x, p, key_mask);
}

Var multi_head_forward(Tape& tape, ParamStore& store, Var x, const AttentionParams& p)
{
    if (p.mode != AttentionMode::MultiHead)
        throw ContractError(p.name + ": multi_head_forward needs MultiHead parameters");
    check_input(x, p, 2);
    return reshape(self_attention(tape, store, reshape(x, {1, x.dim(0), x.dim(1)}), p), {x.dim(0), p.d_model});
}

Var multi_query_forward(Tape& tape, ParamStore& store, Var x, const AttentionParams& p)
{
    if (p.mode != AttentionMode::MultiQuery)
        throw ContractError(p.name + ": multi_query_forward needs MultiQuery parameters");
    check_input(x, p, 2);
    return reshape(self_attention(tape, store, reshape(x, {1, x.dim(0), x.dim(1)}), p), {x.dim(0), p.d_model});
}

TransformerBlock TransformerBlock::make(std::string name, std::size_t d_model, std::size_t heads, std::size_t d_head,
                                        std::size_t mlp_hidden, AttentionMode mode, BlockTopology topology)
{
    TransformerBlock b;
    b.attn = AttentionParams{name + ".attn", d_model, heads, d_head, mode};
    b.mlp = MlpBlock{name + ".mlp", d_model, mlp_hidden};
    b.ln1 = LayerNormParams{name + ".ln1", d_model};
    b.ln2 = LayerNormParams{name + ".ln2", d_model};
    b.topology = topology;
    b.name = std::move(name);
    return b;
}

void TransformerBlock::init(ParamStore& store, Rng& rng) const
{
    attn.init(store, rng);
    mlp.init(store, rng);
    ln1.init(store);
    if (topology == BlockTopology::Sequential)
        ln2.init(store);
}

Var TransformerBlock::operator()(Tape& tape, ParamStore& store, Var x, std::span<const std::uint8_t> key_mask) const
{
    const bool matrix = x.value().rank() == 2;
    Var xb = matrix ? reshape(x, {1, x.dim(0), x.dim(1)}) : x;
    Var h = ln1(tape, store, xb);
    Var a = self_attention(tape, store, h, attn, key_mask);
    Var y;
    if (topology == BlockTopology::Parallel) {
        y = add(add(xb, mlp(tape, store, h)), a);
    } else {
        y = add(xb, mlp(tape, store, ln2(tape, store, add(xb, a))));
    }
    return matrix ? reshape(y, x.shape()) : y;
}

} // namespace grec
