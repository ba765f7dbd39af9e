// Copyright (c) 2026, The grec Authors
// SPDX-License-Identifier: Apache-2.0
//
// Scaled dot-product attention, multi-head and multi-query (one shared key/value
// head) self-attention, and sequential / parallel transformer blocks.

#pragma once

#include "grec/autodiff.hpp"
#include "grec/nn.hpp"

#include <cstdint>
#include <span>
#include <string>

namespace grec {

enum class AttentionMode { MultiHead, MultiQuery };
enum class BlockTopology { Sequential, Parallel };

/// Projections w_q [d x h*d_head], w_k / w_v [d x kv_width], w_o [h*d_head x d].
/// kv_width is h*d_head for MultiHead and d_head for MultiQuery.
struct AttentionParams {
    std::string name;
    std::size_t d_model = 0;
    std::size_t heads = 1;
    std::size_t d_head = 0;
    AttentionMode mode = AttentionMode::MultiQuery;

    std::size_t query_width() const { return heads * d_head; }
    std::size_t kv_width() const { return mode == AttentionMode::MultiHead ? heads * d_head : d_head; }

    std::string w_q() const { return name + ".w_q"; }
    std::string w_k() const { return name + ".w_k"; }
    std::string w_v() const { return name + ".w_v"; }
    std::string w_o() const { return name + ".w_o"; }

    void init(ParamStore& store, Rng& rng) const;
    /// Checks the stored projection shapes against the mode invariants.
    void validate(const ParamStore& store) const;
};

/// softmax(Q K^T / sqrt(dk)) V for Q [s_q x dk], K [s_k x dk], V [s_k x dv].
Var scaled_attention(Var q, Var k, Var v);

/// Batched form over [B x s x dk] operands. `key_mask` (optional) holds B*s_k
/// validity flags; `mask_groups` consecutive batch rows share one mask row.
Var scaled_attention_batched(Var q, Var k, Var v, std::span<const std::uint8_t> key_mask = {},
                             std::size_t mask_groups = 1);

/// Attention weight matrix softmax(Q K^T / sqrt(dk)) without gradient tracking.
Tensor attention_weights(const Tensor& q, const Tensor& k);

/// Self-attention of x [s x d]; p.mode must be MultiHead.
Var multi_head_forward(Tape& tape, ParamStore& store, Var x, const AttentionParams& p);
/// Self-attention of x [s x d]; p.mode must be MultiQuery.
Var multi_query_forward(Tape& tape, ParamStore& store, Var x, const AttentionParams& p);

/// Batched self-attention of x [B x s x d] with a key-padding mask of B*s flags
/// (empty = all valid). Dispatches on p.mode.
Var self_attention(Tape& tape, ParamStore& store, Var x, const AttentionParams& p,
                   std::span<const std::uint8_t> key_mask = {});

struct TransformerBlock {
    std::string name;
    AttentionParams attn;
    MlpBlock mlp;
    LayerNormParams ln1;
    LayerNormParams ln2; // used by the sequential topology only
    BlockTopology topology = BlockTopology::Parallel;

    static TransformerBlock make(std::string name, std::size_t d_model, std::size_t heads, std::size_t d_head,
                                 std::size_t mlp_hidden, AttentionMode mode, BlockTopology topology);

    void init(ParamStore& store, Rng& rng) const;

    /// x [B x s x d] (or [s x d]).
    ///   Sequential: y = x + MLP(LN2(x + Attn(LN1(x))))
    ///   Parallel:   y = x + MLP(LN1(x)) + Attn(LN1(x))
    Var operator()(Tape& tape, ParamStore& store, Var x, std::span<const std::uint8_t> key_mask = {}) const;
};

} // namespace grec
