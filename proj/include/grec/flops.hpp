// Copyright (c) 2026, The grec Authors
// SPDX-License-Identifier: Apache-2.0
//
// Analytic FLOPs accounting. Counts are exact integers derived from layer
// shapes and batch composition; nothing is measured.
//
// Routing cost per granularity (gate = 2dE per invocation, pooling = d per
// pooled token, dispatch = c * d per (unit, selected expert)):
//   Token         N gates                 + N*k*c_tok*d
//   Sentence      M gates + N*d pooling   + N*k*c_tok*d
//   Task          T gates                 + T*k*c_grp*d
//   TaskSentence  TS gates + TS*S*d pool  + TS*k*c_grp*d
// Pooling is booked under `gate`.

#pragma once

#include "grec/attention.hpp"
#include "grec/model.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace grec {

struct CostModel {
    std::uint64_t c_tok = 2;
    std::uint64_t c_grp = 2;

    void validate() const;
};

/// Composition of one batch as seen by the mixture layer.
struct BatchStats {
    std::uint64_t tokens = 0;         ///< N content tokens
    std::uint64_t sentences = 0;      ///< M examples
    std::uint64_t tasks = 0;          ///< T distinct use-case tokens
    std::uint64_t task_sentences = 0; ///< TS distinct task sentences
    std::uint64_t sentence_tokens = 2; ///< S task tokens per task sentence
    /// Padded length per sequence field; empty = schema max lengths.
    std::vector<std::uint64_t> sequence_lengths;
};

BatchStats batch_stats(const FeatureBatch& batch);

/// `per_sentence` examples of every flow x use-case pair: N = M = per_sentence *
/// TS, TS = flows * use cases, T = use cases, S = 2.
BatchStats calibration_profile(const TaskVocabulary& tasks, std::uint64_t per_sentence = 2);

struct FlopsReport {
    std::uint64_t attention = 0;
    std::uint64_t mlp = 0;
    std::uint64_t gate = 0;
    std::uint64_t dispatch = 0;
    std::uint64_t experts = 0;

    std::uint64_t routing_total() const noexcept { return gate + dispatch; }
    std::uint64_t model_total() const noexcept { return attention + mlp + gate + dispatch + experts; }

    /// `attention=.. mlp=.. gate=.. dispatch=.. experts=.. routing_total=.. model_total=..`
    std::string to_line() const;
    /// Inverse of to_line; rejects inconsistent totals.
    static FlopsReport parse_line(std::string_view line);

    friend bool operator==(const FlopsReport&, const FlopsReport&) = default;
};

struct AttentionFlops {
    std::uint64_t q_proj = 0;
    std::uint64_t kv_proj = 0; ///< keys and values together
    std::uint64_t scores = 0;
    std::uint64_t mix = 0;
    std::uint64_t out_proj = 0;

    std::uint64_t total() const noexcept { return q_proj + kv_proj + scores + mix + out_proj; }
};

/// One self-attention layer over `batch` sequences of length `seq`.
AttentionFlops attention_flops(std::uint64_t batch, std::uint64_t seq, std::uint64_t d, std::uint64_t heads,
                               std::uint64_t d_head, AttentionMode mode);

/// Gate and dispatch cost of the configured mixture for one batch. For the
/// dense baseline every task gate runs once per sentence and nothing is
/// dispatched.
FlopsReport count_routing_flops(const GrecConfig& config, const BatchStats& stats, const CostModel& cost = {});

/// Whole forward pass. Expert compute counts only dispatched (token, expert)
/// pairs for the sparse layer and every pair for the dense baseline.
FlopsReport count_model_flops(const GrecConfig& config, const BatchStats& stats, const CostModel& cost = {});

} // namespace grec
