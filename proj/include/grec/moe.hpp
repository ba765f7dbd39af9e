// Copyright (c) 2026, The grec Authors
// SPDX-License-Identifier: Apache-2.0
//
// Sparse mixture-of-experts with top-k gating and expert capacity, routed at
// token, sentence, task or task-sentence granularity, plus the dense
// multi-gate mixture (MMoE) baseline.
//
// Routing units:
//   Token         one unit per content token, gate input = the token
//   Sentence      one unit per example, gate input = mean of its tokens
//   Task          one unit per distinct use-case token, gate input = its embedding
//   TaskSentence  one unit per distinct task sentence, gate input = mean of the
//                 task-token embeddings (so it depends on the token multiset)

#pragma once

#include "grec/autodiff.hpp"
#include "grec/nn.hpp"

#include <compare>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace grec {

enum class TaskKind { Flow, UseCase };

struct TaskToken {
    TaskKind kind = TaskKind::Flow;
    std::size_t id = 0;

    friend auto operator<=>(const TaskToken&, const TaskToken&) = default;
};

/// Flow tokens followed by use-case tokens in one index space.
class TaskVocabulary {
public:
    TaskVocabulary() = default;
    TaskVocabulary(std::vector<std::string> flows, std::vector<std::string> use_cases);

    /// Flows EUP, AAL, NSE and use cases CTR, CTCVR, ATC, CVR.
    static TaskVocabulary standard();

    const std::vector<std::string>& flows() const noexcept { return flows_; }
    const std::vector<std::string>& use_cases() const noexcept { return use_cases_; }
    std::size_t size() const noexcept { return flows_.size() + use_cases_.size(); }

    /// Position of the token in the joint embedding table.
    std::size_t index(TaskToken token) const;
    const std::string& name(TaskToken token) const;
    TaskToken flow(std::string_view name) const;
    TaskToken use_case(std::string_view name) const;
    std::optional<TaskToken> find(std::string_view name) const;

    friend bool operator==(const TaskVocabulary&, const TaskVocabulary&) = default;

private:
    std::vector<std::string> flows_;
    std::vector<std::string> use_cases_;
};

struct TaskSentence {
    std::vector<TaskToken> tokens;

    static TaskSentence of(std::size_t flow, std::size_t use_case)
    {
        return {{TaskToken{TaskKind::Flow, flow}, TaskToken{TaskKind::UseCase, use_case}}};
    }

    std::optional<std::size_t> flow() const;
    std::optional<std::size_t> use_case() const;
    /// Tokens sorted by (kind, id): the multiset identity used for routing.
    std::vector<TaskToken> canonical() const;
    /// e.g. "AAL+CVR"
    std::string label(const TaskVocabulary& vocab) const;

    friend bool operator==(const TaskSentence&, const TaskSentence&) = default;
};

enum class Granularity { Token, Sentence, Task, TaskSentence };

std::string to_string(Granularity g);
Granularity parse_granularity(std::string_view text);

/// How gate weights are formed from the logits of the selected experts.
enum class GateNormalization {
    SoftmaxOverTopK,    ///< softmax over the k selected logits
    TruncateRenormalize ///< softmax over all E logits, keep top k, divide by their sum
};

constexpr std::size_t kUnlimitedCapacity = std::numeric_limits<std::size_t>::max();

/// Per-batch limit on routing units accepted by one expert.
struct CapacityPolicy {
    std::optional<std::size_t> limit;
    std::optional<double> factor; ///< capacity = ceil(factor * units * k / E)

    static CapacityPolicy unlimited() { return {}; }
    static CapacityPolicy absolute(std::size_t n) { return {n, std::nullopt}; }
    static CapacityPolicy scaled(double f) { return {std::nullopt, f}; }

    std::size_t resolve(std::size_t units, std::size_t k, std::size_t experts) const;
    void validate() const;
};

struct RoutingDecision {
    std::vector<std::string> unit_ids;
    /// Per unit, k distinct experts in ascending order.
    std::vector<std::vector<std::size_t>> experts;
    /// Per unit, gate weights aligned with `experts`; they sum to 1.
    std::vector<std::vector<double>> weights;
    /// (unit, expert) assignments rejected because the expert was full.
    std::vector<std::pair<std::size_t, std::size_t>> overflowed;
    std::vector<std::size_t> unit_of_token;
    std::vector<std::size_t> tokens_per_unit;
    std::size_t capacity = kUnlimitedCapacity;

    std::size_t units() const noexcept { return unit_ids.size(); }
    bool is_overflowed(std::size_t unit, std::size_t expert) const;
    /// Units accepted by each expert.
    std::vector<std::size_t> expert_load(std::size_t experts_total) const;

    /// One line per unit: `unit_id experts weights overflow`, where experts and
    /// weights are comma lists and overflow is a comma list of 0/1 flags
    /// aligned with experts. A '#' header line precedes the rows.
    std::string dump() const;

    friend bool operator==(const RoutingDecision&, const RoutingDecision&) = default;
};

struct TopK {
    std::vector<std::size_t> indices; ///< ascending
    std::vector<double> weights;      ///< softmax over the selected logits
};

/// Selects the k largest logits (ties toward the lower index) and renormalizes.
TopK top_k_select(std::span<const double> logits, std::size_t k);

/// Content of one MoE call: N token rows, grouped into M sentences, each
/// sentence carrying its TaskSentence.
struct MoeInput {
    Var tokens; ///< [N x d]
    std::vector<std::size_t> sentence_of_token;
    std::vector<TaskSentence> sentences;
};

struct RoutingUnits {
    std::vector<std::string> ids;
    Var repr; ///< [U x d]
    std::vector<std::size_t> unit_of_token;
    std::vector<std::size_t> tokens_per_unit;
};

/// Task embedding table plus one linear projection to E logits.
struct GateNetwork {
    std::string name;
    std::size_t width = 0;
    std::size_t experts = 0;
    std::size_t task_vocab = 0;

    EmbeddingTable task_embedding() const { return {name + ".task_embedding", task_vocab, width}; }
    Linear proj() const { return {name + ".proj", width, experts, true}; }

    void init(ParamStore& store, Rng& rng) const;
    /// [U x d] -> [U x E]
    Var logits(Tape& tape, ParamStore& store, Var repr) const;
};

struct MoeOutput {
    Var output; ///< [N x d]
    RoutingDecision decision;
    Var logits;   ///< [U x E]
    Var aux_loss; ///< importance-balancing term; unset when its coefficient is 0
};

struct MoeLayer {
    std::string name;
    std::size_t width = 0;
    std::size_t hidden = 0;
    std::size_t experts = 8;
    std::size_t k = 4;
    CapacityPolicy capacity;
    Granularity granularity = Granularity::TaskSentence;
    GateNormalization normalization = GateNormalization::SoftmaxOverTopK;
    double balance_coef = 0.0;
    TaskVocabulary tasks;

    GateNetwork gate() const { return {name + ".gate", width, experts, tasks.size()}; }
    MlpBlock expert(std::size_t e) const { return {name + ".expert" + std::to_string(e), width, hidden}; }

    void validate() const;
    void init(ParamStore& store, Rng& rng) const;

    RoutingUnits routing_units(Tape& tape, ParamStore& store, const MoeInput& input) const;
    /// Top-k per unit, then capacity first-come in unit order.
    RoutingDecision route(const Tensor& logits, const RoutingUnits& units) const;
    /// Differentiable gate weights [U x k] for the experts chosen in `decision`.
    Var gate_weights(Var logits, const RoutingDecision& decision) const;

    /// Routes and dispatches. With `frozen`, the expert choice and overflow of
    /// that decision are reused and only the weights are recomputed.
    MoeOutput forward(Tape& tape, ParamStore& store, const MoeInput& input,
                      const RoutingDecision* frozen = nullptr) const;
};

/// Logits for a single routing-unit representation.
Tensor gate_logits(const MoeLayer& layer, ParamStore& store, const Tensor& unit_repr);

/// Token output = sum over surviving experts of weight * expert(token), plus
/// weight * token for every overflowed assignment.
Var dispatch(Tape& tape, ParamStore& store, const MoeLayer& layer, const RoutingDecision& decision, Var weights,
             Var tokens);

/// sum_e softmax(gate(gate_input))_e * expert_e(x), every expert evaluated.
Var dense_mixture(Tape& tape, ParamStore& store, std::span<const MlpBlock> experts, const Linear& gate,
                  Var gate_input, Var x);

/// One dense mixture per task gate, sharing the experts.
std::vector<Var> mmoe_forward(Tape& tape, ParamStore& store, std::span<const MlpBlock> experts,
                              std::span<const Linear> gates, Var gate_input, Var x);

/// Multi-gate mixture baseline; gates read the sentence-mean representation.
struct MmoeLayer {
    std::string name;
    std::size_t width = 0;
    std::size_t hidden = 0;
    std::size_t experts = 4;
    std::size_t tasks = 1;

    MlpBlock expert(std::size_t e) const { return {name + ".expert" + std::to_string(e), width, hidden}; }
    Linear gate(std::size_t t) const { return {name + ".gate" + std::to_string(t), width, experts, true}; }

    void init(ParamStore& store, Rng& rng) const;
    std::vector<Var> forward(Tape& tape, ParamStore& store, const MoeInput& input) const;
};

} // namespace grec
