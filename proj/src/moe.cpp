// Copyright (c) 2026, The grec Authors
// SPDX-License-Identifier: Apache-2.0

#include "grec/moe.hpp"

#include "grec/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

namespace grec {

TaskVocabulary::TaskVocabulary(std::vector<std::string> flows, std::vector<std::string> use_cases)
    : flows_(std::move(flows)), use_cases_(std::move(use_cases))
{
    std::vector<std::string> all = flows_;
    all.insert(all.end(), use_cases_.begin(), use_cases_.end());
    std::sort(all.begin(), all.end());
    if (std::adjacent_find(all.begin(), all.end()) != all.end())
        throw ConfigError("task vocabulary: token names must be unique");
}

TaskVocabulary TaskVocabulary::standard()
{
    return TaskVocabulary({"EUP", "AAL", "NSE"}, {"CTR", "CTCVR", "ATC", "CVR"});
}

std::size_t TaskVocabulary::index(TaskToken token) const
{
    if (token.kind == TaskKind::Flow) {
        if (token.id >= flows_.size())
            throw IndexError("flow id " + std::to_string(token.id) + " >= " + std::to_string(flows_.size()));
        return token.id;
    }
    if (token.id >= use_cases_.size())
        throw IndexError("use-case id " + std::to_string(token.id) + " >= " + std::to_string(use_cases_.size()));
    return flows_.size() + token.id;
}

const std::string& TaskVocabulary::name(TaskToken token) const
{
    const std::size_t i = index(token);
    return i < flows_.size() ? flows_[i] : use_cases_[i - flows_.size()];
}

std::optional<TaskToken> TaskVocabulary::find(std::string_view name) const
{
    for (std::size_t i = 0; i < flows_.size(); ++i)
        if (flows_[i] == name)
            return TaskToken{TaskKind::Flow, i};
    for (std::size_t i = 0; i < use_cases_.size(); ++i)
        if (use_cases_[i] == name)
            return TaskToken{TaskKind::UseCase, i};
    return std::nullopt;
}

TaskToken TaskVocabulary::flow(std::string_view name) const
{
    auto t = find(name);
    if (!t || t->kind != TaskKind::Flow)
        throw IndexError("unknown flow '" + std::string(name) + "'");
    return *t;
}

TaskToken TaskVocabulary::use_case(std::string_view name) const
{
    auto t = find(name);
    if (!t || t->kind != TaskKind::UseCase)
        throw IndexError("unknown use case '" + std::string(name) + "'");
    return *t;
}

std::optional<std::size_t> TaskSentence::flow() const
{
    for (const auto& t : tokens)
        if (t.kind == TaskKind::Flow)
            return t.id;
    return std::nullopt;
}

std::optional<std::size_t> TaskSentence::use_case() const
{
    for (const auto& t : tokens)
        if (t.kind == TaskKind::UseCase)
            return t.id;
    return std::nullopt;
}

std::vector<TaskToken> TaskSentence::canonical() const
{
    auto c = tokens;
    std::sort(c.begin(), c.end());
    return c;
}

std::string TaskSentence::label(const TaskVocabulary& vocab) const
{
    std::string out;
    for (const auto& t : canonical()) {
        if (!out.empty())
            out += '+';
        out += vocab.name(t);
    }
    return out;
}

std::string to_string(Granularity g)
{
    switch (g) {
    case Granularity::Token:
        return "token";
    case Granularity::Sentence:
        return "sentence";
    case Granularity::Task:
        return "task";
    case Granularity::TaskSentence:
        return "task_sentence";
    }
    return "?";
}

Granularity parse_granularity(std::string_view text)
{
    for (auto g : {Granularity::Token, Granularity::Sentence, Granularity::Task, Granularity::TaskSentence})
        if (to_string(g) == text)
            return g;
    throw ConfigError("unknown routing granularity '" + std::string(text) +
                      "' (expected token, sentence, task or task_sentence)");
}

std::size_t CapacityPolicy::resolve(std::size_t units, std::size_t k, std::size_t experts) const
{
    if (limit)
        return *limit;
    if (factor) {
        const double c = std::ceil(*factor * static_cast<double>(units * k) / static_cast<double>(experts));
        return std::max<std::size_t>(1, static_cast<std::size_t>(c));
    }
    return kUnlimitedCapacity;
}

void CapacityPolicy::validate() const
{
    if (limit && factor)
        throw ConfigError("capacity: set either an absolute limit or a factor, not both");
    if (limit && *limit < 1)
        throw ConfigError("capacity: limit must be >= 1");
    if (factor && !(*factor > 0.0))
        throw ConfigError("capacity: factor must be > 0");
}

bool RoutingDecision::is_overflowed(std::size_t unit, std::size_t expert) const
{
    return std::find(overflowed.begin(), overflowed.end(), std::make_pair(unit, expert)) != overflowed.end();
}

std::vector<std::size_t> RoutingDecision::expert_load(std::size_t experts_total) const
{
    std::vector<std::size_t> load(experts_total, 0);
    for (std::size_t u = 0; u < experts.size(); ++u)
        for (auto e : experts[u])
            if (!is_overflowed(u, e))
                ++load[e];
    return load;
}

std::string RoutingDecision::dump() const
{
    std::ostringstream os;
    os << "# unit_id experts weights overflow\n";
    char buf[64];
    for (std::size_t u = 0; u < unit_ids.size(); ++u) {
        os << unit_ids[u] << ' ';
        for (std::size_t j = 0; j < experts[u].size(); ++j)
            os << (j ? "," : "") << experts[u][j];
        os << ' ';
        for (std::size_t j = 0; j < weights[u].size(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", weights[u][j]);
            os << (j ? "," : "") << buf;
        }
        os << ' ';
        for (std::size_t j = 0; j < experts[u].size(); ++j)
            os << (j ? "," : "") << (is_overflowed(u, experts[u][j]) ? 1 : 0);
        os << '\n';
    }
    return os.str();
}

TopK top_k_select(std::span<const double> logits, std::size_t k)
{
    const std::size_t E = logits.size();
    if (k < 1 || k > E)
        throw ContractError("top_k_select: k=" + std::to_string(k) + " outside [1, " + std::to_string(E) + "]");
    std::vector<std::size_t> order(E);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
    TopK out;
    out.indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(out.indices.begin(), out.indices.end());
    double mx = -std::numeric_limits<double>::infinity();
    for (auto i : out.indices)
        mx = std::max(mx, logits[i]);
    double s = 0.0;
    for (auto i : out.indices) {
        out.weights.push_back(std::exp(logits[i] - mx));
        s += out.weights.back();
    }
    for (auto& w : out.weights)
        w /= s;
    return out;
}

void GateNetwork::init(ParamStore& store, Rng& rng) const
{
    task_embedding().init(store, rng);
    proj().init(store, rng);
}

Var GateNetwork::logits(Tape& tape, ParamStore& store, Var repr) const
{
    return proj()(tape, store, repr);
}

void MoeLayer::validate() const
{
    if (experts < 1)
        throw ConfigError(name + ": experts must be >= 1");
    if (k < 1 || k > experts)
        throw ConfigError(name + ": top_k must lie in [1, experts], got k=" + std::to_string(k) +
                          " with experts=" + std::to_string(experts));
    if (width == 0 || hidden == 0)
        throw ConfigError(name + ": width and hidden must be positive");
    capacity.validate();
}

void MoeLayer::init(ParamStore& store, Rng& rng) const
{
    validate();
    gate().init(store, rng);
    for (std::size_t e = 0; e < experts; ++e)
        expert(e).init(store, rng);
}

RoutingUnits MoeLayer::routing_units(Tape& tape, ParamStore& store, const MoeInput& input) const
{
    const std::size_t N = input.tokens.dim(0);
    const std::size_t M = input.sentences.size();
    if (input.sentence_of_token.size() != N)
        throw DimensionError(name + ": sentence_of_token has " + std::to_string(input.sentence_of_token.size()) +
                             " entries for " + std::to_string(N) + " tokens");
    std::vector<std::size_t> tokens_in_sentence(M, 0);
    for (auto s : input.sentence_of_token) {
        if (s >= M)
            throw IndexError(name + ": token references sentence " + std::to_string(s) + " of " + std::to_string(M));
        ++tokens_in_sentence[s];
    }

    RoutingUnits units;
    switch (granularity) {
    case Granularity::Token: {
        units.repr = input.tokens;
        units.unit_of_token.resize(N);
        std::iota(units.unit_of_token.begin(), units.unit_of_token.end(), 0);
        units.tokens_per_unit.assign(N, 1);
        for (std::size_t t = 0; t < N; ++t)
            units.ids.push_back("t" + std::to_string(t));
        return units;
    }
    case Granularity::Sentence: {
        for (std::size_t s = 0; s < M; ++s) {
            if (tokens_in_sentence[s] == 0)
                throw ContractError(name + ": sentence " + std::to_string(s) + " has no content tokens");
            units.ids.push_back("s" + std::to_string(s));
        }
        units.repr = segment_mean(input.tokens, input.sentence_of_token, M);
        units.unit_of_token = input.sentence_of_token;
        units.tokens_per_unit = tokens_in_sentence;
        return units;
    }
    case Granularity::Task:
    case Granularity::TaskSentence:
        break;
    }

    // Group sentences by task key in first-appearance order.
    const GateNetwork g = gate();
    std::map<std::vector<TaskToken>, std::size_t> unit_of_key;
    std::vector<std::size_t> unit_of_sentence(M);
    std::vector<std::vector<TaskToken>> unit_tokens;
    for (std::size_t s = 0; s < M; ++s) {
        const auto& sentence = input.sentences[s];
        if (sentence.tokens.empty())
            throw ContractError(name + ": sentence " + std::to_string(s) + " has an empty task sentence");
        std::vector<TaskToken> key;
        if (granularity == Granularity::Task) {
            auto uc = sentence.use_case();
            if (!uc)
                throw ContractError(name + ": sentence " + std::to_string(s) + " has no use-case token");
            key = {TaskToken{TaskKind::UseCase, *uc}};
        } else {
            key = sentence.canonical();
        }
        auto [it, inserted] = unit_of_key.emplace(key, unit_tokens.size());
        if (inserted) {
            unit_tokens.push_back(key);
            units.ids.push_back(TaskSentence{key}.label(tasks));
        }
        unit_of_sentence[s] = it->second;
    }
    const std::size_t U = unit_tokens.size();
    std::vector<std::size_t> flat_ids, flat_unit;
    for (std::size_t u = 0; u < U; ++u)
        for (const auto& t : unit_tokens[u]) {
            flat_ids.push_back(tasks.index(t));
            flat_unit.push_back(u);
        }
    Var emb = embedding_lookup(tape, store, g.task_embedding(), flat_ids, "task_token");
    units.repr = granularity == Granularity::Task ? emb : segment_mean(emb, flat_unit, U);
    units.unit_of_token.resize(N);
    units.tokens_per_unit.assign(U, 0);
    for (std::size_t t = 0; t < N; ++t) {
        units.unit_of_token[t] = unit_of_sentence[input.sentence_of_token[t]];
        ++units.tokens_per_unit[units.unit_of_token[t]];
    }
    return units;
}

RoutingDecision MoeLayer::route(const Tensor& logits, const RoutingUnits& units) const
{
    const std::size_t U = units.ids.size();
    if (logits.rank() != 2 || logits.dim(0) != U || logits.dim(1) != experts)
        throw DimensionError(name + ": logits " + to_string(logits.shape()) + " for " + std::to_string(U) + " units");
    RoutingDecision d;
    d.unit_ids = units.ids;
    d.unit_of_token = units.unit_of_token;
    d.tokens_per_unit = units.tokens_per_unit;
    d.capacity = capacity.resolve(U, k, experts);
    std::vector<std::size_t> load(experts, 0);
    for (std::size_t u = 0; u < U; ++u) {
        auto top = top_k_select(logits.values().subspan(u * experts, experts), k);
        for (auto e : top.indices) {
            if (load[e] < d.capacity)
                ++load[e];
            else
                d.overflowed.emplace_back(u, e);
        }
        d.experts.push_back(std::move(top.indices));
        d.weights.push_back(std::move(top.weights));
    }
    return d;
}

Var MoeLayer::gate_weights(Var logits, const RoutingDecision& decision) const
{
    const std::size_t U = decision.units();
    std::vector<std::size_t> cols;
    cols.reserve(U * k);
    for (const auto& ex : decision.experts) {
        if (ex.size() != k)
            throw ContractError(name + ": decision selects " + std::to_string(ex.size()) + " experts, layer k=" +
                                std::to_string(k));
        cols.insert(cols.end(), ex.begin(), ex.end());
    }
    if (normalization == GateNormalization::TruncateRenormalize)
        return normalize_rows(gather_columns(softmax(logits, -1), cols, k));
    return softmax(gather_columns(logits, cols, k), -1);
}

MoeOutput MoeLayer::forward(Tape& tape, ParamStore& store, const MoeInput& input, const RoutingDecision* frozen) const
{
    if (input.tokens.value().rank() != 2 || input.tokens.dim(1) != width)
        throw DimensionError(name + ": tokens " + to_string(input.tokens.shape()) + " do not have width " +
                             std::to_string(width));
    RoutingUnits units = routing_units(tape, store, input);
    MoeOutput out;
    out.logits = gate().logits(tape, store, units.repr);
    if (frozen) {
        if (frozen->units() != units.ids.size() || frozen->unit_of_token != units.unit_of_token)
            throw ContractError(name + ": frozen routing decision does not match this batch");
        out.decision = *frozen;
    } else {
        out.decision = route(out.logits.value(), units);
    }
    Var weights = gate_weights(out.logits, out.decision);
    for (std::size_t u = 0; u < out.decision.units(); ++u)
        for (std::size_t j = 0; j < k; ++j)
            out.decision.weights[u][j] = weights.value()[u * k + j];
    out.output = dispatch(tape, store, *this, out.decision, weights, input.tokens);

    if (balance_coef > 0.0) {
        // k-agnostic importance balancing: squared coefficient of variation of
        // the per-expert sum of full softmax gate probabilities.
        Var importance = sum_rows(softmax(out.logits, -1));
        Var total = sum(importance);
        Var cv2 = div(sum(mul(importance, importance)), mul(total, total));
        out.aux_loss = scale(sub(scale(cv2, static_cast<double>(experts)), tape.constant(Tensor::scalar(1.0))),
                             balance_coef);
    }
    return out;
}

Tensor gate_logits(const MoeLayer& layer, ParamStore& store, const Tensor& unit_repr)
{
    if (unit_repr.size() != layer.width)
        throw DimensionError(layer.name + ": unit representation of width " + std::to_string(unit_repr.size()) +
                             ", expected " + std::to_string(layer.width));
    Tape tape;
    Var logits = layer.gate().logits(tape, store, tape.constant(unit_repr.reshaped({1, layer.width})));
    return logits.value().reshaped({layer.experts});
}

Var dispatch(Tape& tape, ParamStore& store, const MoeLayer& layer, const RoutingDecision& decision, Var weights,
             Var tokens)
{
    const std::size_t N = tokens.dim(0), d = tokens.dim(1), k = layer.k;
    if (decision.unit_of_token.size() != N)
        throw ContractError(layer.name + ": decision covers " + std::to_string(decision.unit_of_token.size()) +
                            " tokens, batch has " + std::to_string(N));
    Var flat_w = reshape(weights, {decision.units() * k, 1});

    struct Route {
        std::vector<std::size_t> rows, slots;
    };
    std::vector<Route> per_expert(layer.experts);
    Route passthrough;
    std::vector<std::uint8_t> dropped(decision.units() * layer.experts, 0);
    for (const auto& [u, e] : decision.overflowed)
        dropped.at(u * layer.experts + e) = 1;
    for (std::size_t t = 0; t < N; ++t) {
        const std::size_t u = decision.unit_of_token[t];
        for (std::size_t j = 0; j < k; ++j) {
            const std::size_t e = decision.experts[u][j];
            Route& r = dropped[u * layer.experts + e] ? passthrough : per_expert.at(e);
            r.rows.push_back(t);
            r.slots.push_back(u * k + j);
        }
    }

    Var out = tape.constant(Tensor(Shape{N, d}));
    auto accumulate = [&](const Route& r, bool identity, std::size_t e) {
        if (r.rows.empty())
            return;
        Var x = gather_rows(tokens, r.rows);
        Var y = identity ? x : layer.expert(e)(tape, store, x);
        Var w = reshape(gather_rows(flat_w, r.slots), {r.rows.size()});
        out = add(out, scatter_add_rows(scale_rows(y, w), r.rows, N));
    };
    for (std::size_t e = 0; e < layer.experts; ++e)
        accumulate(per_expert[e], false, e);
    accumulate(passthrough, true, 0);
    return out;
}

Var dense_mixture(Tape& tape, ParamStore& store, std::span<const MlpBlock> experts, const Linear& gate,
                  Var gate_input, Var x)
{
    if (experts.size() != gate.out_features)
        throw DimensionError("dense_mixture: gate emits " + std::to_string(gate.out_features) + " logits for " +
                             std::to_string(experts.size()) + " experts");
    const std::size_t N = x.dim(0);
    Var probs = softmax(gate(tape, store, gate_input), -1);
    Var out;
    for (std::size_t e = 0; e < experts.size(); ++e) {
        Var w = reshape(slice_last(probs, e, e + 1), {N});
        Var term = scale_rows(experts[e](tape, store, x), w);
        out = out.valid() ? add(out, term) : term;
    }
    return out;
}

std::vector<Var> mmoe_forward(Tape& tape, ParamStore& store, std::span<const MlpBlock> experts,
                              std::span<const Linear> gates, Var gate_input, Var x)
{
    // Expert outputs are shared by every task gate.
    const std::size_t N = x.dim(0);
    std::vector<Var> expert_out;
    for (const auto& e : experts)
        expert_out.push_back(e(tape, store, x));
    std::vector<Var> outputs;
    for (const auto& gate : gates) {
        if (gate.out_features != experts.size())
            throw DimensionError(gate.name + ": gate width does not match expert count");
        Var probs = softmax(gate(tape, store, gate_input), -1);
        Var out;
        for (std::size_t e = 0; e < experts.size(); ++e) {
            Var term = scale_rows(expert_out[e], reshape(slice_last(probs, e, e + 1), {N}));
            out = out.valid() ? add(out, term) : term;
        }
        outputs.push_back(out);
    }
    return outputs;
}

void MmoeLayer::init(ParamStore& store, Rng& rng) const
{
    if (experts < 1 || tasks < 1)
        throw ConfigError(name + ": experts and tasks must be >= 1");
    for (std::size_t e = 0; e < experts; ++e)
        expert(e).init(store, rng);
    for (std::size_t t = 0; t < tasks; ++t)
        gate(t).init(store, rng);
}

std::vector<Var> MmoeLayer::forward(Tape& tape, ParamStore& store, const MoeInput& input) const
{
    const std::size_t M = input.sentences.size();
    Var sentence_mean = segment_mean(input.tokens, input.sentence_of_token, M);
    Var gate_input = gather_rows(sentence_mean, input.sentence_of_token);
    std::vector<MlpBlock> ex;
    std::vector<Linear> gates;
    for (std::size_t e = 0; e < experts; ++e)
        ex.push_back(expert(e));
    for (std::size_t t = 0; t < tasks; ++t)
        gates.push_back(gate(t));
    return mmoe_forward(tape, store, ex, gates, gate_input, input.tokens);
}

} // namespace grec
