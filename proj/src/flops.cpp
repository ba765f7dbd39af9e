// Copyright (c) 2026, The grec Authors
// SPDX-License-Identifier: Apache-2.0

#include "grec/flops.hpp"

#include "grec/errors.hpp"

#include <charconv>
#include <map>
#include <set>
#include <sstream>

namespace grec {

void CostModel::validate() const
{
    if (c_tok == 0 || c_grp == 0)
        throw ContractError("cost model: dispatch overheads must be positive");
}

BatchStats batch_stats(const FeatureBatch& batch)
{
    BatchStats s;
    s.tokens = batch.size;
    s.sentences = batch.size;
    std::set<std::size_t> use_cases;
    std::set<std::vector<TaskToken>> sentences;
    std::uint64_t longest = 0;
    for (const auto& t : batch.tasks) {
        if (auto u = t.use_case())
            use_cases.insert(*u);
        sentences.insert(t.canonical());
        longest = std::max<std::uint64_t>(longest, t.tokens.size());
    }
    s.tasks = use_cases.size();
    s.task_sentences = sentences.size();
    s.sentence_tokens = longest;
    for (const auto& seq : batch.sequences)
        s.sequence_lengths.push_back(seq.length);
    return s;
}

BatchStats calibration_profile(const TaskVocabulary& tasks, std::uint64_t per_sentence)
{
    BatchStats s;
    s.task_sentences = tasks.flows().size() * tasks.use_cases().size();
    s.tokens = per_sentence * s.task_sentences;
    s.sentences = s.tokens;
    s.tasks = tasks.use_cases().size();
    s.sentence_tokens = 2;
    return s;
}

std::string FlopsReport::to_line() const
{
    std::ostringstream os;
    os << "attention=" << attention << " mlp=" << mlp << " gate=" << gate << " dispatch=" << dispatch
       << " experts=" << experts << " routing_total=" << routing_total() << " model_total=" << model_total();
    return os.str();
}

FlopsReport FlopsReport::parse_line(std::string_view line)
{
    std::map<std::string, std::uint64_t, std::less<>> kv;
    std::size_t pos = 0;
    while (pos < line.size()) {
        while (pos < line.size() && line[pos] == ' ')
            ++pos;
        if (pos >= line.size())
            break;
        std::size_t end = line.find(' ', pos);
        if (end == std::string_view::npos)
            end = line.size();
        const std::string_view pair = line.substr(pos, end - pos);
        const std::size_t eq = pair.find('=');
        if (eq == std::string_view::npos)
            throw ContractError("flops line: malformed pair '" + std::string(pair) + "'");
        std::uint64_t v = 0;
        const std::string_view num = pair.substr(eq + 1);
        auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), v);
        if (ec != std::errc() || ptr != num.data() + num.size())
            throw ContractError("flops line: bad count in '" + std::string(pair) + "'");
        if (!kv.emplace(std::string(pair.substr(0, eq)), v).second)
            throw ContractError("flops line: repeated key in '" + std::string(pair) + "'");
        pos = end;
    }
    auto take = [&](const char* key) {
        auto it = kv.find(key);
        if (it == kv.end())
            throw ContractError(std::string("flops line: missing ") + key);
        const auto v = it->second;
        kv.erase(it);
        return v;
    };
    FlopsReport r;
    r.attention = take("attention");
    r.mlp = take("mlp");
    r.gate = take("gate");
    r.dispatch = take("dispatch");
    r.experts = take("experts");
    if (take("routing_total") != r.routing_total() || take("model_total") != r.model_total())
        throw ContractError("flops line: totals do not match their parts");
    if (!kv.empty())
        throw ContractError("flops line: unknown key '" + kv.begin()->first + "'");
    return r;
}

AttentionFlops attention_flops(std::uint64_t batch, std::uint64_t seq, std::uint64_t d, std::uint64_t heads,
                               std::uint64_t d_head, AttentionMode mode)
{
    const std::uint64_t rows = batch * seq;
    const std::uint64_t kv_width = mode == AttentionMode::MultiHead ? heads * d_head : d_head;
    AttentionFlops f;
    f.q_proj = 2 * rows * d * heads * d_head;
    f.kv_proj = 2 * 2 * rows * d * kv_width;
    f.scores = 2 * batch * heads * seq * seq * d_head;
    f.mix = 2 * batch * heads * seq * seq * d_head;
    f.out_proj = 2 * rows * heads * d_head * d;
    return f;
}

namespace {

std::uint64_t linear_flops(std::uint64_t rows, std::uint64_t in, std::uint64_t out) { return 2 * rows * in * out; }

std::uint64_t expert_hidden(const GrecConfig& c) { return c.moe.hidden == 0 ? 2 * c.d : c.moe.hidden; }

} // namespace

FlopsReport count_routing_flops(const GrecConfig& config, const BatchStats& s, const CostModel& cost)
{
    cost.validate();
    if (s.tokens == 0)
        throw ContractError("count_routing_flops: batch has no tokens");
    const std::uint64_t d = config.d, E = config.moe.experts, k = config.moe.k;
    const std::uint64_t gate = 2 * d * E;
    FlopsReport r;
    if (config.moe.kind == MixtureKind::Mmoe) {
        r.gate = s.sentences * config.tasks.use_cases().size() * gate + s.tokens * d;
        return r;
    }
    switch (config.moe.granularity) {
    case Granularity::Token:
        r.gate = s.tokens * gate;
        r.dispatch = s.tokens * k * cost.c_tok * d;
        break;
    case Granularity::Sentence:
        r.gate = s.sentences * gate + s.tokens * d;
        r.dispatch = s.tokens * k * cost.c_tok * d;
        break;
    case Granularity::Task:
        r.gate = s.tasks * gate;
        r.dispatch = s.tasks * k * cost.c_grp * d;
        break;
    case Granularity::TaskSentence:
        r.gate = s.task_sentences * gate + s.task_sentences * s.sentence_tokens * d;
        r.dispatch = s.task_sentences * k * cost.c_grp * d;
        break;
    }
    return r;
}

FlopsReport count_model_flops(const GrecConfig& config, const BatchStats& s, const CostModel& cost)
{
    FlopsReport r = count_routing_flops(config, s, cost);
    const FeatureSchema& schema = config.schema;
    const EncoderConfig& enc = config.encoder;
    const std::uint64_t B = s.sentences, d = config.d;

    std::uint64_t mlp = 0;
    if (!schema.user_categorical.empty()) {
        std::uint64_t in = 0;
        for (const auto& c : schema.user_categorical)
            in += c.dim;
        mlp += linear_flops(B, in, enc.deep_width) + linear_flops(B, enc.deep_width, enc.deep_width);
    }
    if (!schema.user_numerical.empty()) {
        std::uint64_t in = 0;
        for (const auto& f : schema.user_numerical)
            in += f.width;
        mlp += linear_flops(B, in, enc.wide_width);
    }
    for (const auto& f : schema.user_pretrained)
        mlp += linear_flops(B, f.width, enc.adapter_width);
    if (schema.has_item()) {
        if (!schema.item_numerical.empty()) {
            std::uint64_t in = 0;
            for (const auto& f : schema.item_numerical)
                in += f.width;
            mlp += linear_flops(B, in, enc.item_wide_width);
        }
        for (const auto& f : schema.item_pretrained)
            mlp += linear_flops(B, f.width, enc.adapter_width);
    }

    const auto& t = enc.transformer;
    const std::uint64_t w = enc.sequence_width;
    const std::uint64_t dh = t.d_head == 0 ? w / t.heads : t.d_head;
    const std::uint64_t hid = t.mlp_hidden == 0 ? 2 * w : t.mlp_hidden;
    for (std::size_t f = 0; f < schema.sequences.size(); ++f) {
        const std::uint64_t len =
            f < s.sequence_lengths.size() ? s.sequence_lengths[f] : schema.sequences[f].max_len;
        r.attention += t.blocks * attention_flops(B, len, w, t.heads, dh, t.mode).total();
        mlp += t.blocks * (linear_flops(B * len, w, hid) + linear_flops(B * len, hid, w));
    }

    const Encoder encoder(config.schema, config.encoder);
    mlp += linear_flops(B, encoder.fused_width(), d);
    mlp += linear_flops(B, d, 1) * config.tasks.use_cases().size();
    r.mlp = mlp;

    const std::uint64_t hidden = expert_hidden(config);
    const std::uint64_t per_expert = linear_flops(1, d, hidden) + linear_flops(1, hidden, d);
    const std::uint64_t pairs =
        config.moe.kind == MixtureKind::Mmoe ? s.tokens * config.moe.experts : s.tokens * config.moe.k;
    r.experts = pairs * per_expert;
    return r;
}

} // namespace grec
