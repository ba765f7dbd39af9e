// Copyright (c) 2026, The grec Authors
// SPDX-License-Identifier: Apache-2.0

#include "grec/encoder.hpp"

#include "grec/errors.hpp"

#include <algorithm>
#include <numeric>
#include <set>

namespace grec {

void FeatureSchema::validate() const
{
    std::set<std::string> seen;
    auto claim = [&](const std::string& name) {
        if (name.empty())
            throw ConfigError("feature with an empty name");
        if (!seen.insert(name).second)
            throw ConfigError("duplicate feature name '" + name + "'");
    };
    for (const auto& f : user_categorical) {
        claim(f.name);
        if (f.vocab == 0 || f.dim == 0)
            throw ConfigError("categorical feature '" + f.name + "' needs positive vocab and dim");
    }
    for (const auto& f : user_numerical) {
        claim(f.name);
        if (f.width == 0)
            throw ConfigError("numerical feature '" + f.name + "' needs a positive width");
    }
    for (const auto& f : user_pretrained) {
        claim(f.name);
        if (f.width == 0)
            throw ConfigError("precomputed feature '" + f.name + "' needs a positive width");
    }
    for (const auto& f : sequences) {
        claim(f.name);
        if (f.max_len == 0 || f.vocab == 0)
            throw ConfigError("sequence feature '" + f.name + "' needs positive max_len and vocab");
    }
    if (!has_item()) {
        if (!item_categorical.empty() || !item_numerical.empty() || !item_pretrained.empty())
            throw ConfigError("item features given without an item vocabulary");
        return;
    }
    if (item_id_dim == 0)
        throw ConfigError("item_id_dim must be positive");
    for (const auto& f : item_categorical) {
        claim(f.name);
        if (f.vocab == 0 || f.dim == 0)
            throw ConfigError("categorical feature '" + f.name + "' needs positive vocab and dim");
    }
    for (const auto& f : item_numerical) {
        claim(f.name);
        if (f.width == 0)
            throw ConfigError("numerical feature '" + f.name + "' needs a positive width");
    }
    for (const auto& f : item_pretrained) {
        claim(f.name);
        if (f.width == 0)
            throw ConfigError("precomputed feature '" + f.name + "' needs a positive width");
    }
}

namespace {

template <class Field>
Tensor stack_vectors(const Field& field, std::span<const Example> examples, std::span<const std::size_t> indices,
                     const std::vector<std::vector<double>>& (*pick)(const Example&), std::size_t slot)
{
    Tensor out(Shape{indices.size(), field.width});
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const auto& all = pick(examples[indices[r]]);
        if (slot >= all.size())
            throw DimensionError("example is missing feature '" + field.name + "'");
        const auto& v = all[slot];
        if (v.size() != field.width)
            throw DimensionError("feature '" + field.name + "': expected width " + std::to_string(field.width) +
                                 ", got " + std::to_string(v.size()));
        std::copy(v.begin(), v.end(), out.values().begin() + static_cast<std::ptrdiff_t>(r * field.width));
    }
    return out;
}

const std::vector<std::vector<double>>& user_numerical_of(const Example& e) { return e.numerical; }
const std::vector<std::vector<double>>& user_pretrained_of(const Example& e) { return e.pretrained; }
const std::vector<std::vector<double>>& item_numerical_of(const Example& e) { return e.item.numerical; }
const std::vector<std::vector<double>>& item_pretrained_of(const Example& e) { return e.item.pretrained; }

} // namespace

FeatureBatch make_batch(const FeatureSchema& schema, std::span<const Example> examples,
                        std::span<const std::size_t> indices, std::size_t use_cases, std::size_t pad_to)
{
    const std::size_t n = indices.size();
    for (auto i : indices)
        if (i >= examples.size())
            throw IndexError("batch index " + std::to_string(i) + " out of range for " +
                             std::to_string(examples.size()) + " examples");

    FeatureBatch b;
    b.size = n;
    b.use_cases = use_cases;

    b.user_categorical.resize(schema.user_categorical.size());
    for (std::size_t f = 0; f < schema.user_categorical.size(); ++f) {
        auto& col = b.user_categorical[f];
        col.reserve(n);
        for (auto i : indices) {
            if (f >= examples[i].categorical.size())
                throw DimensionError("example is missing feature '" + schema.user_categorical[f].name + "'");
            col.push_back(examples[i].categorical[f]);
        }
    }
    for (std::size_t f = 0; f < schema.user_numerical.size(); ++f)
        b.user_numerical.push_back(stack_vectors(schema.user_numerical[f], examples, indices, user_numerical_of, f));
    for (std::size_t f = 0; f < schema.user_pretrained.size(); ++f)
        b.user_pretrained.push_back(
            stack_vectors(schema.user_pretrained[f], examples, indices, user_pretrained_of, f));

    for (std::size_t f = 0; f < schema.sequences.size(); ++f) {
        const auto& field = schema.sequences[f];
        std::size_t longest = 0;
        for (auto i : indices) {
            if (f >= examples[i].sequences.size())
                throw DimensionError("example is missing sequence '" + field.name + "'");
            longest = std::max(longest, std::min(examples[i].sequences[f].size(), field.max_len));
        }
        const std::size_t len = pad_to == 0 ? field.max_len : pad_to;
        if (len < longest || len > field.max_len)
            throw ContractError("sequence '" + field.name + "': pad length " + std::to_string(len) +
                                " outside [" + std::to_string(longest) + ", " + std::to_string(field.max_len) + "]");
        SequenceBatch s;
        s.length = len;
        s.ids.assign(n * len, 0);
        s.mask.assign(n * len, 0);
        for (std::size_t r = 0; r < n; ++r) {
            const auto& seq = examples[indices[r]].sequences[f];
            std::size_t start = 0;
            if (seq.size() > field.max_len) {
                start = seq.size() - field.max_len;
                ++b.truncated;
            }
            for (std::size_t t = start; t < seq.size(); ++t) {
                s.ids[r * len + (t - start)] = seq[t];
                s.mask[r * len + (t - start)] = 1;
            }
        }
        b.sequences.push_back(std::move(s));
    }

    if (schema.has_item()) {
        b.item_ids.reserve(n);
        for (auto i : indices)
            b.item_ids.push_back(examples[i].item.id);
        b.item_categorical.resize(schema.item_categorical.size());
        for (std::size_t f = 0; f < schema.item_categorical.size(); ++f)
            for (auto i : indices) {
                if (f >= examples[i].item.categorical.size())
                    throw DimensionError("item is missing feature '" + schema.item_categorical[f].name + "'");
                b.item_categorical[f].push_back(examples[i].item.categorical[f]);
            }
        for (std::size_t f = 0; f < schema.item_numerical.size(); ++f)
            b.item_numerical.push_back(
                stack_vectors(schema.item_numerical[f], examples, indices, item_numerical_of, f));
        for (std::size_t f = 0; f < schema.item_pretrained.size(); ++f)
            b.item_pretrained.push_back(
                stack_vectors(schema.item_pretrained[f], examples, indices, item_pretrained_of, f));
    }

    b.labels.assign(n * use_cases, 0.0);
    b.label_mask.assign(n * use_cases, 0);
    b.tasks.reserve(n);
    for (std::size_t r = 0; r < n; ++r) {
        const Example& e = examples[indices[r]];
        b.tasks.push_back(e.task);
        if (e.labels.size() != use_cases || e.label_mask.size() != use_cases)
            throw DimensionError("example carries " + std::to_string(e.labels.size()) + " labels for " +
                                 std::to_string(use_cases) + " use cases");
        std::copy(e.labels.begin(), e.labels.end(), b.labels.begin() + r * use_cases);
        std::copy(e.label_mask.begin(), e.label_mask.end(), b.label_mask.begin() + r * use_cases);
    }
    return b;
}

FeatureBatch make_batch(const FeatureSchema& schema, std::span<const Example> examples, std::size_t use_cases)
{
    std::vector<std::size_t> all(examples.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return make_batch(schema, examples, all, use_cases);
}

// ---- Encoder ----------------------------------------------------------------

Encoder::Encoder(FeatureSchema schema, EncoderConfig config, std::string name)
    : schema_(std::move(schema)), config_(config), name_(std::move(name))
{
    schema_.validate();
    if (config_.deep_width == 0 || config_.wide_width == 0 || config_.adapter_width == 0 ||
        config_.item_wide_width == 0 || config_.sequence_width == 0)
        throw ConfigError("encoder widths must be positive");
    const auto& t = config_.transformer;
    if (t.heads == 0)
        throw ConfigError("transformer heads must be positive");
    if (t.d_head == 0 && config_.sequence_width % t.heads != 0)
        throw ConfigError("sequence width " + std::to_string(config_.sequence_width) + " not divisible by " +
                          std::to_string(t.heads) + " heads");
}

EmbeddingTable Encoder::user_embedding(std::size_t f) const
{
    const auto& c = schema_.user_categorical.at(f);
    return {name_ + ".user." + c.name, c.vocab, c.dim};
}

Linear Encoder::deep_in() const
{
    std::size_t in = 0;
    for (const auto& c : schema_.user_categorical)
        in += c.dim;
    return {name_ + ".user.deep1", in, config_.deep_width, true};
}

Linear Encoder::deep_out() const { return {name_ + ".user.deep2", config_.deep_width, config_.deep_width, true}; }

Linear Encoder::user_wide() const
{
    std::size_t in = 0;
    for (const auto& f : schema_.user_numerical)
        in += f.width;
    return {name_ + ".user.wide", in, config_.wide_width, true};
}

Linear Encoder::user_adapter(std::size_t f) const
{
    const auto& p = schema_.user_pretrained.at(f);
    return {name_ + ".user.adapter." + p.name, p.width, config_.adapter_width, false};
}

EmbeddingTable Encoder::item_id_embedding() const
{
    return {name_ + ".item.id", schema_.item_vocab, schema_.item_id_dim};
}

EmbeddingTable Encoder::item_embedding(std::size_t f) const
{
    const auto& c = schema_.item_categorical.at(f);
    return {name_ + ".item." + c.name, c.vocab, c.dim};
}

Linear Encoder::item_wide() const
{
    std::size_t in = 0;
    for (const auto& f : schema_.item_numerical)
        in += f.width;
    return {name_ + ".item.wide", in, config_.item_wide_width, true};
}

Linear Encoder::item_adapter(std::size_t f) const
{
    const auto& p = schema_.item_pretrained.at(f);
    return {name_ + ".item.adapter." + p.name, p.width, config_.adapter_width, false};
}

EmbeddingTable Encoder::sequence_embedding(std::size_t f) const
{
    const auto& s = schema_.sequences.at(f);
    return {name_ + ".seq." + s.name + ".embedding", s.vocab, config_.sequence_width};
}

EmbeddingTable Encoder::position_embedding(std::size_t f) const
{
    const auto& s = schema_.sequences.at(f);
    return {name_ + ".seq." + s.name + ".position", s.max_len, config_.sequence_width};
}

std::vector<TransformerBlock> Encoder::sequence_blocks(std::size_t f) const
{
    const auto& s = schema_.sequences.at(f);
    const auto& t = config_.transformer;
    const std::size_t w = config_.sequence_width;
    const std::size_t dh = t.d_head == 0 ? w / t.heads : t.d_head;
    const std::size_t hidden = t.mlp_hidden == 0 ? 2 * w : t.mlp_hidden;
    std::vector<TransformerBlock> blocks;
    for (std::size_t i = 0; i < t.blocks; ++i)
        blocks.push_back(TransformerBlock::make(name_ + ".seq." + s.name + ".block" + std::to_string(i), w, t.heads,
                                                dh, hidden, t.mode, t.topology));
    return blocks;
}

void Encoder::init(ParamStore& store, Rng& rng) const
{
    if (!schema_.user_categorical.empty()) {
        for (std::size_t f = 0; f < schema_.user_categorical.size(); ++f)
            user_embedding(f).init(store, rng);
        deep_in().init(store, rng);
        deep_out().init(store, rng);
    }
    if (!schema_.user_numerical.empty())
        user_wide().init(store, rng);
    for (std::size_t f = 0; f < schema_.user_pretrained.size(); ++f)
        user_adapter(f).init(store, rng);
    for (std::size_t f = 0; f < schema_.sequences.size(); ++f) {
        sequence_embedding(f).init(store, rng);
        position_embedding(f).init(store, rng);
        for (const auto& b : sequence_blocks(f))
            b.init(store, rng);
    }
    if (schema_.has_item()) {
        item_id_embedding().init(store, rng);
        for (std::size_t f = 0; f < schema_.item_categorical.size(); ++f)
            item_embedding(f).init(store, rng);
        if (!schema_.item_numerical.empty())
            item_wide().init(store, rng);
        for (std::size_t f = 0; f < schema_.item_pretrained.size(); ++f)
            item_adapter(f).init(store, rng);
    }
}

std::size_t Encoder::user_width() const
{
    return (schema_.user_categorical.empty() ? 0 : config_.deep_width) +
           (schema_.user_numerical.empty() ? 0 : config_.wide_width) +
           schema_.user_pretrained.size() * config_.adapter_width;
}

std::size_t Encoder::item_width() const
{
    if (!schema_.has_item())
        return 0;
    std::size_t w = schema_.item_id_dim;
    for (const auto& c : schema_.item_categorical)
        w += c.dim;
    if (!schema_.item_numerical.empty())
        w += config_.item_wide_width;
    return w + schema_.item_pretrained.size() * config_.adapter_width;
}

std::size_t Encoder::fused_width() const
{
    return user_width() + schema_.sequences.size() * config_.sequence_width + item_width();
}

void Encoder::check_batch(const FeatureBatch& batch) const
{
    if (batch.user_categorical.size() != schema_.user_categorical.size() ||
        batch.user_numerical.size() != schema_.user_numerical.size() ||
        batch.user_pretrained.size() != schema_.user_pretrained.size() ||
        batch.sequences.size() != schema_.sequences.size())
        throw DimensionError("batch does not match the feature schema");
    if (schema_.has_item() && (batch.item_ids.size() != batch.size ||
                               batch.item_categorical.size() != schema_.item_categorical.size() ||
                               batch.item_numerical.size() != schema_.item_numerical.size() ||
                               batch.item_pretrained.size() != schema_.item_pretrained.size()))
        throw DimensionError("batch item features do not match the feature schema");
}

Var Encoder::encode_user(Tape& tape, ParamStore& store, const FeatureBatch& batch) const
{
    check_batch(batch);
    std::vector<Var> parts;
    if (!schema_.user_categorical.empty()) {
        std::vector<Var> emb;
        for (std::size_t f = 0; f < schema_.user_categorical.size(); ++f)
            emb.push_back(embedding_lookup(tape, store, user_embedding(f), batch.user_categorical[f],
                                           schema_.user_categorical[f].name));
        Var h = relu(deep_in()(tape, store, concat_last(emb)));
        parts.push_back(deep_out()(tape, store, h));
    }
    if (!schema_.user_numerical.empty()) {
        std::vector<Var> num;
        for (const auto& t : batch.user_numerical)
            num.push_back(tape.constant(t));
        parts.push_back(user_wide()(tape, store, concat_last(num)));
    }
    for (std::size_t f = 0; f < schema_.user_pretrained.size(); ++f)
        parts.push_back(user_adapter(f)(tape, store, tape.constant(batch.user_pretrained[f])));
    if (parts.empty())
        throw ContractError("schema has no user features");
    return parts.size() == 1 ? parts.front() : concat_last(parts);
}

Var Encoder::encode_items(Tape& tape, ParamStore& store, const FeatureBatch& batch) const
{
    check_batch(batch);
    if (!schema_.has_item())
        throw ContractError("schema has no item side");
    std::vector<Var> parts;
    parts.push_back(embedding_lookup(tape, store, item_id_embedding(), batch.item_ids, "item_id"));
    for (std::size_t f = 0; f < schema_.item_categorical.size(); ++f)
        parts.push_back(embedding_lookup(tape, store, item_embedding(f), batch.item_categorical[f],
                                         schema_.item_categorical[f].name));
    if (!schema_.item_numerical.empty()) {
        std::vector<Var> num;
        for (const auto& t : batch.item_numerical)
            num.push_back(tape.constant(t));
        parts.push_back(item_wide()(tape, store, concat_last(num)));
    }
    for (std::size_t f = 0; f < schema_.item_pretrained.size(); ++f)
        parts.push_back(item_adapter(f)(tape, store, tape.constant(batch.item_pretrained[f])));
    return parts.size() == 1 ? parts.front() : concat_last(parts);
}

Var Encoder::encode_sequences(Tape& tape, ParamStore& store, const FeatureBatch& batch, std::size_t field) const
{
    check_batch(batch);
    const auto& s = batch.sequences.at(field);
    const std::size_t n = batch.size, len = s.length, w = config_.sequence_width;
    if (len > schema_.sequences[field].max_len)
        throw DimensionError("sequence '" + schema_.sequences[field].name + "' padded past max_len");
    std::vector<std::size_t> positions(n * len);
    std::vector<double> keep(n * len);
    for (std::size_t i = 0; i < n * len; ++i) {
        positions[i] = i % len;
        keep[i] = s.mask[i] ? 1.0 : 0.0;
    }
    Var emb = embedding_lookup(tape, store, sequence_embedding(field), s.ids, schema_.sequences[field].name);
    Var pos = gather_rows(tape.param(store.at(position_embedding(field).table_name())), positions);
    Var x = scale_rows(add(emb, pos), tape.constant(Tensor::vector(std::move(keep))));
    return reshape(x, {n, len, w});
}

Var Encoder::pooled_sequence(Tape& tape, ParamStore& store, const FeatureBatch& batch, std::size_t field) const
{
    Var x = encode_sequences(tape, store, batch, field);
    const auto& s = batch.sequences[field];
    for (const auto& block : sequence_blocks(field))
        x = block(tape, store, x, s.mask);
    const std::size_t n = batch.size, len = s.length;
    std::vector<std::size_t> segment(n * len);
    for (std::size_t i = 0; i < n * len; ++i)
        segment[i] = i / len;
    return masked_segment_mean(reshape(x, {n * len, config_.sequence_width}), segment, s.mask, n);
}

Var Encoder::fuse(Tape& tape, ParamStore& store, const FeatureBatch& batch) const
{
    std::vector<Var> parts;
    if (user_width() > 0)
        parts.push_back(encode_user(tape, store, batch));
    for (std::size_t f = 0; f < schema_.sequences.size(); ++f)
        parts.push_back(pooled_sequence(tape, store, batch, f));
    if (schema_.has_item())
        parts.push_back(encode_items(tape, store, batch));
    if (parts.empty())
        throw ContractError("schema has no features");
    return parts.size() == 1 ? parts.front() : concat_last(parts);
}

Tensor encode_item(const Encoder& encoder, ParamStore& store, const ItemRecord& item)
{
    const auto& schema = encoder.schema();
    FeatureBatch b;
    b.size = 1;
    b.user_categorical.resize(schema.user_categorical.size());
    b.user_numerical.resize(schema.user_numerical.size());
    b.user_pretrained.resize(schema.user_pretrained.size());
    b.sequences.resize(schema.sequences.size());
    b.item_ids = {item.id};
    if (item.categorical.size() != schema.item_categorical.size() ||
        item.numerical.size() != schema.item_numerical.size() ||
        item.pretrained.size() != schema.item_pretrained.size())
        throw DimensionError("item record does not match the feature schema");
    for (auto c : item.categorical)
        b.item_categorical.push_back({c});
    for (std::size_t f = 0; f < item.numerical.size(); ++f) {
        if (item.numerical[f].size() != schema.item_numerical[f].width)
            throw DimensionError("item feature '" + schema.item_numerical[f].name + "' has wrong width");
        b.item_numerical.emplace_back(Shape{1, item.numerical[f].size()}, item.numerical[f]);
    }
    for (std::size_t f = 0; f < item.pretrained.size(); ++f) {
        if (item.pretrained[f].size() != schema.item_pretrained[f].width)
            throw DimensionError("item feature '" + schema.item_pretrained[f].name + "' has wrong width");
        b.item_pretrained.emplace_back(Shape{1, item.pretrained[f].size()}, item.pretrained[f]);
    }
    Tape tape;
    const Tensor out = encoder.encode_items(tape, store, b).value();
    return out.reshaped(Shape{out.size()});
}

} // namespace grec
