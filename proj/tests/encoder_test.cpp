// Copyright (c) 2026, The grec Authors
// SPDX-License-Identifier: Apache-2.0

#include "grec/encoder.hpp"
#include "grec/errors.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

using namespace grec;
using grec::testing::randomize;

namespace {

FeatureSchema small_schema()
{
    FeatureSchema s;
    s.user_categorical = {{"region", 5, 3}, {"plan", 4, 2}};
    s.user_numerical = {{"usage", 3}};
    s.user_pretrained = {{"intent", 4}};
    s.sequences = {{"views", 4, 10}};
    s.item_vocab = 6;
    s.item_id_dim = 3;
    s.item_categorical = {{"brand", 4, 2}};
    s.item_numerical = {{"price", 2}};
    s.item_pretrained = {{"image", 5}};
    return s;
}

EncoderConfig small_config()
{
    EncoderConfig c;
    c.deep_width = 6;
    c.wide_width = 4;
    c.adapter_width = 3;
    c.item_wide_width = 2;
    c.sequence_width = 4;
    c.transformer.blocks = 1;
    c.transformer.heads = 2;
    return c;
}

Example random_example(const FeatureSchema& s, Rng& rng, std::size_t seq_len)
{
    Example e;
    for (const auto& f : s.user_categorical)
        e.categorical.push_back(rng.index(f.vocab));
    for (const auto& f : s.user_numerical) {
        e.numerical.emplace_back(f.width);
        for (auto& v : e.numerical.back())
            v = rng.normal();
    }
    for (const auto& f : s.user_pretrained) {
        e.pretrained.emplace_back(f.width);
        for (auto& v : e.pretrained.back())
            v = rng.normal();
    }
    for (const auto& f : s.sequences) {
        e.sequences.emplace_back();
        for (std::size_t i = 0; i < seq_len; ++i)
            e.sequences.back().push_back(rng.index(f.vocab));
    }
    e.item.id = rng.index(s.item_vocab);
    for (const auto& f : s.item_categorical)
        e.item.categorical.push_back(rng.index(f.vocab));
    for (const auto& f : s.item_numerical) {
        e.item.numerical.emplace_back(f.width);
        for (auto& v : e.item.numerical.back())
            v = rng.normal();
    }
    for (const auto& f : s.item_pretrained) {
        e.item.pretrained.emplace_back(f.width);
        for (auto& v : e.item.pretrained.back())
            v = rng.normal();
    }
    e.task = TaskSentence::of(0, 0);
    e.labels = {1.0};
    e.label_mask = {1};
    return e;
}

struct Fixture {
    FeatureSchema schema = small_schema();
    Encoder encoder{small_schema(), small_config()};
    ParamStore store;

    explicit Fixture(std::uint64_t seed, bool randomized = true)
    {
        Rng rng(seed);
        encoder.init(store, rng);
        if (randomized)
            randomize(store, rng);
    }
};

} // namespace

TEST(Encoder, WidthsAddUp)
{
    Fixture f(1);
    EXPECT_EQ(f.encoder.user_width(), 6u + 4u + 3u);
    EXPECT_EQ(f.encoder.item_width(), 3u + 2u + 2u + 3u);
    EXPECT_EQ(f.encoder.fused_width(), 13u + 4u + 10u);
    Rng rng(2);
    std::vector<Example> ex{random_example(f.schema, rng, 2), random_example(f.schema, rng, 0)};
    const auto batch = make_batch(f.schema, ex, 1);
    Tape tape;
    EXPECT_EQ(f.encoder.fuse(tape, f.store, batch).shape(), (Shape{2, 27}));
}

TEST(Encoder, WidthPropertyOverRandomSchemas)
{
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        FeatureSchema s;
        std::size_t item_parts = 0;
        const std::size_t ncat = rng.index(3), nnum = rng.index(3), npre = rng.index(3);
        for (std::size_t i = 0; i < ncat; ++i)
            s.user_categorical.push_back({"c" + std::to_string(i), 2 + rng.index(5), 1 + rng.index(4)});
        for (std::size_t i = 0; i < nnum; ++i)
            s.user_numerical.push_back({"n" + std::to_string(i), 1 + rng.index(3)});
        for (std::size_t i = 0; i < npre; ++i)
            s.user_pretrained.push_back({"p" + std::to_string(i), 1 + rng.index(6)});
        s.item_vocab = 3;
        s.item_id_dim = 1 + rng.index(4);
        item_parts += s.item_id_dim;
        const std::size_t icat = rng.index(3);
        for (std::size_t i = 0; i < icat; ++i) {
            s.item_categorical.push_back({"ic" + std::to_string(i), 3, 1 + rng.index(3)});
            item_parts += s.item_categorical.back().dim;
        }
        if (rng.index(2)) {
            s.item_numerical.push_back({"in", 2});
            item_parts += 2;
        }
        if (rng.index(2)) {
            s.item_pretrained.push_back({"ip", 4});
            item_parts += 3;
        }
        const Encoder enc(s, small_config());
        ParamStore store;
        enc.init(store, rng);
        const std::size_t user = (ncat ? 6 : 0) + (nnum ? 4 : 0) + 3 * npre;
        EXPECT_EQ(enc.user_width(), user);
        EXPECT_EQ(enc.item_width(), item_parts);
        std::vector<Example> ex{random_example(s, rng, 0), random_example(s, rng, 0)};
        const auto batch = make_batch(s, ex, 1);
        Tape tape;
        if (user > 0) {
            EXPECT_EQ(enc.encode_user(tape, store, batch).shape(), (Shape{2, user}));
        }
        EXPECT_EQ(enc.encode_items(tape, store, batch).shape(), (Shape{2, item_parts}));
    }
}

TEST(Encoder, ZeroNumericalsGiveZeroWidePart)
{
    Fixture f(4, false);
    Rng rng(5);
    auto e = random_example(f.schema, rng, 1);
    for (auto& v : e.numerical[0])
        v = 0.0;
    std::vector<Example> ex{e};
    Tape tape;
    const Tensor u = f.encoder.encode_user(tape, f.store, make_batch(f.schema, ex, 1)).value();
    for (std::size_t j = 6; j < 10; ++j)
        EXPECT_EQ(u[j], 0.0);
}

TEST(Encoder, SingleCategoricalFeedsItsEmbeddingRow)
{
    FeatureSchema s;
    s.user_categorical = {{"region", 5, 3}};
    const Encoder enc(s, small_config());
    ParamStore store;
    Rng rng(6);
    enc.init(store, rng);
    randomize(store, rng);
    Example e;
    e.categorical = {3};
    e.task = TaskSentence::of(0, 0);
    e.labels = {0};
    e.label_mask = {1};
    std::vector<Example> ex{e};
    Tape tape;
    const Tensor got = enc.encode_user(tape, store, make_batch(s, ex, 1)).value();
    const Tensor& table = store.at(enc.user_embedding(0).table_name());
    Tensor row(Shape{1, 3});
    for (std::size_t j = 0; j < 3; ++j)
        row[j] = table.at(3, j);
    Tape ref;
    const Tensor want =
        enc.deep_out()(ref, store, relu(enc.deep_in()(ref, store, ref.constant(row)))).value();
    EXPECT_EQ(got, want);
}

TEST(Encoder, ItemsDifferingOnlyInIdDifferOnlyInIdSegment)
{
    Fixture f(7);
    Rng rng(8);
    auto item = random_example(f.schema, rng, 0).item;
    item.id = 1;
    auto other = item;
    other.id = 4;
    const Tensor a = encode_item(f.encoder, f.store, item), b = encode_item(f.encoder, f.store, other);
    ASSERT_EQ(a.size(), 10u);
    bool id_differs = false;
    for (std::size_t j = 0; j < 3; ++j)
        id_differs |= a[j] != b[j];
    EXPECT_TRUE(id_differs);
    for (std::size_t j = 3; j < 10; ++j)
        EXPECT_EQ(a[j], b[j]);
}

TEST(Encoder, ZeroPretrainedVectorGivesZeroLastSegment)
{
    Fixture f(9);
    Rng rng(10);
    auto item = random_example(f.schema, rng, 0).item;
    const Tensor before = encode_item(f.encoder, f.store, item);
    for (auto& v : item.pretrained[0])
        v = 0.0;
    const Tensor after = encode_item(f.encoder, f.store, item);
    for (std::size_t j = 0; j < 7; ++j)
        EXPECT_EQ(after[j], before[j]);
    for (std::size_t j = 7; j < 10; ++j)
        EXPECT_EQ(after[j], 0.0);
}

TEST(Encoder, SegmentIsolationInFusedVector)
{
    Fixture f(11);
    Rng rng(12);
    const auto base = random_example(f.schema, rng, 3);
    auto fused = [&](const Example& e) {
        std::vector<Example> ex{e};
        Tape tape;
        return f.encoder.fuse(tape, f.store, make_batch(f.schema, ex, 1)).value();
    };
    const Tensor ref = fused(base);
    // user 0..12, sequence 13..16, item 17..26
    auto changed_only = [&](const Tensor& t, std::size_t lo, std::size_t hi) {
        for (std::size_t j = 0; j < t.size(); ++j)
            if (j < lo || j >= hi)
                EXPECT_EQ(t[j], ref[j]) << "position " << j;
    };
    auto e = base;
    e.pretrained[0][1] += 1.0;
    changed_only(fused(e), 10, 13);
    e = base;
    e.sequences[0][0] = (e.sequences[0][0] + 1) % 10;
    changed_only(fused(e), 13, 17);
    e = base;
    e.item.numerical[0][0] += 1.0;
    changed_only(fused(e), 22, 24);
}

TEST(Sequence, EmptySequencePoolsToZero)
{
    Fixture f(13);
    Rng rng(14);
    std::vector<Example> ex{random_example(f.schema, rng, 0), random_example(f.schema, rng, 2)};
    Tape tape;
    const Tensor p = f.encoder.pooled_sequence(tape, f.store, make_batch(f.schema, ex, 1), 0).value();
    for (std::size_t j = 0; j < 4; ++j)
        EXPECT_EQ(p.at(0, j), 0.0);
}

TEST(Sequence, OneItemWithZeroBlockWeightsPoolsToItsEmbedding)
{
    Fixture f(15);
    for (const auto& b : f.encoder.sequence_blocks(0))
        for (auto& [name, t] : f.store)
            if (name.rfind(b.name, 0) == 0 && name.find(".ln") == std::string::npos)
                for (auto& v : t.values())
                    v = 0.0;
    Rng rng(16);
    auto e = random_example(f.schema, rng, 1);
    e.sequences[0] = {7};
    std::vector<Example> ex{e};
    Tape tape;
    const Tensor p = f.encoder.pooled_sequence(tape, f.store, make_batch(f.schema, ex, 1), 0).value();
    const Tensor& emb = f.store.at(f.encoder.sequence_embedding(0).table_name());
    const Tensor& pos = f.store.at(f.encoder.position_embedding(0).table_name());
    for (std::size_t j = 0; j < 4; ++j)
        EXPECT_NEAR(p[j], emb.at(7, j) + pos.at(0, j), 1e-15);
}

TEST(Sequence, ExtraPaddingDoesNotChangeOutputs)
{
    Fixture f(17);
    Rng rng(18);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<Example> ex;
        for (int i = 0; i < 3; ++i)
            ex.push_back(random_example(f.schema, rng, rng.index(3)));
        const std::vector<std::size_t> idx{0, 1, 2};
        std::size_t longest = 0;
        for (const auto& e : ex)
            longest = std::max(longest, e.sequences[0].size());
        Tape t1, t2;
        const Tensor tight =
            f.encoder.fuse(t1, f.store, make_batch(f.schema, ex, idx, 1, std::max<std::size_t>(longest, 1))).value();
        const Tensor padded = f.encoder.fuse(t2, f.store, make_batch(f.schema, ex, idx, 1, 4)).value();
        for (std::size_t j = 0; j < tight.size(); ++j)
            EXPECT_NEAR(tight[j], padded[j], 1e-10);
    }
}

TEST(Sequence, PadLengthOutsideRangeIsRejected)
{
    FeatureSchema s = small_schema();
    Rng rng(19);
    std::vector<Example> ex{random_example(s, rng, 3)};
    const std::vector<std::size_t> idx{0};
    EXPECT_THROW(make_batch(s, ex, idx, 1, 2), ContractError);
    EXPECT_THROW(make_batch(s, ex, idx, 1, 5), ContractError);
}

TEST(Sequence, LongSequencesKeepMostRecentAndCount)
{
    FeatureSchema s = small_schema();
    Rng rng(20);
    auto e = random_example(s, rng, 0);
    e.sequences[0] = {1, 2, 3, 4, 5, 6};
    std::vector<Example> ex{e, random_example(s, rng, 2), e};
    const auto b = make_batch(s, ex, 1);
    EXPECT_EQ(b.truncated, 2u);
    ASSERT_EQ(b.sequences[0].length, 4u);
    EXPECT_EQ(std::vector<std::size_t>(b.sequences[0].ids.begin(), b.sequences[0].ids.begin() + 4),
              (std::vector<std::size_t>{3, 4, 5, 6}));
    EXPECT_EQ(std::vector<std::uint8_t>(b.sequences[0].mask.begin() + 4, b.sequences[0].mask.begin() + 8),
              (std::vector<std::uint8_t>{1, 1, 0, 0}));
}

TEST(Encoder, DeterministicAcrossRuns)
{
    Rng rng(21);
    FeatureSchema s = small_schema();
    std::vector<Example> ex{random_example(s, rng, 2), random_example(s, rng, 4)};
    const auto batch = make_batch(s, ex, 1);
    Fixture a(22), b(22);
    Tape t1, t2;
    EXPECT_EQ(a.encoder.fuse(t1, a.store, batch).value(), b.encoder.fuse(t2, b.store, batch).value());
}

TEST(Encoder, SchemaViolationsNameTheField)
{
    FeatureSchema s = small_schema();
    Rng rng(23);
    auto e = random_example(s, rng, 1);
    e.categorical.pop_back();
    std::vector<Example> ex{e};
    try {
        make_batch(s, ex, 1);
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& err) {
        EXPECT_NE(std::string(err.what()).find("plan"), std::string::npos) << err.what();
    }
    auto bad = small_schema();
    bad.item_categorical.push_back({"region", 3, 2});
    EXPECT_THROW(bad.validate(), ConfigError);
    Fixture f(24);
    auto item = random_example(s, rng, 0).item;
    item.numerical[0].push_back(1.0);
    try {
        encode_item(f.encoder, f.store, item);
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& err) {
        EXPECT_NE(std::string(err.what()).find("price"), std::string::npos) << err.what();
    }
}

TEST(Encoder, OutOfRangeCategoricalNamesTheField)
{
    Fixture f(25);
    Rng rng(26);
    auto e = random_example(f.schema, rng, 1);
    e.categorical[0] = 99;
    std::vector<Example> ex{e};
    Tape tape;
    try {
        f.encoder.encode_user(tape, f.store, make_batch(f.schema, ex, 1));
        FAIL() << "expected IndexError";
    } catch (const IndexError& err) {
        EXPECT_NE(std::string(err.what()).find("region"), std::string::npos) << err.what();
    }
}
