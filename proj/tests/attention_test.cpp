// Copyright (c) 2026, The grec Authors
// SPDX-License-Identifier: Apache-2.0

#include "grec/attention.hpp"
#include "grec/errors.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace grec;
using grec::testing::check_gradients;
using grec::testing::probe;
using grec::testing::random_tensor;
using grec::testing::randomize;

namespace {

void expect_close(const Tensor& a, const Tensor& b, double tol)
{
    ASSERT_EQ(a.shape(), b.shape());
    for (std::size_t i = 0; i < a.size(); ++i)
        EXPECT_NEAR(a[i], b[i], tol) << "entry " << i;
}

double max_abs_diff(const Tensor& a, const Tensor& b)
{
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

Tensor eval_attention(const Tensor& q, const Tensor& k, const Tensor& v)
{
    Tape tape;
    return scaled_attention(tape.constant(q), tape.constant(k), tape.constant(v)).value();
}

// Loop over heads, each through scaled_attention on column slices.
Tensor per_head_oracle(const Tensor& x, ParamStore& store, const AttentionParams& p, bool shared_kv)
{
    Tape tape;
    Var xv = tape.constant(x);
    Var q = matmul(xv, tape.constant(store.at(p.w_q())));
    Var k = matmul(xv, tape.constant(store.at(p.w_k())));
    Var v = matmul(xv, tape.constant(store.at(p.w_v())));
    std::vector<Var> heads;
    for (std::size_t h = 0; h < p.heads; ++h) {
        const std::size_t lo = h * p.d_head, hi = lo + p.d_head;
        Var kh = shared_kv ? k : slice_last(k, lo, hi);
        Var vh = shared_kv ? v : slice_last(v, lo, hi);
        heads.push_back(scaled_attention(slice_last(q, lo, hi), kh, vh));
    }
    return matmul(concat_last(heads), tape.constant(store.at(p.w_o()))).value();
}

Tensor run_block(const TransformerBlock& b, ParamStore& store, const Tensor& x)
{
    Tape tape;
    return b(tape, store, tape.constant(x)).value();
}

} // namespace

TEST(ScaledAttention, SingleKeyReturnsItsValue)
{
    Rng rng(1);
    const Tensor v = random_tensor({1, 3}, rng);
    const Tensor out = eval_attention(random_tensor({4, 2}, rng), random_tensor({1, 2}, rng), v);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            EXPECT_NEAR(out.at(i, j), v[j], 1e-15);
}

TEST(ScaledAttention, EqualKeysAverageTheValues)
{
    Rng rng(2);
    const Tensor v = random_tensor({5, 2}, rng);
    const Tensor out = eval_attention(random_tensor({3, 4}, rng), Tensor(Shape{5, 4}, 0.3), v);
    for (std::size_t j = 0; j < 2; ++j) {
        double m = 0.0;
        for (std::size_t r = 0; r < 5; ++r)
            m += v.at(r, j) / 5.0;
        for (std::size_t i = 0; i < 3; ++i)
            EXPECT_NEAR(out.at(i, j), m, 1e-14);
    }
}

TEST(ScaledAttention, TwoKeyExample)
{
    const Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
    const Tensor out = eval_attention(Tensor::matrix({{1, 0}}), eye, eye);
    const double e = std::exp(1.0 / std::sqrt(2.0));
    const double sigma = e / (e + 1.0);
    EXPECT_NEAR(out[0], sigma, 1e-6);
    EXPECT_NEAR(out[1], 1.0 - sigma, 1e-6);
}

TEST(ScaledAttention, KeyWidthMismatchThrows)
{
    EXPECT_THROW(eval_attention(Tensor(Shape{2, 3}), Tensor(Shape{2, 4}), Tensor(Shape{2, 4})), DimensionError);
}

TEST(ScaledAttention, WeightRowsSumToOne)
{
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t sq = 1 + rng.index(5), sk = 1 + rng.index(6), dk = 1 + rng.index(4);
        const Tensor w = attention_weights(random_tensor({sq, dk}, rng, 4.0), random_tensor({sk, dk}, rng, 4.0));
        for (std::size_t i = 0; i < sq; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < sk; ++j)
                s += w.at(i, j);
            EXPECT_NEAR(s, 1.0, 1e-12);
        }
    }
}

TEST(MultiHead, MatchesPerHeadLoopOracle)
{
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        ParamStore store;
        AttentionParams p{"a", 6, 2, 3, AttentionMode::MultiHead};
        p.init(store, rng);
        const Tensor x = random_tensor({3, 6}, rng);
        Tape tape;
        const Tensor got = multi_head_forward(tape, store, tape.constant(x), p).value();
        expect_close(got, per_head_oracle(x, store, p, false), 1e-12);
    }
}

TEST(MultiHead, SingleTokenGivesItsValueProjection)
{
    Rng rng(4);
    ParamStore store;
    AttentionParams p{"a", 4, 2, 2, AttentionMode::MultiHead};
    p.init(store, rng);
    const Tensor x = random_tensor({1, 4}, rng);
    Tape tape;
    Var xv = tape.constant(x);
    const Tensor want = matmul(matmul(xv, tape.constant(store.at(p.w_v()))), tape.constant(store.at(p.w_o()))).value();
    expect_close(multi_head_forward(tape, store, xv, p).value(), want, 1e-14);
}

TEST(MultiQuery, SingleHeadIsBitIdenticalToMultiHead)
{
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        ParamStore store;
        AttentionParams mq{"a", 5, 1, 5, AttentionMode::MultiQuery};
        AttentionParams mh = mq;
        mh.mode = AttentionMode::MultiHead;
        mq.init(store, rng);
        const Tensor x = random_tensor({4, 5}, rng);
        Tape t1, t2;
        EXPECT_EQ(multi_query_forward(t1, store, t1.constant(x), mq).value(),
                  multi_head_forward(t2, store, t2.constant(x), mh).value());
    }
}

TEST(MultiQuery, KeyValueParameterCount)
{
    Rng rng(5);
    ParamStore mq_store, mh_store;
    AttentionParams mq{"a", 8, 2, 4, AttentionMode::MultiQuery};
    AttentionParams mh{"a", 8, 2, 4, AttentionMode::MultiHead};
    mq.init(mq_store, rng);
    mh.init(mh_store, rng);
    EXPECT_EQ(mq_store.at(mq.w_k()).size() + mq_store.at(mq.w_v()).size(), 64u);
    EXPECT_EQ(mh_store.at(mh.w_k()).size() + mh_store.at(mh.w_v()).size(), 128u);
}

TEST(MultiQuery, MatchesKeyValueBroadcastOracle)
{
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed + 100);
        ParamStore store;
        AttentionParams mq{"a", 8, 4, 2, AttentionMode::MultiQuery};
        mq.init(store, rng);
        // Multi-head parameters holding h copies of the shared projections.
        ParamStore wide;
        AttentionParams mh{"a", 8, 4, 2, AttentionMode::MultiHead};
        wide.add(mh.w_q(), store.at(mq.w_q()));
        wide.add(mh.w_o(), store.at(mq.w_o()));
        for (const auto& name : {mq.w_k(), mq.w_v()}) {
            const Tensor& shared = store.at(name);
            Tensor tiled(Shape{8, 8});
            for (std::size_t r = 0; r < 8; ++r)
                for (std::size_t h = 0; h < 4; ++h)
                    for (std::size_t j = 0; j < 2; ++j)
                        tiled.at(r, h * 2 + j) = shared.at(r, j);
            wide.add(name, tiled);
        }
        const Tensor x = random_tensor({5, 8}, rng);
        Tape t1, t2;
        const Tensor got = multi_query_forward(t1, store, t1.constant(x), mq).value();
        expect_close(got, multi_head_forward(t2, wide, t2.constant(x), mh).value(), 1e-12);
        expect_close(got, per_head_oracle(x, store, mq, true), 1e-12);
    }
}

TEST(MultiQuery, WrongModeIsRejected)
{
    Rng rng(6);
    ParamStore store;
    AttentionParams mq{"a", 4, 2, 2, AttentionMode::MultiQuery};
    mq.init(store, rng);
    Tape tape;
    EXPECT_THROW(multi_head_forward(tape, store, tape.constant(Tensor(Shape{2, 4})), mq), ContractError);
    AttentionParams as_mh = mq;
    as_mh.mode = AttentionMode::MultiHead;
    EXPECT_ANY_THROW(multi_head_forward(tape, store, tape.constant(Tensor(Shape{2, 4})), as_mh));
}

TEST(Block, ZeroWeightsAreIdentity)
{
    for (auto topo : {BlockTopology::Parallel, BlockTopology::Sequential}) {
        Rng rng(7);
        ParamStore store;
        const auto b = TransformerBlock::make("b", 6, 2, 3, 12, AttentionMode::MultiQuery, topo);
        b.init(store, rng);
        for (auto& [name, t] : store)
            if (name.find(".ln") == std::string::npos)
                for (auto& v : t.values())
                    v = 0.0;
        const Tensor x = random_tensor({4, 6}, rng);
        EXPECT_EQ(run_block(b, store, x), x);
    }
}

TEST(Block, ParallelMatchesDecomposition)
{
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        ParamStore store;
        const auto b = TransformerBlock::make("b", 6, 3, 2, 10, AttentionMode::MultiQuery, BlockTopology::Parallel);
        b.init(store, rng);
        randomize(store, rng);
        const Tensor x = random_tensor({2, 4, 6}, rng);
        Tape tape;
        Var xv = tape.constant(x);
        Var attn = self_attention(tape, store, b.ln1(tape, store, xv), b.attn);
        Var mlp = b.mlp(tape, store, b.ln1(tape, store, xv));
        const Tensor want = add(add(xv, mlp), attn).value();
        expect_close(run_block(b, store, x), want, 1e-12);
    }
}

TEST(Block, SequentialMatchesDecomposition)
{
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        ParamStore store;
        const auto b = TransformerBlock::make("b", 6, 2, 3, 10, AttentionMode::MultiHead, BlockTopology::Sequential);
        b.init(store, rng);
        randomize(store, rng);
        const Tensor x = random_tensor({2, 3, 6}, rng);
        Tape tape;
        Var xv = tape.constant(x);
        Var attn = self_attention(tape, store, b.ln1(tape, store, xv), b.attn);
        const Tensor want = add(xv, b.mlp(tape, store, b.ln2(tape, store, add(xv, attn)))).value();
        expect_close(run_block(b, store, x), want, 1e-12);
    }
}

TEST(Block, TopologiesAreDistinguishable)
{
    int differ = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        ParamStore store;
        auto seq = TransformerBlock::make("b", 6, 2, 3, 10, AttentionMode::MultiQuery, BlockTopology::Sequential);
        auto par = seq;
        par.topology = BlockTopology::Parallel;
        seq.init(store, rng);
        randomize(store, rng);
        const Tensor x = random_tensor({4, 6}, rng);
        if (max_abs_diff(run_block(seq, store, x), run_block(par, store, x)) > 1e-6)
            ++differ;
    }
    EXPECT_GE(differ, 95);
}

TEST(Block, PermutationEquivariant)
{
    for (auto topo : {BlockTopology::Parallel, BlockTopology::Sequential}) {
        Rng rng(8);
        ParamStore store;
        const auto b = TransformerBlock::make("b", 4, 2, 2, 8, AttentionMode::MultiQuery, topo);
        b.init(store, rng);
        randomize(store, rng);
        const Tensor x = random_tensor({5, 4}, rng);
        const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
        Tensor xp(Shape{5, 4});
        for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t j = 0; j < 4; ++j)
                xp.at(i, j) = x.at(perm[i], j);
        const Tensor y = run_block(b, store, x), yp = run_block(b, store, xp);
        for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t j = 0; j < 4; ++j)
                EXPECT_NEAR(yp.at(i, j), y.at(perm[i], j), 1e-12);
    }
}

TEST(Block, MaskedKeysDoNotInfluenceValidRows)
{
    Rng rng(9);
    ParamStore store;
    const auto b = TransformerBlock::make("b", 4, 2, 2, 8, AttentionMode::MultiQuery, BlockTopology::Parallel);
    b.init(store, rng);
    randomize(store, rng);
    Tensor x = random_tensor({1, 4, 4}, rng);
    const std::vector<std::uint8_t> mask{1, 1, 0, 0};
    auto run = [&](const Tensor& in) {
        Tape tape;
        return b(tape, store, tape.constant(in), mask).value();
    };
    const Tensor y = run(x);
    for (std::size_t j = 8; j < 16; ++j)
        x[j] = rng.uniform(-5, 5);
    const Tensor y2 = run(x);
    for (std::size_t j = 0; j < 8; ++j)
        EXPECT_NEAR(y[j], y2[j], 1e-14);
}

TEST(GradCheck, AttentionAndBlocks)
{
    std::size_t checked = 0;
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        for (auto topo : {BlockTopology::Parallel, BlockTopology::Sequential}) {
            const auto mode = seed % 2 ? AttentionMode::MultiHead : AttentionMode::MultiQuery;
            Rng rng(derive_seed(seed, 31));
            ParamStore store;
            const auto b = TransformerBlock::make("b", 4, 2, 2, 6, mode, topo);
            b.init(store, rng);
            randomize(store, rng);
            const std::vector<std::uint8_t> mask{1, 1, 1, 1, 1, 0};
            auto r = check_gradients(store, {random_tensor({2, 3, 4}, rng)},
                                     [&](Tape& t, ParamStore& s, const std::vector<Var>& in) {
                                         return probe(t, b(t, s, in[0], mask), seed);
                                     });
            if (!r.clear_of_kinks())
                continue;
            ++checked;
            EXPECT_LT(r.max_rel_error, 1e-4) << "seed " << seed << " worst " << r.worst;
        }
    }
    EXPECT_GE(checked, 40u);
}
