// Copyright (c) 2026, The grec Authors
// SPDX-License-Identifier: Apache-2.0

#include "grec/errors.hpp"
#include "grec/model.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>

using namespace grec;
using grec::testing::check_gradients;
using grec::testing::randomize;
namespace fs = std::filesystem;

namespace {

SyntheticSpec tiny_spec(std::size_t n)
{
    SyntheticSpec s;
    s.n = n;
    s.user_fields = 1;
    s.user_vocab = 5;
    s.user_dim = 2;
    s.usage_width = 2;
    s.intent_width = 2;
    s.item_vocab = 6;
    s.item_id_dim = 2;
    s.brand_vocab = 3;
    s.brand_dim = 2;
    s.price_width = 1;
    s.image_width = 2;
    s.page_vocab = 5;
    s.max_sequence = 3;
    return s;
}

GrecConfig tiny_config(const Dataset& data, std::uint64_t seed = 1)
{
    GrecConfig c;
    c.schema = data.schema;
    c.tasks = data.tasks;
    c.d = 8;
    c.encoder.deep_width = 4;
    c.encoder.wide_width = 2;
    c.encoder.adapter_width = 2;
    c.encoder.item_wide_width = 2;
    c.encoder.sequence_width = 4;
    c.encoder.transformer.blocks = 1;
    c.encoder.transformer.heads = 2;
    c.moe.experts = 2;
    c.moe.k = 1;
    c.train.epochs = 1;
    c.train.batch_size = 64;
    c.seed = seed;
    return c;
}

FeatureBatch batch_of(const Dataset& d, const std::vector<Example>& ex)
{
    return make_batch(d.schema, ex, d.tasks.use_cases().size());
}

std::vector<Example> head(const std::vector<Example>& v, std::size_t n)
{
    return {v.begin(), v.begin() + static_cast<std::ptrdiff_t>(std::min(n, v.size()))};
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Only the first categorical field carries signal for CTR.
Dataset separable_dataset()
{
    Dataset d;
    d.tasks = TaskVocabulary::standard();
    d.schema.user_categorical = {{"signal", 4, 2}, {"noise", 6, 2}};
    d.schema.user_numerical = {{"usage", 1}};
    Rng rng(3);
    for (int i = 0; i < 600; ++i) {
        Example e;
        e.categorical = {rng.index(4), rng.index(6)};
        e.numerical = {{rng.normal()}};
        e.task = TaskSentence::of(rng.index(3), 0);
        e.labels = {e.categorical[0] >= 2 ? 1.0 : 0.0, 0, 0, 0};
        e.label_mask = {1, 0, 0, 0};
        (i < 480 ? d.train : d.test).push_back(e);
    }
    return d;
}

} // namespace

TEST(Model, ZeroTrunkPredictsSigmoidOfHeadBias)
{
    const Dataset d = generate(tiny_spec(200));
    const auto c = tiny_config(d);
    GrecModel m(c);
    ParamStore p = m.init();
    for (auto& v : p.at("trunk.fuse.weight").values())
        v = 0.0;
    Rng rng(4);
    std::vector<double> bias;
    for (const auto& uc : c.tasks.use_cases()) {
        bias.push_back(rng.uniform(-2, 2));
        p.at("head." + uc + ".bias")[0] = bias.back();
    }
    const auto pred = forward(c, p, batch_of(d, head(d.train, 16)));
    ASSERT_EQ(pred.probabilities.size(), 4u);
    for (std::size_t u = 0; u < 4; ++u)
        for (double v : pred.probabilities[u].values())
            EXPECT_NEAR(v, sigmoid(bias[u]), 1e-15);
}

TEST(Model, IdenticalExamplesGetIdenticalPredictions)
{
    const Dataset d = generate(tiny_spec(200));
    const auto c = tiny_config(d);
    ParamStore p = GrecModel(c).init();
    std::vector<Example> ex{d.train[3], d.train[7], d.train[3]};
    const auto pred = forward(c, p, batch_of(d, ex));
    for (const auto& t : pred.probabilities)
        EXPECT_EQ(t[0], t[2]);
}

TEST(Model, SingleExpertMakesGranularityIrrelevant)
{
    const Dataset d = generate(tiny_spec(300));
    auto c = tiny_config(d);
    c.moe.experts = 1;
    c.moe.k = 1;
    ParamStore p = GrecModel(c).init();
    const auto batch = batch_of(d, head(d.train, 64));
    c.moe.granularity = Granularity::Token;
    const auto ref = forward(c, p, batch);
    for (auto g : {Granularity::Sentence, Granularity::Task, Granularity::TaskSentence}) {
        c.moe.granularity = g;
        const auto got = forward(c, p, batch);
        for (std::size_t u = 0; u < ref.probabilities.size(); ++u)
            EXPECT_EQ(got.probabilities[u], ref.probabilities[u]) << to_string(g);
    }
}

TEST(Model, MmoeBaselineRuns)
{
    const Dataset d = generate(tiny_spec(300));
    auto c = tiny_config(d);
    c.moe.kind = MixtureKind::Mmoe;
    c.moe.experts = 3;
    ParamStore p = GrecModel(c).init();
    const auto pred = forward(c, p, batch_of(d, head(d.train, 32)));
    EXPECT_FALSE(pred.routing.has_value());
    for (const auto& t : pred.probabilities)
        EXPECT_TRUE(t.all_finite());
}

TEST(Model, ZeroLearningRateLeavesParametersUnchanged)
{
    const Dataset d = generate(tiny_spec(300));
    for (auto kind : {OptimizerKind::Adam, OptimizerKind::Sgd}) {
        auto c = tiny_config(d);
        c.optimizer.kind = kind;
        c.optimizer.lr = 0.0;
        const ParamStore before = GrecModel(c).init();
        TrainOptions opt;
        opt.evaluate = false;
        const auto r = train(c, d, opt);
        for (const auto& [name, t] : before)
            EXPECT_EQ(r.params.at(name), t) << name;
    }
}

TEST(Model, LearnsASeparableTask)
{
    const Dataset d = separable_dataset();
    GrecConfig c;
    c.schema = d.schema;
    c.tasks = d.tasks;
    c.d = 8;
    c.moe.experts = 2;
    c.moe.k = 1;
    c.train.epochs = 8;
    c.train.batch_size = 32;
    c.train.upsample = false;
    c.seed = 2;
    const auto r = train(c, d);
    const auto& ctr = r.history.back().tasks.at(0);
    EXPECT_EQ(ctr.task, "CTR");
    EXPECT_GT(ctr.auc, 0.95);
    EXPECT_TRUE(std::isnan(r.history.back().tasks.at(3).auc));
}

TEST(Model, TrainingReducesLoss)
{
    const Dataset d = generate(tiny_spec(2000));
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        auto c = tiny_config(d, seed);
        c.train.epochs = 2;
        ParamStore init = GrecModel(c).init();
        const double before = dataset_loss(c, init, d.train);
        TrainOptions opt;
        opt.evaluate = false;
        auto r = train(c, d, opt);
        const double after = dataset_loss(c, r.params, d.train);
        EXPECT_LT(after, before) << "seed " << seed;
        EXPECT_EQ(r.history.size(), 2u);
    }
}

TEST(Model, UpsamplingEqualizesTaskGroups)
{
    std::vector<Example> ex;
    for (int i = 0; i < 6; ++i) {
        Example e;
        e.task = TaskSentence::of(i < 5 ? 0 : 1, 0);
        e.latent_score = i;
        ex.push_back(e);
    }
    const auto up = upsample_by_task(ex, 9);
    ASSERT_EQ(up.size(), 10u);
    std::map<std::size_t, int> per_flow;
    std::vector<int> seen(6, 0);
    for (const auto& e : up) {
        ++per_flow[*e.task.flow()];
        ++seen[static_cast<std::size_t>(e.latent_score)];
    }
    EXPECT_EQ(per_flow[0], 5);
    EXPECT_EQ(per_flow[1], 5);
    for (int i = 0; i < 5; ++i)
        EXPECT_EQ(seen[i], 1);
    EXPECT_EQ(seen[5], 5);
    const auto again = upsample_by_task(ex, 9);
    for (std::size_t i = 0; i < up.size(); ++i)
        EXPECT_EQ(again[i].latent_score, up[i].latent_score);
    EXPECT_THROW(upsample_by_task(std::vector<Example>{}, 1), ContractError);
}

TEST(Model, UpsamplingRatioOnSyntheticData)
{
    const Dataset d = generate(tiny_spec(1200));
    std::map<std::vector<TaskToken>, std::size_t> before, after;
    for (const auto& e : d.train)
        ++before[e.task.canonical()];
    const auto up = upsample_by_task(d.train, 3);
    for (const auto& e : up)
        ++after[e.task.canonical()];
    std::size_t largest = 0;
    for (const auto& [k, n] : before)
        largest = std::max(largest, n);
    for (const auto& [k, n] : after)
        EXPECT_EQ(n, largest);
    EXPECT_EQ(up.size(), largest * before.size());
}

TEST(Model, EndToEndGradientsWithFrozenRouting)
{
    const Dataset d = generate(tiny_spec(200));
    std::size_t checked = 0;
    for (std::uint64_t seed = 0; seed < 12; ++seed) {
        auto c = tiny_config(d, seed + 1);
        c.moe.granularity = seed % 2 ? Granularity::TaskSentence : Granularity::Token;
        c.moe.capacity = CapacityPolicy::absolute(2);
        GrecModel m(c);
        ParamStore p = m.init();
        Rng rng(derive_seed(seed, 3));
        randomize(p, rng, 0.4);
        std::vector<Example> ex;
        for (int i = 0; i < 4; ++i)
            ex.push_back(d.train[rng.index(d.train.size())]);
        const auto batch = batch_of(d, ex);
        RoutingDecision frozen;
        {
            Tape tape;
            frozen = *m.forward(tape, p, batch).routing;
        }
        auto r = check_gradients(p, {}, [&](Tape& t, ParamStore& s, const std::vector<Var>&) {
            return multitask_loss(m.forward(t, s, batch, &frozen), batch);
        });
        if (!r.clear_of_kinks())
            continue;
        ++checked;
        EXPECT_LT(r.max_rel_error, 1e-4) << "seed " << seed << " worst " << r.worst;
        EXPECT_GT(r.entries, 100u);
    }
    EXPECT_GE(checked, 6u);
}

TEST(Model, CheckpointRoundTripGivesIdenticalPredictions)
{
    const Dataset d = generate(tiny_spec(400));
    const auto c = tiny_config(d);
    const fs::path path = fs::temp_directory_path() / "grec_model_test.grc";
    TrainOptions opt;
    opt.checkpoint = path;
    opt.evaluate = false;
    auto r = train(c, d, opt);
    ParamStore loaded = load_checkpoint(path);
    fs::remove(path);
    GrecModel(c).check_params(loaded);
    const auto batch = batch_of(d, d.test);
    const auto a = forward(c, r.params, batch), b = forward(c, loaded, batch);
    for (std::size_t u = 0; u < a.probabilities.size(); ++u)
        EXPECT_EQ(a.probabilities[u], b.probabilities[u]);
}

TEST(Model, CheckParamsRejectsForeignStores)
{
    const Dataset d = generate(tiny_spec(200));
    auto c = tiny_config(d);
    ParamStore p = GrecModel(c).init();
    c.d = 6;
    EXPECT_ANY_THROW(GrecModel(c).check_params(p));
}

TEST(Model, NonFiniteStateNamesTheParameter)
{
    const Dataset d = generate(tiny_spec(200));
    const auto c = tiny_config(d);
    ParamStore p = GrecModel(c).init();
    p.at("head.CTR.bias")[0] = std::nan("");
    TrainOptions opt;
    opt.initial = p;
    try {
        train(c, d, opt);
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("head.CTR.bias"), std::string::npos) << e.what();
    }
}

TEST(Model, MissingSeedIsAConfigError)
{
    GrecConfig c;
    c.schema = SyntheticSpec{}.schema();
    EXPECT_THROW(c.validate(), ConfigError);
    c.seed = 3;
    c.moe.k = 9;
    EXPECT_THROW(c.validate(), ConfigError);
}
