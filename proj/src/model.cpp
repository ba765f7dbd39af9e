// Copyright (c) 2026, The grec Authors
// SPDX-License-Identifier: Apache-2.0

#include "grec/model.hpp"

#include "grec/errors.hpp"
#include "grec/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <numeric>

namespace grec {

void GrecConfig::validate() const
{
    if (!seed)
        throw ConfigError("seed: required");
    if (d == 0)
        throw ConfigError("d: trunk width must be positive");
    schema.validate();
    if (tasks.flows().empty() || tasks.use_cases().empty())
        throw ConfigError("tasks: need at least one flow and one use case");
    if (moe.experts < 1)
        throw ConfigError("moe.experts: must be >= 1");
    if (moe.kind == MixtureKind::Sparse && (moe.k < 1 || moe.k > moe.experts))
        throw ConfigError("moe.k: must lie in [1, experts], got k=" + std::to_string(moe.k) +
                          " with experts=" + std::to_string(moe.experts));
    moe.capacity.validate();
    if (!(moe.balance_coef >= 0.0))
        throw ConfigError("moe.balance_coef: must be non-negative");
    if (!(optimizer.lr >= 0.0) || !std::isfinite(optimizer.lr))
        throw ConfigError("optimizer.lr: must be finite and non-negative");
    if (train.batch_size == 0 || train.eval_batch_size == 0)
        throw ConfigError("train.batch_size: must be positive");
}

namespace {

GrecConfig validated(GrecConfig config)
{
    config.validate();
    return config;
}

} // namespace

GrecModel::GrecModel(GrecConfig config)
    : config_(validated(std::move(config))), encoder_(config_.schema, config_.encoder)
{
}

MoeLayer GrecModel::moe() const
{
    MoeLayer m;
    m.name = "moe";
    m.width = config_.d;
    m.hidden = config_.moe.hidden == 0 ? 2 * config_.d : config_.moe.hidden;
    m.experts = config_.moe.experts;
    m.k = config_.moe.k;
    m.capacity = config_.moe.capacity;
    m.granularity = config_.moe.granularity;
    m.normalization = config_.moe.normalization;
    m.balance_coef = config_.moe.balance_coef;
    m.tasks = config_.tasks;
    return m;
}

MmoeLayer GrecModel::mmoe() const
{
    MmoeLayer m;
    m.name = "mmoe";
    m.width = config_.d;
    m.hidden = config_.moe.hidden == 0 ? 2 * config_.d : config_.moe.hidden;
    m.experts = config_.moe.experts;
    m.tasks = config_.tasks.use_cases().size();
    return m;
}

ParamStore GrecModel::init() const
{
    ParamStore store;
    Rng rng(derive_seed(*config_.seed, 0x9e37));
    encoder_.init(store, rng);
    fuse().init(store, rng);
    if (config_.moe.kind == MixtureKind::Sparse)
        moe().init(store, rng);
    else
        mmoe().init(store, rng);
    for (std::size_t u = 0; u < config_.tasks.use_cases().size(); ++u)
        head(u).init(store, rng);
    return store;
}

void GrecModel::check_params(const ParamStore& store) const
{
    const ParamStore expected = init();
    for (const auto& [name, t] : expected) {
        if (!store.contains(name))
            throw ContractError("parameters: missing '" + name + "'");
        if (store.at(name).shape() != t.shape())
            throw DimensionError("parameters: '" + name + "' has shape " + to_string(store.at(name).shape()) +
                                 ", expected " + to_string(t.shape()));
    }
    for (const auto& [name, t] : store)
        if (!expected.contains(name))
            throw ContractError("parameters: unexpected '" + name + "'");
}

Var GrecModel::trunk(Tape& tape, ParamStore& store, const FeatureBatch& batch) const
{
    if (batch.use_cases != config_.tasks.use_cases().size())
        throw DimensionError("batch has " + std::to_string(batch.use_cases) + " use cases, model has " +
                             std::to_string(config_.tasks.use_cases().size()));
    return fuse()(tape, store, encoder_.fuse(tape, store, batch));
}

ForwardResult GrecModel::forward(Tape& tape, ParamStore& store, const FeatureBatch& batch,
                                 const RoutingDecision* frozen) const
{
    Var h = trunk(tape, store, batch);
    MoeInput input;
    input.tokens = h;
    input.sentence_of_token.resize(batch.size);
    std::iota(input.sentence_of_token.begin(), input.sentence_of_token.end(), std::size_t{0});
    input.sentences = batch.tasks;

    const std::size_t U = config_.tasks.use_cases().size();
    ForwardResult result;
    std::vector<Var> columns;
    if (config_.moe.kind == MixtureKind::Sparse) {
        MoeOutput out = moe().forward(tape, store, input, frozen);
        for (std::size_t u = 0; u < U; ++u)
            columns.push_back(head(u)(tape, store, out.output));
        result.routing = std::move(out.decision);
        result.aux_loss = out.aux_loss;
    } else {
        if (frozen)
            throw ContractError("frozen routing applies to the sparse mixture only");
        std::vector<Var> outs = mmoe().forward(tape, store, input);
        for (std::size_t u = 0; u < U; ++u)
            columns.push_back(head(u)(tape, store, outs[u]));
    }
    result.logits = columns.size() == 1 ? columns.front() : concat_last(columns);
    return result;
}

PredictionBatch forward(const GrecConfig& config, ParamStore& params, const FeatureBatch& batch)
{
    GrecModel model(config);
    model.check_params(params);
    Tape tape;
    ForwardResult r = model.forward(tape, params, batch);
    const Tensor& logits = r.logits.value();
    const std::size_t n = batch.size, U = config.tasks.use_cases().size();
    PredictionBatch out;
    out.use_cases = config.tasks.use_cases();
    for (std::size_t u = 0; u < U; ++u) {
        std::vector<double> p(n);
        for (std::size_t i = 0; i < n; ++i)
            p[i] = 1.0 / (1.0 + std::exp(-logits[i * U + u]));
        out.probabilities.push_back(Tensor::vector(std::move(p)));
    }
    out.routing = std::move(r.routing);
    return out;
}

Var multitask_loss(const ForwardResult& result, const FeatureBatch& batch)
{
    const std::size_t n = batch.size, U = batch.use_cases;
    if (result.logits.dim(0) != n || result.logits.dim(1) != U)
        throw DimensionError("logits " + to_string(result.logits.shape()) + " do not match the batch");
    Var total;
    std::size_t present = 0;
    for (std::size_t u = 0; u < U; ++u) {
        std::vector<double> labels(n);
        std::vector<std::uint8_t> mask(n);
        bool any = false;
        for (std::size_t i = 0; i < n; ++i) {
            labels[i] = batch.labels[i * U + u];
            mask[i] = batch.label_mask[i * U + u];
            any = any || mask[i];
        }
        if (!any)
            continue;
        Var col = reshape(U == 1 ? result.logits : slice_last(result.logits, u, u + 1), {n});
        Var l = bce_with_logits(col, labels, mask);
        total = present == 0 ? l : add(total, l);
        ++present;
    }
    if (present == 0)
        throw ContractError("multitask_loss: batch carries no labels");
    Var loss = present == 1 ? total : scale(total, 1.0 / static_cast<double>(present));
    if (result.aux_loss.valid())
        loss = add(loss, result.aux_loss);
    return loss;
}

namespace {

std::vector<std::size_t> upsample_indices(std::span<const Example> examples, std::uint64_t seed)
{
    if (examples.empty())
        throw ContractError("upsample_by_task: empty dataset");
    std::map<std::vector<TaskToken>, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < examples.size(); ++i)
        groups[examples[i].task.canonical()].push_back(i);
    std::size_t largest = 0;
    for (const auto& [key, members] : groups)
        largest = std::max(largest, members.size());
    Rng rng(seed);
    std::vector<std::size_t> out;
    out.reserve(largest * groups.size());
    for (const auto& [key, members] : groups) {
        out.insert(out.end(), members.begin(), members.end());
        for (std::size_t extra = members.size(); extra < largest; ++extra)
            out.push_back(members[rng.index(members.size())]);
    }
    std::shuffle(out.begin(), out.end(), rng.engine());
    return out;
}

std::unique_ptr<Optimizer> make_optimizer(const OptimizerConfig& c)
{
    if (c.kind == OptimizerKind::Sgd)
        return std::make_unique<Sgd>(c.lr);
    return std::make_unique<Adam>(c.lr, c.beta1, c.beta2, c.eps);
}

bool finite_span(std::span<const double> v)
{
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

[[noreturn]] void report_non_finite(const ParamStore& params, std::size_t epoch, std::size_t batch, double loss)
{
    std::string culprit = "none (inputs or labels)";
    for (const auto& [name, t] : params)
        if (!t.all_finite()) {
            culprit = name + " (value)";
            break;
        }
    if (culprit.front() == 'n')
        for (const auto& [name, t] : params)
            if (!finite_span(t.grad())) {
                culprit = name + " (gradient)";
                break;
            }
    throw NumericError("non-finite training state at epoch " + std::to_string(epoch) + ", batch " +
                       std::to_string(batch) + " (loss " + std::to_string(loss) +
                       "); first offending parameter: " + culprit);
}

bool has_labels(const FeatureBatch& b)
{
    return std::any_of(b.label_mask.begin(), b.label_mask.end(), [](std::uint8_t m) { return m != 0; });
}

} // namespace

std::vector<Example> upsample_by_task(std::span<const Example> examples, std::uint64_t seed)
{
    std::vector<Example> out;
    for (auto i : upsample_indices(examples, seed))
        out.push_back(examples[i]);
    return out;
}

TrainResult train(const GrecConfig& config, const Dataset& dataset, const TrainOptions& options)
{
    GrecModel model(config);
    if (dataset.train.empty())
        throw ContractError("train: empty training split");
    TrainResult result;
    if (options.initial) {
        model.check_params(*options.initial);
        result.params = *options.initial;
    } else {
        result.params = model.init();
    }
    ParamStore& params = result.params;
    auto optimizer = make_optimizer(config.optimizer);
    const std::size_t U = config.tasks.use_cases().size();
    const std::uint64_t seed = *config.seed;

    for (std::size_t epoch = 1; epoch <= config.train.epochs; ++epoch) {
        std::vector<std::size_t> order;
        if (config.train.upsample) {
            order = upsample_indices(dataset.train, derive_seed(seed, 100 + epoch));
        } else {
            order.resize(dataset.train.size());
            std::iota(order.begin(), order.end(), std::size_t{0});
            Rng rng(derive_seed(seed, 200 + epoch));
            std::shuffle(order.begin(), order.end(), rng.engine());
        }
        double loss_sum = 0.0;
        std::size_t seen = 0, batch_no = 0;
        for (std::size_t start = 0; start < order.size(); start += config.train.batch_size, ++batch_no) {
            const std::size_t end = std::min(order.size(), start + config.train.batch_size);
            std::span<const std::size_t> idx(order.data() + start, end - start);
            FeatureBatch batch = make_batch(config.schema, dataset.train, idx, U);
            if (!has_labels(batch))
                continue;
            params.zero_grad();
            Tape tape;
            ForwardResult r = model.forward(tape, params, batch);
            Var loss = multitask_loss(r, batch);
            const double lv = loss.value().item();
            if (!std::isfinite(lv))
                report_non_finite(params, epoch, batch_no, lv);
            tape.backward(loss);
            for (const auto& [name, t] : params)
                if (!finite_span(t.grad()))
                    report_non_finite(params, epoch, batch_no, lv);
            optimizer->step(params);
            loss_sum += lv * static_cast<double>(batch.size);
            seen += batch.size;
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = seen ? loss_sum / static_cast<double>(seen) : std::numeric_limits<double>::quiet_NaN();
        if (options.evaluate && !dataset.test.empty())
            rec.tasks = evaluate(config, params, dataset.test);
        if (options.on_epoch)
            options.on_epoch(rec);
        result.history.push_back(std::move(rec));
    }
    params.zero_grad();
    if (options.checkpoint)
        save_checkpoint(params, *options.checkpoint);
    return result;
}

std::vector<TaskMetrics> evaluate(const GrecConfig& config, ParamStore& params, std::span<const Example> examples)
{
    GrecModel model(config);
    const std::size_t U = config.tasks.use_cases().size();
    std::vector<std::vector<double>> scores(U), labels(U);
    std::vector<double> loss(U, 0.0);
    const std::size_t step = config.train.eval_batch_size;
    for (std::size_t start = 0; start < examples.size(); start += step) {
        const std::size_t end = std::min(examples.size(), start + step);
        std::vector<std::size_t> idx(end - start);
        std::iota(idx.begin(), idx.end(), start);
        FeatureBatch batch = make_batch(config.schema, examples, idx, U);
        Tape tape;
        const Tensor logits = model.forward(tape, params, batch).logits.value();
        for (std::size_t i = 0; i < batch.size; ++i)
            for (std::size_t u = 0; u < U; ++u) {
                if (!batch.label_mask[i * U + u])
                    continue;
                const double z = logits[i * U + u], y = batch.labels[i * U + u];
                scores[u].push_back(1.0 / (1.0 + std::exp(-z)));
                labels[u].push_back(y);
                loss[u] += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
            }
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    std::vector<TaskMetrics> out;
    for (std::size_t u = 0; u < U; ++u) {
        TaskMetrics m;
        m.task = config.tasks.use_cases()[u];
        m.count = labels[u].size();
        m.positives = static_cast<std::size_t>(std::count(labels[u].begin(), labels[u].end(), 1.0));
        m.loss = m.count ? loss[u] / static_cast<double>(m.count) : nan;
        try {
            m.auc = auc(scores[u], labels[u]);
        } catch (const UndefinedMetricError&) {
            m.auc = nan;
        }
        try {
            m.ap = average_precision(scores[u], labels[u]);
        } catch (const UndefinedMetricError&) {
            m.ap = nan;
        }
        out.push_back(std::move(m));
    }
    return out;
}

double dataset_loss(const GrecConfig& config, ParamStore& params, std::span<const Example> examples)
{
    GrecModel model(config);
    const std::size_t U = config.tasks.use_cases().size();
    double total = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < examples.size(); start += config.train.eval_batch_size) {
        const std::size_t end = std::min(examples.size(), start + config.train.eval_batch_size);
        std::vector<std::size_t> idx(end - start);
        std::iota(idx.begin(), idx.end(), start);
        FeatureBatch batch = make_batch(config.schema, examples, idx, U);
        if (!has_labels(batch))
            continue;
        Tape tape;
        const double l = multitask_loss(model.forward(tape, params, batch), batch).value().item();
        total += l * static_cast<double>(batch.size);
        seen += batch.size;
    }
    if (seen == 0)
        throw ContractError("dataset_loss: no labelled examples");
    return total / static_cast<double>(seen);
}

} // namespace grec
