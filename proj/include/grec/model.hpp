// Copyright (c) 2026, The grec Authors
// SPDX-License-Identifier: Apache-2.0
//
// Full model: encoder -> fused trunk token -> mixture layer -> one sigmoid head
// per use case, and the training loop.

#pragma once

#include "grec/data.hpp"
#include "grec/encoder.hpp"
#include "grec/moe.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace grec {

enum class MixtureKind { Sparse, Mmoe };

struct MoeConfig {
    MixtureKind kind = MixtureKind::Sparse;
    std::size_t experts = 8;
    std::size_t k = 4;
    CapacityPolicy capacity = CapacityPolicy::scaled(2.0);
    Granularity granularity = Granularity::TaskSentence;
    GateNormalization normalization = GateNormalization::SoftmaxOverTopK;
    double balance_coef = 0.0;
    std::size_t hidden = 0; ///< expert hidden width, 0 = 2 * d
};

enum class OptimizerKind { Adam, Sgd };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Adam;
    double lr = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct TrainConfig {
    std::size_t epochs = 4;
    std::size_t batch_size = 256;
    std::size_t eval_batch_size = 2048;
    bool upsample = true;
};

struct GrecConfig {
    FeatureSchema schema;
    TaskVocabulary tasks = TaskVocabulary::standard();
    std::size_t d = 16;
    EncoderConfig encoder;
    MoeConfig moe;
    OptimizerConfig optimizer;
    TrainConfig train;
    std::optional<std::uint64_t> seed;

    void validate() const;
};

/// Output of one forward pass, still on the tape.
struct ForwardResult {
    Var logits; ///< [n x use_cases]
    std::optional<RoutingDecision> routing;
    Var aux_loss; ///< unset when there is no auxiliary term
};

class GrecModel {
public:
    explicit GrecModel(GrecConfig config);

    const GrecConfig& config() const noexcept { return config_; }
    const Encoder& encoder() const noexcept { return encoder_; }

    Linear fuse() const { return {"trunk.fuse", encoder_.fused_width(), config_.d, true}; }
    MoeLayer moe() const;
    MmoeLayer mmoe() const;
    Linear head(std::size_t use_case) const
    {
        return {"head." + config_.tasks.use_cases().at(use_case), config_.d, 1, true};
    }

    /// Fresh parameters drawn from the config seed.
    ParamStore init() const;
    /// Checks that `store` holds every parameter with the expected shape.
    void check_params(const ParamStore& store) const;

    /// [n x d] trunk input: projected concatenation of the encoder segments.
    Var trunk(Tape& tape, ParamStore& store, const FeatureBatch& batch) const;
    /// With `frozen`, the sparse layer reuses that expert choice and overflow.
    ForwardResult forward(Tape& tape, ParamStore& store, const FeatureBatch& batch,
                          const RoutingDecision* frozen = nullptr) const;

private:
    GrecConfig config_;
    Encoder encoder_;
};

struct PredictionBatch {
    std::vector<std::string> use_cases;
    std::vector<Tensor> probabilities; ///< one [n] tensor per use case
    std::optional<RoutingDecision> routing;
};

PredictionBatch forward(const GrecConfig& config, ParamStore& params, const FeatureBatch& batch);

/// Unweighted mean over use cases present in the batch of their masked mean
/// BCE, plus the auxiliary term when present. Throws when no label is present.
Var multitask_loss(const ForwardResult& result, const FeatureBatch& batch);

struct TaskMetrics {
    std::string task;
    std::size_t count = 0;
    std::size_t positives = 0;
    double auc = 0.0; ///< NaN when undefined
    double ap = 0.0;  ///< NaN when undefined
    double loss = 0.0;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    std::vector<TaskMetrics> tasks;
};

struct TrainOptions {
    /// Starting parameters; default draws them from the config seed.
    std::optional<ParamStore> initial;
    std::optional<std::filesystem::path> checkpoint;
    bool evaluate = true;
    std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
    ParamStore params;
    std::vector<EpochRecord> history;
};

/// Mini-batch training on the train split. Each epoch optionally upsamples by
/// task sentence, shuffles, steps the optimizer per batch and evaluates on the
/// test split. Non-finite loss or gradient raises NumericError naming the
/// first offending parameter.
TrainResult train(const GrecConfig& config, const Dataset& dataset, const TrainOptions& options = {});

/// Per use case metrics over the labelled entries of `examples`.
std::vector<TaskMetrics> evaluate(const GrecConfig& config, ParamStore& params, std::span<const Example> examples);

/// Mean multi-task loss over `examples`, batch by batch (weighted by batch size).
double dataset_loss(const GrecConfig& config, ParamStore& params, std::span<const Example> examples);

/// Resamples every task-sentence group with replacement up to the largest
/// group's size (originals kept), then shuffles. Deterministic in `seed`.
std::vector<Example> upsample_by_task(std::span<const Example> examples, std::uint64_t seed);

} // namespace grec
