// Copyright (c) 2026, The grec Authors
// SPDX-License-Identifier: Apache-2.0
//
// Wide-and-deep multi-modal input encoding.
//
// User side: categorical embeddings -> two-layer deep tower; numericals -> one
// feedforward layer (wide); each precomputed vector (e.g. search intent) ->
// bias-free width-matching adapter. Item side: id embedding | categorical
// embeddings (deep) | numericals through a feedforward (wide) | precomputed
// vectors through bias-free adapters. Behaviour sequences are embedded, given
// learned positions and encoded by transformer blocks, then mean-pooled over
// valid positions.

#pragma once

#include "grec/attention.hpp"
#include "grec/moe.hpp"
#include "grec/nn.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace grec {

struct CategoricalField {
    std::string name;
    std::size_t vocab = 0;
    std::size_t dim = 0;
};

struct NumericalField {
    std::string name;
    std::size_t width = 0;
};

struct PretrainedField {
    std::string name;
    std::size_t width = 0;
};

struct SequenceField {
    std::string name;
    std::size_t max_len = 0;
    std::size_t vocab = 0;
};

struct FeatureSchema {
    std::vector<CategoricalField> user_categorical;
    std::vector<NumericalField> user_numerical;
    std::vector<PretrainedField> user_pretrained;
    std::vector<SequenceField> sequences;
    std::size_t item_vocab = 0; ///< 0 = no item side
    std::size_t item_id_dim = 0;
    std::vector<CategoricalField> item_categorical;
    std::vector<NumericalField> item_numerical;
    std::vector<PretrainedField> item_pretrained;

    bool has_item() const noexcept { return item_vocab > 0; }
    /// Names unique, widths positive.
    void validate() const;
};

struct ItemRecord {
    std::size_t id = 0;
    std::vector<std::size_t> categorical;
    std::vector<std::vector<double>> numerical;
    std::vector<std::vector<double>> pretrained;
};

/// One row of a dataset. Sequences are stored oldest first.
struct Example {
    std::vector<std::size_t> categorical;
    std::vector<std::vector<double>> numerical;
    std::vector<std::vector<double>> pretrained;
    std::vector<std::vector<std::size_t>> sequences;
    ItemRecord item;
    TaskSentence task;
    std::vector<double> labels; ///< one slot per use case
    std::vector<std::uint8_t> label_mask;
    double latent_score = 0.0; ///< generator ground truth; 0 for loaded data
};

struct SequenceBatch {
    std::size_t length = 0;             ///< padded length
    std::vector<std::size_t> ids;       ///< n * length, 0 at padding
    std::vector<std::uint8_t> mask;     ///< n * length, 1 = valid
};

/// Column-major view of a mini-batch.
struct FeatureBatch {
    std::size_t size = 0;
    std::vector<std::vector<std::size_t>> user_categorical; ///< [field][example]
    std::vector<Tensor> user_numerical;                     ///< [field] n x width
    std::vector<Tensor> user_pretrained;
    std::vector<SequenceBatch> sequences;
    std::vector<std::size_t> item_ids;
    std::vector<std::vector<std::size_t>> item_categorical;
    std::vector<Tensor> item_numerical;
    std::vector<Tensor> item_pretrained;
    std::vector<TaskSentence> tasks;
    std::size_t use_cases = 0;
    std::vector<double> labels;             ///< n x use_cases
    std::vector<std::uint8_t> label_mask;   ///< n x use_cases
    std::size_t truncated = 0;              ///< sequences cut to max_len
};

/// Gathers `indices` of `examples` into a batch. Sequences longer than the
/// field's max_len keep their most recent elements and bump `truncated`.
/// `pad_to` (0 = schema max_len) sets the padded length; it may not be shorter
/// than the longest kept sequence nor longer than max_len.
FeatureBatch make_batch(const FeatureSchema& schema, std::span<const Example> examples,
                        std::span<const std::size_t> indices, std::size_t use_cases, std::size_t pad_to = 0);
FeatureBatch make_batch(const FeatureSchema& schema, std::span<const Example> examples, std::size_t use_cases);

struct TransformerConfig {
    std::size_t blocks = 1;
    std::size_t heads = 2;
    std::size_t d_head = 0;     ///< 0 = width / heads
    std::size_t mlp_hidden = 0; ///< 0 = 2 * width
    BlockTopology topology = BlockTopology::Parallel;
    AttentionMode mode = AttentionMode::MultiQuery;
};

struct EncoderConfig {
    std::size_t deep_width = 16;
    std::size_t wide_width = 8;
    std::size_t adapter_width = 8;
    std::size_t item_wide_width = 4;
    std::size_t sequence_width = 16;
    TransformerConfig transformer;
};

class Encoder {
public:
    Encoder(FeatureSchema schema, EncoderConfig config, std::string name = "encoder");

    const FeatureSchema& schema() const noexcept { return schema_; }
    const EncoderConfig& config() const noexcept { return config_; }

    void init(ParamStore& store, Rng& rng) const;

    std::size_t user_width() const;
    std::size_t item_width() const;
    std::size_t fused_width() const;

    /// [n x user_width]: deep | wide | adapted precomputed vectors.
    Var encode_user(Tape& tape, ParamStore& store, const FeatureBatch& batch) const;
    /// [n x item_width]: id embedding | deep | wide | adapted precomputed vectors.
    Var encode_items(Tape& tape, ParamStore& store, const FeatureBatch& batch) const;
    /// [n x s x w]: embedded ids plus positions, zero at padding.
    Var encode_sequences(Tape& tape, ParamStore& store, const FeatureBatch& batch, std::size_t field) const;
    /// [n x w]: sequence through the transformer blocks, mean over valid positions
    /// (zero vector for an empty sequence).
    Var pooled_sequence(Tape& tape, ParamStore& store, const FeatureBatch& batch, std::size_t field) const;
    /// user | pooled sequences... | item
    Var fuse(Tape& tape, ParamStore& store, const FeatureBatch& batch) const;

    // Layer descriptors, exposed for tests.
    EmbeddingTable user_embedding(std::size_t field) const;
    Linear deep_in() const;
    Linear deep_out() const;
    Linear user_wide() const;
    Linear user_adapter(std::size_t field) const;
    EmbeddingTable item_id_embedding() const;
    EmbeddingTable item_embedding(std::size_t field) const;
    Linear item_wide() const;
    Linear item_adapter(std::size_t field) const;
    EmbeddingTable sequence_embedding(std::size_t field) const;
    EmbeddingTable position_embedding(std::size_t field) const;
    std::vector<TransformerBlock> sequence_blocks(std::size_t field) const;

private:
    void check_batch(const FeatureBatch& batch) const;

    FeatureSchema schema_;
    EncoderConfig config_;
    std::string name_;
};

/// Encodes a single item record; [item_width].
Tensor encode_item(const Encoder& encoder, ParamStore& store, const ItemRecord& item);

} // namespace grec
