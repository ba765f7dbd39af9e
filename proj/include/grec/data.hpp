// Copyright (c) 2026, The grec Authors
// SPDX-License-Identifier: Apache-2.0
//
// Datasets: a synthetic multi-task generator with per-task-sentence hidden
// scorers, and a CSV loader for click/conversion logs.

#pragma once

#include "grec/encoder.hpp"
#include "grec/moe.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace grec {

/// Mean and standard deviation applied to one numerical column.
struct Standardization {
    std::string name;
    double mean = 0.0;
    double stddev = 1.0;
};

struct Dataset {
    FeatureSchema schema;
    TaskVocabulary tasks;
    std::vector<Example> train;
    std::vector<Example> test; ///< later in time than every training example
    std::size_t skipped_rows = 0;
    std::vector<Standardization> standardization;
};

/// Examples whose use case is `use_case`.
std::vector<Example> filter_use_case(std::span<const Example> examples, std::size_t use_case);

// ---- synthetic --------------------------------------------------------------

struct SyntheticSpec {
    std::size_t n = 20000;
    double test_fraction = 0.2;
    std::uint64_t seed = 7;
    TaskVocabulary tasks = TaskVocabulary::standard();

    /// Standard deviation multiplier of the logistic label noise, relative to
    /// the per-group standardized score. 0 gives deterministic labels.
    double noise = 0.5;
    /// Positive rate of use cases whose name ends in "CVR".
    double cvr_rate = 0.05;
    /// Positive rate of every other use case.
    double ctr_rate = 0.30;
    /// Scale of the flow and use-case specific scorer parts relative to the shared part.
    double task_specificity = 0.5;
    std::size_t latent_dim = 8;

    std::size_t user_fields = 3;
    std::size_t user_vocab = 40;
    std::size_t user_dim = 4;
    std::size_t usage_width = 4;
    std::size_t intent_width = 8;
    std::size_t item_vocab = 100;
    std::size_t item_id_dim = 8;
    std::size_t brand_vocab = 12;
    std::size_t brand_dim = 4;
    std::size_t price_width = 2;
    std::size_t image_width = 8;
    std::size_t page_vocab = 30;
    std::size_t max_sequence = 5;

    FeatureSchema schema() const;
    void validate() const;
    double base_rate(std::size_t use_case) const;
};

/// Deterministic in the spec. The last `test_fraction` of the time-ordered
/// stream forms the test split. Each example carries one task sentence and
/// the label of its use case only.
Dataset generate(const SyntheticSpec& spec);

// ---- CSV --------------------------------------------------------------------

/// 64-bit FNV-1a: offset basis 0xcbf29ce484222325, prime 0x100000001b3, bytes
/// in order.
std::uint64_t fnv1a64(std::string_view text) noexcept;

/// Vocabulary index of a categorical value: fnv1a64(value) mod vocab.
std::size_t hash_bucket(std::string_view value, std::size_t vocab);

struct CsvCategorical {
    std::string column;
    std::size_t vocab = 0;
    std::size_t dim = 0;
};

struct CsvLabel {
    std::string column;
    std::string use_case;
};

struct CsvDatasetSpec {
    std::filesystem::path path;
    char delimiter = ',';
    bool header = true;
    double test_fraction = 0.2;

    std::vector<CsvCategorical> user_categorical;
    std::vector<std::string> user_numerical;
    std::optional<std::string> item_id_column;
    std::size_t item_vocab = 0;
    std::size_t item_id_dim = 0;
    std::vector<CsvCategorical> item_categorical;
    std::vector<std::string> item_numerical;
    std::vector<CsvLabel> labels;

    /// Flow vocabulary. A row's flow comes from `flow_column` when set,
    /// otherwise every row gets `flow_value`.
    std::vector<std::string> flows;
    std::optional<std::string> flow_column;
    std::string flow_value;

    void validate() const;
};

/// Reads a mapping file (JSON) describing column roles.
CsvDatasetSpec read_mapping(const std::filesystem::path& path);

/// Loads and standardizes a CSV file. Each row yields one example per label
/// column. Rows with unparseable fields are skipped and counted.
Dataset load_csv(const CsvDatasetSpec& spec);

/// Splits one CSV record, honouring double quotes.
std::vector<std::string> split_csv_line(std::string_view line, char delimiter);

} // namespace grec
