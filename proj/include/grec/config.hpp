// Copyright (c) 2026, The grec Authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration files (JSON). Unknown keys are errors. Grammar and
// defaults are documented in README.md.

#pragma once

#include "grec/data.hpp"
#include "grec/model.hpp"

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace grec {

enum class DataSource { Synthetic, Csv };

struct DataConfig {
    DataSource source = DataSource::Synthetic;
    SyntheticSpec synthetic;
    std::filesystem::path mapping; ///< CSV column mapping file
};

struct SweepConfig {
    std::vector<std::size_t> experts{2, 8};
    std::vector<std::size_t> k{1, 2, 4};
    std::vector<Granularity> granularities{Granularity::TaskSentence};
};

struct ExperimentConfig {
    GrecConfig model;
    DataConfig data;
    SweepConfig sweep;
    std::vector<std::uint64_t> seeds; ///< defaults to {model.seed}
    std::filesystem::path output_dir = "out";

    void validate() const;
};

ExperimentConfig parse_experiment(std::string_view json_text, const std::filesystem::path& base_dir = {});
/// Relative paths inside the file resolve against its directory.
ExperimentConfig load_experiment(const std::filesystem::path& path);

/// Builds the configured dataset and copies its schema and task vocabulary
/// into `config.model`.
Dataset load_dataset(ExperimentConfig& config);

std::string to_string(AttentionMode mode);
std::string to_string(BlockTopology topology);
std::string to_string(MixtureKind kind);

} // namespace grec
