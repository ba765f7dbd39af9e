// Copyright (c) 2026, The grec Authors
// SPDX-License-Identifier: Apache-2.0
//
// Ranking metrics for binary labels.

#pragma once

#include <span>

namespace grec {

/// Probability that a random positive outscores a random negative, ties
/// counted one half. Computed from midranks in O(n log n).
/// Throws UndefinedMetricError unless both classes are present.
double auc(std::span<const double> scores, std::span<const double> labels);

/// Mean over positives of precision at the positive's rank. Ranks follow
/// descending score; equal scores keep input order.
/// Throws UndefinedMetricError without positives.
double average_precision(std::span<const double> scores, std::span<const double> labels);

} // namespace grec
