// Copyright (c) 2026, The grec Authors
// SPDX-License-Identifier: Apache-2.0

#include "grec/metrics.hpp"

#include "grec/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

namespace grec {

namespace {

void check_inputs(std::span<const double> scores, std::span<const double> labels, const char* what)
{
    if (scores.size() != labels.size())
        throw DimensionError(std::string(what) + ": " + std::to_string(scores.size()) + " scores but " +
                             std::to_string(labels.size()) + " labels");
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0.0 && labels[i] != 1.0)
            throw ContractError(std::string(what) + ": label " + std::to_string(i) + " is not 0 or 1");
        if (std::isnan(scores[i]))
            throw NumericError(std::string(what) + ": score " + std::to_string(i) + " is NaN");
    }
}

} // namespace

double auc(std::span<const double> scores, std::span<const double> labels)
{
    check_inputs(scores, labels, "auc");
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Twice the positive rank sum, so midranks stay integral.
    double twice_rank_sum = 0.0;
    double positives = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]])
            ++j;
        const double twice_midrank = static_cast<double>(i + 1 + j); // ranks i+1..j
        for (std::size_t t = i; t < j; ++t)
            if (labels[order[t]] == 1.0) {
                twice_rank_sum += twice_midrank;
                positives += 1.0;
            }
        i = j;
    }
    const double negatives = static_cast<double>(n) - positives;
    if (positives == 0.0 || negatives == 0.0)
        throw UndefinedMetricError("auc needs both positive and negative labels");
    const double twice_u = twice_rank_sum - positives * (positives + 1.0);
    return twice_u / (2.0 * positives * negatives);
}

double average_precision(std::span<const double> scores, std::span<const double> labels)
{
    check_inputs(scores, labels, "average_precision");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    double hits = 0.0, total = 0.0;
    for (std::size_t r = 0; r < order.size(); ++r)
        if (labels[order[r]] == 1.0) {
            hits += 1.0;
            total += hits / static_cast<double>(r + 1);
        }
    if (hits == 0.0)
        throw UndefinedMetricError("average_precision needs at least one positive label");
    return total / hits;
}

} // namespace grec
