// Copyright (c) 2026, The grec Authors
// SPDX-License-Identifier: Apache-2.0

#include "grec/errors.hpp"
#include "grec/metrics.hpp"
#include "grec/tensor.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

using namespace grec;

namespace {

// Pair enumeration with integer counts, one final division.
double auc_oracle(const std::vector<double>& s, const std::vector<double>& y)
{
    long long twice_wins = 0, pos = 0, neg = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        (y[i] == 1.0 ? pos : neg) += 1;
        if (y[i] != 1.0)
            continue;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (y[j] != 0.0)
                continue;
            twice_wins += s[i] > s[j] ? 2 : s[i] == s[j] ? 1 : 0;
        }
    }
    return double(twice_wins) / double(2 * pos * neg);
}

double ap_oracle(const std::vector<double>& s, const std::vector<double>& y)
{
    std::vector<std::size_t> order(s.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
    double total = 0.0;
    int hits = 0;
    for (std::size_t r = 0; r < order.size(); ++r)
        if (y[order[r]] == 1.0) {
            ++hits;
            total += double(hits) / double(r + 1);
        }
    return total / hits;
}

} // namespace

TEST(Auc, PerfectRankingIsOne)
{
    const std::vector<double> s{0.1, 0.2, 0.9, 0.95}, y{0, 0, 1, 1};
    EXPECT_EQ(auc(s, y), 1.0);
}

TEST(Auc, WorkedExample)
{
    const std::vector<double> s{0.1, 0.4, 0.35, 0.8}, y{0, 0, 1, 1};
    EXPECT_EQ(auc(s, y), 0.75);
}

TEST(Auc, AllTiedIsHalf)
{
    const std::vector<double> s(6, 0.3), y{0, 1, 0, 1, 1, 0};
    EXPECT_EQ(auc(s, y), 0.5);
}

TEST(Auc, RejectsDegenerateInput)
{
    const std::vector<double> s{0.1, 0.2}, ones{1, 1}, bad{0, 2}, y{0, 1};
    EXPECT_THROW(auc(s, ones), UndefinedMetricError);
    EXPECT_THROW(auc(s, bad), ContractError);
    const std::vector<double> nan{0.1, std::nan("")};
    EXPECT_THROW(auc(nan, y), NumericError);
    const std::vector<double> short_labels{0};
    EXPECT_ANY_THROW(auc(s, short_labels));
}

TEST(Auc, MatchesEnumerationOracleExactly)
{
    Rng rng(1);
    for (int trial = 0; trial < 2000; ++trial) {
        const std::size_t n = 2 + rng.index(199);
        std::vector<double> s(n), y(n);
        const bool coarse = trial % 2 == 0;
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = coarse ? double(rng.index(5)) / 4.0 : rng.uniform();
            y[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;
        }
        y[0] = 1.0;
        y[1] = 0.0;
        ASSERT_EQ(auc(s, y), auc_oracle(s, y)) << "n=" << n;
    }
}

TEST(AveragePrecision, PositivesFirstIsOne)
{
    const std::vector<double> s{0.9, 0.8, 0.1}, y{1, 1, 0};
    EXPECT_EQ(average_precision(s, y), 1.0);
}

TEST(AveragePrecision, WorkedExample)
{
    const std::vector<double> s{0.9, 0.5, 0.2}, y{1, 0, 1};
    EXPECT_NEAR(average_precision(s, y), 0.8333, 1e-4);
    EXPECT_NEAR(average_precision(s, y), (1.0 + 2.0 / 3.0) / 2.0, 1e-15);
}

TEST(AveragePrecision, SinglePositiveAtLastRank)
{
    for (std::size_t n = 1; n <= 20; ++n) {
        std::vector<double> s(n), y(n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            s[i] = double(n - i);
        y[n - 1] = 1.0;
        EXPECT_DOUBLE_EQ(average_precision(s, y), 1.0 / double(n));
    }
}

TEST(AveragePrecision, TiesKeepInputOrder)
{
    const std::vector<double> s{0.5, 0.5}, first{1, 0}, second{0, 1};
    EXPECT_EQ(average_precision(s, first), 1.0);
    EXPECT_EQ(average_precision(s, second), 0.5);
}

TEST(AveragePrecision, RejectsNoPositives)
{
    const std::vector<double> s{0.1, 0.2}, y{0, 0};
    EXPECT_THROW(average_precision(s, y), UndefinedMetricError);
}

TEST(AveragePrecision, MatchesEnumerationOracle)
{
    Rng rng(2);
    for (int trial = 0; trial < 2000; ++trial) {
        const std::size_t n = 1 + rng.index(200);
        std::vector<double> s(n), y(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = trial % 2 ? double(rng.index(6)) : rng.normal();
            y[i] = rng.uniform() < 0.2 ? 1.0 : 0.0;
        }
        y[rng.index(n)] = 1.0;
        ASSERT_EQ(average_precision(s, y), ap_oracle(s, y)) << "n=" << n;
    }
}
