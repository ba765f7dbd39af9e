// Copyright (c) 2026, The grec Authors
// SPDX-License-Identifier: Apache-2.0

#include "grec/config.hpp"
#include "grec/data.hpp"
#include "grec/errors.hpp"
#include "grec/flops.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace grec;
namespace fs = std::filesystem;

namespace {

const fs::path kRepo = fs::path(GREC_TEST_DATA) / ".." / "..";

struct Run {
    int status = -1;
    std::string output;
};

Run run_cli(const std::string& args)
{
    const std::string cmd = std::string("\"") + GREC_CLI + "\" " + args + " 2>&1";
    Run r;
    FILE* pipe = ::popen(cmd.c_str(), "r");
    if (!pipe)
        return r;
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe))
        r.output.append(buf, n);
    const int raw = ::pclose(pipe);
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    return r;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p)
{
    std::ifstream in(p);
    std::vector<std::vector<std::string>> rows;
    for (std::string line; std::getline(in, line);)
        rows.push_back(split_csv_line(line, ','));
    return rows;
}

class Workdir : public ::testing::Test {
protected:
    void SetUp() override
    {
        dir_ = fs::temp_directory_path() /
               (std::string("grec_cli_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    // Small but complete experiment: one fast training run per cell.
    fs::path write_config(const std::string& extra = "")
    {
        const fs::path p = dir_ / "exp.json";
        std::ofstream(p) << R"({
  "seed": 5,
  "seeds": [1, 2],
  "output_dir": "out",
  "data": {"source": "synthetic", "synthetic": {"n": 600, "seed": 3}},
  "model": {"d": 8, "encoder": {"deep_width": 8, "wide_width": 4, "adapter_width": 4, "item_wide_width": 2,
            "sequence_width": 8}, "moe": {"experts": 4, "k": 2}},
  "train": {"epochs": 1, "batch_size": 128}, "sweep": {"experts": [2, 4], "k": [1, 2]})" +
                             extra + "}\n";
        return p;
    }

    fs::path dir_;
};

} // namespace

TEST(Config, DefaultFileParses)
{
    const auto c = load_experiment(kRepo / "configs" / "default.json");
    EXPECT_EQ(*c.model.seed, 1u);
    EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{1, 2, 3}));
    EXPECT_EQ(c.model.moe.experts, 8u);
    EXPECT_EQ(c.model.moe.k, 4u);
    EXPECT_EQ(c.model.moe.capacity.factor, 2.0);
    EXPECT_EQ(c.model.moe.granularity, Granularity::TaskSentence);
    EXPECT_EQ(c.model.encoder.transformer.topology, BlockTopology::Parallel);
    EXPECT_EQ(c.model.encoder.transformer.mode, AttentionMode::MultiQuery);
    EXPECT_EQ(c.data.synthetic.n, 20000u);
    EXPECT_EQ(c.sweep.experts, (std::vector<std::size_t>{2, 8}));
}

TEST(Config, UnknownKeysAreRejectedWithTheirPath)
{
    try {
        parse_experiment(R"({"seed": 1, "model": {"moe": {"experts": 4, "topk": 2}}})");
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("model.moe.topk"), std::string::npos) << e.what();
    }
}

TEST(Config, InvalidValuesAreConfigErrors)
{
    EXPECT_THROW(parse_experiment(R"({"model": {"d": 8}})"), ConfigError);
    EXPECT_THROW(parse_experiment(R"({"seed": 1, "model": {"moe": {"experts": 2, "k": 3}}})"), ConfigError);
    EXPECT_THROW(parse_experiment(R"({"seed": 1, "model": {"d": -4}})"), ConfigError);
    EXPECT_THROW(parse_experiment(R"({"seed": 1, "model": {"moe": {"granularity": "word"}}})"), ConfigError);
    EXPECT_THROW(parse_experiment("{not json"), ConfigError);
    const auto c = parse_experiment(R"({"seed": 1, "model": {"moe": {"capacity": "unlimited"}}})");
    EXPECT_FALSE(c.model.moe.capacity.limit.has_value());
    EXPECT_FALSE(c.model.moe.capacity.factor.has_value());
    const auto l = parse_experiment(R"({"seed": 1, "model": {"moe": {"capacity": {"limit": 3}}}})");
    EXPECT_EQ(l.model.moe.capacity.limit, 3u);
}

TEST(Config, CsvSourceLoadsThroughMapping)
{
    auto c = parse_experiment(R"({"seed": 1, "data": {"source": "csv", "mapping": "tiny_mapping.json"}})",
                              fs::path(GREC_TEST_DATA));
    const Dataset d = load_dataset(c);
    EXPECT_EQ(d.train.size(), 6u);
    EXPECT_EQ(c.model.schema.user_categorical.size(), 2u);
    EXPECT_EQ(c.model.tasks.use_cases(), (std::vector<std::string>{"CTR", "CVR"}));
}

TEST_F(Workdir, MissingConfigExitsWithTwoAndNamesPath)
{
    const auto r = run_cli("--config " + (dir_ / "nope.json").string() + " train");
    EXPECT_EQ(r.status, 2);
    EXPECT_NE(r.output.find("nope.json"), std::string::npos) << r.output;
}

TEST_F(Workdir, BadArgumentsExitWithTwo)
{
    EXPECT_EQ(run_cli("--config " + write_config().string() + " --jobs 0 sweep").status, 2);
    EXPECT_EQ(run_cli("frobnicate").status, 2);
}

TEST_F(Workdir, TrainIsByteReproducible)
{
    const auto cfg = write_config();
    const auto a = run_cli("--config " + cfg.string() + " --out " + (dir_ / "a").string() + " train");
    const auto b = run_cli("--config " + cfg.string() + " --out " + (dir_ / "b").string() + " train");
    ASSERT_EQ(a.status, 0) << a.output;
    ASSERT_EQ(b.status, 0) << b.output;
    const std::string m = slurp(dir_ / "a" / "metrics.csv");
    EXPECT_EQ(m, slurp(dir_ / "b" / "metrics.csv"));
    EXPECT_EQ(slurp(dir_ / "a" / "model.grc"), slurp(dir_ / "b" / "model.grc"));
    const auto rows = read_csv(dir_ / "a" / "metrics.csv");
    ASSERT_EQ(rows.size(), 1u + 4u);
    EXPECT_EQ(rows[0], (std::vector<std::string>{"epoch", "task", "auc", "ap", "loss"}));
    for (std::size_t i = 1; i < rows.size(); ++i)
        EXPECT_EQ(rows[i].size(), 5u);
    const auto flops = slurp(dir_ / "a" / "flops.txt");
    EXPECT_NO_THROW(FlopsReport::parse_line(flops.substr(0, flops.find('\n'))));

    const auto c = run_cli("--config " + cfg.string() + " --out " + (dir_ / "c").string() + " --seed 9 train");
    ASSERT_EQ(c.status, 0) << c.output;
    EXPECT_NE(slurp(dir_ / "c" / "metrics.csv"), m);
}

TEST_F(Workdir, EvalAndDumpRoutingReadTheCheckpoint)
{
    const auto cfg = write_config();
    const std::string base = "--config " + cfg.string() + " --out " + (dir_ / "o").string();
    ASSERT_EQ(run_cli(base + " train").status, 0);
    const auto e = run_cli(base + " eval");
    ASSERT_EQ(e.status, 0) << e.output;
    const auto rows = read_csv(dir_ / "o" / "eval.csv");
    ASSERT_EQ(rows.size(), 5u);
    EXPECT_EQ(rows[0], (std::vector<std::string>{"task", "auc", "ap", "loss"}));
    const auto d = run_cli(base + " dump-routing --examples 8");
    ASSERT_EQ(d.status, 0) << d.output;
    const std::string dump = slurp(dir_ / "o" / "routing.txt");
    EXPECT_EQ(dump.rfind("# unit_id experts weights overflow\n", 0), 0u) << dump;
    const auto missing = run_cli(base + " eval --checkpoint " + (dir_ / "none.grc").string());
    EXPECT_NE(missing.status, 0);
}

TEST_F(Workdir, SweepWritesOneRowPerCellAndTask)
{
    const auto cfg = write_config();
    const auto r = run_cli("--config " + cfg.string() + " --out " + (dir_ / "s").string() + " --jobs 2 sweep");
    ASSERT_EQ(r.status, 0) << r.output;
    const auto rows = read_csv(dir_ / "s" / "sweep.csv");
    ASSERT_EQ(rows.size(), 1u + 2 * 2 * 2 * 4);
    EXPECT_EQ(rows[0], (std::vector<std::string>{"granularity", "E", "k", "seed", "task", "auc", "ap", "flops"}));
    for (std::size_t i = 1; i < rows.size(); ++i) {
        ASSERT_EQ(rows[i].size(), 8u);
        EXPECT_EQ(rows[i][0], "task_sentence");
    }
}

TEST_F(Workdir, CompareRoutingReportsFiveSystems)
{
    const auto cfg = write_config();
    const auto r = run_cli("--config " + cfg.string() + " --out " + (dir_ / "c").string() + " compare-routing");
    ASSERT_EQ(r.status, 0) << r.output;
    const auto rows = read_csv(dir_ / "c" / "compare_routing.csv");
    ASSERT_EQ(rows.size(), 6u);
    EXPECT_EQ(rows[0][0], "system");
    std::map<std::string, double> flops;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        EXPECT_EQ(rows[i].size(), rows[0].size());
        flops[rows[i][3]] = std::stod(rows[i][4]);
    }
    EXPECT_LT(flops["task"], flops["task_sentence"]);
    EXPECT_LT(flops["task_sentence"], flops["token"]);
}
