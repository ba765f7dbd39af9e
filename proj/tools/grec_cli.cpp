// Copyright (c) 2026, The grec Authors
// SPDX-License-Identifier: Apache-2.0
//
// grec command-line harness: train, eval, sweep, compare-routing, dump-routing.
// Exit codes: 0 ok, 2 configuration error, 3 numeric failure, 1 anything else.

#include "grec/config.hpp"
#include "grec/errors.hpp"
#include "grec/flops.hpp"
#include "grec/model.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <numeric>
#include <optional>
#include <thread>

namespace fs = std::filesystem;
using namespace grec;

namespace {

struct Globals {
    std::string config;
    std::string out;
    std::size_t jobs = 1;
    std::optional<std::uint64_t> seed;
};

std::string fmt(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

ExperimentConfig load(const Globals& g)
{
    if (g.config.empty())
        throw ConfigError("--config is required");
    ExperimentConfig c = load_experiment(g.config);
    if (g.seed) {
        c.model.seed = *g.seed;
        c.seeds = {*g.seed};
    }
    if (!g.out.empty())
        c.output_dir = g.out;
    return c;
}

std::ofstream open_out(const fs::path& path)
{
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error("cannot write " + path.string());
    return out;
}

void write_metrics_row(std::ostream& out, std::size_t epoch, const TaskMetrics& m)
{
    out << epoch << ',' << m.task << ',' << fmt(m.auc) << ',' << fmt(m.ap) << ',' << fmt(m.loss) << '\n';
}

BatchStats training_batch_stats(const GrecConfig& config, const Dataset& data)
{
    const std::size_t n = std::min(config.train.batch_size, data.train.size());
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return batch_stats(make_batch(config.schema, data.train, idx, config.tasks.use_cases().size()));
}

int cmd_train(const Globals& g)
{
    ExperimentConfig c = load(g);
    const Dataset data = load_dataset(c);
    std::ofstream metrics = open_out(c.output_dir / "metrics.csv");
    metrics << "epoch,task,auc,ap,loss\n";
    TrainOptions opt;
    opt.checkpoint = c.output_dir / "model.grc";
    opt.on_epoch = [&](const EpochRecord& r) {
        std::cout << "epoch " << r.epoch << " train_loss " << fmt(r.train_loss);
        for (const auto& m : r.tasks) {
            write_metrics_row(metrics, r.epoch, m);
            std::cout << ' ' << m.task << " auc=" << fmt(m.auc);
        }
        std::cout << '\n';
        metrics.flush();
    };
    if (data.skipped_rows)
        std::cerr << "skipped " << data.skipped_rows << " unparseable rows\n";
    train(c.model, data, opt);
    open_out(c.output_dir / "flops.txt") << count_model_flops(c.model, training_batch_stats(c.model, data)).to_line()
                                         << '\n';
    std::cout << "wrote " << (c.output_dir / "metrics.csv").string() << " and " << opt.checkpoint->string() << '\n';
    return 0;
}

int cmd_eval(const Globals& g, const std::string& checkpoint)
{
    ExperimentConfig c = load(g);
    const Dataset data = load_dataset(c);
    const fs::path ckpt = checkpoint.empty() ? c.output_dir / "model.grc" : fs::path(checkpoint);
    ParamStore params = load_checkpoint(ckpt);
    GrecModel(c.model).check_params(params);
    std::ofstream out = open_out(c.output_dir / "eval.csv");
    out << "task,auc,ap,loss\n";
    for (const auto& m : evaluate(c.model, params, data.test)) {
        out << m.task << ',' << fmt(m.auc) << ',' << fmt(m.ap) << ',' << fmt(m.loss) << '\n';
        std::cout << m.task << " auc=" << fmt(m.auc) << " ap=" << fmt(m.ap) << " loss=" << fmt(m.loss) << '\n';
    }
    return 0;
}

/// Runs `count` independent jobs on up to `jobs` threads; the first exception wins.
template <class Fn>
void run_parallel(std::size_t count, std::size_t jobs, Fn fn)
{
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < count; i = next++) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error)
                    error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < std::max<std::size_t>(1, std::min(jobs, count)); ++t)
        pool.emplace_back(worker);
    worker();
    for (auto& t : pool)
        t.join();
    if (error)
        std::rethrow_exception(error);
}

int cmd_sweep(const Globals& g)
{
    ExperimentConfig c = load(g);
    const Dataset data = load_dataset(c);
    struct Cell {
        std::size_t experts, k;
        Granularity granularity;
        std::uint64_t seed;
        std::vector<TaskMetrics> metrics;
        FlopsReport flops;
    };
    std::vector<Cell> cells;
    for (auto gran : c.sweep.granularities)
        for (auto e : c.sweep.experts)
            for (auto k : c.sweep.k) {
                if (k > e) {
                    std::cerr << "skipping E=" << e << " k=" << k << " (k > E)\n";
                    continue;
                }
                for (auto s : c.seeds)
                    cells.push_back({e, k, gran, s, {}, {}});
            }
    const BatchStats stats = training_batch_stats(c.model, data);
    run_parallel(cells.size(), g.jobs, [&](std::size_t i) {
        Cell& cell = cells[i];
        GrecConfig m = c.model;
        m.moe.experts = cell.experts;
        m.moe.k = cell.k;
        m.moe.granularity = cell.granularity;
        m.seed = cell.seed;
        TrainOptions opt;
        opt.evaluate = false;
        const fs::path dir = c.output_dir / "sweep" /
                             (to_string(cell.granularity) + "_E" + std::to_string(cell.experts) + "_k" +
                              std::to_string(cell.k) + "_s" + std::to_string(cell.seed));
        fs::create_directories(dir);
        opt.checkpoint = dir / "model.grc";
        TrainResult r = train(m, data, opt);
        cell.metrics = evaluate(m, r.params, data.test);
        cell.flops = count_model_flops(m, stats);
    });
    std::ofstream out = open_out(c.output_dir / "sweep.csv");
    out << "granularity,E,k,seed,task,auc,ap,flops\n";
    for (const auto& cell : cells)
        for (const auto& m : cell.metrics)
            out << to_string(cell.granularity) << ',' << cell.experts << ',' << cell.k << ',' << cell.seed << ','
                << m.task << ',' << fmt(m.auc) << ',' << fmt(m.ap) << ',' << cell.flops.model_total() << '\n';
    std::cout << "ran " << cells.size() << " cells; wrote " << (c.output_dir / "sweep.csv").string() << '\n';
    return 0;
}

int cmd_compare_routing(const Globals& g)
{
    ExperimentConfig c = load(g);
    const Dataset data = load_dataset(c);
    struct System {
        std::string name;
        GrecConfig config;
        std::vector<TaskMetrics> metrics;
        std::uint64_t routing_flops = 0;
    };
    std::vector<System> systems;
    {
        GrecConfig m = c.model;
        m.moe.kind = MixtureKind::Mmoe;
        m.moe.experts = c.model.moe.k;
        m.moe.granularity = Granularity::Sentence;
        systems.push_back({"MMoE", m, {}, 0});
    }
    const std::pair<const char*, Granularity> grans[] = {{"GRec-Token", Granularity::Token},
                                                         {"GRec-Sentence", Granularity::Sentence},
                                                         {"GRec-Task", Granularity::Task},
                                                         {"GRec-TaskSentence", Granularity::TaskSentence}};
    for (const auto& [name, gran] : grans) {
        GrecConfig m = c.model;
        m.moe.kind = MixtureKind::Sparse;
        m.moe.granularity = gran;
        systems.push_back({name, m, {}, 0});
    }
    const BatchStats profile = calibration_profile(c.model.tasks);
    run_parallel(systems.size(), g.jobs, [&](std::size_t i) {
        System& s = systems[i];
        TrainOptions opt;
        opt.evaluate = false;
        TrainResult r = train(s.config, data, opt);
        s.metrics = evaluate(s.config, r.params, data.test);
        s.routing_flops = count_routing_flops(s.config, profile).routing_total();
    });
    std::ofstream out = open_out(c.output_dir / "compare_routing.csv");
    out << "system,experts,top_k,granularity,routing_flops";
    for (const auto& u : c.model.tasks.use_cases())
        out << ",ap_" << u;
    out << '\n';
    std::printf("%-18s %7s %5s %-14s %13s", "system", "experts", "top_k", "granularity", "routing_flops");
    for (const auto& u : c.model.tasks.use_cases())
        std::printf(" %8s", ("AP " + u).c_str());
    std::printf("\n");
    for (const auto& s : systems) {
        const std::size_t k = s.config.moe.kind == MixtureKind::Mmoe ? s.config.moe.experts : s.config.moe.k;
        out << s.name << ',' << s.config.moe.experts << ',' << k << ',' << to_string(s.config.moe.granularity) << ','
            << s.routing_flops;
        std::printf("%-18s %7zu %5zu %-14s %13llu", s.name.c_str(), s.config.moe.experts, k,
                    to_string(s.config.moe.granularity).c_str(), static_cast<unsigned long long>(s.routing_flops));
        for (const auto& m : s.metrics) {
            out << ',' << fmt(m.ap);
            std::printf(" %8.4f", m.ap);
        }
        out << '\n';
        std::printf("\n");
    }
    return 0;
}

int cmd_dump_routing(const Globals& g, const std::string& checkpoint, std::size_t examples)
{
    ExperimentConfig c = load(g);
    const Dataset data = load_dataset(c);
    if (c.model.moe.kind != MixtureKind::Sparse)
        throw ConfigError("dump-routing needs model.moe.kind = sparse");
    const fs::path ckpt = checkpoint.empty() ? c.output_dir / "model.grc" : fs::path(checkpoint);
    ParamStore params = load_checkpoint(ckpt);
    const auto& split = data.test.empty() ? data.train : data.test;
    std::vector<std::size_t> idx(std::min(examples, split.size()));
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const FeatureBatch batch = make_batch(c.model.schema, split, idx, c.model.tasks.use_cases().size());
    const PredictionBatch p = forward(c.model, params, batch);
    const std::string text = p.routing->dump();
    open_out(c.output_dir / "routing.txt") << text;
    std::cout << text;
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"grec: multi-task recommendation with task-sentence routed sparse experts"};
    app.require_subcommand(1);
    Globals g;
    std::uint64_t seed = 0;
    app.add_option("--config", g.config, "experiment config (JSON)");
    app.add_option("--out", g.out, "output directory (overrides the config)");
    app.add_option("--jobs", g.jobs, "parallel training runs for sweep and compare-routing")
        ->check(CLI::PositiveNumber);
    auto* seed_opt = app.add_option("--seed", seed, "seed (overrides the config)");

    std::string checkpoint;
    std::size_t examples = 64;
    auto* train_cmd = app.add_subcommand("train", "train and write metrics.csv plus a checkpoint");
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint path (default <out>/model.grc)");
    auto* sweep_cmd = app.add_subcommand("sweep", "train the experts x top-k grid");
    auto* compare_cmd = app.add_subcommand("compare-routing", "MMoE and the four routing granularities");
    auto* dump_cmd = app.add_subcommand("dump-routing", "print routing decisions for test examples");
    dump_cmd->add_option("--checkpoint", checkpoint, "checkpoint path (default <out>/model.grc)");
    dump_cmd->add_option("--examples", examples, "number of test examples")->check(CLI::PositiveNumber);
    for (auto* sub : {train_cmd, eval_cmd, sweep_cmd, compare_cmd, dump_cmd})
        sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    if (seed_opt->count())
        g.seed = seed;

    try {
        if (train_cmd->parsed())
            return cmd_train(g);
        if (eval_cmd->parsed())
            return cmd_eval(g, checkpoint);
        if (sweep_cmd->parsed())
            return cmd_sweep(g);
        if (compare_cmd->parsed())
            return cmd_compare_routing(g);
        if (dump_cmd->parsed())
            return cmd_dump_routing(g, checkpoint, examples);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
