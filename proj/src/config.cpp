// Copyright (c) 2026, The grec Authors
// SPDX-License-Identifier: Apache-2.0

#include "grec/config.hpp"

#include "grec/errors.hpp"
#include "json_fields.hpp"

#include <fstream>
#include <sstream>

namespace grec {

using detail::Fields;
using nlohmann::json;

std::string to_string(AttentionMode mode) { return mode == AttentionMode::MultiHead ? "multi_head" : "multi_query"; }
std::string to_string(BlockTopology topology)
{
    return topology == BlockTopology::Parallel ? "parallel" : "sequential";
}
std::string to_string(MixtureKind kind) { return kind == MixtureKind::Sparse ? "sparse" : "mmoe"; }

namespace {

template <class Enum>
Enum pick(Fields& f, const std::string& key, Enum fallback,
          std::initializer_list<std::pair<const char*, Enum>> choices)
{
    std::string text;
    if (!f.get(key, text))
        return fallback;
    for (const auto& [name, value] : choices)
        if (text == name)
            return value;
    std::string allowed;
    for (const auto& [name, value] : choices)
        allowed += (allowed.empty() ? "" : ", ") + std::string(name);
    throw ConfigError(f.key_path(key) + ": '" + text + "' is not one of " + allowed);
}

Granularity granularity_at(const json& v, const std::string& path)
{
    if (!v.is_string())
        throw ConfigError(path + ": expected a string");
    try {
        return parse_granularity(v.get<std::string>());
    } catch (const Error& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

void read_tasks(const json& j, TaskVocabulary& tasks, const std::string& path)
{
    Fields f(j, path);
    std::vector<std::string> flows = tasks.flows(), use_cases = tasks.use_cases();
    f.get("flows", flows);
    f.get("use_cases", use_cases);
    f.finish();
    try {
        tasks = TaskVocabulary(flows, use_cases);
    } catch (const Error& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

void read_synthetic(const json& j, SyntheticSpec& s)
{
    Fields f(j, "data.synthetic");
    f.get("n", s.n);
    f.get("test_fraction", s.test_fraction);
    f.get("seed", s.seed);
    if (const json* t = f.child("tasks"))
        read_tasks(*t, s.tasks, "data.synthetic.tasks");
    f.get("noise", s.noise);
    f.get("cvr_rate", s.cvr_rate);
    f.get("ctr_rate", s.ctr_rate);
    f.get("task_specificity", s.task_specificity);
    f.get("latent_dim", s.latent_dim);
    f.get("user_fields", s.user_fields);
    f.get("user_vocab", s.user_vocab);
    f.get("user_dim", s.user_dim);
    f.get("usage_width", s.usage_width);
    f.get("intent_width", s.intent_width);
    f.get("item_vocab", s.item_vocab);
    f.get("item_id_dim", s.item_id_dim);
    f.get("brand_vocab", s.brand_vocab);
    f.get("brand_dim", s.brand_dim);
    f.get("price_width", s.price_width);
    f.get("image_width", s.image_width);
    f.get("page_vocab", s.page_vocab);
    f.get("max_sequence", s.max_sequence);
    f.finish();
}

void read_data(const json& j, DataConfig& d, const std::filesystem::path& base)
{
    Fields f(j, "data");
    d.source = pick(f, "source", d.source, {{"synthetic", DataSource::Synthetic}, {"csv", DataSource::Csv}});
    if (const json* s = f.child("synthetic"))
        read_synthetic(*s, d.synthetic);
    std::string mapping;
    if (f.get("mapping", mapping)) {
        std::filesystem::path p(mapping);
        d.mapping = p.is_absolute() || base.empty() ? p : base / p;
    }
    f.finish();
    if (d.source == DataSource::Csv && d.mapping.empty())
        throw ConfigError("data.mapping: required when data.source is csv");
}

void read_capacity(const json& j, CapacityPolicy& c)
{
    if (j.is_string()) {
        if (j.get<std::string>() != "unlimited")
            throw ConfigError("model.moe.capacity: expected \"unlimited\" or an object");
        c = CapacityPolicy::unlimited();
        return;
    }
    Fields f(j, "model.moe.capacity");
    std::size_t limit = 0;
    double factor = 0.0;
    const bool has_limit = f.get("limit", limit);
    const bool has_factor = f.get("factor", factor);
    f.finish();
    if (has_limit == has_factor)
        throw ConfigError("model.moe.capacity: give exactly one of limit or factor");
    c = has_limit ? CapacityPolicy::absolute(limit) : CapacityPolicy::scaled(factor);
    try {
        c.validate();
    } catch (const Error& e) {
        throw ConfigError(std::string("model.moe.capacity: ") + e.what());
    }
}

void read_model(const json& j, GrecConfig& m)
{
    Fields f(j, "model");
    f.get("d", m.d);
    if (const json* e = f.child("encoder")) {
        Fields fe(*e, "model.encoder");
        fe.get("deep_width", m.encoder.deep_width);
        fe.get("wide_width", m.encoder.wide_width);
        fe.get("adapter_width", m.encoder.adapter_width);
        fe.get("item_wide_width", m.encoder.item_wide_width);
        fe.get("sequence_width", m.encoder.sequence_width);
        fe.finish();
    }
    if (const json* t = f.child("transformer")) {
        Fields ft(*t, "model.transformer");
        auto& tc = m.encoder.transformer;
        ft.get("blocks", tc.blocks);
        ft.get("heads", tc.heads);
        ft.get("d_head", tc.d_head);
        ft.get("mlp_hidden", tc.mlp_hidden);
        tc.topology = pick(ft, "topology", tc.topology,
                           {{"parallel", BlockTopology::Parallel}, {"sequential", BlockTopology::Sequential}});
        tc.mode = pick(ft, "attention", tc.mode,
                       {{"multi_query", AttentionMode::MultiQuery}, {"multi_head", AttentionMode::MultiHead}});
        ft.finish();
    }
    if (const json* mo = f.child("moe")) {
        Fields fm(*mo, "model.moe");
        auto& c = m.moe;
        c.kind = pick(fm, "kind", c.kind, {{"sparse", MixtureKind::Sparse}, {"mmoe", MixtureKind::Mmoe}});
        fm.get("experts", c.experts);
        fm.get("k", c.k);
        if (const json* cap = fm.child("capacity"))
            read_capacity(*cap, c.capacity);
        if (const json* g = fm.child("granularity"))
            c.granularity = granularity_at(*g, "model.moe.granularity");
        c.normalization = pick(fm, "normalization", c.normalization,
                               {{"softmax_top_k", GateNormalization::SoftmaxOverTopK},
                                {"truncate_renormalize", GateNormalization::TruncateRenormalize}});
        fm.get("balance_coef", c.balance_coef);
        fm.get("hidden", c.hidden);
        fm.finish();
    }
    f.finish();
}

void read_optimizer(const json& j, OptimizerConfig& o)
{
    Fields f(j, "optimizer");
    o.kind = pick(f, "kind", o.kind, {{"adam", OptimizerKind::Adam}, {"sgd", OptimizerKind::Sgd}});
    f.get("lr", o.lr);
    f.get("beta1", o.beta1);
    f.get("beta2", o.beta2);
    f.get("eps", o.eps);
    f.finish();
}

void read_train(const json& j, TrainConfig& t)
{
    Fields f(j, "train");
    f.get("epochs", t.epochs);
    f.get("batch_size", t.batch_size);
    f.get("eval_batch_size", t.eval_batch_size);
    f.get("upsample", t.upsample);
    f.finish();
}

void read_sweep(const json& j, SweepConfig& s)
{
    Fields f(j, "sweep");
    f.get("experts", s.experts);
    f.get("k", s.k);
    if (const json* g = f.child("granularities")) {
        if (!g->is_array())
            throw ConfigError("sweep.granularities: expected an array");
        s.granularities.clear();
        for (std::size_t i = 0; i < g->size(); ++i)
            s.granularities.push_back(granularity_at((*g)[i], "sweep.granularities[" + std::to_string(i) + "]"));
    }
    f.finish();
}

} // namespace

void ExperimentConfig::validate() const
{
    if (seeds.empty())
        throw ConfigError("seeds: at least one seed is required");
    if (sweep.experts.empty() || sweep.k.empty() || sweep.granularities.empty())
        throw ConfigError("sweep: axes must be non-empty");
    for (auto e : sweep.experts)
        if (e == 0)
            throw ConfigError("sweep.experts: values must be positive");
    for (auto k : sweep.k)
        if (k == 0)
            throw ConfigError("sweep.k: values must be positive");
    if (!model.seed)
        throw ConfigError("seed: required");
    if (model.d == 0)
        throw ConfigError("model.d: must be positive");
    if (model.train.batch_size == 0 || model.train.eval_batch_size == 0)
        throw ConfigError("train.batch_size: must be positive");
    if (model.moe.kind == MixtureKind::Sparse && (model.moe.k < 1 || model.moe.k > model.moe.experts))
        throw ConfigError("model.moe.k: must lie in [1, experts]");
    if (data.source == DataSource::Synthetic)
        data.synthetic.validate();
}

ExperimentConfig parse_experiment(std::string_view json_text, const std::filesystem::path& base_dir)
{
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    ExperimentConfig c;
    Fields f(j, "");
    std::uint64_t seed = 0;
    f.require("seed", seed);
    c.model.seed = seed;
    f.get("seeds", c.seeds);
    std::string out;
    if (f.get("output_dir", out))
        c.output_dir = out;
    if (const json* d = f.child("data"))
        read_data(*d, c.data, base_dir);
    if (const json* m = f.child("model"))
        read_model(*m, c.model);
    if (const json* o = f.child("optimizer"))
        read_optimizer(*o, c.model.optimizer);
    if (const json* t = f.child("train"))
        read_train(*t, c.model.train);
    if (const json* s = f.child("sweep"))
        read_sweep(*s, c.sweep);
    f.finish();
    if (c.seeds.empty())
        c.seeds.push_back(seed);
    c.model.tasks = c.data.synthetic.tasks;
    c.validate();
    return c;
}

ExperimentConfig load_experiment(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open config file " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    try {
        return parse_experiment(text.str(), path.parent_path());
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

Dataset load_dataset(ExperimentConfig& config)
{
    Dataset d = config.data.source == DataSource::Synthetic ? generate(config.data.synthetic)
                                                            : load_csv(read_mapping(config.data.mapping));
    config.model.schema = d.schema;
    config.model.tasks = d.tasks;
    return d;
}

} // namespace grec
