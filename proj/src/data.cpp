// Copyright (c) 2026, The grec Authors
// SPDX-License-Identifier: Apache-2.0

#include "grec/data.hpp"

#include "grec/errors.hpp"
#include "json_fields.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>

namespace grec {

std::vector<Example> filter_use_case(std::span<const Example> examples, std::size_t use_case)
{
    std::vector<Example> out;
    for (const auto& e : examples)
        if (e.task.use_case() == use_case)
            out.push_back(e);
    return out;
}

// ---- synthetic --------------------------------------------------------------

FeatureSchema SyntheticSpec::schema() const
{
    static const char* kUserFields[] = {"account_type", "region", "plan", "tenure", "channel", "segment"};
    FeatureSchema s;
    for (std::size_t f = 0; f < user_fields; ++f) {
        std::string name = f < std::size(kUserFields) ? kUserFields[f] : "user_cat" + std::to_string(f);
        s.user_categorical.push_back({std::move(name), user_vocab, user_dim});
    }
    s.user_numerical.push_back({"usage", usage_width});
    s.user_pretrained.push_back({"search_intent", intent_width});
    s.sequences.push_back({"device_views", max_sequence, item_vocab});
    s.sequences.push_back({"page_views", max_sequence, page_vocab});
    s.item_vocab = item_vocab;
    s.item_id_dim = item_id_dim;
    s.item_categorical.push_back({"brand", brand_vocab, brand_dim});
    s.item_numerical.push_back({"price", price_width});
    s.item_pretrained.push_back({"image", image_width});
    return s;
}

void SyntheticSpec::validate() const
{
    if (n == 0)
        throw ContractError("synthetic spec: n must be positive");
    if (!(test_fraction >= 0.0 && test_fraction < 1.0))
        throw ConfigError("synthetic spec: test_fraction must be in [0, 1)");
    if (!(noise >= 0.0))
        throw ConfigError("synthetic spec: noise must be non-negative");
    if (!(cvr_rate > 0.0 && cvr_rate < 1.0) || !(ctr_rate > 0.0 && ctr_rate < 1.0))
        throw ConfigError("synthetic spec: base rates must be in (0, 1)");
    if (tasks.flows().empty() || tasks.use_cases().empty())
        throw ConfigError("synthetic spec: needs at least one flow and one use case");
    if (latent_dim == 0 || user_fields == 0)
        throw ConfigError("synthetic spec: latent_dim and user_fields must be positive");
    schema().validate();
}

double SyntheticSpec::base_rate(std::size_t use_case) const
{
    const std::string& name = tasks.use_cases().at(use_case);
    const bool cvr_family = name.size() >= 3 && name.compare(name.size() - 3, 3, "CVR") == 0;
    return cvr_family ? cvr_rate : ctr_rate;
}

namespace {

using Vec = std::vector<double>;

Vec normal_vec(Rng& rng, std::size_t n, double scale)
{
    Vec v(n);
    for (auto& x : v)
        x = rng.normal() * scale;
    return v;
}

std::vector<Vec> normal_table(Rng& rng, std::size_t rows, std::size_t cols, double scale)
{
    std::vector<Vec> t(rows);
    for (auto& r : t)
        r = normal_vec(rng, cols, scale);
    return t;
}

void axpy(Vec& y, const Vec& x, double a)
{
    for (std::size_t i = 0; i < y.size(); ++i)
        y[i] += a * x[i];
}

// y += M^T x for M stored as rows of length y.size().
void add_projection(Vec& y, const std::vector<Vec>& m, const Vec& x)
{
    for (std::size_t r = 0; r < x.size(); ++r)
        axpy(y, m[r], x[r]);
}

struct Hidden {
    std::vector<std::vector<Vec>> user;   // [field][value] latent
    std::vector<Vec> usage;               // [usage_width] rows of latent
    std::vector<Vec> intent;
    std::vector<Vec> item;                // [item] latent
    std::vector<Vec> brand;
    std::vector<Vec> price_proj;
    std::vector<Vec> image_proj;
    std::vector<Vec> page;
    std::vector<std::size_t> item_brand;
    std::vector<Vec> item_price;
    std::vector<Vec> item_image;
    Vec shared;
    std::vector<Vec> flow;
    std::vector<Vec> use_case;
};

Hidden make_hidden(const SyntheticSpec& spec)
{
    Rng rng(derive_seed(spec.seed, 1));
    const std::size_t p = spec.latent_dim;
    Hidden h;
    for (std::size_t f = 0; f < spec.user_fields; ++f)
        h.user.push_back(normal_table(rng, spec.user_vocab, p, 1.0 / std::sqrt(static_cast<double>(spec.user_fields))));
    h.usage = normal_table(rng, spec.usage_width, p, 1.0 / std::sqrt(static_cast<double>(spec.usage_width)));
    h.intent = normal_table(rng, spec.intent_width, p, 1.0 / std::sqrt(static_cast<double>(spec.intent_width)));
    h.item = normal_table(rng, spec.item_vocab, p, 1.0);
    h.brand = normal_table(rng, spec.brand_vocab, p, 0.5);
    h.price_proj = normal_table(rng, spec.price_width, p, 0.5 / std::sqrt(static_cast<double>(spec.price_width)));
    h.image_proj = normal_table(rng, spec.image_width, p, 0.5 / std::sqrt(static_cast<double>(spec.image_width)));
    h.page = normal_table(rng, spec.page_vocab, p, 1.0);
    for (std::size_t i = 0; i < spec.item_vocab; ++i) {
        h.item_brand.push_back(rng.index(spec.brand_vocab));
        h.item_price.push_back(normal_vec(rng, spec.price_width, 1.0));
        h.item_image.push_back(normal_vec(rng, spec.image_width, 1.0));
    }
    h.shared = normal_vec(rng, p, 1.0);
    h.flow = normal_table(rng, spec.tasks.flows().size(), p, 1.0);
    h.use_case = normal_table(rng, spec.tasks.use_cases().size(), p, 1.0);
    return h;
}

Vec item_latent(const Hidden& h, std::size_t id)
{
    Vec z = h.item[id];
    axpy(z, h.brand[h.item_brand[id]], 1.0);
    add_projection(z, h.price_proj, h.item_price[id]);
    add_projection(z, h.image_proj, h.item_image[id]);
    return z;
}

// Mean latent of the most recent `max_len` elements; zero when empty.
Vec sequence_latent(const std::vector<Vec>& table, const std::vector<std::size_t>& seq, std::size_t max_len,
                    std::size_t p)
{
    Vec z(p, 0.0);
    const std::size_t start = seq.size() > max_len ? seq.size() - max_len : 0;
    const std::size_t kept = seq.size() - start;
    for (std::size_t t = start; t < seq.size(); ++t)
        axpy(z, table[seq[t]], 1.0 / static_cast<double>(kept));
    return z;
}

double dot(const Vec& a, const Vec& b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += a[i] * b[i];
    return s;
}

} // namespace

Dataset generate(const SyntheticSpec& spec)
{
    spec.validate();
    const Hidden h = make_hidden(spec);
    const std::size_t p = spec.latent_dim;
    const std::size_t flows = spec.tasks.flows().size(), ucs = spec.tasks.use_cases().size();

    // Per task sentence scorer: shared direction plus flow and use-case parts.
    std::vector<Vec> scorer(flows * ucs);
    for (std::size_t f = 0; f < flows; ++f)
        for (std::size_t u = 0; u < ucs; ++u) {
            Vec w = h.shared;
            axpy(w, h.flow[f], spec.task_specificity);
            axpy(w, h.use_case[u], spec.task_specificity);
            scorer[f * ucs + u] = std::move(w);
        }

    Rng rng(derive_seed(spec.seed, 2));
    std::vector<Example> all(spec.n);
    std::vector<std::size_t> group(spec.n);
    std::vector<double> score(spec.n);
    const double inv_sqrt_p = 1.0 / std::sqrt(static_cast<double>(p));
    for (std::size_t i = 0; i < spec.n; ++i) {
        Example& e = all[i];
        Vec z(p, 0.0);
        for (std::size_t f = 0; f < spec.user_fields; ++f) {
            const std::size_t v = rng.index(spec.user_vocab);
            e.categorical.push_back(v);
            axpy(z, h.user[f][v], 1.0);
        }
        e.numerical.push_back(normal_vec(rng, spec.usage_width, 1.0));
        add_projection(z, h.usage, e.numerical.back());
        e.pretrained.push_back(normal_vec(rng, spec.intent_width, 1.0));
        add_projection(z, h.intent, e.pretrained.back());

        std::vector<std::size_t> devices(rng.index(spec.max_sequence + 3));
        for (auto& d : devices)
            d = rng.index(spec.item_vocab);
        std::vector<std::size_t> pages(rng.index(spec.max_sequence + 3));
        for (auto& pg : pages)
            pg = rng.index(spec.page_vocab);
        axpy(z, sequence_latent(h.item, devices, spec.max_sequence, p), 1.0);
        axpy(z, sequence_latent(h.page, pages, spec.max_sequence, p), 1.0);
        e.sequences = {std::move(devices), std::move(pages)};

        const std::size_t id = rng.index(spec.item_vocab);
        e.item.id = id;
        e.item.categorical = {h.item_brand[id]};
        e.item.numerical = {h.item_price[id]};
        e.item.pretrained = {h.item_image[id]};
        axpy(z, item_latent(h, id), 1.0);

        const std::size_t f = rng.index(flows), u = rng.index(ucs);
        e.task = TaskSentence::of(f, u);
        group[i] = f * ucs + u;
        score[i] = dot(scorer[group[i]], z) * inv_sqrt_p;
    }

    // Standardize within each group, add logistic noise of unit variance times
    // `noise`, and label the top base-rate fraction of each group positive.
    Rng noise_rng(derive_seed(spec.seed, 3));
    std::vector<double> noisy(spec.n);
    const double logistic_unit = std::numbers::sqrt3 / std::numbers::pi;
    for (std::size_t i = 0; i < spec.n; ++i) {
        double q = noise_rng.uniform();
        q = std::clamp(q, 1e-12, 1.0 - 1e-12);
        noisy[i] = spec.noise * logistic_unit * std::log(q / (1.0 - q));
    }
    std::vector<std::vector<std::size_t>> members(flows * ucs);
    for (std::size_t i = 0; i < spec.n; ++i)
        members[group[i]].push_back(i);
    for (std::size_t g = 0; g < members.size(); ++g) {
        auto& idx = members[g];
        if (idx.empty())
            continue;
        double mean = 0.0, var = 0.0;
        for (auto i : idx)
            mean += score[i];
        mean /= static_cast<double>(idx.size());
        for (auto i : idx)
            var += (score[i] - mean) * (score[i] - mean);
        const double sd = idx.size() > 1 && var > 0.0 ? std::sqrt(var / static_cast<double>(idx.size())) : 1.0;
        for (auto i : idx) {
            all[i].latent_score = (score[i] - mean) / sd;
            noisy[i] += all[i].latent_score;
        }
        std::vector<std::size_t> ranked = idx;
        std::stable_sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) { return noisy[a] > noisy[b]; });
        const std::size_t u = g % ucs;
        const auto positives =
            static_cast<std::size_t>(std::llround(spec.base_rate(u) * static_cast<double>(idx.size())));
        for (std::size_t r = 0; r < ranked.size(); ++r) {
            Example& e = all[ranked[r]];
            e.labels.assign(ucs, 0.0);
            e.label_mask.assign(ucs, 0);
            e.labels[u] = r < positives ? 1.0 : 0.0;
            e.label_mask[u] = 1;
        }
    }

    Dataset d;
    d.schema = spec.schema();
    d.tasks = spec.tasks;
    const auto n_test = static_cast<std::size_t>(std::llround(spec.test_fraction * static_cast<double>(spec.n)));
    const std::size_t n_train = spec.n - n_test;
    d.train.assign(std::make_move_iterator(all.begin()),
                   std::make_move_iterator(all.begin() + static_cast<std::ptrdiff_t>(n_train)));
    d.test.assign(std::make_move_iterator(all.begin() + static_cast<std::ptrdiff_t>(n_train)),
                  std::make_move_iterator(all.end()));
    return d;
}

// ---- CSV --------------------------------------------------------------------

std::uint64_t fnv1a64(std::string_view text) noexcept
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::size_t hash_bucket(std::string_view value, std::size_t vocab)
{
    if (vocab == 0)
        throw ContractError("hash_bucket: vocabulary size must be positive");
    return static_cast<std::size_t>(fnv1a64(value) % vocab);
}

void CsvDatasetSpec::validate() const
{
    if (labels.empty())
        throw ConfigError("csv spec: at least one label column is required");
    if (!(test_fraction >= 0.0 && test_fraction < 1.0))
        throw ConfigError("csv spec: test_fraction must be in [0, 1)");
    if (flows.empty())
        throw ConfigError("csv spec: flow vocabulary is empty");
    if (!flow_column && std::find(flows.begin(), flows.end(), flow_value) == flows.end())
        throw ConfigError("csv spec: flow_value '" + flow_value + "' is not in the flow vocabulary");
    if (item_id_column && (item_vocab == 0 || item_id_dim == 0))
        throw ConfigError("csv spec: item id column needs positive vocab and dim");
    if (!item_id_column && (!item_categorical.empty() || !item_numerical.empty()))
        throw ConfigError("csv spec: item features need an item id column");
    if (user_categorical.empty() && user_numerical.empty())
        throw ConfigError("csv spec: no user feature columns");
    for (const auto& c : user_categorical)
        if (c.vocab == 0 || c.dim == 0)
            throw ConfigError("csv spec: column '" + c.column + "' needs positive vocab and dim");
    for (const auto& c : item_categorical)
        if (c.vocab == 0 || c.dim == 0)
            throw ConfigError("csv spec: column '" + c.column + "' needs positive vocab and dim");
}

namespace {

std::vector<CsvCategorical> read_categoricals(const nlohmann::json* arr, const std::string& path)
{
    std::vector<CsvCategorical> out;
    if (arr == nullptr)
        return out;
    if (!arr->is_array())
        throw ConfigError(path + ": expected an array");
    for (std::size_t i = 0; i < arr->size(); ++i) {
        detail::Fields f((*arr)[i], path + "[" + std::to_string(i) + "]");
        CsvCategorical c;
        f.require("column", c.column);
        f.require("vocab", c.vocab);
        f.require("dim", c.dim);
        f.finish();
        out.push_back(std::move(c));
    }
    return out;
}

} // namespace

CsvDatasetSpec read_mapping(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open mapping file " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    CsvDatasetSpec s;
    detail::Fields f(j, "");
    std::string file, delimiter = ",";
    if (f.get("path", file)) {
        std::filesystem::path p(file);
        s.path = p.is_absolute() ? p : path.parent_path() / p;
    }
    f.get("delimiter", delimiter);
    if (delimiter.size() != 1)
        throw ConfigError("delimiter: expected a single character");
    s.delimiter = delimiter[0];
    f.get("header", s.header);
    f.get("test_fraction", s.test_fraction);
    s.user_categorical = read_categoricals(f.child("user_categorical"), "user_categorical");
    f.get("user_numerical", s.user_numerical);
    if (const auto* item = f.child("item_id")) {
        detail::Fields fi(*item, "item_id");
        std::string column;
        fi.require("column", column);
        fi.require("vocab", s.item_vocab);
        fi.require("dim", s.item_id_dim);
        fi.finish();
        s.item_id_column = column;
    }
    s.item_categorical = read_categoricals(f.child("item_categorical"), "item_categorical");
    f.get("item_numerical", s.item_numerical);
    if (const auto* labels = f.child("labels")) {
        if (!labels->is_array())
            throw ConfigError("labels: expected an array");
        for (std::size_t i = 0; i < labels->size(); ++i) {
            detail::Fields fl((*labels)[i], "labels[" + std::to_string(i) + "]");
            CsvLabel l;
            fl.require("column", l.column);
            fl.require("use_case", l.use_case);
            fl.finish();
            s.labels.push_back(std::move(l));
        }
    }
    f.require("flows", s.flows);
    std::string flow_column;
    if (f.get("flow_column", flow_column))
        s.flow_column = flow_column;
    f.get("flow_value", s.flow_value);
    f.finish();
    s.validate();
    return s;
}

std::vector<std::string> split_csv_line(std::string_view line, char delimiter)
{
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == delimiter) {
            out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(std::move(cur));
    return out;
}

namespace {

bool parse_double(const std::string& text, double& out)
{
    const char* first = text.data();
    const char* last = first + text.size();
    while (first < last && *first == ' ')
        ++first;
    while (last > first && last[-1] == ' ')
        --last;
    if (first == last)
        return false;
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last && std::isfinite(out);
}

struct Row {
    std::vector<std::size_t> user_cat;
    std::vector<double> user_num;
    std::size_t item_id = 0;
    std::vector<std::size_t> item_cat;
    std::vector<double> item_num;
    std::size_t flow = 0;
    std::vector<double> labels;
};

std::size_t column_index(const std::map<std::string, std::size_t>& columns, const std::string& name,
                         const std::string& role)
{
    auto it = columns.find(name);
    if (it == columns.end())
        throw ConfigError("csv: " + role + " column '" + name + "' not present in the file");
    return it->second;
}

} // namespace

Dataset load_csv(const CsvDatasetSpec& spec)
{
    spec.validate();
    std::ifstream in(spec.path);
    if (!in)
        throw ConfigError("cannot open csv file " + spec.path.string());

    auto next_line = [&](std::string& line) {
        if (!std::getline(in, line))
            return false;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        return true;
    };

    std::string line;
    std::map<std::string, std::size_t> columns;
    std::size_t width = 0;
    std::vector<std::string> pending; // first data line when there is no header
    if (!next_line(line))
        throw ContractError("empty dataset");
    {
        auto cells = split_csv_line(line, spec.delimiter);
        width = cells.size();
        for (std::size_t i = 0; i < cells.size(); ++i)
            columns[spec.header ? cells[i] : std::to_string(i)] = i;
        if (!spec.header)
            pending.push_back(line);
    }

    std::vector<std::size_t> ucat, unum, icat, inum, lab;
    for (const auto& c : spec.user_categorical)
        ucat.push_back(column_index(columns, c.column, "categorical"));
    for (const auto& c : spec.user_numerical)
        unum.push_back(column_index(columns, c, "numerical"));
    std::optional<std::size_t> item_col;
    if (spec.item_id_column)
        item_col = column_index(columns, *spec.item_id_column, "item id");
    for (const auto& c : spec.item_categorical)
        icat.push_back(column_index(columns, c.column, "categorical"));
    for (const auto& c : spec.item_numerical)
        inum.push_back(column_index(columns, c, "numerical"));
    for (const auto& l : spec.labels)
        lab.push_back(column_index(columns, l.column, "label"));
    std::optional<std::size_t> flow_col;
    if (spec.flow_column)
        flow_col = column_index(columns, *spec.flow_column, "flow");

    std::vector<std::string> use_cases;
    for (const auto& l : spec.labels)
        if (std::find(use_cases.begin(), use_cases.end(), l.use_case) == use_cases.end())
            use_cases.push_back(l.use_case);
    TaskVocabulary vocab(spec.flows, use_cases);
    const std::size_t fixed_flow = flow_col ? 0 : vocab.flow(spec.flow_value).id;

    std::vector<Row> rows;
    std::size_t skipped = 0;
    auto consume = [&](const std::string& text) {
        if (text.empty())
            return;
        const auto cells = split_csv_line(text, spec.delimiter);
        if (cells.size() != width) {
            ++skipped;
            return;
        }
        Row r;
        for (std::size_t i = 0; i < ucat.size(); ++i)
            r.user_cat.push_back(hash_bucket(cells[ucat[i]], spec.user_categorical[i].vocab));
        for (auto c : unum) {
            double v = 0.0;
            if (!parse_double(cells[c], v)) {
                ++skipped;
                return;
            }
            r.user_num.push_back(v);
        }
        if (item_col)
            r.item_id = hash_bucket(cells[*item_col], spec.item_vocab);
        for (std::size_t i = 0; i < icat.size(); ++i)
            r.item_cat.push_back(hash_bucket(cells[icat[i]], spec.item_categorical[i].vocab));
        for (auto c : inum) {
            double v = 0.0;
            if (!parse_double(cells[c], v)) {
                ++skipped;
                return;
            }
            r.item_num.push_back(v);
        }
        for (auto c : lab) {
            double v = 0.0;
            if (!parse_double(cells[c], v) || (v != 0.0 && v != 1.0)) {
                ++skipped;
                return;
            }
            r.labels.push_back(v);
        }
        if (flow_col) {
            auto tok = vocab.find(cells[*flow_col]);
            if (!tok || tok->kind != TaskKind::Flow) {
                ++skipped;
                return;
            }
            r.flow = tok->id;
        } else {
            r.flow = fixed_flow;
        }
        rows.push_back(std::move(r));
    };
    for (const auto& p : pending)
        consume(p);
    while (next_line(line))
        consume(line);
    if (rows.empty())
        throw ContractError("empty dataset");

    const auto n_test = static_cast<std::size_t>(std::llround(spec.test_fraction * static_cast<double>(rows.size())));
    const std::size_t n_train = rows.size() - n_test;
    if (n_train == 0)
        throw ContractError("csv: no training rows after the split");

    // Standardization statistics from the training rows only.
    auto stats = [&](auto pick, std::size_t count, const std::vector<std::string>& names) {
        std::vector<Standardization> out;
        for (std::size_t c = 0; c < count; ++c) {
            double mean = 0.0, var = 0.0;
            for (std::size_t r = 0; r < n_train; ++r)
                mean += pick(rows[r])[c];
            mean /= static_cast<double>(n_train);
            for (std::size_t r = 0; r < n_train; ++r) {
                const double d = pick(rows[r])[c] - mean;
                var += d * d;
            }
            const double sd = std::sqrt(var / static_cast<double>(n_train));
            out.push_back({names[c], mean, sd > 0.0 ? sd : 1.0});
        }
        return out;
    };
    auto user_stats = stats([](const Row& r) -> const std::vector<double>& { return r.user_num; }, unum.size(),
                            spec.user_numerical);
    auto item_stats = stats([](const Row& r) -> const std::vector<double>& { return r.item_num; }, inum.size(),
                            spec.item_numerical);

    Dataset d;
    d.tasks = vocab;
    d.skipped_rows = skipped;
    d.standardization = user_stats;
    d.standardization.insert(d.standardization.end(), item_stats.begin(), item_stats.end());
    for (const auto& c : spec.user_categorical)
        d.schema.user_categorical.push_back({c.column, c.vocab, c.dim});
    for (const auto& c : spec.user_numerical)
        d.schema.user_numerical.push_back({c, 1});
    if (spec.item_id_column) {
        d.schema.item_vocab = spec.item_vocab;
        d.schema.item_id_dim = spec.item_id_dim;
        for (const auto& c : spec.item_categorical)
            d.schema.item_categorical.push_back({c.column, c.vocab, c.dim});
        for (const auto& c : spec.item_numerical)
            d.schema.item_numerical.push_back({c, 1});
    }
    d.schema.validate();

    const std::size_t ucs = use_cases.size();
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const Row& row = rows[r];
        Example base;
        base.categorical = row.user_cat;
        for (std::size_t c = 0; c < row.user_num.size(); ++c)
            base.numerical.push_back({(row.user_num[c] - user_stats[c].mean) / user_stats[c].stddev});
        base.item.id = row.item_id;
        base.item.categorical = row.item_cat;
        for (std::size_t c = 0; c < row.item_num.size(); ++c)
            base.item.numerical.push_back({(row.item_num[c] - item_stats[c].mean) / item_stats[c].stddev});
        auto& dest = r < n_train ? d.train : d.test;
        for (std::size_t l = 0; l < spec.labels.size(); ++l) {
            Example e = base;
            const std::size_t u = vocab.use_case(spec.labels[l].use_case).id;
            e.task = TaskSentence::of(row.flow, u);
            e.labels.assign(ucs, 0.0);
            e.label_mask.assign(ucs, 0);
            e.labels[u] = row.labels[l];
            e.label_mask[u] = 1;
            dest.push_back(std::move(e));
        }
    }
    return d;
}

} // namespace grec
