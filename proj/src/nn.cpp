// Copyright (c) 2026, The grec Authors
// SPDX-License-Identifier: Apache-2.0

#include "grec/nn.hpp"

#include "grec/errors.hpp"

#include <cmath>

namespace grec {

void Linear::init(ParamStore& store, Rng& rng) const
{
    store.add(weight_name(), glorot_uniform(Shape{in_features, out_features}, in_features, out_features, rng));
    if (use_bias)
        store.add(bias_name(), Tensor(Shape{out_features}));
}

Var Linear::operator()(Tape& tape, ParamStore& store, Var x) const
{
    const Shape& s = x.shape();
    if (s.empty() || s.back() != in_features)
        throw DimensionError(name + ": expected last dim " + std::to_string(in_features) + ", got " + to_string(s));
    Var flat = s.size() == 2 ? x : reshape(x, Shape{x.value().size() / in_features, in_features});
    Var y = matmul(flat, tape.param(store.at(weight_name())));
    if (use_bias)
        y = add_bias(y, tape.param(store.at(bias_name())));
    if (s.size() == 2)
        return y;
    Shape out = s;
    out.back() = out_features;
    return reshape(y, std::move(out));
}

void EmbeddingTable::init(ParamStore& store, Rng& rng) const
{
    store.add(table_name(), glorot_uniform(Shape{vocab, dim}, vocab, dim, rng));
}

Var embedding_lookup(Tape& tape, ParamStore& store, const EmbeddingTable& table, std::span<const std::size_t> ids,
                     const std::string& feature)
{
    for (auto id : ids)
        if (id >= table.vocab)
            throw IndexError("feature '" + feature + "': id " + std::to_string(id) + " out of range for vocabulary of " +
                             std::to_string(table.vocab));
    return gather_rows(tape.param(store.at(table.table_name())), ids);
}

void MlpBlock::init(ParamStore& store, Rng& rng) const
{
    up().init(store, rng);
    down().init(store, rng);
}

Var MlpBlock::operator()(Tape& tape, ParamStore& store, Var x) const
{
    return down()(tape, store, relu(up()(tape, store, x)));
}

void LayerNormParams::init(ParamStore& store) const
{
    store.add(gain_name(), Tensor(Shape{width}, 1.0));
    store.add(shift_name(), Tensor(Shape{width}, 0.0));
}

Var LayerNormParams::operator()(Tape& tape, ParamStore& store, Var x) const
{
    return layer_norm(x, tape.param(store.at(gain_name())), tape.param(store.at(shift_name())), kLayerNormEps);
}

Var bce_loss(Var logits, std::span<const double> labels, std::span<const std::uint8_t> mask)
{
    for (double y : labels)
        if (y != 0.0 && y != 1.0)
            throw ContractError("bce_loss: labels must be 0 or 1");
    return bce_with_logits(logits, labels, mask);
}

void Sgd::step(ParamStore& store)
{
    for (auto& [name, p] : store) {
        if (!p.has_grad())
            continue;
        auto g = p.grad();
        auto v = p.values();
        for (std::size_t i = 0; i < v.size(); ++i)
            v[i] -= lr_ * g[i];
    }
}

void Adam::step(ParamStore& store)
{
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& [name, p] : store) {
        if (!p.has_grad())
            continue;
        auto& st = state_[name];
        if (st.m.empty()) {
            st.m.assign(p.size(), 0.0);
            st.v.assign(p.size(), 0.0);
        }
        auto g = p.grad();
        auto v = p.values();
        for (std::size_t i = 0; i < v.size(); ++i) {
            st.m[i] = beta1_ * st.m[i] + (1.0 - beta1_) * g[i];
            st.v[i] = beta2_ * st.v[i] + (1.0 - beta2_) * g[i] * g[i];
            const double mh = st.m[i] / c1;
            const double vh = st.v[i] / c2;
            v[i] -= lr_ * mh / (std::sqrt(vh) + eps_);
        }
    }
}

} // namespace grec
