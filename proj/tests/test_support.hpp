// Copyright (c) 2026, The grec Authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared helpers for the test suites: random tensors and a central
// finite-difference gradient checker.

#pragma once

#include "grec/autodiff.hpp"
#include "grec/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace grec::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0)
{
    Tensor t(std::move(shape));
    for (auto& v : t.values())
        v = rng.uniform(-scale, scale);
    return t;
}

/// Fills every parameter of `store` with uniform noise (overrides zero inits).
inline void randomize(ParamStore& store, Rng& rng, double scale = 0.5)
{
    for (auto& [name, t] : store)
        for (auto& v : t.values())
            v = rng.uniform(-scale, scale);
}

/// Scalar probe sum(y * r) with a fixed random r, so every output entry
/// contributes a distinct weight to the loss.
inline Var probe(Tape& tape, Var y, std::uint64_t seed)
{
    Rng rng(seed);
    return sum(mul(y, tape.constant(random_tensor(y.shape(), rng))));
}

struct GradCheck {
    double max_rel_error = 0.0;
    std::string worst; ///< where the worst entry sits
    double relu_margin = 1e300;
    std::size_t entries = 0;

    /// True when no ReLU pre-activation sat within `margin` of the kink.
    bool clear_of_kinks(double margin = 1e-3) const { return relu_margin > margin; }
};

/// Loss function for the checker: f(tape, store, inputs) -> scalar Var.
using LossFn = std::function<Var(Tape&, ParamStore&, const std::vector<Var>&)>;

/// Relative error |a - n| / max(|a|, |n|, 1e-3) between analytic gradients and
/// central differences with step `eps`, over every parameter in `store` and
/// every entry of `inputs`.
inline GradCheck check_gradients(ParamStore& store, std::vector<Tensor> inputs, const LossFn& f, double eps = 1e-5)
{
    GradCheck out;
    store.zero_grad();
    std::vector<Tensor> input_grads;
    {
        Tape tape;
        std::vector<Var> vars;
        for (const auto& t : inputs)
            vars.push_back(tape.variable(t));
        Var loss = f(tape, store, vars);
        tape.backward(loss);
        out.relu_margin = tape.relu_margin();
        for (const auto& v : vars)
            input_grads.push_back(tape.grad(v));
    }
    auto evaluate = [&]() {
        Tape tape;
        std::vector<Var> vars;
        for (const auto& t : inputs)
            vars.push_back(tape.constant(t));
        Var loss = f(tape, store, vars);
        out.relu_margin = std::min(out.relu_margin, tape.relu_margin());
        return loss.value().item();
    };
    auto compare = [&](double analytic, double& slot, const std::string& where) {
        const double saved = slot;
        slot = saved + eps;
        const double up = evaluate();
        slot = saved - eps;
        const double down = evaluate();
        slot = saved;
        const double numeric = (up - down) / (2.0 * eps);
        const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-3});
        ++out.entries;
        if (rel > out.max_rel_error) {
            out.max_rel_error = rel;
            out.worst = where;
        }
    };
    std::vector<std::vector<double>> param_grads;
    for (auto& [name, t] : store) {
        std::vector<double> g(t.size(), 0.0);
        if (t.has_grad())
            std::copy(t.grad().begin(), t.grad().end(), g.begin());
        param_grads.push_back(std::move(g));
    }
    std::size_t p = 0;
    for (auto& [name, t] : store) {
        for (std::size_t i = 0; i < t.size(); ++i)
            compare(param_grads[p][i], t[i], name + "[" + std::to_string(i) + "]");
        ++p;
    }
    for (std::size_t k = 0; k < inputs.size(); ++k)
        for (std::size_t i = 0; i < inputs[k].size(); ++i)
            compare(input_grads[k][i], inputs[k][i], "input" + std::to_string(k) + "[" + std::to_string(i) + "]");
    store.zero_grad();
    return out;
}

} // namespace grec::testing
