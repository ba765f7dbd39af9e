// Copyright (c) 2026, The grec Authors
// SPDX-License-Identifier: Apache-2.0
//
// Standard layers. A layer is a small descriptor (parameter path + sizes);
// its tensors live in a ParamStore, so a model is a config plus a store.

#pragma once

#include "grec/autodiff.hpp"
#include "grec/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>

namespace grec {

struct Linear {
    std::string name;
    std::size_t in_features = 0;
    std::size_t out_features = 0;
    bool use_bias = true;

    std::string weight_name() const { return name + ".weight"; }
    std::string bias_name() const { return name + ".bias"; }

    /// Registers `<name>.weight` [in x out] (Glorot uniform) and `<name>.bias` [out] (zeros).
    void init(ParamStore& store, Rng& rng) const;
    /// x: [... x in] -> [... x out]
    Var operator()(Tape& tape, ParamStore& store, Var x) const;
};

struct EmbeddingTable {
    std::string name;
    std::size_t vocab = 0;
    std::size_t dim = 0;

    std::string table_name() const { return name + ".table"; }
    void init(ParamStore& store, Rng& rng) const;
};

/// Row i of the result is table[ids[i]]. Out-of-range ids raise an IndexError
/// naming `feature`.
Var embedding_lookup(Tape& tape, ParamStore& store, const EmbeddingTable& table, std::span<const std::size_t> ids,
                     const std::string& feature);

/// Linear -> ReLU -> Linear, width-preserving.
struct MlpBlock {
    std::string name;
    std::size_t width = 0;
    std::size_t hidden = 0;

    Linear up() const { return {name + ".up", width, hidden, true}; }
    Linear down() const { return {name + ".down", hidden, width, true}; }

    void init(ParamStore& store, Rng& rng) const;
    Var operator()(Tape& tape, ParamStore& store, Var x) const;
};

struct LayerNormParams {
    std::string name;
    std::size_t width = 0;

    std::string gain_name() const { return name + ".gain"; }
    std::string shift_name() const { return name + ".shift"; }

    /// gain = 1, shift = 0.
    void init(ParamStore& store) const;
    Var operator()(Tape& tape, ParamStore& store, Var x) const;
};

constexpr double kLayerNormEps = 1e-5;

/// Mean binary cross-entropy of logits against {0,1} labels.
Var bce_loss(Var logits, std::span<const double> labels, std::span<const std::uint8_t> mask = {});

// ---- optimizers -------------------------------------------------------------

class Optimizer {
public:
    virtual ~Optimizer() = default;
    /// Applies one update from the gradients currently stored in `store`.
    virtual void step(ParamStore& store) = 0;
};

class Sgd final : public Optimizer {
public:
    explicit Sgd(double lr) : lr_(lr) {}
    void step(ParamStore& store) override;

private:
    double lr_;
};

/// First/second-moment adaptive optimizer with bias correction.
class Adam final : public Optimizer {
public:
    Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps)
    {
    }
    void step(ParamStore& store) override;

private:
    struct Moments {
        std::vector<double> m, v;
    };
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    std::map<std::string, Moments> state_;
};

} // namespace grec
