// Copyright (c) 2026, The grec Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major float64 tensors, the parameter store and the checkpoint format.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <iosfwd>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace grec {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);

/// Number of elements described by a shape. The empty shape is a scalar.
std::size_t shape_size(const Shape& shape);

class Tensor {
public:
    Tensor() : Tensor(Shape{}) {}
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor scalar(double value);
    static Tensor vector(std::vector<double> values);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const noexcept { return data_.size(); }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    const std::vector<double>& data() const noexcept { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& at(std::size_t row, std::size_t col);
    double at(std::size_t row, std::size_t col) const;
    double item() const;

    /// Same data, new shape. Throws DimensionError when the sizes differ.
    Tensor reshaped(Shape shape) const;

    bool requires_grad() const noexcept { return requires_grad_; }
    void set_requires_grad(bool value) noexcept { requires_grad_ = value; }

    bool has_grad() const noexcept { return !grad_.empty(); }
    std::span<const double> grad() const noexcept { return grad_; }
    /// Adds `delta` into the gradient buffer, allocating it on first use.
    void accumulate_grad(std::span<const double> delta);
    void zero_grad();

    bool all_finite() const noexcept;

    friend bool operator==(const Tensor& a, const Tensor& b) noexcept
    {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<double> data_;
    std::vector<double> grad_;
    bool requires_grad_ = false;
};

/// 2-D transpose (plain, no gradient tracking).
Tensor transpose(const Tensor& t);

/// Seeded random source shared by initializers and data generators.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
    double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
    std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }
    std::uint64_t next() { return engine_(); }

    std::mt19937_64& engine() noexcept { return engine_; }

private:
    std::mt19937_64 engine_;
};

/// Mixes a base seed with a salt; used to derive independent streams.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt);

/// Uniform in [-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))].
Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);

/// Named parameters, iterated in lexicographic name order.
class ParamStore {
public:
    using Map = std::map<std::string, Tensor>;

    /// Registers a trainable tensor. Throws ContractError on a duplicate name.
    Tensor& add(const std::string& name, Tensor value);
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool contains(const std::string& name) const { return params_.count(name) != 0; }

    std::size_t size() const noexcept { return params_.size(); }
    std::size_t parameter_count() const noexcept;

    void zero_grad();

    Map::iterator begin() { return params_.begin(); }
    Map::iterator end() { return params_.end(); }
    Map::const_iterator begin() const { return params_.begin(); }
    Map::const_iterator end() const { return params_.end(); }

private:
    Map params_;
};

// Checkpoint layout (all integers little-endian):
//   "GRC1" | u32 entry count | per entry: u32 name length, UTF-8 name,
//   u32 rank, u32 dims..., f64 values (row-major)
void write_checkpoint(const ParamStore& store, std::ostream& out);
ParamStore read_checkpoint(std::istream& in);
void save_checkpoint(const ParamStore& store, const std::filesystem::path& path);
ParamStore load_checkpoint(const std::filesystem::path& path);

} // namespace grec
