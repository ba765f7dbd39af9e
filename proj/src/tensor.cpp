// Copyright (c) 2026, The grec Authors
// SPDX-License-Identifier: Apache-2.0

#include "grec/tensor.hpp"

#include "grec/errors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace grec {

std::string to_string(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i)
            os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_size(const Shape& shape)
{
    std::size_t n = 1;
    for (auto d : shape)
        n *= d;
    return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values))
{
    if (shape_size(shape_) != data_.size())
        throw DimensionError("tensor shape " + to_string(shape_) + " does not hold " +
                             std::to_string(data_.size()) + " values");
}

Tensor Tensor::scalar(double value)
{
    return Tensor(Shape{}, std::vector<double>{value});
}

Tensor Tensor::vector(std::vector<double> values)
{
    const std::size_t n = values.size();
    return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows)
{
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> values;
    values.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c)
            throw DimensionError("ragged matrix literal");
        values.insert(values.end(), row.begin(), row.end());
    }
    return Tensor(Shape{r, c}, std::move(values));
}

std::size_t Tensor::dim(std::size_t axis) const
{
    if (axis >= shape_.size())
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape_));
    return shape_[axis];
}

double& Tensor::at(std::size_t row, std::size_t col)
{
    return data_[row * shape_.at(1) + col];
}

double Tensor::at(std::size_t row, std::size_t col) const
{
    return data_[row * shape_.at(1) + col];
}

double Tensor::item() const
{
    if (data_.size() != 1)
        throw DimensionError("item() on tensor of shape " + to_string(shape_));
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const
{
    if (shape_size(shape) != data_.size())
        throw DimensionError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    return Tensor(std::move(shape), data_);
}

void Tensor::accumulate_grad(std::span<const double> delta)
{
    if (delta.size() != data_.size())
        throw DimensionError("gradient size mismatch for shape " + to_string(shape_));
    if (grad_.empty())
        grad_.assign(data_.size(), 0.0);
    for (std::size_t i = 0; i < delta.size(); ++i)
        grad_[i] += delta[i];
}

void Tensor::zero_grad()
{
    grad_.clear();
}

bool Tensor::all_finite() const noexcept
{
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor transpose(const Tensor& t)
{
    if (t.rank() != 2)
        throw DimensionError("transpose expects a matrix, got " + to_string(t.shape()));
    const std::size_t r = t.dim(0), c = t.dim(1);
    Tensor out(Shape{c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
            out[j * r + i] = t[i * c + j];
    return out;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt)
{
    // splitmix64 finalizer
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng)
{
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t(std::move(shape));
    for (auto& v : t.values())
        v = rng.uniform(-limit, limit);
    return t;
}

Tensor& ParamStore::add(const std::string& name, Tensor value)
{
    if (params_.count(name))
        throw ContractError("duplicate parameter name '" + name + "'");
    value.set_requires_grad(true);
    return params_.emplace(name, std::move(value)).first->second;
}

Tensor& ParamStore::at(const std::string& name)
{
    auto it = params_.find(name);
    if (it == params_.end())
        throw IndexError("unknown parameter '" + name + "'");
    return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const
{
    auto it = params_.find(name);
    if (it == params_.end())
        throw IndexError("unknown parameter '" + name + "'");
    return it->second;
}

std::size_t ParamStore::parameter_count() const noexcept
{
    std::size_t n = 0;
    for (const auto& [name, t] : params_)
        n += t.size();
    return n;
}

void ParamStore::zero_grad()
{
    for (auto& [name, t] : params_)
        t.zero_grad();
}

namespace {

constexpr char kMagic[4] = {'G', 'R', 'C', '1'};

void put_u32(std::ostream& out, std::uint32_t v)
{
    char b[4];
    for (int i = 0; i < 4; ++i)
        b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(b, 4);
}

void put_f64(std::ostream& out, double v)
{
    const auto bits = std::bit_cast<std::uint64_t>(v);
    char b[8];
    for (int i = 0; i < 8; ++i)
        b[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
    out.write(b, 8);
}

std::uint32_t get_u32(std::istream& in)
{
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw ContractError("truncated checkpoint");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

double get_f64(std::istream& in)
{
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8))
        throw ContractError("truncated checkpoint");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return std::bit_cast<double>(v);
}

} // namespace

void write_checkpoint(const ParamStore& store, std::ostream& out)
{
    out.write(kMagic, 4);
    put_u32(out, static_cast<std::uint32_t>(store.size()));
    for (const auto& [name, t] : store) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(out, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape())
            put_u32(out, static_cast<std::uint32_t>(d));
        for (double v : t.values())
            put_f64(out, v);
    }
}

ParamStore read_checkpoint(std::istream& in)
{
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw ContractError("not a checkpoint: bad magic bytes");
    ParamStore store;
    const std::uint32_t count = get_u32(in);
    for (std::uint32_t e = 0; e < count; ++e) {
        const std::uint32_t len = get_u32(in);
        std::string name(len, '\0');
        if (!in.read(name.data(), len))
            throw ContractError("truncated checkpoint");
        const std::uint32_t rank = get_u32(in);
        Shape shape(rank);
        for (auto& d : shape)
            d = get_u32(in);
        std::vector<double> values(shape_size(shape));
        for (auto& v : values)
            v = get_f64(in);
        store.add(name, Tensor(std::move(shape), std::move(values)));
    }
    return store;
}

void save_checkpoint(const ParamStore& store, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw ContractError("cannot open '" + path.string() + "' for writing");
    write_checkpoint(store, out);
}

ParamStore load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ContractError("cannot open checkpoint '" + path.string() + "'");
    return read_checkpoint(in);
}

} // namespace grec
