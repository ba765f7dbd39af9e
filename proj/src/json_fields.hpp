// Copyright (c) 2026, The grec Authors
// SPDX-License-Identifier: Apache-2.0
//
// Strict reading of JSON objects: every key must be consumed, type mismatches
// and leftovers raise ConfigError with the dotted key path.

#pragma once

#include "grec/errors.hpp"

#include <json.hpp>

#include <set>
#include <string>

namespace grec::detail {

class Fields {
public:
    Fields(const nlohmann::json& obj, std::string path) : obj_(obj), path_(std::move(path))
    {
        if (!obj_.is_object())
            throw ConfigError(where() + ": expected an object");
    }

    std::string where() const { return path_.empty() ? "<root>" : path_; }
    std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    bool has(const std::string& key) const { return obj_.contains(key); }

    /// The raw value, or nullptr when absent.
    const nlohmann::json* child(const std::string& key)
    {
        auto it = obj_.find(key);
        if (it == obj_.end())
            return nullptr;
        used_.insert(key);
        return &*it;
    }

    template <class T>
    bool get(const std::string& key, T& out)
    {
        const nlohmann::json* v = child(key);
        if (v == nullptr)
            return false;
        try {
            if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
                if (!v->is_number_unsigned())
                    throw ConfigError(key_path(key) + ": expected a non-negative integer");
            } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
                if (!v->is_number_integer())
                    throw ConfigError(key_path(key) + ": expected an integer");
            }
            out = v->get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(key_path(key) + ": " + e.what());
        }
        return true;
    }

    template <class T>
    void require(const std::string& key, T& out)
    {
        if (!get(key, out))
            throw ConfigError(key_path(key) + ": required key missing");
    }

    void finish() const
    {
        for (auto it = obj_.begin(); it != obj_.end(); ++it)
            if (!used_.count(it.key()))
                throw ConfigError(key_path(it.key()) + ": unknown key");
    }

private:
    const nlohmann::json& obj_;
    std::string path_;
    std::set<std::string> used_;
};

} // namespace grec::detail
