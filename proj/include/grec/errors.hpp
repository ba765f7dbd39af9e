// Copyright (c) 2026, The grec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace grec {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shapes do not agree.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// An id or index is outside its valid range.
class IndexError : public Error {
public:
    using Error::Error;
};

/// A documented precondition was violated by the caller.
class ContractError : public Error {
public:
    using Error::Error;
};

/// Configuration file or option is invalid. The message names the field.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A NaN or Inf appeared where finite values are required.
class NumericError : public Error {
public:
    using Error::Error;
};

/// A metric is undefined for its input (e.g. AUC over a single class).
class UndefinedMetricError : public Error {
public:
    using Error::Error;
};

} // namespace grec
