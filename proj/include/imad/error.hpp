// Copyright 2026 The IMAD Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace imad {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input violates a contract: malformed record, broken invariant, bad
/// parameter. The CLI maps it to exit code 1.
class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& what) : Error(what) {}
    ValidationError(const std::string& what, std::size_t line)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

    /// 1-based line of the offending record, when the error came from a file.
    std::optional<std::size_t> line() const { return line_; }

private:
    std::optional<std::size_t> line_;
};

/// A file could not be opened, read or written. The CLI maps it to exit code 2.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace imad
