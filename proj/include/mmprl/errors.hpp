#pragma once

#include <stdexcept>
#include <string>

namespace mmprl {

// Exit codes used by the command-line driver.
enum class ExitCode : int { ok = 0, failure = 1, config = 2, data = 3, numeric = 4 };

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual ExitCode exit_code() const noexcept { return ExitCode::failure; }
};

/// Vector lengths inconsistent with a network or environment.
class ShapeError : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const noexcept override { return ExitCode::data; }
};

/// NaN inputs, non-factorizable kernel matrices.
class NumericError : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const noexcept override { return ExitCode::numeric; }
};

class ConfigError : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const noexcept override { return ExitCode::config; }
};

/// Value outside its admissible domain (e.g. a stance fraction above 1).
class DomainError : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const noexcept override { return ExitCode::data; }
};

/// Corrupt or truncated archive file.
class FormatError : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const noexcept override { return ExitCode::data; }
};

class EmptyArchiveError : public Error {
public:
    EmptyArchiveError() : Error("archive is empty") {}
    explicit EmptyArchiveError(const std::string& what) : Error(what) {}
    ExitCode exit_code() const noexcept override { return ExitCode::data; }
};

} // namespace mmprl
