#pragma once

#include <stdexcept>
#include <string>

namespace clipos {

/// Process exit codes shared by every CLI command.
enum class ExitCode : int {
    ok = 0,
    validation = 1,
    data = 2,
    numeric = 3,
};

class Error : public std::runtime_error {
public:
    Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    ExitCode code() const noexcept { return code_; }

private:
    ExitCode code_;
};

/// Caller violated an operation's precondition (shape, range, empty input).
class ContractError : public Error {
public:
    explicit ContractError(const std::string& what) : Error(ExitCode::validation, what) {}
};

/// Invalid configuration; messages carry the offending field path.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ExitCode::validation, what) {}
};

/// Missing, unreadable or malformed dataset / checkpoint / image.
class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(ExitCode::data, what) {}
};

/// Non-finite activations, degenerate normalization, diverging loss.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(ExitCode::numeric, what) {}
};

}  // namespace clipos
