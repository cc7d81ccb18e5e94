#pragma once

#include <stdexcept>
#include <string>

namespace yofo {

// Error taxonomy, mapped to process exit codes by the CLI:
//   ConfigError -> 1, DataError -> 2, NumericError -> 3.
// Everything else (ShapeError, ContractError) indicates a programming or
// contract bug and also exits nonzero.

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace yofo
