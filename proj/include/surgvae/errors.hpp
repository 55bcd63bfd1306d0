#pragma once

#include <stdexcept>
#include <string>

namespace surgvae {

// Exception taxonomy. The CLI maps these onto exit codes: config/usage
// problems -> 2, I/O problems -> 3, numerical aborts -> 4.

struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

struct SchemaError : std::runtime_error {
    explicit SchemaError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ValueError : std::runtime_error {
    explicit ValueError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct CalibrationError : std::runtime_error {
    explicit CalibrationError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace surgvae
