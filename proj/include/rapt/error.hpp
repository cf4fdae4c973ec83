#pragma once

#include <stdexcept>
#include <string>

namespace rapt {

/// Base error for everything thrown by the library. `code()` is a stable
/// machine-readable identifier (e.g. "NonBinaryTreatment"); `what()` adds
/// human context.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(code + ": " + message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace rapt
