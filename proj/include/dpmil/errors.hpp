#pragma once

#include <stdexcept>
#include <string>

namespace dpmil {

// Exit-code buckets used by the CLI: 1 usage, 2 data, 3 numeric.
class Error : public std::runtime_error {
public:
    Error(std::string msg, int exit_code) : std::runtime_error(std::move(msg)), exit_code_(exit_code) {}
    int exit_code() const { return exit_code_; }

private:
    int exit_code_;
};

class UsageError : public Error {
public:
    explicit UsageError(std::string msg) : Error(std::move(msg), 1) {}
};

// Bad input data: malformed files, missing artifacts, invalid configs.
class DataError : public Error {
public:
    explicit DataError(std::string msg) : Error(std::move(msg), 2) {}
};

class ShapeError : public DataError {
public:
    explicit ShapeError(std::string msg) : DataError(std::move(msg)) {}
};

class ParseError : public DataError {
public:
    ParseError(std::string msg) : DataError(std::move(msg)) {}
    ParseError(const std::string& path, std::size_t line, const std::string& what)
        : DataError(path + ":" + std::to_string(line) + ": " + what) {}
};

class ConfigError : public DataError {
public:
    explicit ConfigError(std::string msg) : DataError(std::move(msg)) {}
};

class ArgumentError : public DataError {
public:
    explicit ArgumentError(std::string msg) : DataError(std::move(msg)) {}
};

// Non-finite values mid-computation.
class NumericError : public Error {
public:
    explicit NumericError(std::string msg) : Error(std::move(msg), 3) {}
};

} // namespace dpmil
