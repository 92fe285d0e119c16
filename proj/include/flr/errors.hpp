#pragma once

#include <stdexcept>
#include <string>

namespace flr {

// Failure classes map one-to-one onto CLI exit codes (2, 3, 4).
enum class ErrorKind { Usage, Data, Numerical };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string stage, const std::string& what)
        : std::runtime_error(stage.empty() ? what : stage + ": " + what),
          kind_(kind), stage_(std::move(stage)) {}

    ErrorKind kind() const noexcept { return kind_; }
    const std::string& stage() const noexcept { return stage_; }

private:
    ErrorKind kind_;
    std::string stage_;
};

class UsageError : public Error {
public:
    explicit UsageError(const std::string& what, std::string stage = {})
        : Error(ErrorKind::Usage, std::move(stage), what) {}
};

/// Malformed or unusable input: schema, parse, empty file, out-of-range values.
class DataError : public Error {
public:
    explicit DataError(const std::string& what, std::string stage = {})
        : Error(ErrorKind::Data, std::move(stage), what) {}
};

/// A numerical stage could not produce an estimate (unfittable surface,
/// empty eigensystem, all bandwidth candidates degenerate, ...).
class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& what, std::string stage = {})
        : Error(ErrorKind::Numerical, std::move(stage), what) {}
};

}  // namespace flr
