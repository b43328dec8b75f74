// Error types shared by every module.
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace statarb {

/// Dimension mismatch, non-finite input, malformed configuration.
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A factorization failed or a reciprocal condition number fell below its guard.
class NumericalSingularity : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InsufficientHistory : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Rank-deficient regression design. `columns()` lists the columns that
/// are linear combinations of the others.
class SingularDesign : public std::runtime_error {
public:
    SingularDesign(const std::string& what, std::vector<std::size_t> columns)
        : std::runtime_error(what), columns_(std::move(columns)) {}

    const std::vector<std::size_t>& columns() const noexcept { return columns_; }

private:
    std::vector<std::size_t> columns_;
};

/// CSV / config parse failure. `line()` is 1-based, 0 when not line specific.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t line)
        : std::runtime_error(line ? what + " (line " + std::to_string(line) + ")" : what),
          line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

}  // namespace statarb
