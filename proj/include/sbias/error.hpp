#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace sbias {

// Validation failures: bad arguments, inconsistent specs, malformed input.
// The CLI maps these to exit code 2.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class DegenerateGeometry : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

class SchemaError : public InvalidArgument {
public:
    explicit SchemaError(std::string column)
        : InvalidArgument("missing column: " + column), column_(std::move(column)) {}
    const std::string& column() const noexcept { return column_; }

private:
    std::string column_;
};

class ParseError : public InvalidArgument {
public:
    ParseError(const std::string& what, std::size_t row)
        : InvalidArgument(what + " (row " + std::to_string(row) + ")"), row_(row) {}
    std::size_t row() const noexcept { return row_; }

private:
    std::size_t row_;
};

// Numerical failures: factorizations, optimizer breakdowns, singular systems.
// The CLI maps these to exit code 3.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class SingularDesign : public NumericalError {
public:
    SingularDesign(const std::string& what, std::vector<std::size_t> columns)
        : NumericalError(what), columns_(std::move(columns)) {}
    const std::vector<std::size_t>& columns() const noexcept { return columns_; }

private:
    std::vector<std::size_t> columns_;
};

class DegenerateFit : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class ConvergenceError : public NumericalError {
public:
    ConvergenceError(const std::string& what, std::vector<double> best, double best_value)
        : NumericalError(what), best_(std::move(best)), best_value_(best_value) {}
    const std::vector<double>& best_iterate() const noexcept { return best_; }
    double best_value() const noexcept { return best_value_; }

private:
    std::vector<double> best_;
    double best_value_;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace sbias
