#pragma once

#include <stdexcept>
#include <string>

namespace fcqr {

// Error taxonomy shared by every module. Callers that only care about
// "something went wrong" can catch std::exception; the CLI maps each kind
// to its own exit code.

class invalid_argument_error : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class domain_error : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Malformed or inconsistent input data (NaNs, mismatched grids, empty files).
class data_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Linear-algebra failure (singular or indefinite matrices).
class numerical_error : public std::runtime_error {
public:
    explicit numerical_error(const std::string& what, double condition = 0.0)
        : std::runtime_error(what), condition_(condition) {}

    /// Estimated condition number, 0 when unavailable.
    double condition() const noexcept { return condition_; }

private:
    double condition_;
};

/// File system failure: unreadable input or unwritable output.
class io_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The solver stopped without meeting its convergence tolerance.
class convergence_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace fcqr
