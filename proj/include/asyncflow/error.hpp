#pragma once

#include <stdexcept>
#include <string>

namespace asyncflow {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A documented precondition was not met by the caller.
class ContractViolation : public Error {
public:
    using Error::Error;
};

/// Input data (files, configs, datasets) failed validation.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Backpropagation reached a recorded op that has no gradient rule.
class UnsupportedOp : public Error {
public:
    explicit UnsupportedOp(const std::string& op)
        : Error("unsupported op in gradient graph: " + op) {}
};

/// A computation produced NaN or Inf where finite values are required.
class NumericError : public Error {
public:
    using Error::Error;
};

class CheckpointError : public Error {
public:
    using Error::Error;
};

#define ASYNCFLOW_EXPECT(cond, msg)                                     \
    do {                                                                \
        if (!(cond)) throw ::asyncflow::ContractViolation(msg);         \
    } while (0)

}  // namespace asyncflow
