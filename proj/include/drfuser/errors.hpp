#pragma once

#include <stdexcept>
#include <string>

namespace drfuser {

// Shape or extent mismatch between operands.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Caller violated a precondition (non-scalar loss, unordered input, ...).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Invalid configuration value; the message names the offending field.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Malformed or inconsistent data on disk or in a stream.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-finite values during optimisation.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Out-of-domain input (e.g. non-positive brightness).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

}  // namespace drfuser
