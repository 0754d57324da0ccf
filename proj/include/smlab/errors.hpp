#pragma once

#include <stdexcept>
#include <string>

namespace smlab {

/// Malformed or inconsistent input (bad spec, bad dimensions, bad flag).
class SpecError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Numeric failure while evaluating a mechanism rule.
class EvaluationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Unrecoverable imputation failure; message carries the column/provenance.
class ImputationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// I/O and parse failures for CSV and spec files.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace smlab
