#pragma once

#include <stdexcept>
#include <string>

namespace smec {

/// Malformed input file or data that violates a format contract.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A file could not be opened or read.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operation called on an object in the wrong lifecycle state (e.g. a consumed tape).
class InvalidState : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Input for which the requested quantity is mathematically undefined.
class DegenerateInput : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Training produced a non-finite loss; `what()` carries the state dump.
class NumericAbort : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace smec
