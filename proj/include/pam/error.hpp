#pragma once

#include <stdexcept>
#include <string>

namespace pam {

/// Root of the library's exception hierarchy.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A configuration or argument violates a documented rule.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Malformed, truncated or version-mismatched serialized data.
class FormatError : public Error {
public:
    using Error::Error;
};

/// A request would exceed a configured size budget.
class ResourceError : public Error {
public:
    using Error::Error;
};

/// A numerical precondition failed on data (e.g. log of a nonpositive value).
class DomainError : public Error {
public:
    using Error::Error;
};

}  // namespace pam
