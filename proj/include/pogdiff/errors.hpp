#pragma once

#include <stdexcept>
#include <string>

namespace pogdiff {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes or dimensions do not line up.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A precondition on an argument was violated (out-of-range value, bad config).
class ContractError : public Error {
public:
    using Error::Error;
};

/// A computation produced NaN/Inf where a finite value was required.
class NumericError : public Error {
public:
    using Error::Error;
};

namespace detail {

inline void require(bool ok, const std::string& what) {
    if (!ok) throw ContractError(what);
}

inline void require_shape(bool ok, const std::string& what) {
    if (!ok) throw ShapeError(what);
}

}  // namespace detail
}  // namespace pogdiff
