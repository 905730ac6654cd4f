#pragma once

#include <stdexcept>
#include <string>

namespace sedsr {

/// Root of every error the library raises on purpose.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A spec/config struct carries a value outside its allowed domain.
class InvalidSpecError : public Error {
public:
    using Error::Error;
};

/// Tensor sides violate a divisibility or equality requirement.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Caller broke an interface precondition (wrong channels, missing input).
class ContractError : public Error {
public:
    using Error::Error;
};

/// Configuration document is malformed or inconsistent. The CLI maps this to exit code 2.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A loss or activation became NaN/Inf.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// File could not be read or written.
class IoError : public Error {
public:
    using Error::Error;
};

} // namespace sedsr
