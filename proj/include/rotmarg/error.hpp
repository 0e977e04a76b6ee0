#pragma once
#include <stdexcept>
#include <string>

namespace rotmarg {

// Base of everything the library throws. The CLI maps the three
// subclasses onto its exit codes (usage 1, data 2, numerical 3).
class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

// Bad parameters or a request the library refuses (e.g. enumeration
// beyond the model-count cap).
class ConfigError : public Error
{
public:
    using Error::Error;
};

// Input data violates a precondition: constant columns, non-finite
// values, malformed files.
class DataError : public Error
{
public:
    using Error::Error;
};

// A factorization failed or an iteration diverged.
class NumericalError : public Error
{
public:
    using Error::Error;
};

} // namespace rotmarg
