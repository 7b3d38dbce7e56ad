#pragma once

#include <stdexcept>
#include <string>

namespace mriuq {

// Base of every exception thrown by the library. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidShape : public Error {
public:
    using Error::Error;
};

class InvalidParameter : public Error {
public:
    using Error::Error;
};

class InfeasibleAcceleration : public InvalidParameter {
public:
    using InvalidParameter::InvalidParameter;
};

class InvalidDensity : public InvalidParameter {
public:
    using InvalidParameter::InvalidParameter;
};

class InsufficientSamples : public InvalidParameter {
public:
    using InvalidParameter::InvalidParameter;
};

class ContractViolation : public Error {
public:
    using Error::Error;
};

class NumericalError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    IoError(const std::string& what, std::string path)
      : Error(what + ": " + path), path_(std::move(path))
    { }

    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

} // namespace mriuq
