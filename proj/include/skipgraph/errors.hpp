#pragma once

#include <stdexcept>
#include <string>

namespace skipgraph {

/// Base of every error the library throws. `exit_code()` is what the CLI
/// returns when the error escapes a subcommand.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual int exit_code() const noexcept { return 1; }
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class GraphError : public Error {
public:
    using Error::Error;
};

class ManifestError : public Error {
public:
    using Error::Error;
};

class ArgumentError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Non-finite values produced by a computation.
class NumericError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 2; }
};

} // namespace skipgraph
