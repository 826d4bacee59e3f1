#pragma once

#include <stdexcept>
#include <string>

namespace magnet {

/// Base of every error raised by the library. `kind()` is a stable tag used
/// by tests and by the CLI to pick an exit code.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(kind + ": " + what), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

class ZeroSumPixel : public Error {
public:
    ZeroSumPixel(int row, int col)
        : Error("ZeroSumPixel", "pixel (" + std::to_string(row) + ", " + std::to_string(col) +
                                    ") has a non-positive probability sum"),
          row(row), col(col) {}
    int row;
    int col;
};

class DimMismatch : public Error {
public:
    explicit DimMismatch(const std::string& what) : Error("DimMismatch", what) {}
};

class OutOfBounds : public Error {
public:
    explicit OutOfBounds(const std::string& what) : Error("OutOfBounds", what) {}
};

class InvalidArgument : public Error {
public:
    explicit InvalidArgument(const std::string& what) : Error("InvalidArgument", what) {}
};

// Scale plan violations.
class NonMonotonicScales : public Error {
public:
    explicit NonMonotonicScales(const std::string& what) : Error("NonMonotonicScales", what) {}
};

class EndpointsMismatch : public Error {
public:
    explicit EndpointsMismatch(const std::string& what) : Error("EndpointsMismatch", what) {}
};

class IndivisibleGrid : public Error {
public:
    explicit IndivisibleGrid(const std::string& what) : Error("IndivisibleGrid", what) {}
};

class EvenKernel : public Error {
public:
    explicit EvenKernel(int k) : Error("EvenKernel", "median kernel must be odd and >= 1, got " + std::to_string(k)) {}
};

// Backend and protocol failures. All of these abort the run.
class BackendFailure : public Error {
public:
    explicit BackendFailure(const std::string& what) : Error("BackendFailure", what) {}

protected:
    BackendFailure(std::string kind, const std::string& what) : Error(std::move(kind), what) {}
};

class ProtocolError : public BackendFailure {
public:
    explicit ProtocolError(const std::string& what) : BackendFailure("ProtocolError", what) {}
};

class ServerError : public BackendFailure {
public:
    ServerError(int status, const std::string& message)
        : BackendFailure("ServerError", "status " + std::to_string(status) + ": " + message), status(status) {}
    int status;
};

class Timeout : public BackendFailure {
public:
    explicit Timeout(const std::string& what) : BackendFailure("Timeout", what) {}
};

// Configuration.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error("ConfigError", what) {}

protected:
    ConfigError(std::string kind, const std::string& what) : Error(std::move(kind), what) {}
};

/// Syntax errors carry the 1-based line; schema errors carry the field path (line 0).
class ParseError : public ConfigError {
public:
    ParseError(int line, const std::string& what)
        : ConfigError("ParseError", "line " + std::to_string(line) + ": " + what), line(line) {}
    ParseError(std::string field, const std::string& what)
        : ConfigError("ParseError", "field '" + field + "': " + what), line(0), field(std::move(field)) {}
    int line;
    std::string field;
};

class ValidationError : public ConfigError {
public:
    /// `invariant` names the failed check, e.g. "EndpointsMismatch".
    ValidationError(std::string invariant, const std::string& what)
        : ConfigError("ValidationError", invariant + ": " + what), invariant(std::move(invariant)) {}
    std::string invariant;
};

// Evaluation.
class NoDefinedClasses : public Error {
public:
    NoDefinedClasses() : Error("NoDefinedClasses", "every class has a zero IoU denominator") {}
};

class EmptyInput : public Error {
public:
    explicit EmptyInput(const std::string& what) : Error("EmptyInput", what) {}
};

class IOError : public Error {
public:
    explicit IOError(const std::string& what) : Error("IOError", what) {}
};

}  // namespace magnet
