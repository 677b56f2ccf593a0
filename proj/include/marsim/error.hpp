#pragma once

#include <stdexcept>
#include <string>

namespace marsim {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A value lies outside the domain of a function (energy outside a table, log of a
/// nonpositive voxel, probability outside (0,1)).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Malformed arguments: mismatched dimensions, empty inputs, out-of-range parameters.
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// Geometric preconditions: objects outside a grid or outside the scanner field of view.
class GeometryError : public Error {
public:
    using Error::Error;
};

/// Invalid or inconsistent pipeline configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A scatter bank whose scatter tally is identically zero cannot be normalized.
class DegenerateBankError : public Error {
public:
    using Error::Error;
};

/// A sinogram view whose detector row is entirely covered by the metal trace.
class InterpolationError : public Error {
public:
    using Error::Error;
};

enum class ParseErrorCode {
    CannotOpen,
    BadMagic,
    Truncated,
    ZeroDimension,
    DimOverflow,
    BadSpacing,
    BadKind,
    InvalidData,
    TrailingBytes,
};

const char* to_string(ParseErrorCode code);

/// Binary file parse failure; `code()` tells the failure modes apart.
class ParseError : public Error {
public:
    ParseError(ParseErrorCode code, const std::string& what)
        : Error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ParseErrorCode code() const noexcept { return code_; }

private:
    ParseErrorCode code_;
};

}  // namespace marsim
