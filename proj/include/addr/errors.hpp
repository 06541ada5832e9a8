#pragma once

#include <stdexcept>
#include <string>

namespace addr {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Dimension / shape disagreement between operands.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// NaN/Inf where a finite value is required, or a diverged computation.
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Malformed file contents: bad magic, version, truncation, inconsistent header.
struct FormatError : Error {
    explicit FormatError(const std::string& msg) : Error(msg) {}
};

// Filesystem-level failure (open/read/write).
struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};

// Invalid configuration value or unknown key.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

}  // namespace addr
