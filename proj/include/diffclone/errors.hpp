#pragma once

#include <stdexcept>
#include <string>

namespace diffclone {

// Base for every error this library raises on purpose. The CLI maps these
// to exit codes: usage/config problems exit 2, runtime failures exit 1.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Dimension disagreement between tensors or vectors.
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Invalid configuration value (bad hyperparameter, invariant violation).
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// API misuse: calling an operation outside its contract.
class UsageError : public Error {
public:
    explicit UsageError(const std::string& msg) : Error(msg) {}
};

// Unrecognized file magic or version.
class FormatError : public Error {
public:
    explicit FormatError(const std::string& msg) : Error(msg) {}
};

// File recognized but its contents are damaged or inconsistent.
class CorruptionError : public Error {
public:
    explicit CorruptionError(const std::string& msg) : Error(msg) {}
};

// A selection step (e.g. reward filtering) produced an empty result.
class EmptySelectionError : public Error {
public:
    explicit EmptySelectionError(const std::string& msg) : Error(msg) {}
};

}  // namespace diffclone
