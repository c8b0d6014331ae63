#pragma once

#include <stdexcept>
#include <string>

namespace histofuse {

/// Shape disagreement between tensors/layers (kernel larger than input,
/// channel mismatch, rank mismatch, ...).
class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid configuration value (dropout rate >= 1, inconsistent layer spec,
/// bad run-config field, spatial underflow while building a model).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed external input: filenames, CSV rows, image bytes, weight files.
class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Filesystem-level failure (unreadable root, unwritable output).
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Non-finite value where the engine requires finite ones (NaN loss abort).
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Metric that has no defined value on the given input (e.g. ROC-AUC with a
/// single class present).
class UndefinedMetricError : public std::runtime_error {
public:
    explicit UndefinedMetricError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace histofuse
