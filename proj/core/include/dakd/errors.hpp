#pragma once

#include <stdexcept>
#include <string>

namespace dakd {

// Shape or contract violation while building/running a graph.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite value produced by a numeric computation.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad or missing on-disk data (manifest, feature file, checkpoint, labels).
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed binary payload; a DataError subclass so CLI handling is uniform.
struct FormatError : DataError {
    explicit FormatError(const std::string& msg) : DataError(msg) {}
};

}  // namespace dakd
