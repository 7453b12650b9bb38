#pragma once

#include <stdexcept>
#include <string>

namespace lmsq {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
    using Error::Error;
};

// Thrown by problem-file parsing; line is 1-based, 0 when unknown.
struct ParseError : Error {
    int line = 0;
    ParseError(const std::string& msg, int line_) : Error(msg), line(line_) {}
};

// Non-positive pivot (dense path) or PCG breakdown. block index is filled in
// by the solver when the failing block is known, -1 otherwise.
struct FactorizationError : Error {
    int block = -1;
    double pivot = 0.0;
    FactorizationError(const std::string& msg, int block_, double pivot_)
        : Error(msg), block(block_), pivot(pivot_) {}
};

// Coincident points, zero-length lines and similar; obs_index identifies the
// offending observation in the problem's list.
struct DegenerateGeometryError : Error {
    int obs_index = -1;
    DegenerateGeometryError(const std::string& msg, int obs_index_)
        : Error(msg), obs_index(obs_index_) {}
};

} // namespace lmsq
