#pragma once

#include <stdexcept>
#include <string>

namespace espec {

// Error taxonomy. The CLI maps these onto exit codes, so new error kinds
// should extend one of the existing bases rather than std::runtime_error.

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid dimensions in a tensor operation.
struct ShapeError : Error {
    using Error::Error;
};

// Invalid model/run configuration (exit code 1).
struct ConfigError : Error {
    using Error::Error;
};

// Malformed cache/tree structure (bad parent links, non-chain commit path).
struct StructureError : Error {
    using Error::Error;
};

// Model file I/O problems (exit code 2).
struct IoError : Error {
    using Error::Error;
};

// A verification / self-check failed (exit code 3).
struct CheckError : Error {
    using Error::Error;
};

// Mathematically undefined result (cosine of two zero vectors, zero
// acceptance rate in the throughput model).
struct DomainError : Error {
    using Error::Error;
};

}  // namespace espec
