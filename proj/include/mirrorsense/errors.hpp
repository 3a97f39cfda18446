#pragma once

#include <stdexcept>
#include <string>

namespace mirrorsense {

// Input/config problems (CLI exit code 3).
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : ValidationError {
    using ValidationError::ValidationError;
};

// Everything below maps to CLI exit code 4.
struct GeometryError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NormalizationError : GeometryError {
    using GeometryError::GeometryError;
};

struct NotAReflectionError : GeometryError {
    using GeometryError::GeometryError;
};

// Caller broke an inter-module contract (frame mismatch, non-reflection input).
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InvalidPoseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct GenerationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct UnreachableTargetError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NoOverlapError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct UndefinedCoverageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace mirrorsense
